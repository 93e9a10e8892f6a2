"""Perturbed-maximizer construction over finite families of paths.

The smooth-gauge variational principle asserts that near any almost-maximizer
of an upper-semicontinuous functional there is a point that strictly
maximizes the functional penalized by a geometrically weighted sum of
gauge distances to a constructed anchor chain.  On a finite candidate family
the Cantor-intersection argument becomes finite termination and every claimed
property can be re-verified by brute force, which is exactly what
``verify_certificate`` does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gauge import GaugeParams, eval_bar_upsilon, eval_bar_upsilon_pair

__all__ = [
    "CandidateFamily",
    "PerturbedMaximizer",
    "borwein_preiss",
    "verify_certificate",
    "family_gauge",
    "pair_family_gauge",
]

_TIE_TOL = 1e-12


def family_gauge(op, params: GaugeParams) -> Callable:
    """Gauge on (time, path) members built from the bar-Upsilon combination."""
    params.require_gauge_type()

    def rho(a, b):
        return eval_bar_upsilon(params, op, a[1], b[1])

    return rho


def pair_family_gauge(op, params: GaugeParams) -> Callable:
    """Gauge on (time, (path, path)) product members."""
    params.require_gauge_type()

    def rho(a, b):
        return eval_bar_upsilon_pair(params, op, a[1], b[1])

    return rho


@dataclass
class CandidateFamily:
    """Finite list of (horizon, payload) members with a gauge-type distance.

    Payloads are paths for the plain principle and path pairs for the
    product-space variant; the gauge callable fixes which combination is in
    force.
    """

    members: list              # [(time, payload)]
    gauge: Callable            # rho(member, member) -> float >= 0

    def __post_init__(self):
        if not self.members:
            raise ValueError("candidate family must be nonempty")

    def __len__(self):
        return len(self.members)


@dataclass
class PerturbedMaximizer:
    point_index: int
    point: tuple
    anchor_indices: list
    anchors: list
    weights: list              # delta_i = 2^{-i}
    epsilon: float
    certificate: dict
    ties: list = field(default_factory=list)


def _penalized(f_vals, rho_to_anchors, weights):
    """f - sum_i delta_i rho(anchor_i, .) evaluated on the whole family."""
    out = f_vals.copy()
    for w, r in zip(weights, rho_to_anchors):
        out -= w * r
    return out


def borwein_preiss(f, family: CandidateFamily, epsilon: float,
                   start: int) -> PerturbedMaximizer:
    """Run the anchored-penalty construction from member ``start``.

    Preconditions: f(start) >= sup_family f - epsilon.  Anchor weights are
    delta_i = 2^{-i}.  Each step picks the exact argmax of the penalized
    functional over the surviving set; the set shrinks and the run stops when
    it is a singleton or the anchor repeats.  Exact ties are broken by family
    order and reported.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = len(family)
    if not 0 <= start < n:
        raise ValueError(f"start index {start} outside the family")
    f_vals = np.array([float(f(payload)) for _, payload in family.members])
    times = np.array([t for t, _ in family.members])

    if f_vals[start] < f_vals.max() - epsilon - _TIE_TOL:
        raise ValueError(
            f"start member is not an epsilon-maximizer: f(start) = "
            f"{f_vals[start]:.6g} < max - epsilon = {f_vals.max() - epsilon:.6g}")

    anchor_indices = [start]
    weights = [1.0]
    rho_rows = [np.array([family.gauge(family.members[start], m)
                          for m in family.members])]
    # surviving set B_0
    alive = np.nonzero((times >= times[start] - _TIE_TOL)
                       & (f_vals - rho_rows[0] >= f_vals[start] - _TIE_TOL))[0]
    ties: list = []

    while True:
        pen = _penalized(f_vals, rho_rows, weights)
        order = alive[np.lexsort((alive, -pen[alive]))]
        best = int(order[0])
        tied = [int(i) for i in order[1:] if pen[i] >= pen[best] - _TIE_TOL]
        if tied:
            ties.append((best, tied))
        if best == anchor_indices[-1] or alive.size == 1:
            point = best
            break
        anchor_indices.append(best)
        weights.append(0.5 ** (len(anchor_indices) - 1))
        rho_rows.append(np.array([family.gauge(family.members[best], m)
                                  for m in family.members]))
        # B_i: horizon at least the new anchor's, penalized value at least
        # the anchor's previous-level penalized value
        prev_pen = _penalized(f_vals, rho_rows[:-1], weights[:-1])
        new_pen = _penalized(f_vals, rho_rows, weights)
        alive = alive[(times[alive] >= times[best] - _TIE_TOL)
                      & (new_pen[alive] >= prev_pen[best] - _TIE_TOL)]

    result = PerturbedMaximizer(
        point_index=point, point=family.members[point],
        anchor_indices=anchor_indices,
        anchors=[family.members[i] for i in anchor_indices],
        weights=weights, epsilon=epsilon, certificate={}, ties=ties)
    result.certificate = _evaluate_certificate(result, f_vals, family)
    return result


def _evaluate_certificate(result: PerturbedMaximizer, f_vals: np.ndarray,
                          family: CandidateFamily) -> dict:
    members = family.members
    point = members[result.point_index]
    t_hat = point[0]
    rho_to_point = [family.gauge(a, point) for a in result.anchors]

    prox = all(r <= result.epsilon / 2**i + _TIE_TOL
               for i, r in enumerate(rho_to_point))

    pen_at_point = f_vals[result.point_index] - sum(
        w * r for w, r in zip(result.weights, rho_to_point))
    improves = pen_at_point >= f_vals[result.anchor_indices[0]] - _TIE_TOL

    strict = True
    tie_indices = []
    for j, (t_j, payload) in enumerate(members):
        if j == result.point_index or t_j < t_hat - _TIE_TOL:
            continue
        pen_j = f_vals[j] - sum(
            w * family.gauge(a, members[j])
            for w, a in zip(result.weights, result.anchors))
        if pen_j > pen_at_point + _TIE_TOL:
            strict = False
        elif pen_j > pen_at_point - _TIE_TOL:
            tie_indices.append(j)
    if tie_indices:
        # exact ties are admissible only when broken toward the point
        strict = strict and all(result.point_index <= j for j in tie_indices)

    return {"anchor_proximity": bool(prox),
            "penalized_improvement": bool(improves),
            "strict_maximality": bool(strict),
            "penalized_value": float(pen_at_point),
            "tie_indices": tie_indices}


def verify_certificate(result: PerturbedMaximizer, f, family: CandidateFamily) -> bool:
    """Brute-force re-check of the three guaranteed properties on the family."""
    f_vals = np.array([float(f(payload)) for _, payload in family.members])
    cert = _evaluate_certificate(result, f_vals, family)
    return (cert["anchor_proximity"] and cert["penalized_improvement"]
            and cert["strict_maximality"])
