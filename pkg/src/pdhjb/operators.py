"""Truncated Hilbert-space state vectors and diagonal generators.

The state space is R^N understood as the span of the first N vectors of a
fixed orthonormal basis.  The generator is realized diagonally in that basis,
which makes the semigroup, the adjoint and the Yosida approximation exact and
keeps operator-discretization error out of everything built on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpectralOperator",
    "WaveBlockOperator",
    "inner",
    "norm",
    "project",
    "make_operator",
]

MAX_DIM = 64


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Inner product <x, y> of two coefficient vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x, y))


def norm(x: np.ndarray) -> float:
    """Norm |x| of a coefficient vector."""
    return float(np.linalg.norm(np.asarray(x, dtype=float)))


def project(x: np.ndarray, n: int, part: str = "head") -> np.ndarray:
    """Coordinate projection onto the first n basis vectors or its complement.

    ``head`` zeroes all coefficients with index >= n, ``tail`` zeroes those
    with index < n; head + tail reconstructs x exactly.
    """
    x = np.asarray(x, dtype=float)
    if not 0 <= n <= x.shape[-1]:
        raise ValueError(f"projection rank {n} out of range [0, {x.shape[-1]}]")
    out = x.copy()
    if part == "head":
        out[..., n:] = 0.0
    elif part == "tail":
        out[..., :n] = 0.0
    else:
        raise ValueError(f"unknown projection part {part!r}, expected 'head' or 'tail'")
    return out


@dataclass(frozen=True)
class SpectralOperator:
    """Diagonal generator with nonpositive eigenvalues.

    Provides the contraction semigroup e^{tA}, the adjoint (A* = A under the
    diagonal, self-adjoint realization), the Yosida approximation
    A_mu = mu A (mu I - A)^{-1}, all exact per coordinate.
    """

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a nonempty 1-d sequence")
        if lam.size > MAX_DIM:
            raise ValueError(f"dimension {lam.size} exceeds supported maximum {MAX_DIM}")
        if np.any(lam > 0.0):
            raise ValueError("contraction requires all eigenvalues <= 0")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"vector dimension {x.shape[-1]} != operator dimension {self.dim}")
        return x

    def semigroup_factors(self, t: float) -> np.ndarray:
        """Diagonal factors of e^{tA}."""
        if t < 0:
            raise ValueError(f"semigroup time must be >= 0, got {t}")
        return np.exp(self.eigenvalues * t)

    def semigroup_apply(self, t: float, x: np.ndarray) -> np.ndarray:
        """Apply e^{tA}; never increases the norm."""
        return self._check_dim(x) * self.semigroup_factors(t)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply A itself (bounded in the truncation)."""
        return self._check_dim(x) * self.eigenvalues

    def adjoint_apply(self, x: np.ndarray) -> np.ndarray:
        """Apply A*.  The diagonal realization is self-adjoint, so A* = A."""
        return self.apply(x)

    def yosida_rates(self, mu: float) -> np.ndarray:
        """Eigenvalues mu*lam/(mu - lam) of the Yosida approximation A_mu."""
        if mu <= 0:
            raise ValueError(f"Yosida parameter must be > 0, got {mu}")
        lam = self.eigenvalues
        return mu * lam / (mu - lam)

    def yosida_apply(self, mu: float, x: np.ndarray) -> np.ndarray:
        """Apply A_mu = mu A (mu I - A)^{-1}."""
        return self._check_dim(x) * self.yosida_rates(mu)

    def yosida_operator(self, mu: float) -> "SpectralOperator":
        """A_mu as a diagonal operator, so e^{tA_mu} reuses semigroup_apply."""
        return SpectralOperator(self.yosida_rates(mu))


@dataclass(frozen=True)
class WaveBlockOperator:
    """First-order reformulation of a second-order (wave-type) system.

    Acts on stacked coordinates (y~_1, z_1, ..., y~_N, z_N) where y~_k is the
    position coordinate rescaled by the mode frequency omega_k, so that each
    2x2 block generates a pure rotation and e^{tA} is an isometry (operator
    norm 1, hence still a contraction semigroup).  Only the semigroup is
    provided; no Yosida approximation.
    """

    omegas: np.ndarray

    def __post_init__(self):
        om = np.atleast_1d(np.asarray(self.omegas, dtype=float))
        if om.ndim != 1 or om.size == 0 or np.any(om <= 0):
            raise ValueError("mode frequencies must be positive")
        if 2 * om.size > MAX_DIM:
            raise ValueError(f"dimension {2 * om.size} exceeds supported maximum {MAX_DIM}")
        om = om.copy()
        om.setflags(write=False)
        object.__setattr__(self, "omegas", om)

    @property
    def dim(self) -> int:
        return int(2 * self.omegas.size)

    def semigroup_apply(self, t: float, x: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ValueError(f"semigroup time must be >= 0, got {t}")
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"vector dimension {x.shape[-1]} != operator dimension {self.dim}")
        c = np.cos(self.omegas * t)
        s = np.sin(self.omegas * t)
        y = x[..., 0::2]
        z = x[..., 1::2]
        out = np.empty_like(x)
        out[..., 0::2] = c * y + s * z
        out[..., 1::2] = -s * y + c * z
        return out

    def adjoint_apply(self, x: np.ndarray) -> np.ndarray:
        # block [[0, om], [-om, 0]] is skew-adjoint: A* = -A
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0::2] = -self.omegas * x[..., 1::2]
        out[..., 1::2] = self.omegas * x[..., 0::2]
        return out


_PRESETS = ("dirichlet_laplacian", "zero")


def make_operator(preset: str | None = None, dim: int = 8,
                  eigenvalues=None) -> SpectralOperator:
    """Build an operator from a named preset or an explicit eigenvalue list.

    ``dirichlet_laplacian`` uses lam_k = -(k*pi)^2 (unit-interval Dirichlet
    Laplacian); ``zero`` is the identity semigroup.
    """
    if eigenvalues is not None:
        return SpectralOperator(np.asarray(eigenvalues, dtype=float))
    if preset == "dirichlet_laplacian":
        k = np.arange(1, dim + 1, dtype=float)
        return SpectralOperator(-((k * np.pi) ** 2))
    if preset == "zero":
        return SpectralOperator(np.zeros(dim))
    raise ValueError(f"unknown operator preset {preset!r}; expected one of {_PRESETS} "
                     "or an explicit eigenvalue list")
