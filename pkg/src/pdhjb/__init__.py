"""Numerical laboratory for path-dependent stochastic optimal control in
Hilbert spaces: gauge functionals with closed-form pathwise derivatives,
mild-solution simulation of controlled evolution equations, backward-equation
solvers, dynamic-programming verification, and viscosity-inequality checks
against Markovian references."""

__version__ = "0.1.0"
