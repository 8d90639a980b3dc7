"""Numerical library for passive scalars advected by rapidly fluctuating flows.

Modules
-------
noise
    Brownian, Ornstein-Uhlenbeck and exponential-integral path sampling.
fields
    Velocity field catalog, N-point lifting, drift-correction algebra.
feynman_kac
    Backward-particle Monte Carlo for per-realization and ensemble means.
closure
    Deterministic solvers for the averaged (moment-closure) equations.
propagator
    Matrix verification of the time-ordered cluster expansion.
homogenize
    Periodic cell problems and effective diffusivity tensors.
gbm_moments
    Exact/asymptotic statistics of geometric-Brownian time integrals.
experiments
    Deterministic experiment drivers, manifests and report rendering.
cli
    Command-line runner (``scalar-closure`` console entry point).
"""

__version__ = "0.1.0"
