"""gibbslab: a numerical laboratory for finite-volume lattice Gibbs measures.

Continuous real-valued spins on a finite box couple through a symmetric,
diagonally dominant interaction with algebraic decay.  The package instantiates
such measures, computes their spectral gaps, Poisson potentials, and
correlation structure exactly at desk scale (tensor-grid quadrature) or by
reversible MCMC at larger sizes, and verifies the inequalities that tie the
relaxation rate to the decay of correlations: per-direction energy bounds via
block averaging, boundary-influence estimates, and a covariance-bound
propagation scheme for symmetric ferromagnetic systems.
"""

__version__ = "0.1.0"

from . import blockavg, bootstrap, cli, config, exact, fitting, lattice, sampler

__all__ = [
    "__version__",
    "blockavg",
    "bootstrap",
    "cli",
    "config",
    "exact",
    "fitting",
    "lattice",
    "sampler",
]
