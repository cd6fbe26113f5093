"""Sparse-grid and multilevel Monte Carlo for a planar Zakai-type SPDE.

The package has three layers: an exact closed-form oracle (:mod:`.model`),
a semi-implicit Milstein / ADI finite-difference solver with its Fourier
twin (:mod:`.solver`, :mod:`.spectral`), and the Monte Carlo estimation
drivers with seedable noise (:mod:`.noise`, :mod:`.estimators`).  The
command-line runner in :mod:`.cli` reproduces the benchmark tables and
cost comparisons as CSV files.
"""

from .model import (
    ModelParams,
    NormalPair,
    check_stability,
    correlate,
    exact_density,
    exact_functional,
    norm_cdf,
)
from .noise import BrownianPath, SeedSpec, coarsen, sample_path
from .solver import (
    AdiSolver,
    Grid2D,
    StabilityError,
    dirac_init,
    path_cost,
    solve_path,
    solve_paths,
)
from .spectral import (
    amplification,
    decay_check,
    moment_e,
    moment_e2,
    spectral_solve_periodic,
    symbols,
)

__version__ = "0.1.0"
