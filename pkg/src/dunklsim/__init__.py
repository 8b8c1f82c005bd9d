"""Simulation and verification toolkit for radial Dunkl processes.

Chamber-valued singular-drift SDE integration on A/B root systems, exact
Bessel oracles, first-passage estimators, and random-matrix cross-checks.
"""

from .root_system import (MultiplicityMap, RootSystemData, build_root_system,
                          opposite_in_class, reflect, validate, wall_margins)
from .potential import (ChamberDomainError, PotentialContext, drift,
                        euler_pairing, grad_phi, phi, singular_integrand)
from .integrator import (ConfigError, SimConfig, Trajectory, derive_stream,
                         sample_bessel_exact, simulate_batch, simulate_path, step)
from .analysis import (coupled_comparison, estimate_hitting,
                       estimate_singular_functional, moment_slope,
                       occupation_fraction, race_walls)
from .matrix_oracles import (LaguerreParams, dyson_path, laguerre_eigen_path,
                             mult_dictionary, sqrt_map,
                             wishart_matrix_eigen_path)

__version__ = "0.1.0"

__all__ = [
    "MultiplicityMap", "RootSystemData", "build_root_system", "opposite_in_class",
    "reflect", "validate", "wall_margins",
    "ChamberDomainError", "PotentialContext", "drift", "euler_pairing",
    "grad_phi", "phi", "singular_integrand",
    "ConfigError", "SimConfig", "Trajectory", "derive_stream",
    "sample_bessel_exact", "simulate_batch", "simulate_path", "step",
    "coupled_comparison", "estimate_hitting", "estimate_singular_functional",
    "moment_slope", "occupation_fraction", "race_walls",
    "LaguerreParams", "dyson_path", "laguerre_eigen_path", "mult_dictionary",
    "sqrt_map", "wishart_matrix_eigen_path",
    "__version__",
]
