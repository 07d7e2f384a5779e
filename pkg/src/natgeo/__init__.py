"""Natural gradient descent with geodesic correction and higher-order integrators.

Modules
-------
geometry    Christoffel symbols, geodesic ODE, RK4, exponential map
gamma       Gamma maximum-likelihood testbed in four charts
network     feed-forward network with R/S passes and curvature products
solver      damped CG / Cholesky solves and Marquardt damping
optimizers  ng, mid, geo, geo_f, geo_exact and perturb update rules
harness     reproducible experiments and the oracle check suite
"""

__version__ = "0.1.0"

from .errors import (Breakdown, ConfigError, DomainError, DomainExit, LengthMismatch,
                     NatGeoError, NonFiniteState, NumericalUnderflow, ShapeMismatch,
                     SingularMetric)
from .gamma import GammaDataset, GammaObjective, GammaParams, Parameterization, gamma_sample
from .network import Batch, Loss, Network, NetworkObjective
from .optimizers import OptimizerConfig, OptimizerState, STEPPERS, run
from .solver import CgConfig, DampingState

__all__ = [
    "Batch", "Breakdown", "CgConfig", "ConfigError", "DampingState", "DomainError",
    "DomainExit", "GammaDataset", "GammaObjective", "GammaParams", "LengthMismatch",
    "Loss", "NatGeoError", "Network", "NetworkObjective", "NonFiniteState",
    "NumericalUnderflow", "OptimizerConfig", "OptimizerState", "Parameterization",
    "STEPPERS", "ShapeMismatch", "SingularMetric", "gamma_sample", "run",
]
