"""Deep polynomial chaos expansions with exact moment and sensitivity queries.

Layered polynomial circuits over orthonormal tensor-product bases: trained
like a neural regressor, queried like a PCE.  Means, covariances, conditional
moments, and first-order Sobol indices all come from single deterministic
moment-propagation passes; a Monte Carlo harness cross-checks every one.
"""

__version__ = "0.1.0"

from . import basis, circuit, data, inference, mc, orthopoly, shallow, training
from .basis import MultiIndexSet, generate_indices, eval_tensor_basis
from .circuit import CircuitModel, build, forward
from .data import Dataset, gen_100d, gen_quadratic
from .inference import ConditionSpec
from .orthopoly import PolyFamily, hermite_family, legendre_family, quadrature
from .shallow import ShallowPce, fit_least_squares
from .training import TrainConfig, fold_batchnorm, init_weights, train

__all__ = [
    "__version__",
    "basis",
    "circuit",
    "data",
    "inference",
    "mc",
    "orthopoly",
    "shallow",
    "training",
    "MultiIndexSet",
    "generate_indices",
    "eval_tensor_basis",
    "CircuitModel",
    "build",
    "forward",
    "Dataset",
    "gen_100d",
    "gen_quadratic",
    "ConditionSpec",
    "PolyFamily",
    "hermite_family",
    "legendre_family",
    "quadrature",
    "ShallowPce",
    "fit_least_squares",
    "TrainConfig",
    "fold_batchnorm",
    "init_weights",
    "train",
]
