"""Deterministic equivalents for Gram matrices of concentrated mixture data.

Modules:

* :mod:`concgram.numerics`: dense linear algebra and seeded random streams
* :mod:`concgram.model`: mixture moments, GMM sampling, Gram matrices
* :mod:`concgram.pushforward`: Lipschitz networks, spectral normalization,
  concentration probes
* :mod:`concgram.equivalent`: fixed point, equivalent resolvent, density and
  eigenspace predictions
* :mod:`concgram.lab`: Monte-Carlo experiments
* :mod:`concgram.specwalk`: random-walk simulator for spectral normalization
* :mod:`concgram.cli`: command-line runs driven by JSON configurations
* :mod:`concgram.estimators`: scikit-learn style wrappers
"""

from .equivalent import (DeltaSolution, EquivalentResolvent, density, rtilde,
                         solve_delta, stieltjes, subspace_stats)
from .exceptions import (ConcGramError, ConfigError, ContractError, ConvergenceError,
                         EstimationError, FixedPointError, InvalidContourError,
                         InvalidMomentError, PartialResultError, StructureError)
from .model import (LabeledSample, MixtureModel, estimate_moments, gram,
                    gram_decomposition, sample_gmm)
from .numerics import RngStream

__version__ = "0.1.0"

__all__ = [
    "RngStream", "MixtureModel", "LabeledSample", "sample_gmm", "estimate_moments",
    "gram", "gram_decomposition", "solve_delta", "rtilde", "density", "stieltjes",
    "subspace_stats", "DeltaSolution", "EquivalentResolvent",
    "ConcGramError", "ContractError", "ConvergenceError", "FixedPointError",
    "PartialResultError", "InvalidMomentError", "EstimationError",
    "StructureError", "InvalidContourError", "ConfigError",
]
