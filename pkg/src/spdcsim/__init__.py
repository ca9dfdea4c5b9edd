"""Simulation and analysis of resonator-based photon-pair sources.

Time-tag simulation, coincidence correlators, correlation-function fits and
a whispering-gallery resonator design model.
"""
__version__ = "0.1.0"

from .correlator import (CorrelationMode, Correlogram, CorrelogramConfig, G2Curve,  # noqa: E402
                         coincidences, conditioned_g2, cross_correlogram, normalize_g2)
from .errors import (ConfigError, ContractError, FormatError, NumericalError,  # noqa: E402
                     SpdcError)
from .inference import (ExpFit, SourceEstimate, estimate_source, fit_exponential,  # noqa: E402
                        pump_conversion_fit)
from .kernels import BACKEND  # noqa: E402
from .source import (DetectorParams, SimConfig, SourceModel, SourceParams,  # noqa: E402
                     apply_detector, simulate, simulate_source)
from .tags import TagStream, merge_streams  # noqa: E402

__all__ = [
    "BACKEND", "ConfigError", "ContractError", "CorrelationMode", "Correlogram",
    "CorrelogramConfig", "DetectorParams", "ExpFit", "FormatError", "G2Curve", "NumericalError",
    "SimConfig", "SourceEstimate", "SourceModel", "SourceParams", "SpdcError", "TagStream",
    "apply_detector", "coincidences", "conditioned_g2", "cross_correlogram", "estimate_source",
    "fit_exponential", "merge_streams", "normalize_g2", "pump_conversion_fit", "simulate",
    "simulate_source",
]
