"""Spatially coupled LT / LDGM rateless codes: codec, DE analysis, thresholds."""

__version__ = "0.1.0"

from .channel import ChannelModel, Grid, QuantizedDensity, from_entropy
from .de_bec import Coupling, EnsembleSpec
from .degree import DegreeDistribution, PoissonEdgeDist, check_universality

__all__ = [
    "__version__",
    "ChannelModel",
    "Grid",
    "QuantizedDensity",
    "from_entropy",
    "Coupling",
    "EnsembleSpec",
    "DegreeDistribution",
    "PoissonEdgeDist",
    "check_universality",
]
