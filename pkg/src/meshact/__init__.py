"""Action recognition on fixed-topology mesh sequences.

Two-stage pipeline: a spiral-convolution mesh autoencoder turns each frame
into a compact embedding, and a small multi-head self-attention classifier
(or an MLP/LSTM/CNN ablation head) labels the embedding sequence.
Everything runs on a minimal numpy-backed reverse-mode engine.
"""

__version__ = "0.1.0"

from .attention import ScoreMeter, TransformerConfig, classify
from .config import RunConfig, make_config
from .engine import Tensor
from .errors import (ConfigError, FormatError, MeshError, NonFiniteError)
from .hierarchy import MeshHierarchy, build_hierarchy
from .sequence import MeshSequence, NormStats
from .spiral import SpiralIndexTable, build_spiral_table
from .synth import CLASS_NAMES, synth_generate
from .topology import TemplateTopology, build_topology, icosphere, tetrahedron

__all__ = [
    "__version__",
    "ScoreMeter", "TransformerConfig", "classify",
    "RunConfig", "make_config",
    "Tensor",
    "ConfigError", "FormatError", "MeshError", "NonFiniteError",
    "MeshHierarchy", "build_hierarchy",
    "MeshSequence", "NormStats",
    "SpiralIndexTable", "build_spiral_table",
    "CLASS_NAMES", "synth_generate",
    "TemplateTopology", "build_topology", "icosphere", "tetrahedron",
]
