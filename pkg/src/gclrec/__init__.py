"""Graph contrastive-learning recommendation engine.

Implements LightGCN and its contrastive variants (SGL-WA/ED/ND/RW, SimGCL,
XSimGCL) on top of hand-derived gradients, together with the measurement
instruments used to study them: full-ranking Recall/NDCG, popularity-group
decomposition, embedding-uniformity tracking and a per-batch timing harness.
"""

__version__ = "0.1.0"

from gclrec.errors import ConfigError, DataError, NumericalError, ParseError

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "ParseError",
    "__version__",
]
