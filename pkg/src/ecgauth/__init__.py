"""ECG biometric authentication toolkit.

Signal conditioning, heartbeat segmentation, PCA features, per-user
authenticators, two evaluation protocols, and a synthetic corpus
generator that makes the whole pipeline verifiable end to end.
"""

__version__ = "0.1.0"

from .dataset import Corpus, EcgTrace, Session, chronological_split, load_corpus
from .metrics import ScoreSet, compute_eer, compute_hter, far_frr

__all__ = [
    "Corpus",
    "EcgTrace",
    "Session",
    "ScoreSet",
    "chronological_split",
    "compute_eer",
    "compute_hter",
    "far_frr",
    "load_corpus",
    "__version__",
]
