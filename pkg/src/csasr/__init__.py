"""Code-switching ASR toolkit: CS text synthesis, bilingual transducers, fused decoding and scoring."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
