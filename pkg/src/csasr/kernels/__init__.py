"""Hot numeric kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; set ``CSASR_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _reference

_compiled = None
if os.environ.get("CSASR_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _reference
BACKEND = "cython" if _compiled is not None else "python"

edit_ops = _impl.edit_ops
rnnt_loglik_grad = _impl.rnnt_loglik_grad
ibm2_estep = _impl.ibm2_estep


def available_backends():
    """Map backend name to module for every backend that imports here."""
    backends = {"python": _reference}
    if _compiled is not None:
        backends["cython"] = _compiled
    return backends
