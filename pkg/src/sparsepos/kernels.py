"""Hot-loop dispatch.

Uses the compiled ``_core`` extension when it was built, otherwise the numpy
implementation in ``_fallback``. Set ``SPARSEPOS_PURE_PYTHON=1`` to force the
fallback (the benchmark and the kernel parity tests do this per call via
:func:`get_backend`).
"""
import os

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = {"python": _fallback}
if _core is not None:
    BACKENDS["compiled"] = _core

if _core is not None and os.environ.get("SPARSEPOS_PURE_PYTHON") != "1":
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
forward_backward = _impl.forward_backward
viterbi = _impl.viterbi
project_blocks = _impl.project_blocks


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None
