"""Recurrent sequence kernels with a compiled core and a numpy fallback.

The compiled extension (``rmn.kernels._fused``, Cython) fuses the per-step
gate arithmetic into C loops; ``reference`` is the pure-numpy twin with
identical semantics. Selection happens once at import: the extension is
used when present unless ``RMN_PURE_PYTHON`` is set in the environment.
"""

import os

from . import reference

_impl = reference
_backend = "numpy"

if not os.environ.get("RMN_PURE_PYTHON"):
    try:
        from . import _fused as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        _backend = "compiled"


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'numpy'."""
    return _backend


lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
