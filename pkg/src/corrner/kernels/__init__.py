"""CRF dynamic-programming kernels with backend selection at import.

The compiled extension is preferred when present; the numpy fallback is
selected otherwise. CORRNER_KERNELS=python forces the fallback (used by the
benchmark and the cross-backend tests).
"""

import os

from . import _crf_py

_impl = _crf_py
if os.environ.get("CORRNER_KERNELS", "") != "python":
    try:
        from . import _crf as _compiled

        _impl = _compiled
    except ImportError:
        pass

log_partition = _impl.log_partition
forward_backward = _impl.forward_backward
viterbi = _impl.viterbi


def backend() -> str:
    """Name of the active backend: "compiled" or "python"."""
    return _impl.BACKEND


def implementations() -> dict:
    """All importable backends, name -> module (for tests and benchmarks)."""
    impls = {"python": _crf_py}
    try:
        from . import _crf as _compiled

        impls["compiled"] = _compiled
    except ImportError:
        pass
    return impls
