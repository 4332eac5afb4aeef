"""Hot inner loops: keyed hashing and sketch updates over uint64 batches.

Two interchangeable backends produce bit-identical results. The numba
backend is used when numba imports cleanly; set ``DPDICE_DISABLE_NUMBA=1``
to force the pure-numpy path.
"""

import importlib
import os

from . import _numpy

_DISABLED = os.environ.get("DPDICE_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on",
}

_numba = None
if not _DISABLED:
    try:
        _numba = importlib.import_module(f"{__name__}._numba")
    except ImportError:  # numba missing or broken: numpy path only
        _numba = None

BACKEND = "numba" if _numba is not None else "numpy"
_impl = _numba if _numba is not None else _numpy

siphash_batch = _impl.siphash_batch
trailing_rank = _impl.trailing_rank
fms_update = _impl.fms_update
hll_update = _impl.hll_update
fm_update_row = _impl.fm_update_row


def backends():
    """Map of available backend name -> kernel module."""
    out = {"numpy": _numpy}
    if _numba is not None:
        out["numba"] = _numba
    return out
