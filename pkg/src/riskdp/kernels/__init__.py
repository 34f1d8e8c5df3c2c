"""Hot numeric kernels with a numba fast path.

Set ``RISKDP_PURE_NUMPY=1`` before import to force the pure-numpy
implementations (also used automatically when numba is missing).
"""
import os

from . import _numpy

_FORCE_NUMPY = os.environ.get("RISKDP_PURE_NUMPY", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _FORCE_NUMPY:
        raise ImportError("pure numpy requested")
    from . import _numba
except ImportError:
    _numba = None

_impl = _numba if _numba is not None else _numpy

BACKEND = "numba" if _numba is not None else "numpy"

tail_integral = _impl.tail_integral
lattice_min = _impl.lattice_min
evar_golden = _impl.evar_golden


def backends():
    """Available kernel modules keyed by name, for tests and benchmarks."""
    out = {"numpy": _numpy}
    if _numba is not None:
        out["numba"] = _numba
    else:
        try:
            from . import _numba as nb
            out["numba"] = nb
        except ImportError:
            pass
    return out
