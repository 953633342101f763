"""Backend selection for the numeric kernels.

Set ``DPIID_NUMBA=0`` in the environment before import to force the
pure-numpy code paths. When numba is missing the numpy path is used
automatically.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("DPIID_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` with numba when it is available, else return it."""
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
