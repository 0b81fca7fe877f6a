"""Kernel backend dispatch.

BYOLKIT_BACKEND=numpy forces the pure-numpy path, BYOLKIT_BACKEND=numba
requires the compiled path; unset prefers numba and silently falls back to
numpy when numba is unavailable. `benchmarks/bench_kernels.py` times both.
"""

import os

from . import numpy_kernels
from .numpy_kernels import conv_out_size

_requested = os.environ.get("BYOLKIT_BACKEND", "").strip().lower()

if _requested == "numpy":
    _impl = numpy_kernels
    BACKEND = "numpy"
elif _requested in ("", "numba"):
    try:
        from . import numba_kernels as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_kernels
        BACKEND = "numpy"
else:
    raise ValueError(
        f"BYOLKIT_BACKEND={_requested!r} not recognized (use 'numba' or 'numpy')"
    )

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
bilinear_warp = _impl.bilinear_warp
blur_separable = _impl.blur_separable
