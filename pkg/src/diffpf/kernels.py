"""Hot-kernel dispatch.

The compiled extension is used when it imports; setting ``DIFFPF_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active implementation.
"""

import os

from diffpf import _kernels_py

_impl = _kernels_py
BACKEND = "python"

if os.environ.get("DIFFPF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from diffpf import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        _impl = _ckernels
        BACKEND = "cython"


def _contig(a, dtype=None):
    import numpy as np

    return np.ascontiguousarray(a, dtype=dtype)


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(_contig(x), kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    return _impl.col2im(_contig(cols), tuple(shape), kh, kw, stride, pad)


def splat(points, size, bandwidth):
    import numpy as np

    return _impl.splat(_contig(points, np.float64), size, float(bandwidth))


def render_disks(img, centers, radii, colors, scale, offset):
    import numpy as np

    return _impl.render_disks(img, _contig(centers, np.float64), _contig(radii, np.float64),
                              _contig(colors, np.float64), float(scale), float(offset))


def use_backend(name):
    """Switch implementation at runtime ("python" or "cython"); returns the previous name."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "python":
        _impl = _kernels_py
    elif name == "cython":
        from diffpf import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name
    return prev
