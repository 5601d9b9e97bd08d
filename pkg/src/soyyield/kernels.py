"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy twins in ``_fallback`` are used. Setting ``SOYYIELD_BACKEND=python``
forces the fallback.
"""

import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None
else:
    BACKENDS["cython"] = _kernels

_requested = os.environ.get("SOYYIELD_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "cython"):
    raise ImportError(f"unknown SOYYIELD_BACKEND {_requested!r}")
if _requested == "python" or _kernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]

remap_bilinear = _impl.remap_bilinear
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
label_components = _impl.label_components
moving_means = _impl.moving_means


def get(name, backend=None):
    """Look up a kernel by name on an explicit backend (default: active)."""
    return getattr(BACKENDS[backend or BACKEND], name)
