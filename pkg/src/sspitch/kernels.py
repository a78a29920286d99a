"""Kernel backend selection.

The compiled extension is used when it was built and ``SSPITCH_PURE_PYTHON``
is not set to ``1``; otherwise the numpy fallback is loaded.
"""

import os

_impl = None
if os.environ.get("SSPITCH_PURE_PYTHON", "0") != "1":
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = None

if _impl is None:
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    BACKEND = "cython"

cqt_direct = _impl.cqt_direct
overlap_add = _impl.overlap_add
conv_taps_forward = _impl.conv_taps_forward
conv_taps_backward = _impl.conv_taps_backward
instance_norm_forward = _impl.instance_norm_forward
instance_norm_backward = _impl.instance_norm_backward

__all__ = ["BACKEND", "conv_taps_backward", "conv_taps_forward", "cqt_direct",
           "instance_norm_backward", "instance_norm_forward", "overlap_add"]
