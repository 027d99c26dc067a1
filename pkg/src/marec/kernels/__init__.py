"""Convolution kernel backend selection.

The compiled Cython extension is preferred when it was built; the pure-numpy
kernels are the fallback. Override with MAREC_BACKEND=python|compiled.
"""

import os

from . import _conv_py

try:
    from . import _convext
except ImportError:  # extension not built
    _convext = None


def _select():
    choice = os.environ.get("MAREC_BACKEND", "")
    if choice == "python":
        return _conv_py, "python"
    if choice == "compiled":
        if _convext is None:
            raise RuntimeError("MAREC_BACKEND=compiled but the extension is not built")
        return _convext, "compiled"
    if choice:
        raise RuntimeError(f"unknown MAREC_BACKEND value: {choice!r}")
    if _convext is not None:
        return _convext, "compiled"
    return _conv_py, "python"


_impl, BACKEND = _select()

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_weight",
]
