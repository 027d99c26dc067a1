"""Pure-numpy convolution kernels (fallback backend).

Cross-correlation semantics, NCHW layout, float64. Each function loops over
the k*k kernel taps and lets numpy/BLAS do the heavy channel contraction, so
the fallback stays usable for desk-scale training when the compiled extension
is not built.
"""

import numpy as np


def _pad_input(x, padding):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, w, stride, padding):
    """x: (B,Cin,H,W), w: (Cout,Cin,k,k) -> (B,Cout,Hout,Wout)."""
    xp = _pad_input(x, padding)
    B, Cin, H, W = xp.shape
    Cout, _, k, _ = w.shape
    s = stride
    Hout = (H - k) // s + 1
    Wout = (W - k) // s + 1
    out = np.zeros((B, Cout, Hout, Wout))
    for kh in range(k):
        for kw in range(k):
            patch = xp[:, :, kh : kh + s * Hout : s, kw : kw + s * Wout : s]
            out += np.einsum("bchw,oc->bohw", patch, w[:, :, kh, kw], optimize=True)
    return out


def conv2d_backward_input(grad_out, w, x_shape, stride, padding):
    """Gradient w.r.t. the conv input; returns an array of x_shape."""
    B, Cin, H, W = x_shape
    Cout, _, k, _ = w.shape
    s = stride
    p = padding
    Hout, Wout = grad_out.shape[2], grad_out.shape[3]
    gxp = np.zeros((B, Cin, H + 2 * p, W + 2 * p))
    for kh in range(k):
        for kw in range(k):
            gxp[:, :, kh : kh + s * Hout : s, kw : kw + s * Wout : s] += np.einsum(
                "bohw,oc->bchw", grad_out, w[:, :, kh, kw], optimize=True
            )
    if p == 0:
        return gxp
    return gxp[:, :, p : p + H, p : p + W]


def conv2d_backward_weight(grad_out, x, w_shape, stride, padding):
    """Gradient w.r.t. the conv weight; returns an array of w_shape."""
    xp = _pad_input(x, padding)
    Cout, Cin, k, _ = w_shape
    s = stride
    Hout, Wout = grad_out.shape[2], grad_out.shape[3]
    gw = np.zeros(w_shape)
    for kh in range(k):
        for kw in range(k):
            patch = xp[:, :, kh : kh + s * Hout : s, kw : kw + s * Wout : s]
            gw[:, :, kh, kw] = np.einsum("bohw,bchw->oc", grad_out, patch, optimize=True)
    return gw
