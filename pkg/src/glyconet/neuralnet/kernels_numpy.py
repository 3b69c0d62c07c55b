"""Pure-numpy convolution kernels (im2col + GEMM).

Shapes follow the channels-first convention: activations are
(batch, channels, length) float64 and weights are (out_channels,
in_channels, kernel). SAME padding keeps the length; for even kernels the
extra pad element goes on the LEFT (left = k // 2).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def pad_left(kernel: int) -> int:
    return kernel // 2


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(B, Cin, L) -> (B*L, Cin*kernel) patch matrix under SAME padding."""
    batch, cin, length = x.shape
    left = pad_left(kernel)
    padded = np.zeros((batch, cin, length + kernel - 1), dtype=np.float64)
    padded[:, :, left:left + length] = x
    cols = sliding_window_view(padded, kernel, axis=2)        # (B, Cin, L, k)
    return np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(batch * length,
                                                                    cin * kernel)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    batch, _, length = x.shape
    cout, cin, kernel = w.shape
    cols = _im2col(x, kernel)
    out = cols @ w.reshape(cout, cin * kernel).T              # (B*L, Cout)
    out = out.reshape(batch, length, cout).transpose(0, 2, 1)
    return np.ascontiguousarray(out) + b[None, :, None]


def conv1d_backward(x: np.ndarray, w: np.ndarray,
                    dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) for `conv1d_forward` given upstream dy."""
    batch, cin, length = x.shape
    cout, _, kernel = w.shape
    left = pad_left(kernel)

    dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(batch * length, cout)
    cols = _im2col(x, kernel)
    dw = (dy_flat.T @ cols).reshape(cout, cin, kernel)
    db = dy.sum(axis=(0, 2))

    dcols = dy_flat @ w.reshape(cout, cin * kernel)           # (B*L, Cin*k)
    dcols = dcols.reshape(batch, length, cin, kernel).transpose(0, 2, 1, 3)
    dxpad = np.zeros((batch, cin, length + kernel - 1), dtype=np.float64)
    for t in range(kernel):
        dxpad[:, :, t:t + length] += dcols[:, :, :, t]
    dx = np.ascontiguousarray(dxpad[:, :, left:left + length])
    return dx, dw, db
