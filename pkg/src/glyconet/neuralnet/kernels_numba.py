"""Numba convolution kernels: prange gather/scatter around a BLAS GEMM.

Mirrors `kernels_numpy` exactly (same im2col + GEMM structure, same SAME
padding with the extra element on the left for even kernels). The parallel
loops partition work by batch row, every output element is written by exactly
one thread with a fixed-order inner accumulation, and the GEMM itself runs in
BLAS outside numba's thread pool, so results are independent of
`numba.set_num_threads`.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

NAME = "numba"


def pad_left(kernel: int) -> int:
    return kernel // 2


@njit(cache=True, parallel=True)
def _gather(x, kernel, left):
    batch, cin, length = x.shape
    cols = np.zeros((batch * length, cin * kernel), dtype=np.float64)
    for bi in prange(batch):
        for pos in range(length):
            row = bi * length + pos
            for c in range(cin):
                base = c * kernel
                for t in range(kernel):
                    src = pos + t - left
                    if 0 <= src < length:
                        cols[row, base + t] = x[bi, c, src]
    return cols


@njit(cache=True)
def _matmul(a, b):
    return np.dot(a, b)


@njit(cache=True, parallel=True)
def _to_channels_first(flat, bias, batch, cout, length):
    out = np.empty((batch, cout, length), dtype=np.float64)
    for bi in prange(batch):
        for oc in range(cout):
            for pos in range(length):
                out[bi, oc, pos] = flat[bi * length + pos, oc] + bias[oc]
    return out


@njit(cache=True, parallel=True)
def _flatten_dy(dy):
    batch, cout, length = dy.shape
    flat = np.empty((batch * length, cout), dtype=np.float64)
    for bi in prange(batch):
        for oc in range(cout):
            for pos in range(length):
                flat[bi * length + pos, oc] = dy[bi, oc, pos]
    return flat


@njit(cache=True, parallel=True)
def _scatter(dcols, kernel, left, batch, cin, length):
    dx = np.zeros((batch, cin, length), dtype=np.float64)
    for bi in prange(batch):
        for pos in range(length):
            row = bi * length + pos
            for c in range(cin):
                base = c * kernel
                for t in range(kernel):
                    src = pos + t - left
                    if 0 <= src < length:
                        dx[bi, c, src] += dcols[row, base + t]
    return dx


@njit(cache=True, parallel=True)
def _bias_grad(dy):
    batch, cout, length = dy.shape
    db = np.zeros(cout, dtype=np.float64)
    for oc in prange(cout):
        acc = 0.0
        for bi in range(batch):
            for pos in range(length):
                acc += dy[bi, oc, pos]
        db[oc] = acc
    return db


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    batch, cin, length = x.shape
    cout, _, kernel = w.shape
    cols = _gather(np.ascontiguousarray(x), kernel, pad_left(kernel))
    wmat = np.ascontiguousarray(w.reshape(cout, cin * kernel).T)
    flat = _matmul(cols, wmat)
    return _to_channels_first(flat, np.ascontiguousarray(b), batch, cout, length)


def conv1d_backward(x: np.ndarray, w: np.ndarray,
                    dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    batch, cin, length = x.shape
    cout, _, kernel = w.shape
    left = pad_left(kernel)

    cols = _gather(np.ascontiguousarray(x), kernel, left)
    dy_flat = _flatten_dy(np.ascontiguousarray(dy))
    dw = _matmul(np.ascontiguousarray(dy_flat.T), cols).reshape(cout, cin, kernel)
    db = _bias_grad(np.ascontiguousarray(dy))
    dcols = _matmul(dy_flat, np.ascontiguousarray(w.reshape(cout, cin * kernel)))
    dx = _scatter(dcols, kernel, left, batch, cin, length)
    return dx, dw, db
