"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``STROKEUNC_KERNELS``
(``numba`` or ``numpy``); when unset, numba is used if it imports.
Both paths consume identical inputs and never touch a random generator,
so switching backends changes results only at the rounding level.

Kernels
-------
image_summaries
    All per-image predictive summaries for a block of images sharing T.
conv1d_forward / conv1d_backward
    Valid (unpadded) 1D convolution over a batch of channel-last sequences.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

N_BINS = 100
BIN_EDGES = np.arange(N_BINS + 1, dtype=np.float64) / N_BINS

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


def _default_backend() -> str:
    requested = os.environ.get("STROKEUNC_KERNELS", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested in ("", "numba"):
        return "numba" if HAS_NUMBA else "numpy"
    raise ValueError(f"STROKEUNC_KERNELS must be 'numba' or 'numpy', got {requested!r}")


_BACKEND = _default_backend()


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _BACKEND = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _xlogx_np(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def _bin_index_np(p):
    idx = np.searchsorted(BIN_EDGES, p, side="right") - 1
    return np.clip(idx, 0, N_BINS - 1)


def _histogram_np(p):
    n, T = p.shape
    idx = _bin_index_np(p) + (np.arange(n) * N_BINS)[:, None]
    counts = np.bincount(idx.ravel(), minlength=n * N_BINS).reshape(n, N_BINS)
    return counts / T


def _shifted_mean(a):
    # mean about the first run: exact for constant rows
    a0 = a[:, :1]
    return a0[:, 0] + (a - a0).sum(axis=1) / a.shape[1]


def _image_summaries_np(p, threshold):
    n, T = p.shape
    q = 1.0 - p
    mean1 = _shifted_mean(p)
    mean0 = _shifted_mean(q)
    var1 = ((p - mean1[:, None]) ** 2).sum(axis=1) / T
    var0 = ((q - mean0[:, None]) ** 2).sum(axis=1) / T
    var = 0.5 * (var0 + var1)

    n1 = (p > threshold).sum(axis=1)
    n_mode = np.maximum(n1, T - n1)
    vr = 1.0 - n_mode / T

    pe = -(_xlogx_np(mean0) + _xlogx_np(mean1))
    mean_run_negent = _shifted_mean(_xlogx_np(q) + _xlogx_np(p))
    mi = pe + mean_run_negent
    mi[(mi < 0.0) & (mi >= -1e-12)] = 0.0

    alea = _shifted_mean(p * q)
    hist = np.stack([_histogram_np(q), _histogram_np(p)], axis=1)
    return mean0, mean1, var, vr, pe, mi, alea, hist


def _conv1d_forward_np(x, W, b):
    k = W.shape[0]
    L_out = x.shape[1] - k + 1
    y = np.broadcast_to(b, (x.shape[0], L_out, W.shape[2])).copy()
    for j in range(k):
        y += x[:, j : j + L_out, :] @ W[j]
    return y


def _conv1d_backward_np(x, W, g):
    k = W.shape[0]
    L_out = g.shape[1]
    dx = np.zeros_like(x)
    dW = np.empty_like(W)
    for j in range(k):
        xs = x[:, j : j + L_out, :]
        dW[j] = np.einsum("bic,bif->cf", xs, g)
        dx[:, j : j + L_out, :] += g @ W[j].T
    db = g.sum(axis=(0, 1))
    return dx, dW, db


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _xlogx_nb(x):
        if x > 0.0:
            return x * np.log(x)
        return 0.0

    @numba.njit(cache=True)
    def _bin_index_nb(v, edges):
        i = np.searchsorted(edges, v, side="right") - 1
        if i < 0:
            return 0
        if i > N_BINS - 1:
            return N_BINS - 1
        return i

    @numba.njit(cache=True)
    def _image_summaries_nb(p, threshold, edges):
        n, T = p.shape
        mean0 = np.empty(n)
        mean1 = np.empty(n)
        var = np.empty(n)
        vr = np.empty(n)
        pe = np.empty(n)
        mi = np.empty(n)
        alea = np.empty(n)
        hist = np.zeros((n, 2, N_BINS))
        for r in range(n):
            a1 = p[r, 0]
            a0 = 1.0 - a1
            ae = _xlogx_nb(a0) + _xlogx_nb(a1)
            aa = a1 * a0
            s0 = 0.0
            s1 = 0.0
            negent = 0.0
            al = 0.0
            for t in range(T):
                x1 = p[r, t]
                x0 = 1.0 - x1
                s1 += x1 - a1
                s0 += x0 - a0
                negent += _xlogx_nb(x0) + _xlogx_nb(x1) - ae
                al += x1 * x0 - aa
            m0 = a0 + s0 / T
            m1 = a1 + s1 / T
            v0 = 0.0
            v1 = 0.0
            n1 = 0
            for t in range(T):
                x1 = p[r, t]
                x0 = 1.0 - x1
                v0 += (x0 - m0) ** 2
                v1 += (x1 - m1) ** 2
                if x1 > threshold:
                    n1 += 1
                hist[r, 0, _bin_index_nb(x0, edges)] += 1.0
                hist[r, 1, _bin_index_nb(x1, edges)] += 1.0
            for j in range(N_BINS):
                hist[r, 0, j] /= T
                hist[r, 1, j] /= T
            mean0[r] = m0
            mean1[r] = m1
            var[r] = 0.5 * (v0 / T + v1 / T)
            n_mode = max(n1, T - n1)
            vr[r] = 1.0 - n_mode / T
            h = -(_xlogx_nb(m0) + _xlogx_nb(m1))
            pe[r] = h
            m = h + (ae + negent / T)
            if m < 0.0 and m >= -1e-12:
                m = 0.0
            mi[r] = m
            alea[r] = aa + al / T
        return mean0, mean1, var, vr, pe, mi, alea, hist

    @numba.njit(cache=True)
    def _conv1d_forward_nb(x, W, b):
        B, L, C = x.shape
        k, _, F = W.shape
        L_out = L - k + 1
        y = np.empty((B, L_out, F))
        for bi in range(B):
            for i in range(L_out):
                for f in range(F):
                    acc = b[f]
                    for j in range(k):
                        for c in range(C):
                            acc += x[bi, i + j, c] * W[j, c, f]
                    y[bi, i, f] = acc
        return y

    @numba.njit(cache=True)
    def _conv1d_backward_nb(x, W, g):
        B, L, C = x.shape
        k, _, F = W.shape
        L_out = g.shape[1]
        dx = np.zeros((B, L, C))
        dW = np.zeros((k, C, F))
        db = np.zeros(F)
        for bi in range(B):
            for i in range(L_out):
                for f in range(F):
                    gv = g[bi, i, f]
                    if gv == 0.0:
                        continue
                    db[f] += gv
                    for j in range(k):
                        for c in range(C):
                            dW[j, c, f] += x[bi, i + j, c] * gv
                            dx[bi, i + j, c] += W[j, c, f] * gv
        return dx, dW, db


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def image_summaries(p, threshold=0.5):
    """Per-image summaries for stroke probabilities ``p`` of shape (n, T).

    Returns ``(mean0, mean1, var, vr, pe, mi, alea, hist)`` where ``hist``
    has shape (n, 2, 100) with class 0 first.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 1:
        raise ValueError(f"expected an (n, T>=1) array, got shape {p.shape}")
    if _BACKEND == "numba":
        return _image_summaries_nb(p, float(threshold), BIN_EDGES)
    return _image_summaries_np(p, float(threshold))


def conv1d_forward(x, W, b):
    if _BACKEND == "numba":
        return _conv1d_forward_nb(np.ascontiguousarray(x), np.ascontiguousarray(W), b)
    return _conv1d_forward_np(x, W, b)


def conv1d_backward(x, W, g):
    if _BACKEND == "numba":
        return _conv1d_backward_nb(
            np.ascontiguousarray(x), np.ascontiguousarray(W), np.ascontiguousarray(g)
        )
    return _conv1d_backward_np(x, W, g)
