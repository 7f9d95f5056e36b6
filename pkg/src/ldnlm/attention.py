"""Array-level attention kernels used for inference and benchmarking.

Single-head operators take ``q, k`` of shape ``(N, d_k)`` and ``v`` of shape
``(N, d_v)``.  Each kernel also returns an instrumented FLOP count that is
accumulated inside the loops (or from the exact trip counts in the numpy
path), so the two backends report identical numbers.

Counting convention: one multiply-add is 2 FLOPs, every other arithmetic
operation or ``exp`` is 1.

Linear attention precomputes ``S = sum_j phi(K_j) V_j^T`` and
``z = sum_j phi(K_j)`` once and reuses them for every query, giving
``Theta(N d_k d_v)`` work.  Softmax attention touches all ``N^2`` pairs.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit, pick
from .errors import ContractError, ShapeError

_SOFTMAX_BLOCK = 256


def phi(x) -> np.ndarray:
    """Feature map ``elu(x) + 1``; strictly positive for finite input."""
    x = np.asarray(x)
    return np.where(x > 0, x + 1, np.exp(np.minimum(x, 0)))


def _check_qkv(q, k, v):
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("q, k, v must be 2-D")
    if q.shape[0] == 0 or k.shape[0] == 0:
        raise ContractError("attention over an empty window")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    dtype = np.result_type(q, k, v, np.float32)
    return q, k, v, dtype


# ---------------------------------------------------------------- linear

def _linear_loops(q, k, v):
    n, dk = q.shape
    m = k.shape[0]
    dv = v.shape[1]
    s = np.zeros((dk, dv))
    z = np.zeros(dk)
    fk = np.empty(dk)
    flops = 0
    for j in range(m):
        for a in range(dk):
            x = k[j, a]
            fk[a] = x + 1.0 if x > 0 else math.exp(x)
            z[a] += fk[a]
        for a in range(dk):
            for b in range(dv):
                s[a, b] += fk[a] * v[j, b]
        flops += 2 * dk + 2 * dk * dv
    out = np.empty((n, dv))
    fq = np.empty(dk)
    num = np.empty(dv)
    for i in range(n):
        den = 0.0
        for a in range(dk):
            x = q[i, a]
            fq[a] = x + 1.0 if x > 0 else math.exp(x)
            den += fq[a] * z[a]
        for b in range(dv):
            num[b] = 0.0
        for a in range(dk):
            for b in range(dv):
                num[b] += fq[a] * s[a, b]
        for b in range(dv):
            out[i, b] = num[b] / den
        flops += dk + 2 * dk + 2 * dk * dv + dv
    return out, flops


_linear_numba = njit(_linear_loops)


def _linear_numpy(q, k, v):
    n, dk = q.shape
    m = k.shape[0]
    dv = v.shape[1]
    fk = phi(k.astype(np.float64))
    fq = phi(q.astype(np.float64))
    s = fk.T @ v.astype(np.float64)
    z = fk.sum(axis=0)
    out = (fq @ s) / (fq @ z)[:, None]
    flops = m * (2 * dk + 2 * dk * dv) + n * (dk + 2 * dk + 2 * dk * dv + dv)
    return out, flops


_linear_kernel = pick(_linear_numba, _linear_numpy)


def attention_linear(q, k, v, *, return_flops: bool = False, kernel=None):
    """Kernel attention ``phi(Q) (phi(K)^T V)`` normalized per query, in O(N)."""
    q, k, v, dtype = _check_qkv(q, k, v)
    run = kernel or _linear_kernel
    out, flops = run(np.ascontiguousarray(q, np.float64), np.ascontiguousarray(k, np.float64),
                     np.ascontiguousarray(v, np.float64))
    out = out.astype(dtype)
    return (out, int(flops)) if return_flops else out


def kernel_attention_quadratic(q, k, v) -> np.ndarray:
    """Unreordered kernel attention: build ``phi(Q) phi(K)^T`` explicitly (O(N^2))."""
    q, k, v, dtype = _check_qkv(q, k, v)
    w = phi(q.astype(np.float64)) @ phi(k.astype(np.float64)).T
    return ((w / w.sum(axis=1, keepdims=True)) @ v.astype(np.float64)).astype(dtype)


# ---------------------------------------------------------------- softmax

def _softmax_loops(q, k, v, scale):
    n, dk = q.shape
    m = k.shape[0]
    dv = v.shape[1]
    out = np.empty((n, dv))
    scores = np.empty(m)
    acc = np.empty(dv)
    flops = 0
    for i in range(n):
        best = -np.inf
        for j in range(m):
            dot = 0.0
            for a in range(dk):
                dot += q[i, a] * k[j, a]
            dot *= scale
            scores[j] = dot
            if dot > best:
                best = dot
        total = 0.0
        for b in range(dv):
            acc[b] = 0.0
        for j in range(m):
            e = math.exp(scores[j] - best)
            total += e
            for b in range(dv):
                acc[b] += e * v[j, b]
        for b in range(dv):
            out[i, b] = acc[b] / total
        flops += m * (2 * dk + 1) + m * (1 + 1 + 1 + 2 * dv) + dv
    return out, flops


_softmax_numba = njit(_softmax_loops)


def _softmax_numpy(q, k, v, scale):
    n, dk = q.shape
    m = k.shape[0]
    dv = v.shape[1]
    out = np.empty((n, dv))
    for lo in range(0, n, _SOFTMAX_BLOCK):
        sc = (q[lo:lo + _SOFTMAX_BLOCK] @ k.T) * scale
        e = np.exp(sc - sc.max(axis=1, keepdims=True))
        out[lo:lo + _SOFTMAX_BLOCK] = (e @ v) / e.sum(axis=1, keepdims=True)
    flops = n * (m * (2 * dk + 1) + m * (3 + 2 * dv) + dv)
    return out, flops


_softmax_kernel = pick(_softmax_numba, _softmax_numpy)


def attention_softmax(q, k, v, scale: float | None = None, *, return_flops: bool = False, kernel=None):
    """Exact ``softmax(Q K^T * scale) V`` with ``scale = 1/sqrt(d_k)`` by default."""
    q, k, v, dtype = _check_qkv(q, k, v)
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    run = kernel or _softmax_kernel
    out, flops = run(np.ascontiguousarray(q, np.float64), np.ascontiguousarray(k, np.float64),
                     np.ascontiguousarray(v, np.float64), float(scale))
    out = out.astype(dtype)
    return (out, int(flops)) if return_flops else out


def multihead(q, k, v, heads: int, mode: str) -> np.ndarray:
    """Split the width into ``heads`` equal slices, attend per slice, concatenate."""
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    d = q.shape[1]
    if heads < 1 or d % heads or v.shape[1] % heads:
        raise ShapeError(f"width {d} is not divisible by {heads} heads")
    dk, dv = d // heads, v.shape[1] // heads
    fn = attention_linear if mode == "linear" else attention_softmax if mode == "softmax" else None
    if fn is None:
        raise ContractError(f"unknown attention mode {mode!r}")
    return np.concatenate([fn(q[:, h * dk:(h + 1) * dk], k[:, h * dk:(h + 1) * dk], v[:, h * dv:(h + 1) * dv])
                           for h in range(heads)], axis=1)
