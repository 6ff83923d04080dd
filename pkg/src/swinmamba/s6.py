"""Selective state-space (S6) sequence transform.

Per channel ``d`` and state ``n``::

    Abar[t, d, n] = exp(delta[t, d] * A[d, n])          (zero-order hold)
    Bbar[t, d, n] = delta[t, d] * B[t, n]               (Euler)
    h[t] = Abar[t] * h[t-1] + Bbar[t] * x[t, d],  h[-1] = 0
    y[t, d] = sum_n C[t, n] * h[t, d, n] + D[d] * x[t, d]

Two forward routes share that contract: a compiled sequential recurrence and
a work-efficient (Blelloch) associative scan over the time axis. The backward
pass recomputes the hidden states per sequence instead of keeping them from
the forward pass.

Batched kernels take sequences flattened to ``[M, L, *]`` plus a group index
``gidx[M]`` selecting which ``A[G, D, N]`` / ``D[G, D]`` each sequence uses
(one group per scan direction in the model).
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .nn import ops
from .nn.parallel import parallel_map
from .nn.tensor import ShapeError, Tensor, make_result


@dataclass(frozen=True)
class S6Config:
    d_inner: int
    d_state: int = 8
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        if self.d_inner < 1 or self.d_state < 1:
            raise ValueError(f"S6Config: d_inner and d_state must be >= 1, got {self.d_inner}, {self.d_state}")
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError(f"S6Config: need 0 < dt_min < dt_max, got {self.dt_min}, {self.dt_max}")


@dataclass
class S6Inputs:
    """One selective-scan invocation on a single ``[L, D]`` sequence."""

    x: np.ndarray
    delta: np.ndarray
    B: np.ndarray
    C: np.ndarray
    A: np.ndarray
    D_skip: np.ndarray

    def validate(self) -> None:
        L, D = self.x.shape
        if L < 1:
            raise ShapeError("S6: sequence length must be >= 1")
        N = self.A.shape[1]
        expected = {
            "delta": (self.delta.shape, (L, D)),
            "B": (self.B.shape, (L, N)),
            "C": (self.C.shape, (L, N)),
            "A": (self.A.shape, (D, N)),
            "D_skip": (self.D_skip.shape, (D,)),
        }
        for name, (got, want) in expected.items():
            if got != want:
                raise ShapeError(f"S6: {name} has shape {got}, expected {want}")
        if not np.all(self.delta > 0):
            raise ValueError("S6: delta must be strictly positive")
        if not np.all(self.A < 0):
            raise ValueError("S6: A must be strictly negative")

    def batched(self):
        """Views as a batch of one sequence in one group."""
        return (
            self.x[None], self.delta[None], self.B[None], self.C[None],
            self.A[None], self.D_skip[None], np.zeros(1, dtype=np.int64),
        )


def discretize(delta: np.ndarray, A: np.ndarray, B: np.ndarray):
    """``(Abar, Bbar)`` of shape ``[L, D, N]``."""
    if np.any(delta <= 0):
        raise ValueError("discretize: delta must be strictly positive")
    Abar = np.exp(delta[:, :, None] * A[None, :, :])
    Bbar = delta[:, :, None] * B[:, None, :]
    return Abar, Bbar


# -- compiled kernels ----------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _forward_kernel(x, dt, Bm, Cm, A, Dk, gidx, start, stop, y):
    L, D = x.shape[1], x.shape[2]
    N = A.shape[2]
    h = np.empty((D, N), dtype=x.dtype)
    for m in range(start, stop):
        g = gidx[m]
        h[:, :] = 0.0
        for t in range(L):
            for d in range(D):
                xd = x[m, t, d]
                dd = dt[m, t, d]
                acc = 0.0
                for n in range(N):
                    hv = np.exp(dd * A[g, d, n]) * h[d, n] + (dd * Bm[m, t, n]) * xd
                    h[d, n] = hv
                    acc += Cm[m, t, n] * hv
                y[m, t, d] = acc + Dk[g, d] * xd


@numba.njit(cache=True, nogil=True)
def _backward_kernel(x, dt, Bm, Cm, A, Dk, gidx, dy, start, stop,
                     gx, gdt, gB, gC, gA, gD):
    L, D = x.shape[1], x.shape[2]
    N = A.shape[2]
    hs = np.empty((L, D, N), dtype=x.dtype)
    gh = np.empty((D, N), dtype=x.dtype)
    for m in range(start, stop):
        g = gidx[m]
        # recompute hidden states for this sequence
        for t in range(L):
            for d in range(D):
                xd = x[m, t, d]
                dd = dt[m, t, d]
                for n in range(N):
                    prev = hs[t - 1, d, n] if t > 0 else 0.0
                    hs[t, d, n] = np.exp(dd * A[g, d, n]) * prev + (dd * Bm[m, t, n]) * xd
        gh[:, :] = 0.0
        for t in range(L - 1, -1, -1):
            for d in range(D):
                xd = x[m, t, d]
                dd = dt[m, t, d]
                dyv = dy[m, t, d]
                gD[g, d] += dyv * xd
                gxv = Dk[g, d] * dyv
                gdv = 0.0
                for n in range(N):
                    a = np.exp(dd * A[g, d, n])
                    ghv = gh[d, n] + Cm[m, t, n] * dyv
                    gC[m, t, n] += dyv * hs[t, d, n]
                    prev = hs[t - 1, d, n] if t > 0 else 0.0
                    ga = ghv * prev * a
                    gdv += ga * A[g, d, n]
                    gA[g, d, n] += ga * dd
                    gbv = ghv * xd
                    gdv += gbv * Bm[m, t, n]
                    gB[m, t, n] += gbv * dd
                    gxv += ghv * dd * Bm[m, t, n]
                    gh[d, n] = ghv * a
                gx[m, t, d] = gxv
                gdt[m, t, d] = gdv


# -- batched drivers -----------------------------------------------------------

def _check_batch(x, dt, Bm, Cm, A, Dk, gidx):
    if x.ndim != 3:
        raise ShapeError(f"S6: x must be [M, L, D], got {x.shape}")
    M, L, D = x.shape
    G, _, N = A.shape
    if L < 1:
        raise ShapeError("S6: sequence length must be >= 1")
    for name, arr, want in (
        ("delta", dt, (M, L, D)), ("B", Bm, (M, L, N)), ("C", Cm, (M, L, N)),
        ("A", A, (G, D, N)), ("D_skip", Dk, (G, D)), ("gidx", gidx, (M,)),
    ):
        if arr.shape != want:
            raise ShapeError(f"S6: {name} has shape {arr.shape}, expected {want}")


# Sequences per work item. Fixed so the partial-gradient reduction order, and
# therefore every bit of the result, does not depend on the thread count.
CHUNK = 16


def _chunks(M: int):
    return [(s, min(s + CHUNK, M)) for s in range(0, M, CHUNK)]


def scan_sequential(x, dt, Bm, Cm, A, Dk, gidx) -> np.ndarray:
    """Compiled recurrence over ``[M, L, D]`` sequences, parallel over ``M``."""
    _check_batch(x, dt, Bm, Cm, A, Dk, gidx)
    y = np.empty_like(x)
    gidx = np.ascontiguousarray(gidx, dtype=np.int64)
    parallel_map(lambda c: _forward_kernel(x, dt, Bm, Cm, A, Dk, gidx, c[0], c[1], y), _chunks(x.shape[0]))
    return y


def _combine(a1, b1, a2, b2):
    """``(a1, b1) then (a2, b2)`` for the map ``h -> a*h + b``."""
    return a1 * a2, a2 * b1 + b2


def blelloch_scan(a: np.ndarray, b: np.ndarray, axis: int = 1):
    """Inclusive scan of affine maps ``h -> a*h + b`` along ``axis``.

    Up-sweep/down-sweep on a power-of-two padded copy (identity = (1, 0)),
    then one final combine turns the exclusive prefix into an inclusive one.
    """
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    L = a.shape[0]
    P = 1 << max(0, (L - 1).bit_length())
    A_ = np.ones((P,) + a.shape[1:], dtype=a.dtype)
    B_ = np.zeros((P,) + b.shape[1:], dtype=b.dtype)
    A_[:L], B_[:L] = a, b

    step = 1
    while step < P:
        right = np.arange(2 * step - 1, P, 2 * step)
        left = right - step
        A_[right], B_[right] = _combine(A_[left], B_[left], A_[right], B_[right])
        step *= 2

    A_[P - 1], B_[P - 1] = 1.0, 0.0
    step = P // 2
    while step >= 1:
        right = np.arange(2 * step - 1, P, 2 * step)
        left = right - step
        ta, tb = A_[left].copy(), B_[left].copy()
        A_[left], B_[left] = A_[right], B_[right]
        A_[right], B_[right] = _combine(A_[right], B_[right], ta, tb)
        step //= 2

    inc_a, inc_b = _combine(A_[:L], B_[:L], a, b)
    return np.moveaxis(inc_a, 0, axis), np.moveaxis(inc_b, 0, axis)


def scan_parallel(x, dt, Bm, Cm, A, Dk, gidx) -> np.ndarray:
    """Same contract as :func:`scan_sequential` via :func:`blelloch_scan` over time."""
    _check_batch(x, dt, Bm, Cm, A, Dk, gidx)
    y = np.empty_like(x)

    def run(chunk):
        s, e = chunk
        g = gidx[s:e]
        d = dt[s:e]
        abar = np.exp(d[..., None] * A[g][:, None])
        bx = (d[..., None] * Bm[s:e, :, None, :]) * x[s:e, ..., None]
        _, h = blelloch_scan(abar, bx, axis=1)
        y[s:e] = np.einsum("mtdn,mtn->mtd", h, Cm[s:e]) + Dk[g][:, None, :] * x[s:e]

    parallel_map(run, _chunks(x.shape[0]))
    return y


def scan_backward(x, dt, Bm, Cm, A, Dk, gidx, dy):
    """Gradients ``(gx, gdelta, gB, gC, gA, gD)`` of ``sum(y * dy)``."""
    _check_batch(x, dt, Bm, Cm, A, Dk, gidx)
    if dy.shape != x.shape:
        raise ShapeError(f"S6 backward: dy {dy.shape} != y {x.shape}")
    gidx = np.ascontiguousarray(gidx, dtype=np.int64)
    gx, gdt = np.empty_like(x), np.empty_like(dt)
    gB, gC = np.zeros_like(Bm), np.zeros_like(Cm)
    chunks = _chunks(x.shape[0])
    partA = [np.zeros_like(A) for _ in chunks]
    partD = [np.zeros_like(Dk) for _ in chunks]

    def run(k):
        s, e = chunks[k]
        _backward_kernel(x, dt, Bm, Cm, A, Dk, gidx, dy, s, e, gx, gdt, gB, gC, partA[k], partD[k])

    parallel_map(run, range(len(chunks)))
    # fixed-order reduction keeps results independent of scheduling
    gA, gD = partA[0], partD[0]
    for k in range(1, len(chunks)):
        gA = gA + partA[k]
        gD = gD + partD[k]
    return gx, gdt, gB, gC, gA, gD


# -- single-sequence API -------------------------------------------------------

def s6_sequential(inp: S6Inputs) -> np.ndarray:
    inp.validate()
    return scan_sequential(*inp.batched())[0]


def s6_parallel_scan(inp: S6Inputs) -> np.ndarray:
    inp.validate()
    return scan_parallel(*inp.batched())[0]


def s6_backward(inp: S6Inputs, dy: np.ndarray) -> dict:
    inp.validate()
    if dy.shape != inp.x.shape:
        raise ShapeError(f"S6 backward: dy {dy.shape} != x {inp.x.shape}")
    gx, gdt, gB, gC, gA, gD = scan_backward(*inp.batched(), dy[None])
    return {"x": gx[0], "delta": gdt[0], "B": gB[0], "C": gC[0], "A": gA[0], "D_skip": gD[0]}


# -- tape op -------------------------------------------------------------------

def selective_scan(x: Tensor, delta: Tensor, Bm: Tensor, Cm: Tensor, A: Tensor, Dk: Tensor,
                   gidx: np.ndarray, method: str = "sequential") -> Tensor:
    """Differentiable batched S6. Tensors as in :func:`scan_sequential`."""
    arrays = (x.data, delta.data, Bm.data, Cm.data, A.data, Dk.data, gidx)
    if method == "sequential":
        y = scan_sequential(*arrays)
    elif method == "parallel":
        y = scan_parallel(*arrays)
    else:
        raise ValueError(f"unknown S6 method {method!r}")
    return make_result(y, (x, delta, Bm, Cm, A, Dk), lambda g: scan_backward(*arrays, g), "s6")


def selective_projection(x: Tensor, w_delta: Tensor, b_delta: Tensor, w_B: Tensor, w_C: Tensor):
    """Input-dependent ``(delta, B, C)`` for grouped sequences.

    ``x`` is ``[G, S, L, D]``; weights carry a leading group axis
    (``w_delta [G, D, D]``, ``b_delta [G, D]``, ``w_B``/``w_C`` ``[G, D, N]``).
    ``delta = softplus(x @ w_delta + b_delta)`` is positive by construction.
    """
    G, S, L, D = x.shape
    flat = ops.reshape(x, (G, S * L, D))
    pre = ops.add_broadcast(ops.matmul(flat, w_delta), ops.reshape(b_delta, (G, 1, D)))
    delta = ops.reshape(ops.softplus(pre), (G, S, L, D))
    N = w_B.shape[-1]
    Bm = ops.reshape(ops.matmul(flat, w_B), (G, S, L, N))
    Cm = ops.reshape(ops.matmul(flat, w_C), (G, S, L, N))
    return delta, Bm, Cm


def init_a_log(d_inner: int, d_state: int) -> np.ndarray:
    """``log(1..N)`` for every channel (real-diagonal initialisation)."""
    return np.tile(np.log(np.arange(1, d_state + 1, dtype=np.float64)), (d_inner, 1))


def init_delta_bias(rng, d_inner: int, dt_min: float, dt_max: float) -> np.ndarray:
    """Bias whose softplus is log-uniform in ``[dt_min, dt_max]``."""
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), d_inner))
    return dt + np.log(-np.expm1(-dt))
