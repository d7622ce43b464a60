"""Selective state-space scan: input-dependent gating over a sequence.

The core recurrence, per channel ``c`` with a small hidden state of size N:

    h_t = abar_t * h_{t-1} + bx_t          (elementwise over (C, N))
    y_t[c] = sum_n cmat_t[c, n] * h_t[c, n] + d[c] * u_t[c]

where ``abar = exp(delta * A)`` comes from zero-order-hold discretization of
a strictly negative diagonal transition ``A = -exp(a_log)``, and ``bx``
carries the Euler-discretized input injection ``delta * B_t * u_t``.  The
projections producing ``B_t``, ``C_t`` and the per-channel step size
``delta_t`` are all functions of the input, which is what makes the scan
selective.

Two compiled execution paths are provided: a sequential kernel, and a
chunk-parallel kernel that computes per-chunk affine composites in parallel,
combines chunk boundaries serially, then rescans chunks in parallel from the
exact boundary states.  With a single chunk the parallel kernel degenerates
to the sequential loop and produces bit-identical output.

The differentiable path (``s6_forward``) runs the sequential kernel for the
forward pass and an analytic reverse scan for gradients.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

# must happen before numba is first imported anywhere in the process
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numba  # noqa: E402
import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402

from mammorisk.tensor import (  # noqa: E402
    ShapeError, Tensor, _emit, expand, exp as t_exp, matmul, mul, permute,
    reshape, scale, softplus,
)

# the tbb layer is not reliably available; workqueue always is
numba.config.THREADING_LAYER = "workqueue"

MAX_THREADS = int(os.environ["NUMBA_NUM_THREADS"])


# ---------------------------------------------------------------------------
# parameters


@dataclass
class SsmParams:
    """Learnable pieces of one selective-scan unit (shared by all directions).

    a_log:   (C, N)  log-magnitudes of the diagonal transition; A = -exp(a_log)
    w_b:     (N, C)  input projection producing B_t
    w_c:     (N, C)  readout projection producing C_t
    w_delta: (C, C)  projection producing the per-channel step size
    b_delta: (C,)    step-size bias (softplus-transformed)
    d_skip:  (C,)    direct input-to-output skip
    """

    a_log: Tensor
    w_b: Tensor
    w_c: Tensor
    w_delta: Tensor
    b_delta: Tensor
    d_skip: Tensor

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        return {
            prefix + "a_log": self.a_log,
            prefix + "w_b": self.w_b,
            prefix + "w_c": self.w_c,
            prefix + "w_delta": self.w_delta,
            prefix + "b_delta": self.b_delta,
            prefix + "d_skip": self.d_skip,
        }


def init_ssm(rng: np.random.Generator, channels: int, state_dim: int,
             dtype=np.float64, dt_min: float = 1e-3, dt_max: float = 1e-1) -> SsmParams:
    """Initialize with real diagonal states 1..N and log-uniform step sizes."""
    a = np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (channels, 1))
    a_log = np.log(a)
    scale = 1.0 / np.sqrt(channels)
    w_b = rng.normal(0.0, scale, size=(state_dim, channels))
    w_c = rng.normal(0.0, scale, size=(state_dim, channels))
    w_delta = rng.normal(0.0, 0.5 * scale, size=(channels, channels))
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=channels))
    b_delta = np.log(np.expm1(dt))  # softplus(b_delta) == dt
    d_skip = np.ones(channels)
    mk = lambda arr: Tensor(arr.astype(dtype), requires_grad=True)
    return SsmParams(mk(a_log), mk(w_b), mk(w_c), mk(w_delta), mk(b_delta),
                     mk(d_skip))


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _scan_seq_kernel(abar, bx, cmat, d, u):
    L, C, N = abar.shape
    y = np.empty((L, C), dtype=abar.dtype)
    h = np.zeros((C, N), dtype=abar.dtype)
    for t in range(L):
        for ci in range(C):
            acc = 0.0
            for n in range(N):
                h[ci, n] = abar[t, ci, n] * h[ci, n] + bx[t, ci, n]
                acc += cmat[t, ci, n] * h[ci, n]
            y[t, ci] = acc + d[ci] * u[t, ci]
    return y


@njit(cache=True)
def _scan_seq_hist_kernel(abar, bx, cmat, d, u):
    L, C, N = abar.shape
    y = np.empty((L, C), dtype=abar.dtype)
    hist = np.empty((L, C, N), dtype=abar.dtype)
    h = np.zeros((C, N), dtype=abar.dtype)
    for t in range(L):
        for ci in range(C):
            acc = 0.0
            for n in range(N):
                h[ci, n] = abar[t, ci, n] * h[ci, n] + bx[t, ci, n]
                hist[t, ci, n] = h[ci, n]
                acc += cmat[t, ci, n] * h[ci, n]
            y[t, ci] = acc + d[ci] * u[t, ci]
    return y, hist


@njit(parallel=True, cache=True)
def _scan_par_kernel(abar, bx, cmat, d, u, chunk):
    L, C, N = abar.shape
    n_chunks = (L + chunk - 1) // chunk
    # pass 1: per-chunk affine composites (transition product, local state)
    prod = np.empty((n_chunks, C, N), dtype=abar.dtype)
    loc = np.empty((n_chunks, C, N), dtype=abar.dtype)
    for g in prange(n_chunks):
        t0 = g * chunk
        t1 = min(t0 + chunk, L)
        p = np.ones((C, N), dtype=abar.dtype)
        hl = np.zeros((C, N), dtype=abar.dtype)
        for t in range(t0, t1):
            for ci in range(C):
                for n in range(N):
                    hl[ci, n] = abar[t, ci, n] * hl[ci, n] + bx[t, ci, n]
                    p[ci, n] = p[ci, n] * abar[t, ci, n]
        prod[g] = p
        loc[g] = hl
    # serial combine across chunk boundaries
    bound = np.zeros((n_chunks, C, N), dtype=abar.dtype)
    for g in range(1, n_chunks):
        for ci in range(C):
            for n in range(N):
                bound[g, ci, n] = loc[g - 1, ci, n] \
                    + prod[g - 1, ci, n] * bound[g - 1, ci, n]
    # pass 2: rescan each chunk from its exact boundary state
    y = np.empty((L, C), dtype=abar.dtype)
    for g in prange(n_chunks):
        t0 = g * chunk
        t1 = min(t0 + chunk, L)
        h = bound[g].copy()
        for t in range(t0, t1):
            for ci in range(C):
                acc = 0.0
                for n in range(N):
                    h[ci, n] = abar[t, ci, n] * h[ci, n] + bx[t, ci, n]
                    acc += cmat[t, ci, n] * h[ci, n]
                y[t, ci] = acc + d[ci] * u[t, ci]
    return y


def _check_scan_args(abar, bx, cmat, d, u):
    if abar.ndim != 3:
        raise ShapeError(f"scan expects (L, C, N) inputs, got {abar.shape}")
    L, C, N = abar.shape
    if bx.shape != (L, C, N) or cmat.shape != (L, C, N):
        raise ShapeError("scan: abar/bx/cmat shapes disagree")
    if d.shape != (C,) or u.shape != (L, C):
        raise ShapeError("scan: d must be (C,), u must be (L, C)")


def selective_scan_seq(abar: np.ndarray, bx: np.ndarray, cmat: np.ndarray,
                       d: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Reference execution: strict left-to-right recurrence."""
    _check_scan_args(abar, bx, cmat, d, u)
    return _scan_seq_kernel(np.ascontiguousarray(abar), np.ascontiguousarray(bx),
                            np.ascontiguousarray(cmat), np.ascontiguousarray(d),
                            np.ascontiguousarray(u))


def selective_scan_par(abar: np.ndarray, bx: np.ndarray, cmat: np.ndarray,
                       d: np.ndarray, u: np.ndarray, *, chunk: int = 64,
                       threads: int | None = None) -> np.ndarray:
    """Chunk-parallel execution; equals the sequential scan up to rounding.

    With ``chunk >= L`` the result is bit-identical to the sequential kernel.
    """
    _check_scan_args(abar, bx, cmat, d, u)
    if chunk < 1:
        raise ValueError("chunk must be positive")
    if threads is not None:
        numba.set_num_threads(max(1, min(threads, MAX_THREADS)))
    return _scan_par_kernel(np.ascontiguousarray(abar), np.ascontiguousarray(bx),
                            np.ascontiguousarray(cmat), np.ascontiguousarray(d),
                            np.ascontiguousarray(u), chunk)


# ---------------------------------------------------------------------------
# differentiable path


def _scan_backward(abar, bx, cmat, d, u, hist, dy):
    L, C, N = abar.shape
    dd = (dy * u).sum(axis=0)
    du = dy * d[None, :]
    dcmat = dy[:, :, None] * hist
    dabar = np.empty_like(abar)
    dbx = np.empty_like(bx)
    g = np.zeros((C, N), dtype=abar.dtype)
    for t in range(L - 1, -1, -1):
        g = dy[t][:, None] * cmat[t] + g
        dbx[t] = g
        dabar[t] = g * (hist[t - 1] if t > 0 else 0.0)
        g = abar[t] * g
    return dabar, dbx, dcmat, dd, du


def scan_core(abar: Tensor, bx: Tensor, cmat: Tensor, d: Tensor,
              u: Tensor) -> Tensor:
    """Differentiable scan: compiled forward, analytic reverse-scan backward."""
    _check_scan_args(abar.data, bx.data, cmat.data, d.data, u.data)
    y, hist = _scan_seq_hist_kernel(abar.data, bx.data, cmat.data, d.data, u.data)

    def backward(dy):
        return _scan_backward(abar.data, bx.data, cmat.data, d.data, u.data,
                              hist, dy)

    return _emit("scan", y, (abar, bx, cmat, d, u), backward)


def discretize(params: SsmParams, u: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Build the scan operands (abar, bx, cmat) from an input sequence (L, C)."""
    L, C = u.shape
    N = params.a_log.shape[1]
    delta = softplus(matmul(u, params.w_delta) + _row(params.b_delta, L))
    delta_e = expand(reshape(delta, (L, C, 1)), (L, C, N))
    a_neg = scale(t_exp(params.a_log), -1.0)
    abar = t_exp(mul(delta_e, expand(reshape(a_neg, (1, C, N)), (L, C, N))))
    bvec = matmul(u, _transposed(params.w_b))      # (L, N)
    cvec = matmul(u, _transposed(params.w_c))      # (L, N)
    b_e = expand(reshape(bvec, (L, 1, N)), (L, C, N))
    u_e = expand(reshape(u, (L, C, 1)), (L, C, N))
    bx = mul(mul(delta_e, b_e), u_e)
    cmat = expand(reshape(cvec, (L, 1, N)), (L, C, N))
    return abar, bx, cmat


def _row(bias: Tensor, rows: int) -> Tensor:
    c = bias.shape[0]
    return expand(reshape(bias, (1, c)), (rows, c))


def _transposed(w: Tensor) -> Tensor:
    return permute(w, (1, 0))


def s6_forward(params: SsmParams, u: Tensor) -> Tensor:
    """Full selective scan of one (L, C) sequence, differentiable end to end."""
    abar, bx, cmat = discretize(params, u)
    return scan_core(abar, bx, cmat, params.d_skip, u)


# ---------------------------------------------------------------------------
# benchmark support


def make_scan_case(rng: np.random.Generator, L: int, C: int, N: int,
                   dtype=np.float64):
    """Random but well-conditioned scan operands (decay factors in (0, 1))."""
    abar = np.exp(-np.abs(rng.normal(0.5, 0.4, size=(L, C, N)))).astype(dtype)
    bx = rng.standard_normal((L, C, N)).astype(dtype)
    cmat = rng.standard_normal((L, C, N)).astype(dtype)
    d = rng.standard_normal(C).astype(dtype)
    u = rng.standard_normal((L, C)).astype(dtype)
    return abar, bx, cmat, d, u


def run_benchmark(lmax: int = 4096, channels: int = 64, state_dim: int = 8,
                  chunks: tuple[int, ...] = (64, 128, 256),
                  threads_list: tuple[int, ...] = (1, 2, 4),
                  reps: int = 3, seed: int = 0) -> list[dict]:
    """Time both kernels over a size sweep; returns one dict per CSV row."""
    rng = np.random.default_rng(seed)
    rows = []
    lengths = sorted({max(256, lmax // 4), max(256, lmax // 2), lmax})
    for L in lengths:
        abar, bx, cmat, d, u = make_scan_case(rng, L, channels, state_dim)
        ref = selective_scan_seq(abar, bx, cmat, d, u)  # warm + reference
        best = min(_time_once(selective_scan_seq, abar, bx, cmat, d, u)
                   for _ in range(reps))
        rows.append({"L": L, "C": channels, "chunk": 0, "threads": 1,
                     "impl": "seq", "wall_ms": best * 1e3,
                     "max_abs_diff_vs_seq": 0.0})
        for threads in threads_list:
            for chunk in chunks:
                out = selective_scan_par(abar, bx, cmat, d, u, chunk=chunk,
                                         threads=threads)
                diff = float(np.max(np.abs(out - ref)))
                best = min(
                    _time_once(selective_scan_par, abar, bx, cmat, d, u,
                               chunk=chunk, threads=threads)
                    for _ in range(reps))
                rows.append({"L": L, "C": channels, "chunk": chunk,
                             "threads": threads, "impl": "par",
                             "wall_ms": best * 1e3,
                             "max_abs_diff_vs_seq": diff})
    return rows


def _time_once(fn, *args, **kwargs) -> float:
    t0 = time.perf_counter()
    fn(*args, **kwargs)
    return time.perf_counter() - t0
