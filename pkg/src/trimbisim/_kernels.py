"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The numba path is used when numba imports and ``TRIMBISIM_DISABLE_NUMBA``
is unset (or ``0``). Both paths must agree to rounding; the benchmark in
``benchmarks/bench_kernels.py`` times them against each other.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("TRIMBISIM_DISABLE_NUMBA", "").lower() in ("", "0", "false", "no")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# supervisory sweep: for many (error, input) pairs, find the first sample at
# which u(t_k) + C exp(M t_k) e0 leaves the open box ]lo, hi[.

def _sweep_numpy(ce, inputs, seg_of_sample, pair_e0, pair_input, lo, hi, chunk=2048):
    P = pair_e0.shape[0]
    first = np.full(P, -1, dtype=np.int64)
    disp = np.zeros(P)
    for start in range(0, P, chunk):
        stop = min(P, start + chunk)
        d = np.einsum("kmn,pn->pkm", ce, pair_e0[start:stop])
        u = inputs[pair_input[start:stop]][:, seg_of_sample, :]
        v = u + d
        bad = np.any((v <= lo) | (v >= hi), axis=2)
        hit = bad.any(axis=1)
        idx = np.argmax(bad, axis=1)
        first[start:stop] = np.where(hit, idx, -1)
        disp[start:stop] = np.abs(d).max(axis=(1, 2))
    return first, disp


def _sweep_loops(ce, inputs, seg_of_sample, pair_e0, pair_input, lo, hi):
    P = pair_e0.shape[0]
    K, m, n = ce.shape
    first = np.full(P, -1, dtype=np.int64)
    disp = np.zeros(P)
    for p in range(P):
        ii = pair_input[p]
        worst = 0.0
        for k in range(K):
            s = seg_of_sample[k]
            for i in range(m):
                acc = 0.0
                for j in range(n):
                    acc += ce[k, i, j] * pair_e0[p, j]
                if abs(acc) > worst:
                    worst = abs(acc)
                v = inputs[ii, s, i] + acc
                if first[p] < 0 and (v <= lo[i] or v >= hi[i]):
                    first[p] = k
        disp[p] = worst
    return first, disp


# --------------------------------------------------------------------------
# segment propagation: x_{k+1} = E x_k + G u_k for a batch of runs.

def _propagate_numpy(E, G, x0s, U):
    P, S, _ = U.shape
    n = E.shape[0]
    out = np.empty((P, S + 1, n))
    out[:, 0] = x0s
    x = x0s.copy()
    for s in range(S):
        x = x @ E.T + U[:, s, :] @ G.T
        out[:, s + 1] = x
    return out


def _propagate_loops(E, G, x0s, U):
    P, S, m = U.shape
    n = E.shape[0]
    out = np.empty((P, S + 1, n))
    for p in range(P):
        for i in range(n):
            out[p, 0, i] = x0s[p, i]
        for s in range(S):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += E[i, j] * out[p, s, j]
                for j in range(m):
                    acc += G[i, j] * U[p, s, j]
                out[p, s + 1, i] = acc
    return out


# --------------------------------------------------------------------------
# fine-step RK4 of the tracking pair
#   x' = A x + B u(t),   y' = A y + B (u(t) + C (y - x))
# with u piecewise constant on segments of length h. Used as the independent
# oracle for the exponential-based propagators.

def _rk4_loops(A, B, C, x0, y0, useg, h, dt, nsteps):
    n = A.shape[0]
    m = B.shape[1]
    xs = np.empty((nsteps + 1, n))
    ys = np.empty((nsteps + 1, n))
    xs[0] = x0
    ys[0] = y0
    x = x0.copy()
    y = y0.copy()
    nseg = useg.shape[0]
    kx = np.empty((4, n))
    ky = np.empty((4, n))
    for step in range(nsteps):
        t0 = step * dt
        # segment index from the midpoint to avoid boundary rounding
        s = int((t0 + 0.5 * dt) / h)
        if s >= nseg:
            s = nseg - 1
        u = useg[s]
        for stage in range(4):
            if stage == 0:
                cx = x.copy()
                cy = y.copy()
            elif stage == 3:
                cx = x + dt * kx[2]
                cy = y + dt * ky[2]
            else:
                cx = x + 0.5 * dt * kx[stage - 1]
                cy = y + 0.5 * dt * ky[stage - 1]
            for i in range(n):
                ax = 0.0
                ay = 0.0
                for j in range(n):
                    ax += A[i, j] * cx[j]
                    ay += A[i, j] * cy[j]
                for j in range(m):
                    fb = 0.0
                    for q in range(n):
                        fb += C[j, q] * (cy[q] - cx[q])
                    ax += B[i, j] * u[j]
                    ay += B[i, j] * (u[j] + fb)
                kx[stage, i] = ax
                ky[stage, i] = ay
        for i in range(n):
            x[i] += dt / 6.0 * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
            y[i] += dt / 6.0 * (ky[0, i] + 2.0 * ky[1, i] + 2.0 * ky[2, i] + ky[3, i])
        xs[step + 1] = x
        ys[step + 1] = y
    return xs, ys


def _rk4_numpy(A, B, C, x0, y0, useg, h, dt, nsteps):
    BC = B @ C
    xs = np.empty((nsteps + 1, A.shape[0]))
    ys = np.empty_like(xs)
    xs[0] = x = np.array(x0, dtype=float)
    ys[0] = y = np.array(y0, dtype=float)
    seg = np.minimum(((np.arange(nsteps) + 0.5) * dt / h).astype(np.int64), useg.shape[0] - 1)
    Bu = useg @ B.T

    def f(cx, cy, bu):
        return A @ cx + bu, A @ cy + bu + BC @ (cy - cx)

    for step in range(nsteps):
        bu = Bu[seg[step]]
        k1 = f(x, y, bu)
        k2 = f(x + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1], bu)
        k3 = f(x + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1], bu)
        k4 = f(x + dt * k3[0], y + dt * k3[1], bu)
        x = x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y = y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        xs[step + 1] = x
        ys[step + 1] = y
    return xs, ys


if _HAVE_NUMBA:
    _sweep_jit = njit(cache=True)(_sweep_loops)
    _propagate_jit = njit(cache=True)(_propagate_loops)
    _rk4_jit = njit(cache=True)(_rk4_loops)


def supervisory_sweep(ce, inputs, seg_of_sample, pair_e0, pair_input, lo, hi):
    """Return ``(first_exit, max_displacement)`` per pair.

    ``ce``: (K, m, n) stack of ``C exp(M t_k)``; ``inputs``: (I, S, m) segment
    values; ``seg_of_sample``: (K,) segment index of each sample time;
    ``pair_e0``: (P, n) initial errors; ``pair_input``: (P,) rows of ``inputs``.
    ``first_exit`` is -1 when every sample stays strictly inside the box.
    """
    args = (
        np.ascontiguousarray(ce, dtype=float),
        np.ascontiguousarray(inputs, dtype=float),
        np.ascontiguousarray(seg_of_sample, dtype=np.int64),
        np.ascontiguousarray(pair_e0, dtype=float),
        np.ascontiguousarray(pair_input, dtype=np.int64),
        np.ascontiguousarray(lo, dtype=float),
        np.ascontiguousarray(hi, dtype=float),
    )
    if USE_NUMBA:
        return _sweep_jit(*args)
    return _sweep_numpy(*args)


def propagate_segments(E, G, x0s, U):
    """States at every segment boundary, shape (P, S+1, n)."""
    args = (
        np.ascontiguousarray(E, dtype=float),
        np.ascontiguousarray(G, dtype=float),
        np.ascontiguousarray(np.atleast_2d(x0s), dtype=float),
        np.ascontiguousarray(U, dtype=float),
    )
    if USE_NUMBA:
        return _propagate_jit(*args)
    return _propagate_numpy(*args)


def rk4_tracking(A, B, C, x0, y0, useg, h, dt, nsteps):
    args = (
        np.ascontiguousarray(A, dtype=float),
        np.ascontiguousarray(B, dtype=float),
        np.ascontiguousarray(C, dtype=float),
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(y0, dtype=float),
        np.ascontiguousarray(np.atleast_2d(useg), dtype=float),
        float(h),
        float(dt),
        int(nsteps),
    )
    if USE_NUMBA:
        return _rk4_jit(*args)
    return _rk4_numpy(*args)
