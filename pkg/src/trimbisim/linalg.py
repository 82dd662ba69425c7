"""Small dense real-matrix numerics.

Matrices are plain 2-D ``float64`` numpy arrays. Everything here targets
desk-scale dimensions (n <= 12): the exponential uses scaling and squaring
around a degree-13 Pade approximant, eigenvalues come from a Hessenberg
reduction followed by Francis double-shift QR.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, NumericalFailure

HURWITZ_TOL = 1e-9

# Degree-13 Pade coefficients and the matching 1-norm threshold (Higham 2005).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Validate and copy ``M`` into a finite 2-D float array."""
    arr = np.array(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} has non-finite entries")
    return arr


def _square(M, name="matrix") -> np.ndarray:
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def induced_inf_norm(M) -> float:
    """Operator norm induced by the vector max-norm: the largest absolute row sum."""
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.abs(arr).sum(axis=1).max())


def vec_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def mat_exp(M, t: float = 1.0) -> np.ndarray:
    """Return ``exp(M t)``.

    Scaling and squaring: ``M t`` is halved ``s`` times until its 1-norm is
    below the degree-13 threshold, the Pade approximant is evaluated, and the
    result squared back ``s`` times.
    """
    A = _square(M) * float(t)
    if not math.isfinite(float(t)):
        raise DimensionError("t must be finite")
    n = A.shape[0]
    ident = np.eye(n)
    norm1 = float(np.abs(A).sum(axis=0).max())
    if norm1 == 0.0:
        return ident
    s = max(0, int(math.ceil(math.log2(norm1 / _THETA13))))
    A = A / (2.0 ** s)

    b = _PADE13
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def _hessenberg(a: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity preserving)."""
    a = a.copy()
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        a[k + 1:, k:] -= 2.0 * np.outer(v, v @ a[k + 1:, k:])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0
    return a


def _eig2(a, b, c, d) -> list[complex]:
    half_tr = 0.5 * (a + d)
    disc = 0.25 * (a - d) ** 2 + b * c
    if disc >= 0.0:
        r = math.sqrt(disc)
        # avoid cancellation: compute the larger-magnitude root first
        big = half_tr + math.copysign(r, half_tr) if half_tr != 0.0 else r
        det = a * d - b * c
        small = det / big if big != 0.0 else half_tr - r
        return sorted([complex(big), complex(small)], key=lambda z: (z.real, z.imag))
    r = math.sqrt(-disc)
    return [complex(half_tr, -r), complex(half_tr, r)]


def _hqr(h: np.ndarray, budget: int) -> list[complex]:
    """Francis double-shift QR on an upper Hessenberg matrix (modified in place)."""
    a = h
    n = a.shape[0]
    wr = [0.0] * n
    wi = [0.0] * n
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i, j])
    deflate_tol = 1e-12 * anorm
    total_its = 0
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= deflate_tol or abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total_its >= budget:
                raise NumericalFailure(
                    f"QR iteration did not converge within {budget} iterations")
            if its in (10, 20):
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total_its += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            k = m
            while k <= nn - 1:
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s != 0.0:
                    if k == m:
                        if l != m:
                            a[k, k - 1] = -a[k, k - 1]
                    else:
                        a[k, k - 1] = -s * x
                    p += s
                    x = p / s
                    y = q / s
                    z = r / s
                    q /= p
                    r /= p
                    for j in range(k, nn + 1):
                        p = a[k, j] + q * a[k + 1, j]
                        if k != nn - 1:
                            p += r * a[k + 2, j]
                            a[k + 2, j] -= p * z
                        a[k + 1, j] -= p * y
                        a[k, j] -= p * x
                    mmin = nn if nn < k + 3 else k + 3
                    for i in range(l, mmin + 1):
                        p = x * a[i, k] + y * a[i, k + 1]
                        if k != nn - 1:
                            p += z * a[i, k + 2]
                            a[i, k + 2] -= p * r
                        a[i, k + 1] -= p * q
                        a[i, k] -= p
                k += 1
    return [complex(wr[i], wi[i]) for i in range(n)]


def eigenvalues(M) -> list[complex]:
    """All eigenvalues of a square real matrix, with multiplicity.

    Sorted by (real, imag). 2x2 matrices use the closed-form quadratic.
    """
    a = _square(M)
    n = a.shape[0]
    if n == 1:
        return [complex(a[0, 0])]
    if n == 2:
        return _eig2(a[0, 0], a[0, 1], a[1, 0], a[1, 1])
    vals = _hqr(_hessenberg(a), budget=100 * n)
    return sorted(vals, key=lambda z: (z.real, z.imag))


def min_real_part(M) -> float:
    return min(z.real for z in eigenvalues(M))


def max_real_part(M) -> float:
    return max(z.real for z in eigenvalues(M))


def is_hurwitz(M, tol: float = HURWITZ_TOL) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return all(z.real < -tol for z in eigenvalues(M))
