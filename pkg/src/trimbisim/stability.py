"""Local stabilizability radius and the bounded-input divergence radius.

For an everywhere divergent A (every eigenvalue in the open right half-plane)
with inputs bounded by M in max-norm, two trajectories started further apart
than ``4 ||B|| M / Re(lambda_min)`` are claimed to stay at least
``2 M ||B|| ||exp(A t)|| / Re(lambda_min)`` apart. ``verify_divergence``
tests that lower bound on random bounded input pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError
from .linalg import as_matrix, eigenvalues, induced_inf_norm, is_hurwitz, min_real_part
from .report import CheckReport
from .system import LinearSystem, _segments, discretize
from .trimming import OpenBox, contains

EQUILIBRIUM_TOL = 1e-9


def local_stabilizability_radius(A, B, C, box: OpenBox, x_eq, u_eq) -> float:
    """Largest r with ``u_eq + C y`` inside ``box`` whenever ``||y - x_eq|| < r``.

    Returns ``math.inf`` when C is zero.
    """
    A, B, C = as_matrix(A, "A"), as_matrix(B, "B"), as_matrix(C, "C")
    x_eq = np.asarray(x_eq, dtype=float).reshape(-1)
    u_eq = np.asarray(u_eq, dtype=float).reshape(-1)
    if np.max(np.abs(A @ x_eq + B @ u_eq)) > EQUILIBRIUM_TOL:
        raise DomainError("(x_eq, u_eq) is not an equilibrium")
    if not contains(box, u_eq):
        raise DomainError("u_eq must lie strictly inside the input box")
    if not is_hurwitz(A + B @ C):
        raise DomainError("A+BC is not Hurwitz")
    c_norm = induced_inf_norm(C)
    if c_norm == 0.0:
        return math.inf
    return box.distance_to_boundary(u_eq) / c_norm


def is_everywhere_divergent(A) -> bool:
    return all(z.real > 0 for z in eigenvalues(A))


def divergence_radius(A, B, input_bound: float) -> float:
    """``4 ||B|| M / Re(lambda_min)`` for an everywhere divergent A."""
    if not input_bound > 0:
        raise DomainError("input bound must be positive")
    if not is_everywhere_divergent(A):
        raise DomainError("A is not everywhere divergent")
    return 4.0 * induced_inf_norm(B) * input_bound / min_real_part(A)


def divergence_lower_bound(A, B, input_bound: float, times) -> np.ndarray:
    """``2 M ||B|| ||exp(A t)|| / Re(lambda_min)`` on a time grid with constant spacing."""
    from .linalg import mat_exp
    lam = min_real_part(A)
    scale = 2.0 * input_bound * induced_inf_norm(B) / lam
    return np.array([scale * induced_inf_norm(mat_exp(A, t)) for t in times])


def verify_divergence(sys: LinearSystem, x0, y0, horizon: float, trials: int,
                      seed: int = 0, slack: float = 1e-6) -> CheckReport:
    """Random bounded input pairs must keep the two trajectories above the lower bound.

    Inputs are piecewise constant on ``sys.h`` with values uniform in the input
    box; trial ``i`` draws from the i-th child of ``SeedSequence(seed)``.
    Samples are the segment boundaries.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if not is_everywhere_divergent(sys.A):
        raise DomainError("A is not everywhere divergent")
    M = sys.input_box.sup_norm_bound()
    radius = divergence_radius(sys.A, sys.B, M)
    gap0 = float(np.max(np.abs(x0 - y0)))
    if not gap0 > radius:
        raise DomainError(f"initial separation {gap0:.6g} must exceed the divergence radius {radius:.6g}")
    S = _segments(horizon, sys.h)
    E, G = discretize(sys.A, sys.B, sys.h)
    lam = min_real_part(sys.A)
    scale = 2.0 * M * induced_inf_norm(sys.B) / lam
    bound = np.empty(S + 1)
    Phi = np.eye(sys.n)
    for k in range(S + 1):
        bound[k] = scale * induced_inf_norm(Phi)
        Phi = E @ Phi

    lo, hi = sys.input_box.lo, sys.input_box.hi
    children = np.random.SeedSequence(seed).spawn(trials)
    U = np.empty((2 * trials, S, sys.m))
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        U[2 * i] = rng.uniform(lo, hi, size=(S, sys.m))
        U[2 * i + 1] = rng.uniform(lo, hi, size=(S, sys.m))
    starts = np.empty((2 * trials, sys.n))
    starts[0::2] = x0
    starts[1::2] = y0
    traj = _kernels.propagate_segments(E, G, starts, U)
    sep = np.max(np.abs(traj[0::2] - traj[1::2]), axis=2)     # (trials, S+1)
    margin = sep - bound + slack * (1.0 + bound)
    cex = []
    for i in range(trials):
        bad = np.nonzero(margin[i] < 0)[0]
        if len(bad):
            k = int(bad[0])
            cex.append({"trial": i, "time": k * sys.h, "separation": float(sep[i, k]),
                        "bound": float(bound[k]), "violations": int(len(bad))})
    ratio = sep / np.maximum(bound, 1e-300)
    return CheckReport.from_counterexamples(
        "divergence", cex,
        stats={"samples": int(sep.size), "min_separation_to_bound_ratio": float(ratio.min()),
               "final_bound": float(bound[-1])},
        meta={"seed": seed, "trials": trials, "horizon": horizon, "input_bound": M,
              "radius": radius, "initial_separation": gap0, "slack": slack})


@dataclass
class StabilizabilityReport:
    hurwitz: bool
    eigenvalues_A: list
    eigenvalues_closed_loop: list
    local_radius: float | None
    divergence_radius: float | None

    def lines(self) -> list[str]:
        fmt = lambda zs: "[" + ", ".join("%.9g%+.9gj" % (z.real, z.imag) for z in zs) + "]"
        out = [
            f"hurwitz={self.hurwitz}",
            f"eigenvalues_A={fmt(self.eigenvalues_A)}",
            f"eigenvalues_A_plus_BC={fmt(self.eigenvalues_closed_loop)}",
        ]
        if self.local_radius is not None:
            out.append("local_radius=%.9g" % self.local_radius)
        if self.divergence_radius is not None:
            out.append("divergence_radius=%.9g" % self.divergence_radius)
        return out

    def to_dict(self) -> dict:
        cx = lambda zs: [[z.real, z.imag] for z in zs]
        return {
            "hurwitz": self.hurwitz,
            "eigenvalues_A": cx(self.eigenvalues_A),
            "eigenvalues_A_plus_BC": cx(self.eigenvalues_closed_loop),
            "local_radius": self.local_radius,
            "divergence_radius": self.divergence_radius,
        }


def stabilizability_report(sys: LinearSystem, C, x_eq=None, u_eq=None) -> StabilizabilityReport:
    """Summary around the equilibrium (x_eq, u_eq), default the origin."""
    M = sys.closed_loop(C)
    hurwitz = is_hurwitz(M)
    x_eq = np.zeros(sys.n) if x_eq is None else x_eq
    u_eq = np.zeros(sys.m) if u_eq is None else u_eq
    try:
        local = local_stabilizability_radius(sys.A, sys.B, C, sys.input_box, x_eq, u_eq)
    except DomainError:
        local = None
    div = None
    if is_everywhere_divergent(sys.A):
        div = divergence_radius(sys.A, sys.B, sys.input_box.sup_norm_bound())
    return StabilizabilityReport(hurwitz, eigenvalues(sys.A), eigenvalues(M), local, div)
