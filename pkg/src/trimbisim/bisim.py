"""Finite metric transition systems and the relational checkers.

A ``FiniteMTS`` is a finite state set with max-norm outputs, an indexed input
catalog and a transition list. The checkers here decide epsilon-approximate
simulation for a given relation, trimmed-input approximate bisimulation, and
near-completeness; ``check_result1_sampled`` tests the continuous-vs-grid
bisimulation claim on sampled states using supervisory matching moves.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .abstraction import (
    AbstractionParams,
    Region,
    grid_coords,
    quantize_index,
    related_grid_indices,
)
from .errors import DimensionError, DomainError
from .linalg import mat_exp
from .report import CheckReport
from .system import (
    LinearSystem,
    PiecewiseConstantInput,
    SupervisoryInput,
    displacement_stack,
    reach_many,
    supervisory_exit_batch,
)
from .trimming import OpenBox, contains_all, trim_box, trajectory_in_trimmed_set

# slack for rounding in max-norm comparisons of grid coordinates
PROX_TOL = 1e-12


class FiniteMTS:
    """Finite metric transition system with identity-like output map ``outputs[i]``."""

    def __init__(self, outputs, catalog, transitions):
        out = np.atleast_2d(np.asarray(outputs, dtype=float))
        if out.size == 0:
            out = out.reshape(0, out.shape[-1] if out.ndim == 2 else 0)
        tr = np.asarray(transitions, dtype=np.int64).reshape(-1, 3)
        self.outputs = out
        self.catalog = tuple(catalog)
        self.transitions = tr
        n = out.shape[0]
        if len(tr) and (tr[:, [0, 2]].min() < 0 or tr[:, [0, 2]].max() >= n):
            raise DomainError("transition endpoint out of range")
        if len(tr) and (tr[:, 1].min() < 0 or tr[:, 1].max() >= len(self.catalog)):
            raise DomainError("transition label out of range")
        self._succ = None

    @property
    def n_states(self) -> int:
        return self.outputs.shape[0]

    def successors(self) -> list[list[tuple[int, int]]]:
        """Per state, the list of (input, target) pairs."""
        if self._succ is None:
            succ = [[] for _ in range(self.n_states)]
            for s, i, d in self.transitions:
                succ[int(s)].append((int(i), int(d)))
            self._succ = succ
        return self._succ

    def __repr__(self):
        return f"FiniteMTS(states={self.n_states}, inputs={len(self.catalog)}, transitions={len(self.transitions)})"


def identity_relation(T: FiniteMTS) -> frozenset:
    return frozenset((i, i) for i in range(T.n_states))


def inverse(R) -> frozenset:
    return frozenset((b, a) for a, b in R)


def proximity_relation(T1: FiniteMTS, T2: FiniteMTS, eps: float) -> frozenset:
    """All pairs whose outputs lie within eps (the canonical proximity relation)."""
    if T1.n_states == 0 or T2.n_states == 0:
        return frozenset()
    pairs = set()
    for i, o in enumerate(T1.outputs):
        d = np.max(np.abs(T2.outputs - o), axis=1)
        for j in np.nonzero(d <= eps + PROX_TOL)[0]:
            pairs.add((i, int(j)))
    return frozenset(pairs)


def is_approx_simulation(R, T1: FiniteMTS, T2: FiniteMTS, eps: float) -> CheckReport:
    """Does ``R`` witness that T2 eps-approximately simulates T1?

    The matching input in T2 is unconstrained; only targets must be related.
    """
    R = frozenset((int(a), int(b)) for a, b in R)
    if not R:
        raise DomainError("a simulation relation must be non-empty")
    if T1.outputs.shape[1] != T2.outputs.shape[1]:
        raise DimensionError("output spaces differ")
    succ1, succ2 = T1.successors(), T2.successors()
    cex = []
    n_trans = 0
    for a, b in sorted(R):
        gap = float(np.max(np.abs(T1.outputs[a] - T2.outputs[b])))
        if gap > eps + PROX_TOL:
            cex.append({"pair": [a, b], "transition": None, "reason": "proximity", "gap": gap})
        targets2 = {d for _, d in succ2[b]}
        for u, y in succ1[a]:
            n_trans += 1
            if not any((y, y2) in R for y2 in targets2):
                cex.append({"pair": [a, b], "transition": [a, u, y], "reason": "no-matching-move"})
    return CheckReport.from_counterexamples(
        "approx_simulation", cex,
        stats={"pairs_checked": len(R), "transitions_checked": n_trans},
        meta={"epsilon": eps})


def trim_model(T: FiniteMTS, box: OpenBox, rho: float) -> FiniteMTS:
    """Drop catalog entries outside the rho-trimmed trajectory set, and their transitions."""
    keep = [trajectory_in_trimmed_set(u, box, rho) for u in T.catalog]
    new_id = np.cumsum(keep) - 1
    catalog = [u for u, k in zip(T.catalog, keep) if k]
    rows = [(s, int(new_id[i]), d) for s, i, d in T.transitions if keep[i]]
    return FiniteMTS(T.outputs, catalog, rows)


def is_trimmed_bisim(T: FiniteMTS, Tp: FiniteMTS, R, rho: float, eps: float,
                     box: OpenBox) -> CheckReport:
    R = frozenset(R)
    fwd = is_approx_simulation(R, trim_model(T, box, rho), Tp, eps)
    bwd = is_approx_simulation(inverse(R), trim_model(Tp, box, rho), T, eps)
    cex = [dict(c, direction="forward") for c in fwd.counterexamples]
    cex += [dict(c, direction="backward") for c in bwd.counterexamples]
    return CheckReport.from_counterexamples(
        "trimmed_bisimulation", cex,
        stats={"forward_" + k: v for k, v in fwd.stats.items()}
        | {"backward_" + k: v for k, v in bwd.stats.items()},
        meta={"epsilon": eps, "rho": rho})


def _input_key(u):
    return u.key() if hasattr(u, "key") else u


def canonical_form(T: FiniteMTS):
    """Order-independent description: sorted outputs, catalog keys and edges."""
    outs = [tuple(round(float(v), 9) for v in o) for o in T.outputs]
    keys = [_input_key(u) for u in T.catalog]
    edges = sorted((outs[s], keys[i], outs[d]) for s, i, d in T.transitions)
    return (tuple(sorted(outs)), tuple(sorted(keys)), tuple(edges))


def mts_equal(T1: FiniteMTS, T2: FiniteMTS) -> bool:
    return canonical_form(T1) == canonical_form(T2)


def near_completeness_certificate(T: FiniteMTS, T_hat: FiniteMTS, alpha: float, beta: float,
                                  T_prime: FiniteMTS, box: OpenBox, eps: float) -> CheckReport:
    """Certify that ``T_hat`` is (alpha+beta)-near complete with respect to ``T``.

    Witness ``T_prime``: its beta-trimming must equal ``T_hat`` and it must
    eps-approximately simulate the alpha-trimming of ``T`` under the canonical
    proximity relation.
    """
    if not (alpha > 0 and beta > 0):
        raise DomainError("alpha and beta must be positive")
    gamma = alpha + beta
    cex = []
    if not mts_equal(trim_model(T_prime, box, beta), T_hat):
        cex.append({"reason": "trimmed-witness-mismatch", "beta": beta})
    T_alpha = trim_model(T, box, alpha)
    R = proximity_relation(T_alpha, T_prime, eps)
    if not R:
        cex.append({"reason": "empty-relation"})
        sim_stats = {}
    else:
        sim = is_approx_simulation(R, T_alpha, T_prime, eps)
        cex += [dict(c, part="simulation") for c in sim.counterexamples]
        sim_stats = sim.stats
    return CheckReport.from_counterexamples(
        "near_completeness", cex, stats=sim_stats,
        meta={"alpha": alpha, "beta": beta, "gamma": gamma, "epsilon": eps})


# --------------------------------------------------------------------------
# sampled check of the continuous-vs-grid trimmed bisimulation

@dataclass(frozen=True)
class SamplePlan:
    n_lowdisc: int = 64          # scrambled Sobol states in the region
    n_corner_bases: int = 16     # grid points whose eps-ball corners are sampled
    n_constant: int | None = None  # constant trimmed levels (None: all of them)
    n_random: int = 10           # random piecewise-constant trimmed inputs
    seed: int = 0
    dt: float = 1e-3
    nc_states: int = 8           # continuous states in the near-completeness fragment
    nc_levels: int = 19          # input levels in the near-completeness fragment


def sample_states(region: Region, params: AbstractionParams, plan: SamplePlan) -> np.ndarray:
    """Low-discrepancy points in the region plus eps-ball corners of random grid points."""
    n = region.dim
    lo, hi = np.array(region.lower), np.array(region.upper)
    pts = []
    if plan.n_lowdisc:
        sob = qmc.Sobol(d=n, scramble=True, seed=plan.seed)
        with warnings.catch_warnings():
            # counts that are not powers of two only lose the balance property
            warnings.simplefilter("ignore", UserWarning)
            pts.append(lo + sob.random(plan.n_lowdisc) * (hi - lo))
    if plan.n_corner_bases:
        rng = np.random.default_rng(plan.seed)
        idx = region.grid_indices(params.eta)
        if len(idx):
            base = grid_coords(idx[rng.integers(0, len(idx), plan.n_corner_bases)], params.eta)
            signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
            pts.append((base[:, None, :] + params.epsilon * signs[None, :, :]).reshape(-1, n))
    return np.concatenate(pts) if pts else np.empty((0, n))


def _spread(count: int, k: int | None) -> np.ndarray:
    if k is None or k >= count:
        return np.arange(count)
    return np.unique(np.round(np.linspace(0, count - 1, k)).astype(int))


def trimmed_test_inputs(sys: LinearSystem, params: AbstractionParams, plan: SamplePlan,
                        rho: float | None = None) -> list[PiecewiseConstantInput]:
    """Constant trimmed grid levels plus random trimmed piecewise-constant inputs, all at h=sys.h."""
    rho = params.rho if rho is None else rho
    levels = sys.quantized_inputs.restricted(trim_box(sys.input_box, rho))
    if levels is None:
        return []
    pts = levels.points()
    nseg = round(params.tau / sys.h)
    out = [PiecewiseConstantInput.constant(pts[i], params.tau, sys.h)
           for i in _spread(len(pts), plan.n_constant)]
    rng = np.random.default_rng(plan.seed + 1)
    for _ in range(plan.n_random):
        out.append(PiecewiseConstantInput(sys.h, pts[rng.integers(0, len(pts), nseg)]))
    return out


def check_result1_sampled(sys: LinearSystem, C, params: AbstractionParams, region: Region,
                          plan: SamplePlan = SamplePlan()) -> CheckReport:
    """Sampled two-way check of the rho-trimmed eps-approximate bisimulation.

    Relation: (x, g) with x sampled, g on the eta-grid, ||x - g|| <= eps.
    Completeness: x ->u x' (u trimmed) is matched by g under u_{g,x}, landing
    on the quantized successor g' with ||x' - g'|| <= eps.
    Soundness: the grid move g ->u g' is matched by x under u_{x,g}, landing
    within eps of g'. Both matching inputs must stay inside the open input box.
    """
    eps, eta, tau = params.epsilon, params.eta, params.tau
    M = sys.closed_loop(C)
    Phi = mat_exp(M, tau)
    xs = sample_states(region, params, plan)
    inputs = trimmed_test_inputs(sys, params, plan)
    meta = {
        "seed": plan.seed, "epsilon": eps, "eta": eta, "tau": tau, "rho": params.rho,
        "sampled_states": len(xs), "inputs": len(inputs), "dt": plan.dt,
        "certified": bool(params.certified(sys)),
    }
    if not len(inputs):
        return CheckReport.from_counterexamples(
            "result1_sampled", [{"reason": "empty-trimmed-input-set"}], meta=meta)

    pair_x, pair_g = [], []
    for i, x in enumerate(xs):
        for gi in related_grid_indices(x, eps, eta):
            pair_x.append(i)
            pair_g.append(gi)
    pair_x = np.array(pair_x)
    G = grid_coords(np.array(pair_g), eta)
    X = xs[pair_x]
    P = len(pair_x)
    nI = len(inputs)

    ce = displacement_stack(sys, C, tau, plan.dt)
    rep_e = np.repeat(G - X, nI, axis=0)
    rep_u = np.tile(np.arange(nI), P)
    exit_c, disp_c = supervisory_exit_batch(sys, C, rep_e, inputs, rep_u, tau, plan.dt, ce=ce)
    exit_s, disp_s = supervisory_exit_batch(sys, C, -rep_e, inputs, rep_u, tau, plan.dt, ce=ce)
    exit_c = exit_c.reshape(P, nI)
    exit_s = exit_s.reshape(P, nI)

    cex = []
    worst = {"completeness": 0.0, "soundness": 0.0}
    drift = (Phi @ (G - X).T).T
    for j, u in enumerate(inputs):
        x_end = reach_many(sys, X, u, tau)
        g_cont = reach_many(sys, G, u, tau)
        # completeness: g tracks x
        g_succ_c = grid_coords(quantize_index(x_end + drift, eta), eta)
        d_c = np.max(np.abs(x_end - g_succ_c), axis=1)
        # soundness: x tracks g's grid move
        g_succ_s = grid_coords(quantize_index(g_cont, eta), eta)
        x_track = g_cont - drift
        d_s = np.max(np.abs(x_track - g_succ_s), axis=1)
        worst["completeness"] = max(worst["completeness"], float(d_c.max()))
        worst["soundness"] = max(worst["soundness"], float(d_s.max()))
        for direction, dist, ex, end_a, end_b in (
            ("completeness", d_c, exit_c[:, j], x_end, g_succ_c),
            ("soundness", d_s, exit_s[:, j], x_track, g_succ_s),
        ):
            for p in np.nonzero((dist > eps + PROX_TOL) | ~np.isnan(ex))[0]:
                reason = "proximity" if dist[p] > eps + PROX_TOL else "input-exits-box"
                if dist[p] > eps + PROX_TOL and not np.isnan(ex[p]):
                    reason = "proximity+input-exits-box"
                cex.append({
                    "direction": direction, "reason": reason,
                    "x": X[p], "g": G[p], "input": j,
                    "input_first_value": u.values[0],
                    "continuous_end": end_a[p], "grid_end": end_b[p],
                    "distance": float(dist[p]),
                    "exit_time": None if np.isnan(ex[p]) else float(ex[p]),
                })
    stats = {
        "pairs": P, "transitions_checked": 2 * P * nI,
        "worst_distance_completeness": worst["completeness"],
        "worst_distance_soundness": worst["soundness"],
        "max_supervisory_displacement": float(max(disp_c.max(), disp_s.max())),
    }
    return CheckReport.from_counterexamples("result1_sampled", cex, stats=stats, meta=meta)


# --------------------------------------------------------------------------
# finite fragments for the near-completeness certificate

class _GridFragment:
    """Grows a finite piece of the grid model from explicit (state, input) requests."""

    def __init__(self, sys: LinearSystem, eta: float, tau: float):
        self.sys, self.eta, self.tau = sys, eta, tau
        self.index: dict = {}
        self.coords: list = []
        self.catalog: list = []
        self.cat_index: dict = {}
        self.requests: list = []
        self.rows: set = set()

    def state(self, idx) -> tuple[int, bool]:
        key = tuple(int(v) for v in idx)
        if key in self.index:
            return self.index[key], False
        self.index[key] = len(self.coords)
        self.coords.append(key)
        return self.index[key], True

    def label(self, u) -> int:
        k = u.key()
        if k not in self.cat_index:
            self.cat_index[k] = len(self.catalog)
            self.catalog.append(u)
        return self.cat_index[k]

    def move(self, sources: list[int], u) -> list[int]:
        """Add transitions from ``sources`` under ``u``; return newly created states."""
        ui = self.label(u)
        X = grid_coords(np.array([self.coords[s] for s in sources]), self.eta)
        succ = quantize_index(reach_many(self.sys, X, u, self.tau), self.eta)
        fresh = []
        for s, d in zip(sources, succ):
            di, new = self.state(d)
            if new:
                fresh.append(di)
            self.requests.append((s, ui))
            self.rows.add((s, ui, di))
        return fresh

    def mts(self, keep=None) -> FiniteMTS:
        """The fragment, optionally recomputed over the catalog entries ``keep`` marks."""
        outputs = grid_coords(np.array(self.coords), self.eta)
        if keep is None:
            return FiniteMTS(outputs, self.catalog, sorted(self.rows))
        new_id = np.cumsum(keep) - 1
        rows = set()
        for s, ui in self.requests:
            if keep[ui]:
                x = outputs[s:s + 1]
                d = quantize_index(reach_many(self.sys, x, self.catalog[ui], self.tau), self.eta)[0]
                rows.add((s, int(new_id[ui]), self.index[tuple(int(v) for v in d)]))
        return FiniteMTS(outputs, [u for u, k in zip(self.catalog, keep) if k], sorted(rows))


def near_completeness_fragments(sys: LinearSystem, C, params: AbstractionParams, region: Region,
                                plan: SamplePlan = SamplePlan(), alpha: float | None = None,
                                beta: float | None = None):
    """Finite witnesses ``(T, T_hat, T_prime)`` for the near-completeness certificate.

    T: sampled continuous states under constant quantized inputs.
    T_prime: grid states of ``region`` under the same constants, plus, for each
    sampled x, its related grid points under the analog supervisory inputs
    that track x (worklist closed over newly related successors).
    T_hat: T_prime recomputed from the dynamics over the catalog entries that
    lie in the beta-trimmed input box.
    """
    alpha = params.rho if alpha is None else alpha
    beta = params.rho if beta is None else beta
    eps, eta, tau = params.epsilon, params.eta, params.tau
    box = sys.input_box

    pts = sys.quantized_inputs.points()
    consts = [PiecewiseConstantInput.constant(pts[i], tau) for i in _spread(len(pts), plan.nc_levels)]
    sub = SamplePlan(n_lowdisc=plan.nc_states, n_corner_bases=1, seed=plan.seed)
    xs = sample_states(region, params, sub)

    # continuous side
    outputs = [x for x in xs]
    rows = []
    for ui, u in enumerate(consts):
        ends = reach_many(sys, xs, u, tau)
        for i, e in enumerate(ends):
            rows.append((i, ui, len(outputs)))
            outputs.append(e)
    T = FiniteMTS(np.array(outputs), consts, rows)

    # grid side
    frag = _GridFragment(sys, eta, tau)
    sources = [frag.state(idx)[0] for idx in region.grid_indices(eta)]
    for u in consts:
        if sources:
            frag.move(sources, u)
    trimmed_consts = [u for u in consts if trajectory_in_trimmed_set(u, box, alpha)]
    ce = displacement_stack(sys, C, tau, plan.dt)

    def supervise(state_id: int) -> list[int]:
        g = grid_coords(np.array(frag.coords[state_id]), eta)
        fresh = []
        for x in xs:
            if np.max(np.abs(x - g)) > eps + PROX_TOL:
                continue
            for u in trimmed_consts:
                sup = SupervisoryInput.track(sys, C, u, g - x, tau, plan.dt, ce=ce)
                fresh += frag.move([state_id], sup)
        return fresh

    # every state is a candidate: constant moves may land next to a sampled x
    work = list(range(len(frag.coords)))
    done = set()
    while work:
        s = work.pop()
        if s in done:
            continue
        done.add(s)
        work.extend(supervise(s))

    T_prime = frag.mts()
    trimmed = trim_box(box, beta)
    keep = [contains_all(trimmed, u.values) for u in frag.catalog]
    T_hat = frag.mts(keep)
    return T, T_hat, T_prime


# --------------------------------------------------------------------------
# sampled check that supervisory inputs stay admissible

def check_supervisory_admissible(sys: LinearSystem, C, params: AbstractionParams,
                                 n_pairs: int = 200, n_inputs: int = 200, seed: int = 0,
                                 dt: float = 1e-3) -> CheckReport:
    """Random (y0, x0) pairs with ||y0 - x0|| <= eps against random rho-trimmed inputs.

    Errors are uniform in the closed eps-ball with the first 2^n replaced by
    its corners; inputs are piecewise constant on ``sys.h`` with values uniform
    in the trimmed box. Every pair is run against every input and the sampled
    supervisory value u + C(y - x) must stay in the open input box.
    """
    eps, tau = params.epsilon, params.tau
    n = sys.n
    rng = np.random.default_rng(seed)
    e0s = rng.uniform(-eps, eps, size=(n_pairs, n))
    corners = np.array(np.meshgrid(*[[-eps, eps]] * n, indexing="ij")).reshape(n, -1).T
    k = min(len(corners), n_pairs)
    e0s[:k] = corners[:k]
    trimmed = trim_box(sys.input_box, params.rho)
    meta = {"seed": seed, "pairs": n_pairs, "inputs": n_inputs, "dt": dt, "tau": tau,
            "epsilon": eps, "rho": params.rho, "trimmed_box": trimmed.pairs()}
    if trimmed.empty:
        return CheckReport.from_counterexamples(
            "supervisory_admissible", [{"reason": "empty-trimmed-input-set"}], meta=meta)
    nseg = round(tau / sys.h)
    inputs = [PiecewiseConstantInput(sys.h, rng.uniform(trimmed.lo, trimmed.hi, size=(nseg, sys.m)))
              for _ in range(n_inputs)]
    rep_e = np.repeat(e0s, n_inputs, axis=0)
    rep_u = np.tile(np.arange(n_inputs), n_pairs)
    exit_t, disp = supervisory_exit_batch(sys, C, rep_e, inputs, rep_u, tau, dt)
    cex = [{"e0": rep_e[p], "input": int(rep_u[p]), "exit_time": float(exit_t[p])}
           for p in np.nonzero(~np.isnan(exit_t))[0]]
    stats = {"samples": int(len(rep_e)), "max_displacement": float(disp.max()),
             "displacement_budget": params.rho}
    return CheckReport.from_counterexamples("supervisory_admissible", cex, stats=stats, meta=meta)
