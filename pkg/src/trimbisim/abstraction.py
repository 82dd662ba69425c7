"""Parameter synthesis and the state-time quantized symbolic model.

Pipeline: pick (eps, eta), derive the trimming radius ``rho = ||C|| eps``,
search the smallest grid ``tau`` with ``eps ||exp((A+BC) tau)|| < eta/2``,
then build the finite model over the eta-grid of a compact region using
quantized inputs from the rho-trimmed input box.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, DomainError, SynthesisError
from .linalg import as_matrix, induced_inf_norm, is_hurwitz, mat_exp, max_real_part
from .system import InputGrid, LinearSystem, PiecewiseConstantInput, reach_many
from .trimming import OpenBox, contains_all, trim_box

log = logging.getLogger(__name__)

DEFAULT_TAU_STEP = 0.01
DEFAULT_CATALOG_CAP = 10_000
_GRID_TOL = 1e-9


def compute_trim(C, eps: float) -> float:
    if not eps > 0:
        raise DomainError("eps must be positive")
    return induced_inf_norm(as_matrix(C, "C")) * eps


def contraction_value(M, eps: float, tau: float) -> float:
    """``eps * ||exp(M tau)||`` in the induced max-norm."""
    return eps * induced_inf_norm(mat_exp(M, tau))


def default_tau_max(M) -> float:
    alpha = max_real_part(M)
    return 100.0 / abs(alpha) if alpha != 0 else 100.0


def synth_tau(A, B, C, eps: float, eta: float, tau_step: float = DEFAULT_TAU_STEP,
              tau_max: float | None = None) -> float:
    """Smallest ``k * tau_step <= tau_max`` with ``eps ||exp((A+BC) tau)|| < eta/2``."""
    M = as_matrix(A, "A") + as_matrix(B, "B") @ as_matrix(C, "C")
    if not is_hurwitz(M):
        raise DomainError("A+BC is not Hurwitz")
    if not 0 < eta < eps:
        raise DomainError("need 0 < eta < eps")
    if not tau_step > 0:
        raise DomainError("tau_step must be positive")
    if tau_max is None:
        tau_max = default_tau_max(M)
    best_tau, best_val = None, math.inf
    kmax = int(math.floor(tau_max / tau_step + 1e-9))
    for k in range(1, kmax + 1):
        tau = round(k * tau_step, 12)
        val = contraction_value(M, eps, tau)
        if val < best_val:
            best_tau, best_val = tau, val
        if val < eta / 2:
            return tau
    raise SynthesisError(
        f"no tau <= {tau_max} satisfies eps*||exp((A+BC)tau)|| < eta/2; "
        f"best {best_val:.6g} at tau={best_tau}", best_tau, best_val)


def spectral_tau(A, B, C, eps: float, eta: float, tau_step: float = DEFAULT_TAU_STEP,
                 tau_max: float | None = None) -> float | None:
    """Grid tau from the spectral-abscissa shortcut ``eps exp(alpha tau) < eta/2``.

    Only reported for comparison: for non-normal A+BC the shortcut under-estimates
    the induced norm and may yield a tau that fails the real bound.
    """
    M = as_matrix(A) + as_matrix(B) @ as_matrix(C)
    alpha = max_real_part(M)
    if alpha >= 0:
        return None
    tau = math.log(eta / (2 * eps)) / alpha
    k = math.floor(tau / tau_step + 1e-12) + 1
    tau_g = round(k * tau_step, 12)
    if tau_max is not None and tau_g > tau_max:
        return None
    return tau_g


@dataclass(frozen=True, eq=False)
class AbstractionParams:
    epsilon: float
    eta: float
    tau: float
    rho: float
    C: np.ndarray
    strict_eta_half: bool = False

    def __post_init__(self):
        C = as_matrix(self.C, "C")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)
        if not 0 < self.eta < self.epsilon:
            raise DomainError(f"need 0 < eta < eps, got eta={self.eta}, eps={self.epsilon}")
        if self.strict_eta_half and not self.eta < self.epsilon / 2:
            raise DomainError("strict mode requires eta < eps/2")
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if not math.isclose(self.rho, induced_inf_norm(C) * self.epsilon, rel_tol=1e-12, abs_tol=1e-15):
            raise DomainError("rho must equal ||C|| * eps")

    @classmethod
    def synthesize(cls, sys: LinearSystem, C, eps: float, eta: float, tau: float | None = None,
                   tau_step: float = DEFAULT_TAU_STEP, tau_max: float | None = None,
                   strict_eta_half: bool = False) -> "AbstractionParams":
        if tau is None:
            tau = synth_tau(sys.A, sys.B, C, eps, eta, tau_step, tau_max)
        return cls(eps, eta, tau, compute_trim(C, eps), C, strict_eta_half)

    def contraction(self, sys: LinearSystem) -> float:
        return contraction_value(sys.closed_loop(self.C), self.epsilon, self.tau)

    def certified(self, sys: LinearSystem) -> bool:
        M = sys.closed_loop(self.C)
        return is_hurwitz(M) and self.contraction(sys) < self.eta / 2

    def certify(self, sys: LinearSystem) -> None:
        M = sys.closed_loop(self.C)
        if not is_hurwitz(M):
            raise ConstructionError("A+BC is not Hurwitz")
        val = self.contraction(sys)
        if not val < self.eta / 2:
            raise ConstructionError(
                f"tau={self.tau} fails eps*||exp((A+BC)tau)|| < eta/2 ({val:.6g} >= {self.eta / 2:.6g})")


@dataclass(frozen=True)
class Region:
    """Closed box of state space."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise DomainError("region bounds must be non-empty and of equal length")
        if any(l > h for l, h in zip(lo, hi)) or not all(np.isfinite(lo + hi)):
            raise DomainError("region needs finite bounds with lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Region":
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def pairs(self) -> list:
        return [[l, h] for l, h in zip(self.lower, self.upper)]

    @property
    def dim(self) -> int:
        return len(self.lower)

    def index_bounds(self, eta: float):
        lo = np.array([math.ceil(l / eta - _GRID_TOL) for l in self.lower], dtype=np.int64)
        hi = np.array([math.floor(h / eta + _GRID_TOL) for h in self.upper], dtype=np.int64)
        return lo, hi

    def grid_indices(self, eta: float) -> np.ndarray:
        """Integer grid indices inside the region, lexicographic order."""
        lo, hi = self.index_bounds(eta)
        if np.any(hi < lo):
            return np.empty((0, self.dim), dtype=np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1).astype(np.int64)


def grid_coords(idx, eta: float) -> np.ndarray:
    return np.round(np.asarray(idx, dtype=float) * eta, 12)


def quantize_index(x, eta: float) -> np.ndarray:
    """Grid index of the nearest eta-grid point; half-cell ties go toward -inf."""
    if not eta > 0:
        raise DomainError("eta must be positive")
    return np.ceil(np.asarray(x, dtype=float) / eta - 0.5).astype(np.int64)


def quantize_state(x, eta: float) -> np.ndarray:
    return grid_coords(quantize_index(x, eta), eta)


def related_grid_indices(x, eps: float, eta: float) -> np.ndarray:
    """All grid indices within max-norm distance eps of ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    lo = np.ceil((x - eps) / eta - _GRID_TOL).astype(np.int64)
    hi = np.floor((x + eps) / eta + _GRID_TOL).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([g.reshape(-1) for g in mesh], axis=1)
    d = np.max(np.abs(grid_coords(idx, eta) - x), axis=1)
    return idx[d <= eps + 1e-12]


def input_catalog(levels: InputGrid, tau: float, segments: int = 1,
                  cap: int = DEFAULT_CATALOG_CAP) -> list[PiecewiseConstantInput]:
    """All sequences of grid points over ``segments`` equal segments of [0, tau].

    Lexicographic in the flattened value sequence.
    """
    if segments < 1:
        raise DomainError("segments must be >= 1")
    pts = levels.points()
    count = len(pts) ** segments
    if count > cap:
        raise ConstructionError(
            f"catalog would hold {count} inputs, above the cap of {cap}; "
            "reduce the segment count or the input grid")
    h = tau / segments
    return [PiecewiseConstantInput(h, np.array(seq))
            for seq in itertools.product(pts, repeat=segments)]


@dataclass(frozen=True, eq=False)
class SymbolicModel:
    eta: float
    tau: float
    rho: float
    state_index: np.ndarray          # (N, n) integer grid indices
    catalog: tuple                   # PiecewiseConstantInput entries
    edges: np.ndarray                # (E, 3) rows (src, input, dst), sorted
    out_of_region: tuple = field(default=())   # (src, input, successor index tuple)

    @property
    def states(self) -> np.ndarray:
        return grid_coords(self.state_index, self.eta)

    @property
    def n_states(self) -> int:
        return self.state_index.shape[0]

    def successors(self, state: int) -> set:
        return set(int(d) for d in self.edges[self.edges[:, 0] == state, 2])

    def successor_map(self) -> dict:
        out: dict = {}
        for s, i, d in self.edges:
            out.setdefault(int(s), set()).add(int(d))
        return out

    def to_mts(self):
        from .bisim import FiniteMTS
        return FiniteMTS(self.states, self.catalog, self.edges)


def _sorted_edges(rows) -> np.ndarray:
    if not rows:
        return np.empty((0, 3), dtype=np.int64)
    arr = np.array(rows, dtype=np.int64)
    order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
    return arr[order]


def successor_indices(sys: LinearSystem, state_index, u: PiecewiseConstantInput,
                      tau: float, eta: float) -> np.ndarray:
    """Quantized successors (grid indices) of many grid states under one input."""
    X = grid_coords(state_index, eta)
    return quantize_index(reach_many(sys, X, u, tau), eta)


def build_symbolic_model(sys: LinearSystem, C, params: AbstractionParams, region: Region,
                         segments: int = 1, cap: int = DEFAULT_CATALOG_CAP) -> SymbolicModel:
    """The rho-trimmed, quantized-input state-time quantized model over ``region``."""
    params.certify(sys)
    if region.dim != sys.n:
        raise DomainError("region dimension must match the state dimension")
    trimmed = trim_box(sys.input_box, params.rho)
    levels = sys.quantized_inputs.restricted(trimmed)
    if levels is None:
        raise ConstructionError(
            f"no quantized input level survives trimming by rho={params.rho:.6g}; choose a smaller eps")
    catalog = input_catalog(levels, params.tau, segments, cap)
    return _assemble(sys, params.eta, params.tau, params.rho, region, catalog)


def _assemble(sys, eta, tau, rho, region, catalog) -> SymbolicModel:
    idx = region.grid_indices(eta)
    lookup = {tuple(int(v) for v in row): i for i, row in enumerate(idx)}
    lo, hi = region.index_bounds(eta)
    rows, outside = [], []
    if len(idx):
        for ui, u in enumerate(catalog):
            succ = successor_indices(sys, idx, u, tau, eta)
            inside = np.all((succ >= lo) & (succ <= hi), axis=1)
            for s in range(len(idx)):
                key = tuple(int(v) for v in succ[s])
                if inside[s]:
                    rows.append((s, ui, lookup[key]))
                else:
                    outside.append((s, ui, key))
    if outside:
        log.info("%d successors fell outside the region and were not recorded as edges", len(outside))
    return SymbolicModel(eta, tau, rho, idx, tuple(catalog), _sorted_edges(rows), tuple(outside))


def _reindex_catalog(model: SymbolicModel, keep: list[bool]) -> SymbolicModel:
    new_id = np.cumsum(keep) - 1
    catalog = tuple(u for u, k in zip(model.catalog, keep) if k)
    rows = [(s, int(new_id[i]), d) for s, i, d in model.edges if keep[i]]
    outside = tuple((s, int(new_id[i]), k) for s, i, k in model.out_of_region if keep[i])
    return SymbolicModel(model.eta, model.tau, model.rho, model.state_index, catalog,
                         _sorted_edges(rows), outside)


def restrict_to_quantized_inputs(model: SymbolicModel, grid: InputGrid, box: OpenBox,
                                 rho: float) -> SymbolicModel:
    """Keep catalog entries whose every value is a grid level inside the rho-trimmed box."""
    trimmed = trim_box(box, rho)
    keep = [contains_all(trimmed, u.values) and all(grid.contains_level(v) for v in u.values)
            for u in model.catalog]
    return _reindex_catalog(model, keep)


def reduce_edges(model: SymbolicModel) -> SymbolicModel:
    """Greedy per-state cover: a small label set reaching every successor of the state.

    Repeatedly takes the label covering the most still-uncovered successors,
    lowest label index on ties.
    """
    by_state: dict = {}
    for s, i, d in model.edges:
        by_state.setdefault(int(s), {}).setdefault(int(i), set()).add(int(d))
    rows = []
    for s in sorted(by_state):
        cover = by_state[s]
        uncovered = set().union(*cover.values())
        while uncovered:
            best = max(sorted(cover), key=lambda i: len(cover[i] & uncovered))
            for d in sorted(cover[best]):
                rows.append((s, best, d))
            uncovered -= cover[best]
            del cover[best]
    return SymbolicModel(model.eta, model.tau, model.rho, model.state_index, model.catalog,
                         _sorted_edges(rows), model.out_of_region)


def export_model(model: SymbolicModel) -> str:
    """Line-oriented text export; all reals as %.9g."""
    out = [
        "eta=%.9g" % model.eta,
        "tau=%.9g" % model.tau,
        "rho=%.9g" % model.rho,
        "states=%d" % model.n_states,
        "inputs=%d" % len(model.catalog),
        "edges=%d" % len(model.edges),
        "out_of_region=%d" % len(model.out_of_region),
    ]
    for i, coords in enumerate(model.states):
        out.append("state %d %s" % (i, " ".join("%.9g" % c for c in coords)))
    for i, u in enumerate(model.catalog):
        out.append("input %d %.9g %s" % (i, u.h, " ".join("%.9g" % v for v in u.values.reshape(-1))))
    for s, i, d in model.edges:
        out.append("edge %d %d %d" % (s, i, d))
    return "\n".join(out) + "\n"


def parse_model(text: str) -> dict:
    """Read back an exported model into plain arrays (for inspection and tests)."""
    header, states, inputs, edges = {}, [], [], []
    for line in text.splitlines():
        if not line:
            continue
        if "=" in line and " " not in line:
            k, v = line.split("=", 1)
            header[k] = float(v)
            continue
        kind, *rest = line.split()
        if kind == "state":
            states.append([float(v) for v in rest[1:]])
        elif kind == "input":
            inputs.append((float(rest[1]), [float(v) for v in rest[2:]]))
        elif kind == "edge":
            edges.append(tuple(int(v) for v in rest))
    return {"header": header, "states": states, "inputs": inputs, "edges": edges}


def export_dot(model: SymbolicModel) -> str:
    lines = ["digraph symbolic_model {"]
    for i, coords in enumerate(model.states):
        lines.append('  %d [label="(%s)"];' % (i, ", ".join("%.9g" % c for c in coords)))
    for s, i, d in model.edges:
        lines.append('  %d -> %d [label="u%d"];' % (s, d, i))
    lines.append("}")
    return "\n".join(lines) + "\n"
