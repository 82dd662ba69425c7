"""Command line: ``params``, ``build``, ``simulate`` and ``check``.

Exit codes: 0 success, 1 verification failure, 2 config or usage error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .abstraction import (
    AbstractionParams,
    DEFAULT_CATALOG_CAP,
    DEFAULT_TAU_STEP,
    Region,
    build_symbolic_model,
    contraction_value,
    export_model,
    quantize_state,
    reduce_edges,
    restrict_to_quantized_inputs,
    spectral_tau,
)
from .bisim import (
    SamplePlan,
    check_result1_sampled,
    check_supervisory_admissible,
    near_completeness_certificate,
    near_completeness_fragments,
)
from .errors import ConfigError, ConstructionError, NumericalFailure, TrimBisimError
from .linalg import induced_inf_norm
from .report import CheckReport
from .stability import divergence_radius, is_everywhere_divergent, stabilizability_report, verify_divergence
from .system import (
    InputGrid,
    LinearSystem,
    PiecewiseConstantInput,
    simulate,
    simulate_supervisory,
    quantize_feedback,
)
from .trimming import OpenBox, contains_all

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# --------------------------------------------------------------------------
# config

def _matrix(v, name, cols=None):
    if not isinstance(v, list) or not v or not all(isinstance(r, list) and r for r in v):
        raise ConfigError(f"{name} must be a non-empty list of rows")
    try:
        rows = tuple(tuple(float(x) for x in r) for r in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain numbers") from None
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{name} rows differ in length")
    if cols is not None and len(rows[0]) != cols:
        raise ConfigError(f"{name} must have {cols} columns")
    if not all(math.isfinite(x) for r in rows for x in r):
        raise ConfigError(f"{name} must be finite")
    return rows


def _real(v, name, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number")
    v = float(v)
    if not math.isfinite(v) or (positive and not v > 0):
        raise ConfigError(f"{name} must be {'positive and ' if positive else ''}finite")
    return v


def _count(v, name, allow_none=False, minimum=0):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}")
    return v


def _vector(v, name, dim, allow_none=False):
    if v is None and allow_none:
        return None
    if not isinstance(v, list) or len(v) != dim:
        raise ConfigError(f"{name} must be a list of {dim} numbers")
    return tuple(_real(x, name) for x in v)


@dataclass(frozen=True)
class SystemConfig:
    A: tuple
    B: tuple
    input_box: tuple
    input_step: float
    input_offset: float = 0.0
    h: float = 0.01


@dataclass(frozen=True)
class FeedbackConfig:
    C: tuple


@dataclass(frozen=True)
class AbstractionConfig:
    epsilon: float
    eta: float
    region: tuple
    tau: float | None = None
    reference_tau: float | None = None
    tau_step: float = DEFAULT_TAU_STEP
    tau_max: float | None = None
    catalog_cap: int = DEFAULT_CATALOG_CAP
    input_segments: int = 1
    strict_eta_half: bool = False


@dataclass(frozen=True)
class CheckConfig:
    seed: int = 0
    samples: int = 64
    corner_bases: int = 16
    constant_inputs: int | None = None
    random_inputs: int = 10
    dt: float = 1e-3
    nc_states: int = 8
    nc_levels: int = 19
    admissible_pairs: int = 200
    admissible_inputs: int = 200
    horizon: float = 5.0
    trials: int = 100
    divergence_x0: tuple | None = None
    divergence_y0: tuple | None = None


@dataclass(frozen=True)
class Config:
    system: SystemConfig
    feedback: FeedbackConfig
    abstraction: AbstractionConfig
    check: CheckConfig

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v
        return {sec: {k: plain(v) for k, v in asdict(getattr(self, sec)).items()}
                for sec in ("system", "feedback", "abstraction", "check")}


_SECTIONS = {"system": SystemConfig, "feedback": FeedbackConfig,
             "abstraction": AbstractionConfig, "check": CheckConfig}


def _keys_ok(block, cls, name):
    if not isinstance(block, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    required = {f.name for f in fields(cls) if f.default is MISSING}
    missing = sorted(k for k in required if k not in block)
    if missing:
        raise ConfigError(f"missing key(s) in '{name}': {', '.join(missing)}")


def config_from_dict(d) -> Config:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(d) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for name in ("system", "feedback", "abstraction"):
        if name not in d:
            raise ConfigError(f"missing section '{name}'")
    for name, cls in _SECTIONS.items():
        _keys_ok(d.get(name, {}), cls, name)

    s = d["system"]
    A = _matrix(s["A"], "system.A")
    n = len(A)
    if len(A[0]) != n:
        raise ConfigError("system.A must be square")
    B = _matrix(s["B"], "system.B")
    if len(B) != n:
        raise ConfigError("system.B must have as many rows as A")
    m = len(B[0])
    box = _matrix(s["input_box"], "system.input_box", cols=2)
    if len(box) != m:
        raise ConfigError(f"system.input_box must have {m} intervals")
    system = SystemConfig(A, B, box, _real(s["input_step"], "system.input_step", positive=True),
                          _real(s.get("input_offset", 0.0), "system.input_offset"),
                          _real(s.get("h", 0.01), "system.h", positive=True))

    C = _matrix(d["feedback"]["C"], "feedback.C", cols=n)
    if len(C) != m:
        raise ConfigError(f"feedback.C must have {m} rows")
    feedback = FeedbackConfig(C)

    a = d["abstraction"]
    region = _matrix(a["region"], "abstraction.region", cols=2)
    if len(region) != n:
        raise ConfigError(f"abstraction.region must have {n} intervals")
    strict = a.get("strict_eta_half", False)
    if not isinstance(strict, bool):
        raise ConfigError("abstraction.strict_eta_half must be a boolean")
    abstraction = AbstractionConfig(
        epsilon=_real(a["epsilon"], "abstraction.epsilon", positive=True),
        eta=_real(a["eta"], "abstraction.eta", positive=True),
        region=region,
        tau=_real(a.get("tau"), "abstraction.tau", positive=True, allow_none=True),
        reference_tau=_real(a.get("reference_tau"), "abstraction.reference_tau",
                            positive=True, allow_none=True),
        tau_step=_real(a.get("tau_step", DEFAULT_TAU_STEP), "abstraction.tau_step", positive=True),
        tau_max=_real(a.get("tau_max"), "abstraction.tau_max", positive=True, allow_none=True),
        catalog_cap=_count(a.get("catalog_cap", DEFAULT_CATALOG_CAP), "abstraction.catalog_cap", minimum=1),
        input_segments=_count(a.get("input_segments", 1), "abstraction.input_segments", minimum=1),
        strict_eta_half=strict,
    )

    c = d.get("check", {})
    dflt = CheckConfig()
    check = CheckConfig(
        seed=_count(c.get("seed", dflt.seed), "check.seed"),
        samples=_count(c.get("samples", dflt.samples), "check.samples"),
        corner_bases=_count(c.get("corner_bases", dflt.corner_bases), "check.corner_bases"),
        constant_inputs=_count(c.get("constant_inputs", dflt.constant_inputs), "check.constant_inputs",
                               allow_none=True),
        random_inputs=_count(c.get("random_inputs", dflt.random_inputs), "check.random_inputs"),
        dt=_real(c.get("dt", dflt.dt), "check.dt", positive=True),
        nc_states=_count(c.get("nc_states", dflt.nc_states), "check.nc_states"),
        nc_levels=_count(c.get("nc_levels", dflt.nc_levels), "check.nc_levels", minimum=1),
        admissible_pairs=_count(c.get("admissible_pairs", dflt.admissible_pairs), "check.admissible_pairs", minimum=1),
        admissible_inputs=_count(c.get("admissible_inputs", dflt.admissible_inputs), "check.admissible_inputs", minimum=1),
        horizon=_real(c.get("horizon", dflt.horizon), "check.horizon", positive=True),
        trials=_count(c.get("trials", dflt.trials), "check.trials", minimum=1),
        divergence_x0=_vector(c.get("divergence_x0"), "check.divergence_x0", n, allow_none=True),
        divergence_y0=_vector(c.get("divergence_y0"), "check.divergence_y0", n, allow_none=True),
    )
    return Config(system, feedback, abstraction, check)


def parse_config(text: str) -> Config:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return config_from_dict(data)


def emit_config(cfg: Config) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# --------------------------------------------------------------------------
# objects from a config

def make_system(cfg: Config) -> LinearSystem:
    s = cfg.system
    box = OpenBox.from_pairs(s.input_box)
    grid = InputGrid.regular(box, s.input_step, s.input_offset)
    return LinearSystem(np.array(s.A), np.array(s.B), box, grid, s.h)


def make_params(cfg: Config, sys: LinearSystem, tau_override=None, strict=False) -> AbstractionParams:
    a = cfg.abstraction
    tau = tau_override if tau_override is not None else a.tau
    return AbstractionParams.synthesize(sys, np.array(cfg.feedback.C), a.epsilon, a.eta, tau=tau,
                                        tau_step=a.tau_step, tau_max=a.tau_max,
                                        strict_eta_half=strict or a.strict_eta_half)


def make_plan(cfg: Config, seed=None) -> SamplePlan:
    c = cfg.check
    return SamplePlan(n_lowdisc=c.samples, n_corner_bases=c.corner_bases,
                      n_constant=c.constant_inputs, n_random=c.random_inputs,
                      seed=c.seed if seed is None else seed, dt=c.dt,
                      nc_states=c.nc_states, nc_levels=c.nc_levels)


# --------------------------------------------------------------------------
# commands

def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "%.9g" % v
    if isinstance(v, (tuple, list, np.ndarray)):
        return "(" + ", ".join(_fmt(float(x)) for x in v) + ")"
    return str(v)


def cmd_params(cfg: Config, tau_override=None, strict=False, out=None) -> int:
    sys = make_system(cfg)
    C = np.array(cfg.feedback.C)
    a = cfg.abstraction
    params = make_params(cfg, sys, tau_override, strict)
    M = sys.closed_loop(C)
    half = a.eta / 2

    def cert(tau):
        val = contraction_value(M, a.epsilon, tau)
        return "%.9g (%s)" % (val, "PASS" if val < half else "FAIL")

    lines = [
        f"epsilon={_fmt(a.epsilon)}",
        f"eta={_fmt(a.eta)}",
        f"rho={_fmt(params.rho)}",
        f"norm_C={_fmt(induced_inf_norm(C))}",
        f"tau={_fmt(params.tau)}" + (" (override)" if tau_override is not None or a.tau is not None else " (synthesized)"),
        f"certificate eps*||exp((A+BC)tau)||={cert(params.tau)} bound eta/2={_fmt(half)}",
    ]
    st = spectral_tau(sys.A, sys.B, C, a.epsilon, a.eta, a.tau_step, a.tau_max)
    lines.append(f"spectral_tau={_fmt(st)}" + (f" certificate={cert(st)}" if st is not None else ""))
    if a.reference_tau is not None:
        lines.append(f"reference_tau={_fmt(a.reference_tau)} certificate={cert(a.reference_tau)}")
    lines += stabilizability_report(sys, C).lines()
    (out or _sys.stdout).write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_build(cfg: Config, out_path, tau_override=None, strict=False, reduce=False) -> int:
    sys = make_system(cfg)
    C = np.array(cfg.feedback.C)
    params = make_params(cfg, sys, tau_override, strict)
    region = Region.from_pairs(cfg.abstraction.region)
    model = build_symbolic_model(sys, C, params, region, cfg.abstraction.input_segments,
                                 cfg.abstraction.catalog_cap)
    model = restrict_to_quantized_inputs(model, sys.quantized_inputs, sys.input_box, params.rho)
    if reduce:
        model = reduce_edges(model)
    Path(out_path).write_text(export_model(model))
    return EXIT_OK


def parse_vector(text: str, dim: int, name: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers") from None
    if len(v) != dim or not np.all(np.isfinite(v)):
        raise ConfigError(f"{name}: expected {dim} finite numbers")
    return v


def parse_input_spec(text: str, sys: LinearSystem, tau: float) -> PiecewiseConstantInput:
    """``"1.1"`` is a constant level; ``"1;1.2;0.9"`` is a sequence of per-segment values.

    Components of a vector value are separated by commas; a sequence must fill
    the horizon in segments of length ``sys.h``.
    """
    parts = [p for p in text.split(";") if p.strip()]
    vals = np.array([parse_vector(p, sys.m, "--u") for p in parts])
    if not contains_all(sys.input_box, vals):
        raise ConfigError("--u: input values must lie inside the open input box")
    if len(vals) == 1:
        nseg = round(tau / sys.h)
        return PiecewiseConstantInput(sys.h, np.repeat(vals, nseg, axis=0))
    if abs(len(vals) * sys.h - tau) > 1e-9:
        raise ConfigError(f"--u: {len(vals)} segments of {sys.h} do not cover the horizon {tau}")
    return PiecewiseConstantInput(sys.h, vals)


def cmd_simulate(cfg: Config, y0, x0, u_spec: str, out_path=None, tau_override=None,
                 strict=False, out=None) -> int:
    sys = make_system(cfg)
    C = np.array(cfg.feedback.C)
    params = make_params(cfg, sys, tau_override, strict)
    tau, dt = params.tau, cfg.check.dt
    y0 = parse_vector(y0, sys.n, "--y0")
    x0 = parse_vector(x0, sys.n, "--x0")
    u = parse_input_spec(u_spec, sys, tau)
    run = simulate_supervisory(sys, C, y0, x0, u, tau, dt)
    uq = quantize_feedback(run, sys.quantized_inputs, sys.h)
    qtrace = simulate(sys, y0, uq, tau, dt)
    x_end, y_end, q_end = run.x.final_state, run.y.final_state, qtrace.final_state
    succ = quantize_state(x_end, params.eta)
    eps = params.epsilon
    d_sup = float(np.max(np.abs(y_end - succ)))
    d_q = float(np.max(np.abs(q_end - succ)))
    disp_sup = run.max_displacement()
    disp_q = float(np.max(np.abs(qtrace.inputs - run.x.inputs)))
    lines = [
        f"tau={_fmt(tau)} dt={_fmt(dt)} h={_fmt(sys.h)}",
        f"reference_end={_fmt(x_end)}",
        f"symbolic_successor={_fmt(succ)}",
        f"supervisory_end={_fmt(y_end)}",
        f"quantized_end={_fmt(q_end)}",
        f"proximity_supervisory={_fmt(d_sup)} within_eps={_fmt(d_sup < eps)}",
        f"proximity_quantized={_fmt(d_q)} within_eps={_fmt(d_q < eps)}",
        f"max_displacement_supervisory={_fmt(disp_sup)}",
        f"max_displacement_quantized={_fmt(disp_q)} rho={_fmt(params.rho)}",
    ]
    (out or _sys.stdout).write("\n".join(lines) + "\n")
    if out_path is not None:
        n, m = sys.n, sys.m
        header = (["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
                  + [f"y{i+1}" for i in range(n)] + [f"usup{i+1}" for i in range(m)]
                  + [f"q{i+1}" for i in range(n)] + [f"uq{i+1}" for i in range(m)])
        body = np.column_stack([run.times, run.x.states, run.x.inputs, run.y.states,
                                run.supervisory, qtrace.states, qtrace.inputs])
        rows = [",".join(header)] + [",".join("%.9g" % v for v in r) for r in body]
        Path(out_path).write_text("\n".join(rows) + "\n")
    return EXIT_OK


def run_checks(cfg: Config, seed=None, tau_override=None, strict=False) -> list[CheckReport]:
    sys = make_system(cfg)
    C = np.array(cfg.feedback.C)
    params = make_params(cfg, sys, tau_override, strict)
    region = Region.from_pairs(cfg.abstraction.region)
    plan = make_plan(cfg, seed)
    reports = [
        check_result1_sampled(sys, C, params, region, plan),
        check_supervisory_admissible(sys, C, params, cfg.check.admissible_pairs,
                                     cfg.check.admissible_inputs, plan.seed, plan.dt),
    ]
    T, T_hat, T_prime = near_completeness_fragments(sys, C, params, region, plan)
    # without feedback rho is 0; the certificate needs positive budgets, so use the
    # smallest positive float, which trims nothing
    budget = params.rho if params.rho > 0 else math.ulp(0.0)
    reports.append(near_completeness_certificate(T, T_hat, budget, budget, T_prime,
                                                 sys.input_box, params.epsilon))
    if is_everywhere_divergent(sys.A):
        M = sys.input_box.sup_norm_bound()
        x0 = np.zeros(sys.n) if cfg.check.divergence_x0 is None else np.array(cfg.check.divergence_x0)
        if cfg.check.divergence_y0 is None:
            y0 = x0.copy()
            y0[-1] += math.floor(divergence_radius(sys.A, sys.B, M)) + 1.0
        else:
            y0 = np.array(cfg.check.divergence_y0)
        reports.append(verify_divergence(sys, x0, y0, cfg.check.horizon, cfg.check.trials, plan.seed))
    return reports


def cmd_check(cfg: Config, out_dir=None, seed=None, tau_override=None, strict=False,
              out=None) -> int:
    reports = run_checks(cfg, seed, tau_override, strict)
    text = "".join(r.to_text() for r in reports)
    ok = all(r.verdict for r in reports)
    text += f"overall: {'PASS' if ok else 'FAIL'}\n"
    (out or _sys.stdout).write(text)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "check_report.txt").write_text(text)
        blob = {"verdict": ok, "reports": [r.to_dict() for r in reports]}
        (d / "check_report.json").write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_VERIFY


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trimbisim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--tau-override", type=float, default=None, metavar="X",
                        help="use this tau instead of the synthesized one")
        sp.add_argument("--strict-eta-half", action="store_true", help="require eta < eps/2")
        return sp

    common(sub.add_parser("params", help="print synthesized parameters and stability data"))
    b = common(sub.add_parser("build", help="write the symbolic model"))
    b.add_argument("--out", required=True, help="model file")
    b.add_argument("--reduce", action="store_true", help="greedy edge reduction")
    s = common(sub.add_parser("simulate", help="reference, supervisory and quantized runs"))
    s.add_argument("--x0", required=True, help="reference start, comma separated")
    s.add_argument("--y0", required=True, help="tracker start, comma separated")
    s.add_argument("--u", required=True, help="constant level or ';'-separated segment values")
    s.add_argument("--out", default=None, help="trajectory CSV")
    c = common(sub.add_parser("check", help="run the sampled verification suite"))
    c.add_argument("--out", default=None, help="report directory")
    c.add_argument("--seed", type=int, default=None, help="override check.seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        kw = {"tau_override": args.tau_override, "strict": args.strict_eta_half}
        if args.command == "params":
            return cmd_params(cfg, **kw)
        if args.command == "build":
            return cmd_build(cfg, args.out, reduce=args.reduce, **kw)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.y0, args.x0, args.u, args.out, **kw)
        return cmd_check(cfg, args.out, args.seed, **kw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except ConstructionError as exc:
        print(f"construction failed: {exc}", file=_sys.stderr)
        return EXIT_VERIFY
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except (TrimBisimError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
