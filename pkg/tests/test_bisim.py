import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trimbisim.abstraction import AbstractionParams, Region
from trimbisim.bisim import (
    FiniteMTS,
    SamplePlan,
    check_result1_sampled,
    check_supervisory_admissible,
    identity_relation,
    inverse,
    is_approx_simulation,
    is_trimmed_bisim,
    mts_equal,
    near_completeness_certificate,
    near_completeness_fragments,
    proximity_relation,
    sample_states,
    trim_model,
)
from trimbisim.errors import DomainError
from trimbisim.report import CheckReport
from trimbisim.system import PiecewiseConstantInput
from trimbisim.trimming import OpenBox

from conftest import C_EX, jordan_exp

U = OpenBox.from_pairs([(-5.0, 5.0)])


def const(v):
    return PiecewiseConstantInput.constant([v], 1.0)


def chain(offset=0.0, catalog=(1.1,)):
    outs = np.array([[0.0], [1.0], [2.0]]) + offset
    return FiniteMTS(outs, [const(v) for v in catalog], [(0, 0, 1), (1, 0, 2), (2, 0, 2)])


# ---------------------------------------------------------------- examples

def test_self_simulation():
    T = chain()
    assert is_approx_simulation(identity_relation(T), T, T, 0.0).verdict


def test_missing_move():
    T1 = FiniteMTS([[0.0]], [const(0.0)], [(0, 0, 0)])
    T2 = FiniteMTS([[0.0]], [const(0.0)], [])
    r = is_approx_simulation({(0, 0)}, T1, T2, 1.0)
    assert not r.verdict
    assert r.counterexamples[0]["reason"] == "no-matching-move"


def test_chain_gap():
    T, Tp = chain(), chain(0.04)
    R = identity_relation(T)
    assert is_approx_simulation(R, T, Tp, 0.04).verdict
    r = is_approx_simulation(R, T, Tp, 0.03)
    assert not r.verdict and {c["reason"] for c in r.counterexamples} == {"proximity"}
    assert is_trimmed_bisim(T, Tp, R, 0.48, 0.04, U).verdict
    assert not is_trimmed_bisim(T, Tp, R, 0.48, 0.03, U).verdict


def test_empty_relation_rejected():
    with pytest.raises(DomainError):
        is_approx_simulation(set(), chain(), chain(), 1.0)


def test_trim_model_examples():
    T = chain(catalog=(4.5, 1.1))
    T = FiniteMTS(T.outputs, T.catalog, [(0, 0, 1), (0, 1, 2), (1, 1, 2)])
    assert mts_equal(trim_model(T, U, 0.0), T)
    assert len(trim_model(T, U, 0.48).transitions) == 3
    t5 = trim_model(T, U, 0.5)
    assert len(t5.catalog) == 1 and t5.catalog[0] == const(1.1) and len(t5.transitions) == 2
    assert len(trim_model(T, U, 5.0).transitions) == 0


def test_identity_trimmed_bisim():
    T = chain(catalog=(4.5, 1.1))
    for rho in (0.0, 0.5, 10.0):
        for eps in (0.0, 1.0):
            assert is_trimmed_bisim(T, T, identity_relation(T), rho, eps, U).verdict


def test_near_completeness_self_case():
    T = chain()
    r = near_completeness_certificate(T, T, 0.3, 1e-300, T, U, 0.0)
    assert r.verdict and r.meta["gamma"] == pytest.approx(0.3)
    r = near_completeness_certificate(T, T, 0.48, 0.48, T, U, 0.0)
    assert r.meta["gamma"] == 0.96
    with pytest.raises(DomainError):
        near_completeness_certificate(T, T, 0.0, 0.1, T, U, 0.0)


def test_near_completeness_detects_mismatch():
    T = chain(catalog=(4.9, 1.1))
    T = FiniteMTS(T.outputs, T.catalog, [(0, 0, 1), (0, 1, 2)])
    r = near_completeness_certificate(T, T, 0.48, 0.48, T, U, 0.0)
    assert not r.verdict
    assert r.counterexamples[0]["reason"] == "trimmed-witness-mismatch"


def test_finite_mts_validation():
    with pytest.raises(DomainError):
        FiniteMTS([[0.0]], [const(0.0)], [(0, 0, 1)])
    with pytest.raises(DomainError):
        FiniteMTS([[0.0]], [const(0.0)], [(0, 1, 0)])


def test_report_invariant():
    with pytest.raises(ValueError):
        CheckReport("x", True, [{"a": 1}])
    r = CheckReport.from_counterexamples("x", [{"b": 2}, {"a": 1}])
    assert not r.verdict and r.counterexamples == [{"a": 1}, {"b": 2}]
    assert json.loads(r.to_json())["verdict"] is False
    assert r.to_text().startswith("check x: FAIL")


# ---------------------------------------------------------------- brute-force oracle

def random_mts(rng, n_max=6, k=1):
    n = int(rng.integers(1, n_max + 1))
    n_in = int(rng.integers(1, 4))
    outs = rng.integers(0, 4, size=(n, k)) * 0.05
    trans = {(int(rng.integers(n)), int(rng.integers(n_in)), int(rng.integers(n)))
             for _ in range(int(rng.integers(0, 2 * n + 1)))}
    cat = [const(float(v)) for v in rng.choice([-4.9, -1.0, 0.0, 2.0, 4.7], n_in, replace=False)]
    return FiniteMTS(outs, cat, sorted(trans))


def oracle_simulates(R, T1, T2, eps):
    """Boolean-matrix formulation: every successor row of a must be covered by R-images of b's successors."""
    Rm = np.zeros((T1.n_states, T2.n_states), dtype=bool)
    for a, b in R:
        Rm[a, b] = True
    adj1 = np.zeros((T1.n_states, T1.n_states), dtype=bool)
    adj2 = np.zeros((T2.n_states, T2.n_states), dtype=bool)
    for s, _, d in T1.transitions:
        adj1[s, d] = True
    for s, _, d in T2.transitions:
        adj2[s, d] = True
    covered = (Rm.astype(int) @ adj2.T.astype(int)) > 0      # covered[y, b]: y related to some successor of b
    for a, b in zip(*np.nonzero(Rm)):
        if np.max(np.abs(T1.outputs[a] - T2.outputs[b])) > eps + 1e-12:
            return False
        if np.any(adj1[a] & ~covered[:, b]):
            return False
    return True


def test_checker_matches_brute_force_100():
    rng = np.random.default_rng(31)
    outcomes = set()
    for _ in range(100):
        T1, T2 = random_mts(rng), random_mts(rng)
        pairs = [(a, b) for a in range(T1.n_states) for b in range(T2.n_states)]
        R = {p for p in pairs if rng.random() < 0.5} or {pairs[0]}
        eps = float(rng.choice([0.0, 0.05, 0.1, 0.2]))
        got = is_approx_simulation(R, T1, T2, eps).verdict
        assert got == oracle_simulates(R, T1, T2, eps)
        outcomes.add(got)
    assert outcomes == {True, False}


def test_checker_matches_brute_force_full_relation():
    rng = np.random.default_rng(32)
    for _ in range(100):
        T1, T2 = random_mts(rng), random_mts(rng)
        R = proximity_relation(T1, T2, 0.1)
        if R:
            assert is_approx_simulation(R, T1, T2, 0.1).verdict == oracle_simulates(R, T1, T2, 0.1)


@settings(max_examples=80)
@given(st.integers(0, 10_000))
def test_monotone_in_eps(seed):
    rng = np.random.default_rng(seed)
    T1, T2 = random_mts(rng), random_mts(rng)
    R = {(a, b) for a in range(T1.n_states) for b in range(T2.n_states) if rng.random() < 0.6}
    if not R:
        return
    verdicts = [is_approx_simulation(R, T1, T2, e).verdict for e in (0.0, 0.05, 0.1, 0.2, 1.0)]
    assert verdicts == sorted(verdicts)


@settings(max_examples=80)
@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 5))
def test_trim_anti_monotone(seed, r1, r2):
    r1, r2 = sorted((r1, r2))
    T = random_mts(np.random.default_rng(seed))
    key = lambda M: {(s, M.catalog[i].key(), d) for s, i, d in M.transitions.tolist()}
    assert key(trim_model(T, U, r2)) <= key(trim_model(T, U, r1))


@settings(max_examples=80)
@given(st.integers(0, 10_000))
def test_bisim_symmetry(seed):
    rng = np.random.default_rng(seed)
    T1, T2 = random_mts(rng), random_mts(rng)
    R = {(a, b) for a in range(T1.n_states) for b in range(T2.n_states) if rng.random() < 0.6}
    if not R:
        return
    a = is_trimmed_bisim(T1, T2, R, 0.2, 0.1, U).verdict
    b = is_trimmed_bisim(T2, T1, inverse(R), 0.2, 0.1, U).verdict
    assert a == b


# ---------------------------------------------------------------- sampled checks on the example

def test_sample_states_include_corners(example_params):
    region = Region.from_pairs([(-1, 1), (-1, 1)])
    pts = sample_states(region, example_params, SamplePlan(n_lowdisc=8, n_corner_bases=2, seed=4))
    assert len(pts) == 16
    corners = pts[8:]
    # each base contributes its four eps-corners; opposite corners are 2 eps apart
    centers = corners.reshape(-1, 4, 2).mean(axis=1)
    assert np.allclose(centers / 0.1, np.round(centers / 0.1), atol=1e-9)
    assert np.all(np.isclose(np.abs(corners[0::4] - corners[3::4]), 0.24))


def test_result1_on_grid_single_sample(example_sys, example_params):
    region = Region.from_pairs([(0.3, 0.3), (-0.2, -0.2)])
    plan = SamplePlan(n_lowdisc=0, n_corner_bases=1, n_constant=9, n_random=2, seed=1)
    r = check_result1_sampled(example_sys, C_EX, example_params, region, plan)
    assert r.verdict
    assert r.stats["worst_distance_completeness"] <= 0.12


def test_result1_small_plan(example_sys, example_params):
    plan = SamplePlan(n_lowdisc=16, n_corner_bases=4, n_constant=15, n_random=3, seed=2)
    r = check_result1_sampled(example_sys, C_EX, example_params, Region.from_pairs([(-1, 1), (-1, 1)]), plan)
    assert r.verdict and r.meta["certified"]
    assert r.stats["max_supervisory_displacement"] <= 0.48 + 1e-12


def test_result1_fails_at_hand_picked_tau(example_sys):
    # the adversarial error direction (1, 1) grows to 0.12 * 3/e > eta/2 at t = 1
    assert np.max(np.abs(jordan_exp(1.0) @ [0.12, 0.12])) > 0.05
    bad = AbstractionParams.synthesize(example_sys, C_EX, 0.12, 0.1, tau=1.0)
    plan = SamplePlan(n_lowdisc=16, n_corner_bases=4, n_constant=15, n_random=3, seed=2)
    r = check_result1_sampled(example_sys, C_EX, bad, Region.from_pairs([(-1, 1), (-1, 1)]), plan)
    assert not r.verdict and not r.meta["certified"]
    assert any("proximity" in c["reason"] for c in r.counterexamples)
    w = r.counterexamples[0]
    assert {"x", "g", "input", "continuous_end", "grid_end", "distance"} <= set(w)


def test_admissible_sampled(example_sys, example_params):
    r = check_supervisory_admissible(example_sys, C_EX, example_params, 40, 40, seed=3)
    assert r.verdict and r.stats["samples"] == 1600
    # doubling the gain doubles the displacement past the trimming margin
    bad = check_supervisory_admissible(example_sys, 2 * C_EX, example_params, 40, 40, seed=3)
    assert not bad.verdict


def test_near_completeness_small(example_sys, example_params):
    plan = SamplePlan(nc_states=4, nc_levels=7, seed=5)
    region = Region.from_pairs([(-0.3, 0.3), (-0.3, 0.3)])
    T, T_hat, T_prime = near_completeness_fragments(example_sys, C_EX, example_params, region, plan)
    r = near_completeness_certificate(T, T_hat, 0.48, 0.48, T_prime, example_sys.input_box, 0.12)
    assert r.verdict and r.meta["gamma"] == 0.96
