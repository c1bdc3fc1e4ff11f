import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbacvec.cost import (REFERENCE_THETA, CalibrationError, CostModel, FunctionRunner, Theta, avg_cost, c_theta,
                          calibrate, cost_hnsw, find_crossover, full_scan_regime, inflated_efs, inflation)

SIZES = [2 ** i for i in range(10, 18)]
EFS = [10, 20, 50, 100, 200, 300, 500]

pos = st.floats(0.001, 10.0)


def test_c_theta_unit_size_zero_efs():
    t = Theta(0.3, 0.2, 1.5)
    assert c_theta(t, 1, 0) == pytest.approx(0.3 * 1 + 1.5)


def test_c_theta_reference_point():
    want = 0.0821 * math.log2(10 ** 6 + 1) + 0.1159 * 100 + 2.3110
    assert c_theta(REFERENCE_THETA, 10 ** 6, 100) == pytest.approx(want, rel=1e-15)
    assert (REFERENCE_THETA.a, REFERENCE_THETA.b, REFERENCE_THETA.c) == (0.0821, 0.1159, 2.3110)


def test_doubling_size_adds_a():
    t = Theta(0.5, 0.1, 1.0)
    # exact on the guarded log when n+1 doubles
    for n in (1, 7, 1023):
        assert c_theta(t, 2 * n + 1, 50) - c_theta(t, n, 50) == pytest.approx(0.5, abs=1e-12)
    # and approximately for large n when n doubles
    assert c_theta(t, 2 ** 20, 50) - c_theta(t, 2 ** 19, 50) == pytest.approx(0.5, abs=1e-5)


def test_c_theta_rejects_empty():
    with pytest.raises(ValueError):
        c_theta(REFERENCE_THETA, 0, 10)


def test_negative_coefficients_rejected():
    with pytest.raises(ValueError):
        Theta(-1, 0.1, 0)


def test_inflation():
    assert inflation(10, 5) == 2 and inflation(10, 4) == 3 and inflation(10, 10) == 1
    assert inflation(10, 0) is None
    assert inflated_efs(100, 2) == 200


def test_cost_hnsw_pure_ignores_lambda():
    t = REFERENCE_THETA
    assert cost_hnsw(t, 5000, 100, True, 7) == cost_hnsw(t, 5000, 100, True) == c_theta(t, 5000, 100)


def test_cost_hnsw_lambda_two_doubles_efs_term():
    t = Theta(0.1, 0.2, 1.0)
    pure, imp = cost_hnsw(t, 5000, 100, True), cost_hnsw(t, 5000, 100, False, 2)
    assert imp - pure == pytest.approx(0.2 * 100)


def test_cost_hnsw_impure_needs_lambda():
    with pytest.raises(ValueError):
        cost_hnsw(REFERENCE_THETA, 10, 10, False)


def test_full_scan_regime_flag():
    assert full_scan_regime(300, 100, 3) and not full_scan_regime(301, 100, 3)


def test_avg_cost_single_role():
    t = REFERENCE_THETA
    assert avg_cost(t, {0: [(4000, True, 1)]}, None, 100) == pytest.approx(c_theta(t, 4000, 100))


def test_avg_cost_symmetric_relabel():
    t = REFERENCE_THETA
    p = {0: [(4000, True, 1)], 1: [(8000, False, 2), (300, True, 1)]}
    q = {0: p[1], 1: p[0]}
    assert avg_cost(t, p, None, 100) == pytest.approx(avg_cost(t, q, None, 100))


@given(st.floats(0, 1), st.floats(0, 1))
def test_avg_cost_superposition(w0, w1):
    t = REFERENCE_THETA
    p = {0: [(4000, True, 1)], 1: [(8000, False, 3)]}
    lhs = avg_cost(t, p, {0: w0, 1: w1}, 100)
    rhs = w0 * avg_cost(t, p, {0: 1.0}, 100) + w1 * avg_cost(t, p, {1: 1.0}, 100)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@given(pos, pos, st.floats(0, 10))
def test_oracle_layout_beats_single_merged_index(a, b, c):
    # three-role toy: per-role pure indices vs one merged index read with inflation
    t = Theta(a, b, c)
    n = 10_000
    readable = {0: 6500, 1: 4000, 2: 4500}
    oracle = {r: [(s, True, 1)] for r, s in readable.items()}
    merged = {r: [(n, False, inflation(n, s))] for r, s in readable.items()}
    assert avg_cost(t, oracle, None, 100) < avg_cost(t, merged, None, 100)


@given(pos, pos, st.floats(0, 10), st.integers(1, 10 ** 6), st.integers(1, 1000))
def test_c_theta_monotone(a, b, c, n, efs):
    t = Theta(a, b, c)
    assert c_theta(t, n + 1, efs) > c_theta(t, n, efs)
    assert c_theta(t, n, efs + 1) > c_theta(t, n, efs)


@given(st.integers(1, 10 ** 5), st.integers(1, 10 ** 5))
def test_pure_not_more_expensive(n, auth):
    cm = CostModel()
    auth = min(auth, n)
    assert cm.index_cost(n, n) <= cm.index_cost(n, auth)
    assert cm.index_cost_frac(n, auth) <= cm.index_cost(n, auth) + 1e-12


def test_cost_model_empty_auth_is_infinite():
    cm = CostModel()
    assert cm.index_cost(100, 0) == math.inf and cm.unit_cost(100, 0, False) == math.inf


def test_scan_coefficient_matches_threshold():
    cm = CostModel(threshold=1000)
    assert cm.scan_cost(1000) == pytest.approx(cm.index_cost(1000, 1000))
    assert CostModel(scan_per_vector=0.01).scan_cost(500) == pytest.approx(5.0)


def test_planted_model_recovered():
    runner = FunctionRunner(lambda n, e: 0.1 * math.log2(n) + 0.2 * e + 1.0)
    rep = calibrate(runner, SIZES, EFS, n0=2 ** 14)
    t = rep.theta
    assert t.a == pytest.approx(0.1, rel=0.05)
    assert t.b == pytest.approx(0.2, rel=0.05)
    assert t.c == pytest.approx(1.0, rel=0.05)
    assert t.efs_form == "linear" and rep.r2_efs_linear > 0.999
    d = json.loads(rep.to_json())
    assert {"a", "b", "c", "r2_size", "r2_efs", "samples"} <= set(d)
    assert len(d["samples"]) == len(SIZES) + len(EFS)


def test_loglinear_form_selected():
    runner = FunctionRunner(lambda n, e: 0.1 * math.log2(n + 1) + 0.02 * e * math.log2(e) + 1.0)
    rep = calibrate(runner, SIZES, EFS, n0=2 ** 14)
    assert rep.theta.efs_form == "loglinear"
    assert rep.theta.b == pytest.approx(0.02, rel=0.05)


def test_constant_timer():
    rep = calibrate(FunctionRunner(lambda n, e: 7.0), SIZES, EFS, n0=2 ** 14)
    assert rep.theta.a == pytest.approx(0, abs=1e-9) and rep.theta.b == pytest.approx(0, abs=1e-9)
    assert rep.theta.c == pytest.approx(7.0)


def test_noisy_fit_fails_with_samples():
    import numpy as np
    rng = np.random.default_rng(0)
    runner = FunctionRunner(lambda n, e: float(rng.uniform(0, 100)))
    with pytest.raises(CalibrationError) as ei:
        calibrate(runner, SIZES, EFS, n0=2 ** 14)
    assert len(ei.value.samples["efs"]) == len(EFS)


def test_theta_roundtrip():
    t = Theta(0.1, 0.2, 0.3, 0.9, 0.99, "linear")
    assert Theta.from_dict(t.to_dict()) == t


class _FakeHost:
    """Index latency flat at 100, scan latency given per size."""

    def __init__(self, scan: dict):
        self.scan = scan

    def latency(self, n, efs):
        return 100.0

    def scan_latency(self, n):
        return self.scan[n]


def test_crossover_ignores_isolated_early_win():
    host = _FakeHost({1000: 50.0, 2000: 120.0, 3000: 90.0, 4000: 130.0, 5000: 160.0})
    assert find_crossover(host, [1000, 2000, 3000, 4000, 5000]) == 4000


def test_crossover_never_wins_returns_largest():
    host = _FakeHost({1000: 10.0, 2000: 20.0})
    assert find_crossover(host, [2000, 1000]) == 2000
