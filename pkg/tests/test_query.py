import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbacvec.access import AccessMatrix, build_exclusive_lattice, mask_of
from rbacvec.bench.baselines import global_layout, oracle_layout
from rbacvec.bench.policy import PolicySpec, gen_policy
from rbacvec.cost import CostModel
from rbacvec.hnsw import HnswParams
from rbacvec.layout import Layout, Unit
from rbacvec.partition import veda_run
from rbacvec.query import (AuthorizationError, ExecStats, GlobalHeap, MaterializedLayout, exec_coordinated,
                           exec_independent, exec_multi_role, execute, run_batch, summarize)
from rbacvec.vectors import Dataset, brute_force_topk, gen_gaussian_mixture

PARAMS = HnswParams(M=12, efc=100, seed=0)


def make(n=3000, dim=8, n_roles=6, threshold=100, beta=1.0, seed=0, kind="veda"):
    ds = gen_gaussian_mixture(n, dim, 16, seed=seed)
    pol = gen_policy(PolicySpec(n_roles=n_roles, n_departments=40, depts_per_role=4, seed=seed), n)
    lex = build_exclusive_lattice(pol.access)
    cm = CostModel(threshold=threshold)
    lay = veda_run(lex, cm, beta)[0] if kind == "veda" else global_layout(lex)
    return ds, lex, MaterializedLayout.build(ds, lex, lay, PARAMS)


@pytest.fixture(scope="module")
def small():
    return make()


@pytest.fixture(scope="module", params=["veda", "global"])
def mixed(request):
    """Layouts with impure indices: an optimized one and the single shared index."""
    return make(kind=request.param)


def queries(ds, n, seed=1, noise=0.05):
    rng = np.random.default_rng(seed)
    return ds.vectors[rng.integers(0, len(ds), n)] + noise * rng.standard_normal((n, ds.dim)).astype(np.float32)


def authorized(lex, roles, res):
    mask = lex.authorized_mask(roles)
    return all(mask[n.id] for n in res)


# heap -----------------------------------------------------------------------------

@given(st.lists(st.integers(0, 50), max_size=80), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_global_heap_matches_sort(items, k, seed):
    # an id always arrives with the same distance (it is the same vector)
    dist = np.random.default_rng(seed).integers(0, 20, 51).astype(float)
    h = GlobalHeap(k)
    for g in items:
        h.push(g, dist[g])
    assert len(h) <= k
    want = sorted((dist[g], g) for g in set(items))[:k]
    assert [(n.dist, n.id) for n in h.top()] == want
    assert h.kth() == (want[-1][0] if len(want) == k else math.inf)


def test_heap_rejects_zero_k():
    with pytest.raises(ValueError):
        GlobalHeap(0)


# worked inflated-k example ---------------------------------------------------------

def test_inflated_k_worked_example():
    # ids 0..3 = u1, v1, u2, v2 on a line; role 0 reads the v's, role 1 the u's
    xs = np.sqrt([0.03, 0.04, 0.06, 0.09]).astype(np.float32)
    ds = Dataset(np.stack([xs, np.zeros(4, np.float32)], axis=1))
    lex = build_exclusive_lattice(AccessMatrix.from_rows([[1], [0], [1], [0]], 2))
    u = Unit("idx:mixed", tuple(sorted(lex.keys)), 4, True)
    lay = Layout({u.name: u}, {0: (u.name,), 1: (u.name,)}, dict(lex.sizes), 4, 2)
    ml = MaterializedLayout.build(ds, lex, lay, HnswParams(M=4, efc=8, seed=0))
    assert ml.probes(1)[0].lam == 2
    res = exec_independent(ml, np.zeros(2, np.float32), 1, k=2, efs=2)
    assert [n.id for n in res] == [1, 3]
    assert [n.dist for n in res] == pytest.approx([0.04, 0.09], rel=1e-6)
    assert exec_coordinated(ml, np.zeros(2, np.float32), 1, k=2, efs=2) == res


# strategies ------------------------------------------------------------------------

def test_single_pure_index_equals_index_search():
    ds = gen_gaussian_mixture(2000, 8, 8, seed=3)
    lex = build_exclusive_lattice(AccessMatrix.from_rows([[0]] * 2000, 1))
    ml = MaterializedLayout.build(ds, lex, oracle_layout(lex, CostModel(threshold=100)), PARAMS)
    idx = ml.indices["role:0"]
    for q in queries(ds, 20):
        assert exec_independent(ml, q, 1, 10, 50) == idx.search(q, 10, 50)
        assert exec_coordinated(ml, q, 1, 10, 50) == idx.search(q, 10, 50)


def test_no_impure_indices_strategies_coincide():
    ds, lex, _ = make(seed=4)
    ml = MaterializedLayout.build(ds, lex, oracle_layout(lex, CostModel(threshold=200)), PARAMS)
    for i, q in enumerate(queries(ds, 50)):
        r = 1 << (i % lex.n_roles)
        assert exec_coordinated(ml, q, r) == exec_independent(ml, q, r)


def test_exact_hits_skip_phase_two(small):
    ds, lex, ml = small
    impure_roles = [r for r in range(lex.n_roles) if any(not p.pure and p.indexed for p in ml.probes(1 << r))]
    assert impure_roles
    for r in impure_roles:
        pure_units = [p for p in ml.probes(1 << r) if p.pure or not p.indexed]
        if not pure_units:
            continue
        p = pure_units[0]
        ids = ml.indices[p.name].ids if p.indexed else ml.leftovers[p.name]
        ids = ids[lex.authorized_mask(1 << r)[ids]]
        st_ = ExecStats()
        exec_coordinated(ml, ds.vectors[ids[0]], 1 << r, k=1, efs=10, stats=st_)
        assert st_.impure_touched > 0 and st_.phase2_skips == st_.impure_touched


def test_exhaustive_parameters_match_brute_force(mixed):
    ds, lex, ml = mixed
    efs = max(len(i) for i in ml.indices.values())
    rng = np.random.default_rng(7)
    for q in queries(ds, 1000, seed=9):
        r = 1 << int(rng.integers(lex.n_roles))
        truth = brute_force_topk(ds, q, 10, np.flatnonzero(lex.authorized_mask(r)))
        a = exec_coordinated(ml, q, r, 10, efs)
        b = exec_independent(ml, q, r, 10, efs)
        assert [n.id for n in a] == [n.id for n in b] == [n.id for n in truth]


def test_recall_and_safety(mixed):
    ds, lex, ml = mixed
    rng = np.random.default_rng(2)
    rec = {"coordinated": [], "independent": []}
    for q in queries(ds, 300, seed=3):
        r = 1 << int(rng.integers(lex.n_roles))
        truth = {n.id for n in brute_force_topk(ds, q, 10, np.flatnonzero(lex.authorized_mask(r)))}
        for s in rec:
            res = execute(ml, q, r, 10, 100, s)
            assert authorized(lex, r, res)
            rec[s].append(len(truth & {n.id for n in res}) / max(len(truth), 1))
    assert np.mean(rec["coordinated"]) >= 0.95
    assert np.mean(rec["coordinated"]) >= np.mean(rec["independent"]) - 0.01


def test_stats_and_summary(mixed):
    ds, lex, ml = mixed
    roles = [1 << (i % lex.n_roles) for i in range(60)]
    _, stats = run_batch(ml, queries(ds, 60), roles)
    for s in stats:
        assert s.phase2_skips <= s.impure_touched
        assert 0.0 <= s.efs_savings <= 1.0
    summ = summarize(stats)
    assert 0.0 <= summ["phase2_skip_rate"] <= 1.0 and summ["indices_per_query"] > 0


# authorization ----------------------------------------------------------------------

def test_unknown_role_rejected(small):
    ds, lex, ml = small
    with pytest.raises(AuthorizationError):
        execute(ml, ds.vectors[0], 1 << 40)
    with pytest.raises(AuthorizationError):
        execute(ml, ds.vectors[0], 0)


def test_role_without_data_returns_empty():
    ds = gen_gaussian_mixture(500, 4, 4, seed=0)
    lex = build_exclusive_lattice(AccessMatrix.from_rows([[0]] * 500, 3))
    ml = MaterializedLayout.build(ds, lex, global_layout(lex), PARAMS)
    assert execute(ml, ds.vectors[0], 1 << 2) == []


# multi-role --------------------------------------------------------------------------

def test_single_role_multi_equals_coordinated(small):
    ds, lex, ml = small
    q = queries(ds, 1)[0]
    assert exec_multi_role(ml, q, 1 << 2) == exec_coordinated(ml, q, 1 << 2)


def test_multi_role_union_safe(small):
    ds, lex, ml = small
    rng = np.random.default_rng(4)
    for q in queries(ds, 100, seed=5):
        tau = int(rng.integers(1, 1 << lex.n_roles))
        res = execute(ml, q, tau)
        assert authorized(lex, tau, res)


def routing_setup(frac_auth):
    n = 1000
    k0 = int(frac_auth * n)
    rows = [[0, 1]] * k0 + [[1]] * (n - k0)
    ds = gen_gaussian_mixture(n, 4, 4, seed=1)
    lex = build_exclusive_lattice(AccessMatrix.from_rows(rows, 3))
    lay = global_layout(lex)
    return ds, lex, MaterializedLayout.build(ds, lex, lay, PARAMS)


def test_full_coverage_routes_to_pure_global():
    ds, lex, ml = routing_setup(0.5)
    st_ = ExecStats()
    q = ds.vectors[3]
    res = exec_multi_role(ml, q, mask_of([0, 1]), stats=st_)
    assert st_.routed_global and st_.impure_touched == 0
    assert res == ml.global_index.search(q, 10, 100)


def test_exactly_eighty_percent_stays_partitioned():
    ds, lex, ml = routing_setup(0.8)
    st_ = ExecStats()
    exec_multi_role(ml, ds.vectors[0], mask_of([0, 2]), stats=st_)
    assert not st_.routed_global
    ds, lex, ml = routing_setup(0.801)
    st_ = ExecStats()
    res = exec_multi_role(ml, ds.vectors[0], mask_of([0, 2]), stats=st_)
    assert st_.routed_global and authorized(lex, mask_of([0, 2]), res)


# persistence -------------------------------------------------------------------------

def test_save_load_same_answers(small, tmp_path):
    ds, lex, ml = small
    ml.save(tmp_path)
    back = MaterializedLayout.load(tmp_path, ds, lex)
    for i, q in enumerate(queries(ds, 20)):
        r = 1 << (i % lex.n_roles)
        assert execute(back, q, r) == execute(ml, q, r)


def test_dimension_mismatch(small):
    ds, lex, ml = small
    with pytest.raises(ValueError):
        execute(ml, np.zeros(ds.dim + 1, np.float32), 1)
