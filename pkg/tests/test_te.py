import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkweave.demand import DemandMatrix, gravity_series
from linkweave.pathing import build_path_set
from linkweave.te import (
    LinkLoad,
    MluReport,
    NoUsablePathError,
    PathView,
    RatioConfig,
    TEError,
    calibrate_volume,
    compute_loads,
    lp_oracle,
    mlu,
    normalize_groups,
    normalized_mlu,
    path_flows,
)
from linkweave.topology import Topology

from conftest import S, cycle, grid_mlu, random_connected


def demand(n, entries):
    D = np.zeros((n, n))
    for (s, d), v in entries.items():
        D[s, d] = v
    return DemandMatrix(0, D)


def golden_setup(t):
    ps = build_path_set(t, 4, method="ksp", backup_k=2)
    return ps, demand(11, {S(1, 5): 1.2})


def test_golden_tunnels_carry_point_three(golden):
    ps, dm = golden_setup(golden)
    r = RatioConfig.uniform(ps)
    flows = path_flows(ps, dm, r)
    i = ps.flat.pair_index[S(1, 5)]
    lo, hi = ps.flat.offsets[i], ps.flat.offsets[i + 1]
    np.testing.assert_allclose(flows[lo:hi], 0.3)
    load = compute_loads(ps, dm, r)
    assert load.flow[golden.edge_id(*S(4, 5))] == pytest.approx(0.9)
    assert load.flow[golden.edge_id(*S(7, 6))] == pytest.approx(0.3)
    assert mlu(load).mlu == pytest.approx(0.9)


def test_golden_lp_uncongested(golden):
    ps, dm = golden_setup(golden)
    _, rep = lp_oracle(ps, dm)
    assert rep.mlu < 1.0
    # T1 and the (S4,S5) link are the only ways into S5
    assert rep.mlu == pytest.approx(0.6, abs=1e-6)


def test_zero_demand_and_single_path():
    t = Topology.build("abc", [(0, 1, 1.0), (1, 2, 1.0)])
    ps = build_path_set(t, 1)
    r = RatioConfig.uniform(ps)
    z = compute_loads(ps, DemandMatrix(0, np.zeros((3, 3))), r)
    assert np.all(z.flow == 0) and mlu(z).mlu == 0.0
    load = compute_loads(ps, demand(3, {(0, 2): 7.0}), r)
    np.testing.assert_array_equal(load.flow, [7.0, 7.0])


def test_mlu_cases():
    rep = mlu(LinkLoad(np.array([1.0, 2.0, 2.0]), np.array([1.0, 2.0, 2.0])))
    assert rep.mlu == 1.0 and rep.argmax_edge == 0
    rep = mlu(LinkLoad(np.array([0.5, 2.0, 2.0]), np.array([1.0, 1.0, 1.0])))
    assert rep.argmax_edge == 1
    rep = mlu(LinkLoad(np.array([1.2]), np.array([1.0])))
    assert rep.mlu == pytest.approx(1.2)


def test_misaligned_config_rejected(golden):
    ps, dm = golden_setup(golden)
    other = build_path_set(golden, 2)
    with pytest.raises(TEError):
        compute_loads(ps, dm, RatioConfig.uniform(other))
    with pytest.raises(TEError):
        compute_loads(ps, DemandMatrix(0, np.zeros((3, 3))), RatioConfig.uniform(ps))


def test_ratio_config_validation():
    off = np.array([0, 2, 3])
    RatioConfig(np.array([0.25, 0.75, 1.0]), off)
    with pytest.raises(TEError):
        RatioConfig(np.array([0.5, 0.6, 1.0]), off)
    with pytest.raises(TEError):
        RatioConfig(np.array([-0.5, 1.5, 1.0]), off)
    with pytest.raises(TEError):
        RatioConfig(np.array([1.0, 1.0]), off)


def test_normalize_groups():
    out = normalize_groups(np.array([1.0, 3.0, 0.0, 0.0, 0.0, 2.0]), np.array([0, 2, 5, 6]))
    np.testing.assert_allclose(out, [0.25, 0.75, 1 / 3, 1 / 3, 1 / 3, 1.0])


def test_two_disjoint_paths_half_split():
    t = cycle(4)
    ps = build_path_set(t, 2)
    r, rep = lp_oracle(ps, demand(4, {(0, 2): 3.0}))
    assert rep.mlu == pytest.approx(1.5, abs=1e-6)
    i = ps.flat.pair_index[(0, 2)]
    np.testing.assert_allclose(r.pair_weights(i), [0.5, 0.5], atol=1e-6)
    assert rep.gap is not None and rep.gap <= 1e-6


def _instance(seed, max_nodes=6, k=3, pairs=2):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_nodes + 1))
    t = random_connected(rng, n, int(rng.integers(1, 5)), cap_range=(0.5, 2.0))
    ps = build_path_set(t, k)
    D = np.zeros((n, n))
    chosen = rng.choice(n * (n - 1), size=pairs, replace=False)
    offdiag = [(s, d) for s in range(n) for d in range(n) if s != d]
    for c in chosen:
        D[offdiag[c]] = rng.uniform(0.2, 2.0)
    return ps, DemandMatrix(0, D)


@pytest.mark.parametrize("seed", range(25))
def test_lp_matches_grid_search(seed):
    ps, dm = _instance(seed, k=2 if seed % 2 else 3, pairs=1 + seed % 2)
    _, rep = lp_oracle(ps, dm)
    g = grid_mlu(ps, dm)
    assert rep.mlu <= g + 1e-9
    assert g - rep.mlu <= 0.02


def _uniform_mlu(ps, dm):
    return mlu(compute_loads(ps, dm, RatioConfig.uniform(ps))).mlu


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_lp_properties(seed, c):
    rng = np.random.default_rng(seed)
    t = random_connected(rng, 7, 6, cap_range=(0.5, 3.0))
    ps = build_path_set(t, 3)
    dm = gravity_series(t, 4, 1.0, seed=seed)[0]
    r, rep = lp_oracle(ps, dm)
    sums = np.add.reduceat(r.weights, r.offsets[:-1])
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    assert np.all(r.weights >= 0)
    assert rep.mlu <= _uniform_mlu(ps, dm) + 1e-9
    # the report's MLU is what the returned ratios actually achieve
    assert mlu(compute_loads(ps, dm, r)).mlu == rep.mlu
    _, scaled = lp_oracle(ps, dm.scaled(c))
    assert scaled.mlu == pytest.approx(c * rep.mlu, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_loads_linear_and_conserved(seed):
    rng = np.random.default_rng(seed)
    t = random_connected(rng, 7, 5, cap_range=(0.5, 3.0))
    ps = build_path_set(t, 3)
    a, b = gravity_series(t, 4, 2.0, seed=seed)[:2]
    w = normalize_groups(rng.uniform(0, 1, ps.flat.num_paths), ps.flat.offsets)
    r = RatioConfig(w, ps.flat.offsets)
    la, lb = compute_loads(ps, a, r).flow, compute_loads(ps, b, r).flow
    lab = compute_loads(ps, DemandMatrix(0, a.entries + b.entries), r).flow
    np.testing.assert_allclose(lab, la + lb, atol=1e-9)
    # independent per-path accumulation
    expected = np.zeros(t.num_edges)
    hops = 0.0
    for (s, d), paths in ps.routing.items():
        i = ps.flat.pair_index[(s, d)]
        for p, lam in zip(paths, r.pair_weights(i)):
            for e in p.edges:
                expected[e] += a.entries[s, d] * lam
            hops += a.entries[s, d] * lam * p.hops
    np.testing.assert_allclose(la, expected, atol=1e-12)
    assert la.sum() == pytest.approx(hops, rel=1e-12)


def test_failed_view_and_stranded_pairs():
    t = cycle(4)
    ps = build_path_set(t, 1)
    f = t.edge_id(0, 1)
    view = PathView(ps, [f])
    dm = demand(4, {(0, 1): 1.0, (2, 3): 1.0})
    with pytest.raises(NoUsablePathError) as exc:
        lp_oracle(view, dm)
    assert exc.value.pairs == [(0, 1)]
    _, rep = lp_oracle(view, demand(4, {(2, 3): 1.0}))
    assert rep.mlu == pytest.approx(1.0)


def test_lp_on_surviving_paths():
    t = cycle(4)
    ps = build_path_set(t, 2)
    f = t.edge_id(0, 1)
    r, rep = lp_oracle(PathView(ps, [f]), demand(4, {(0, 2): 1.0}))
    i = ps.flat.pair_index[(0, 2)]
    np.testing.assert_allclose(r.pair_weights(i), [0.0, 1.0], atol=1e-9)
    assert rep.mlu == pytest.approx(1.0)


def test_lp_zero_demand():
    ps = build_path_set(cycle(4), 2)
    r, rep = lp_oracle(ps, DemandMatrix(0, np.zeros((4, 4))))
    assert rep.mlu == 0.0
    np.testing.assert_allclose(r.weights, RatioConfig.uniform(ps).weights)


def test_normalized_mlu():
    assert normalized_mlu(MluReport(0.8, 0), MluReport(0.8, 0)) == 1.0
    assert normalized_mlu(1.2, 1.0) == pytest.approx(1.2)
    assert normalized_mlu(0.0, 0.0) == 1.0
    with pytest.raises(TEError):
        normalized_mlu(0.5, 0.0)


def test_calibrate_volume():
    rng = np.random.default_rng(0)
    t = random_connected(rng, 8, 8)
    ps = build_path_set(t, 3)
    mats = list(gravity_series(t, 7, 1.0, seed=1))
    f = calibrate_volume(ps, mats, target=0.6)
    vals = [lp_oracle(ps, m.scaled(f))[1].mlu for m in mats]
    assert np.median(vals) == pytest.approx(0.6, rel=1e-6)


def test_ratio_json_round_trip(golden):
    ps, dm = golden_setup(golden)
    r, _ = lp_oracle(ps, dm)
    back = RatioConfig.from_json(ps, r.to_json(ps))
    np.testing.assert_array_equal(back.weights, r.weights)


def test_mlu_report_json():
    import json

    doc = json.loads(MluReport(1.5, 3, {(0, 1): 2.0}).to_json())
    assert doc == {"mlu": 1.5, "argmax_edge": 3, "unrouted": [[0, 1, 2.0]], "gap": None}
