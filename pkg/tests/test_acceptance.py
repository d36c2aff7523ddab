"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (see ``conftest.py``).
"""

import itertools
import os
import time
import warnings

import numpy as np
import pytest

from linkweave.cli import (
    DEFAULTS,
    StageCache,
    _merge,
    build_topology,
    noise_report,
    run_experiment,
    stage_paths,
    stage_tms,
    stage_train,
    validate,
)
from linkweave.demand import DemandMatrix, gravity_series
from linkweave.failure import FailureScenario, source_reroute, weave
from linkweave.learn import PredictorModel, gradient_check
from linkweave.metrics import perc_loss, scenario_loss
from linkweave.pathing import build_path_set, edge_risk, edksp, risk_profile
from linkweave.te import RatioConfig, lp_oracle, mlu, normalize_groups
from linkweave.topology import load_topology_file, prune_degree_one

import conftest
from conftest import S, expand_weave, golden_topology, grid_mlu, random_connected


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------


def test_criterion_01_golden_example():
    start = time.perf_counter()
    t = golden_topology()
    ps = build_path_set(t, 4, method="ksp", backup_k=2)
    D = np.zeros((11, 11))
    D[S(1, 5)] = 1.2
    dm = DemandMatrix(0, D)
    r = RatioConfig.uniform(ps)
    tunnels = ps.routing[S(1, 5)]
    f = t.edge_id(*S(7, 6))
    sr = mlu(source_reroute(ps, dm, r, FailureScenario((f,))).load).mlu
    w = weave(ps, dm, r, FailureScenario((f,)))
    wm = mlu(w.load).mlu
    e = t.edge_id
    detours = [float(x) for x in (w.load.flow[e(*S(7, 10))], w.load.flow[e(*S(10, 6))],
               w.load.flow[e(*S(7, 11))], w.load.flow[e(*S(11, 6))])]
    elapsed = time.perf_counter() - start
    ok = (
        len(tunnels) == 4
        and S(1, 9, 8, 7, 6, 5) in [p.nodes for p in tunnels]
        and abs(sr - 1.2) <= 1e-9
        and wm <= 1.0
        and all(abs(x - 0.15) <= 1e-12 for x in detours)
        and elapsed < 1.0
    )
    record(1, ok, f"source_reroute MLU={sr:.12f}, weave MLU={wm:.3f}, "
                  f"detour loads={[round(x, 12) for x in detours]}, {elapsed:.3f}s")


# 2 ---------------------------------------------------------------------------


def _lp_instance(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(3, 7))
    t = random_connected(rng, n, int(rng.integers(0, 5)), cap_range=(0.5, 2.0))
    pairs = 1 + seed % 2
    ps = build_path_set(t, 3 if pairs == 1 else 2)
    offdiag = [(s, d) for s in range(n) for d in range(n) if s != d]
    D = np.zeros((n, n))
    for c in rng.choice(len(offdiag), size=pairs, replace=False):
        D[offdiag[c]] = rng.uniform(0.2, 2.0)
    return ps, DemandMatrix(0, D)


def test_criterion_02_lp_oracle():
    start = time.perf_counter()
    worst_grid = worst_cons = worst_gap = 0.0
    ok = True
    for seed in range(50):
        ps, dm = _lp_instance(seed)
        r, rep = lp_oracle(ps, dm)
        g = grid_mlu(ps, dm)
        worst_grid = max(worst_grid, abs(g - rep.mlu))
        # constraint verification, independent of the solver
        sums = np.add.reduceat(r.weights, r.offsets[:-1])
        load = np.zeros(ps.topology.num_edges)
        for (s, d), paths in ps.routing.items():
            lam = r.pair_weights(ps.flat.pair_index[(s, d)])
            for p, x in zip(paths, lam):
                load[list(p.edges)] += dm.entries[s, d] * x
        cap = ps.topology.capacities
        viol = max(
            float(np.max(np.abs(sums - 1.0))),
            float(np.max(load - rep.mlu * cap)),
            float(-min(r.weights.min(), 0.0)),
        )
        worst_cons = max(worst_cons, viol)
        worst_gap = max(worst_gap, rep.gap)
        ok &= rep.mlu <= g + 1e-9
    elapsed = time.perf_counter() - start
    ok &= worst_grid <= 0.02 and worst_cons <= 1e-6 and worst_gap <= 1e-6 and elapsed < 60
    record(2, ok, f"max |LP - grid|={worst_grid:.4f}, max constraint violation={worst_cons:.1e}, "
                  f"max duality gap={worst_gap:.1e}, {elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------


def test_criterion_03_edksp_risk():
    rng = np.random.default_rng(33)
    checked = bad = 0
    for _ in range(20):
        n = int(rng.integers(5, 13))
        t = random_connected(rng, n, int(rng.integers(2, 2 * n)))
        for s, d in itertools.permutations(range(n), 2):
            paths = edksp(t, s, d, 8)
            checked += 1
            bad += edge_risk(paths) != 1 / len(paths)
    record(3, bad == 0, f"{checked} pairs on 20 topologies, {bad} mismatches")


# 4 ---------------------------------------------------------------------------


def _weave_cases():
    rng = np.random.default_rng(44)
    for inst in range(14):
        n = 4 + inst % 3
        t = random_connected(rng, n, 2 + inst % 5)
        ps = build_path_set(t, 2 + inst % 2, backup_k=1 + inst % 3)
        dm = gravity_series(t, 4, 2.0, seed=inst)[0]
        r = RatioConfig(normalize_groups(rng.uniform(0, 1, ps.flat.num_paths), ps.flat.offsets), ps.flat.offsets)
        for size in (1, 2):
            for failed in itertools.combinations(range(t.num_edges), size):
                yield ps, dm, r, failed


def test_criterion_04_weave_oracle():
    cases = worst = 0
    for ps, dm, r, failed in _weave_cases():
        cases += 1
        w = weave(ps, dm, r, list(failed))
        load, planned, weaved, rerouted, dropped = expand_weave(ps, dm, r, failed)
        worst = max(
            worst,
            float(np.max(np.abs(w.load.flow - load))),
            abs(w.planned - planned), abs(w.weaved - weaved),
            abs(w.rerouted - rerouted), abs(w.dropped - dropped),
        )
    record(4, cases >= 200 and worst <= 1e-12, f"{cases} enumerated cases, max deviation {worst:.1e}")


# 5 ---------------------------------------------------------------------------


def test_criterion_05_gradient_check():
    t = random_connected(np.random.default_rng(55), 7, 6, cap_range=(0.5, 2.0))
    ps = build_path_set(t, 3)
    mats = list(gravity_series(t, 8, 1.0, seed=5))
    worst = 0.0
    for seed in range(3):
        model = PredictorModel.for_pathset(ps, 1, seed=seed, zero_output=False)
        worst = max(worst, gradient_check(model, ps, (mats[seed : seed + 1], mats[seed + 1]), num_params=120, seed=seed))
    record(5, worst < 1e-4, f"max relative error {worst:.2e} over 3 fresh models x 120 parameters "
                            f"({model.num_params} parameters each)")


# 6-9: one desk-scale experiment ----------------------------------------------

DESK = {
    "topology": {"random": {"nodes": 20, "mean_degree": 3.5, "seed": 1}},
    "k": 8,
    "tm": {"count": 200, "seed": 0},
    "scenarios": {"per_tm": 1, "simultaneous": 1, "seed": 0},
    "regimes": ["weave", "source_reroute"],
    "betas": [0.9],
    "workers": 4,
}


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    doc = dict(DESK, out=str(tmp_path_factory.mktemp("desk")))
    cfg = validate(_merge(DEFAULTS, doc))
    start = time.perf_counter()
    result = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    cache = StageCache(cfg.out)
    t = build_topology(cfg)
    ps, pk = stage_paths(cfg, t, cache)
    series, tk = stage_tms(cfg, ps, pk, cache)
    model, _ = stage_train(cfg, ps, series, tk, cache)
    return cfg, result, elapsed, ps, series, model


def _by_regime(rows, regime):
    return [r for r in rows if r["regime"] == regime]


def test_criterion_06_weave_beats_source_reroute(desk):
    cfg, result, elapsed, ps, _, _ = desk
    w = np.array([r["mlu"] for r in _by_regime(result.rows, "weave")])
    s = np.array([r["mlu"] for r in _by_regime(result.rows, "source_reroute")])
    wins = float(np.mean(w <= s))
    strict = float(np.mean(w < s))
    ok = len(w) == 50 and w.mean() <= s.mean() and wins >= 0.6 and elapsed < 600
    record(6, ok, f"{ps.topology.num_nodes} nodes, {len(w)} single-failure scenarios: "
                  f"mean MLU weave={w.mean():.4f} vs source_reroute={s.mean():.4f}, "
                  f"weave not worse in {wins:.0%} (strictly better {strict:.0%}), {elapsed:.0f}s")


def test_criterion_07_conservation(desk):
    _, result, _, _, _, _ = desk
    # "exact" up to float summation order, relative to the unit-scale totals
    worst = max(r["conservation_error"] for r in result.rows)
    dead = max(r["failed_edge_load"] for r in result.rows)
    record(7, worst <= 1e-10 and dead == 0.0,
           f"{len(result.rows)} evaluations, max bookkeeping error {worst:.1e}, max load on failed links {dead}")


def test_criterion_08_perc_loss(desk):
    _, result, _, _, series, _ = desk
    cut = series.split_index

    def records(regime):
        return [scenario_loss(r["mlu"], series[cut + r["tm_index"]], r["weight"]) for r in _by_regime(result.rows, regime)]

    rw, rs = records("weave"), records("source_reroute")
    pw, psr = perc_loss(rw, 0.9), perc_loss(rs, 0.9)
    free = [rec for rec in rw + rs if rec.mlu <= 1.0]
    zero_ok = all(np.all(rec.flow_loss == 0.0) for rec in free)
    record(8, pw <= psr and zero_ok,
           f"PercLoss(0.9) weave={pw:.4f} vs source_reroute={psr:.4f}; "
           f"{len(free)} congestion-free evaluations all contribute 0")


def test_criterion_09_noise(desk):
    cfg, _, _, ps, series, model = desk
    rows = noise_report(cfg, ps, model, series, [0.3, 0.1, 0.2])
    alphas = [r["alpha"] for r in rows]
    devs = [r["max_entry_deviation"] for r in rows]
    first = rows[0]["mean_mlu_change_pct"]
    ok = (
        alphas == [0.1, 0.2, 0.3]
        and all(a <= b for a, b in zip(devs, devs[1:]))
        and all(d <= a + 1e-12 for d, a in zip(devs, alphas))
        and abs(first) <= 5.0
    )
    table = ", ".join(f"a={r['alpha']}: mean {r['mean_mlu_change_pct']:+.2f}% p99 {r['p99_mlu_change_pct']:+.2f}%" for r in rows)
    record(9, ok, table)


# 10 --------------------------------------------------------------------------


def test_criterion_10_viatel():
    path = os.environ.get("LINKWEAVE_VIATEL")
    if not path or not os.path.exists(path):
        msg = "Viatel topology unavailable (set LINKWEAVE_VIATEL to its GraphML file); skipped"
        conftest.ACCEPTANCE[10] = f"criterion 10: SKIP  {msg}"
        warnings.warn(msg)
        pytest.skip(msg)
    t, _ = prune_degree_one(load_topology_file(path, "graphml-lite"))
    ps = build_path_set(t, 8)
    count = ps.num_backup_paths
    mean = risk_profile(ps, "backup").mean
    ok = abs(count - 1240) <= 0.05 * 1240 and abs(mean - 0.4698) <= 0.05
    record(10, ok, f"{t.num_nodes} nodes, {t.num_edges} links: backup paths={count}, mean backup risk={mean:.4f}")
