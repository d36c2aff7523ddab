"""Command-line experiment harness.

Every subcommand reads one JSON config (``--config``), applies flag
overrides, and writes its artifacts under the output directory::

    linkweave topo  --topology net.graphml
    linkweave paths --config exp.json
    linkweave run   --config exp.json --out results/ --workers 4
    linkweave noise --config exp.json --out results/
    linkweave state --nodes 88 --degree 4 --buckets 64 --sids 5

Stages (path set, traffic matrices, model) are cached in the output
directory next to a fingerprint of the config they were built from; a stale
or missing artifact is rebuilt.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Any, Callable, Sequence

import numpy as np

from .demand import DemandError, DemandMatrix, DemandSeries, gravity_series, perturb, rescale, split
from .failure import REGIMES, FailureScenario, ScenarioError, recover, sample_scenarios
from .learn import PredictorModel, TrainConfig, TrainingError, forward, train
from .metrics import avg_delay, congestion_loss, perc_loss, percent_change, router_state, scenario_loss, summarize
from .pathing import PathError, PathSet, backup_coverage, build_path_set, risk_profile
from .te import PathView, TEError, calibrate_volume, compute_loads, lp_oracle, mlu, normalized_mlu
from .topology import Topology, TopologyError, load_topology_file, prune_degree_one, random_topology

log = logging.getLogger("linkweave")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
CALIBRATION_SAMPLES = 10
CSV_COLUMNS = ("topology", "regime", "tm_index", "scenario_id", "mlu", "normalized_mlu", "loss", "delay")

DEFAULTS: dict[str, Any] = {
    "name": None,
    "topology": {"path": None, "format": None, "random": None},
    "k": 8,
    "path_method": "edksp",
    "backup_k": None,
    "tm": {
        "count": 200,
        "total_volume": None,  # None: calibrate so the median LP MLU hits target_mlu
        "target_mlu": 0.6,
        "seed": 0,
        "correlation": 0.0,
        "test_limit": None,
    },
    "train": {"history": 1, "learning_rate": 1e-3, "epochs": 60, "batch_size": 16, "seed": 0},
    "scenarios": {"per_tm": 1, "simultaneous": 1, "seed": 0},
    "regimes": ["weave", "source_reroute"],
    "betas": [0.9, 0.99],
    "noise": {"alphas": [0.1, 0.2, 0.3], "seed": 0},
    "workers": 1,
    "out": "out",
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, exc: Exception):
        self.stage = stage
        self.exc = exc
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# config


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_path(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def out(self) -> FsPath:
        return FsPath(self.raw["out"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.raw["train"])

    def section(self, *keys: str) -> dict:
        return {k: self.raw[k] for k in keys}


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(raw: dict) -> ExperimentConfig:
    _require(isinstance(raw["k"], int) and raw["k"] >= 1, "k must be a positive integer")
    _require(raw["path_method"] in ("edksp", "ksp"), "path_method must be 'edksp' or 'ksp'")
    bk = raw["backup_k"]
    _require(bk is None or (isinstance(bk, int) and bk >= 1), "backup_k must be null or a positive integer")
    topo = raw["topology"]
    _require(
        (topo.get("path") is None) != (topo.get("random") is None),
        "topology needs exactly one of 'path' or 'random'",
    )
    if topo.get("random") is not None:
        rnd = topo["random"]
        _require(isinstance(rnd, dict), "topology.random must be an object")
        unknown = set(rnd) - {"nodes", "mean_degree", "seed", "capacity"}
        _require(not unknown, f"unknown topology.random keys {sorted(unknown)}")
        _require(isinstance(rnd.get("nodes"), int) and rnd["nodes"] >= 3, "topology.random.nodes must be >= 3")
    tm = raw["tm"]
    _require(isinstance(tm["count"], int) and tm["count"] >= 4, "tm.count must be an integer >= 4")
    tv = tm["total_volume"]
    _require(tv is None or (isinstance(tv, (int, float)) and tv > 0), "tm.total_volume must be positive")
    _require(tm["target_mlu"] > 0, "tm.target_mlu must be positive")
    _require(0.0 <= tm["correlation"] < 1.0, "tm.correlation must lie in [0, 1)")
    limit = tm["test_limit"]
    test_count = tm["count"] - int(np.floor(0.75 * tm["count"]))
    if limit is not None:
        _require(isinstance(limit, int) and limit >= 0, "tm.test_limit must be a nonnegative integer")
        test_count = min(test_count, limit)
    _require(test_count > 0, "configuration leaves zero test traffic matrices")
    try:
        TrainConfig(**raw["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    sc = raw["scenarios"]
    _require(isinstance(sc["per_tm"], int) and sc["per_tm"] >= 1, "scenarios.per_tm must be >= 1")
    _require(sc["simultaneous"] in (1, 2, 3), "scenarios.simultaneous must be 1, 2 or 3")
    regimes = raw["regimes"]
    _require(isinstance(regimes, list) and regimes, "regimes must be a nonempty list")
    for r in regimes:
        _require(r in REGIMES, f"unknown regime {r!r}; expected a subset of {list(REGIMES)}")
    _require(len(set(regimes)) == len(regimes), "regimes must not repeat")
    for b in raw["betas"]:
        _require(0 < b < 1, "betas must lie in (0, 1)")
    for a in raw["noise"]["alphas"]:
        _require(0 < a < 1, "noise alphas must lie in (0, 1)")
    _require(isinstance(raw["workers"], int) and raw["workers"] >= 1, "workers must be >= 1")
    return ExperimentConfig(raw)


FLAG_KEYS = {
    "out": "out",
    "k": "k",
    "tm_count": "tm.count",
    "tm_total_volume": "tm.total_volume",
    "tm_seed": "tm.seed",
    "epochs": "train.epochs",
    "workers": "workers",
    "topology": "topology.path",
    "format": "topology.format",
}


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        _require(isinstance(raw, dict), "config must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(cfg, key, value)
            if key == "topology.path":
                cfg["topology"]["random"] = None
    if getattr(args, "regimes", None):
        cfg["regimes"] = args.regimes.split(",")
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        _require(bool(sep), f"--set expects key=value, got {item!r}")
        _set_path(cfg, key, _parse_value(value))
    return validate(cfg)


# ---------------------------------------------------------------------------
# stages


def _fingerprint(*parts: Any) -> str:
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


class StageCache:
    """Artifacts in ``out`` keyed by the fingerprint of their inputs."""

    def __init__(self, out: FsPath):
        self.out = out
        self.index_path = out / "stages.json"
        try:
            self.index = json.loads(self.index_path.read_text())
        except (OSError, json.JSONDecodeError):
            self.index = {}

    def fresh(self, name: str, key: str) -> bool:
        return self.index.get(name) == key and (self.out / name).exists()

    def record(self, name: str, key: str) -> None:
        self.index[name] = key
        self.out.mkdir(parents=True, exist_ok=True)
        self.index_path.write_text(json.dumps(self.index, indent=2, sort_keys=True) + "\n")


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # tagged and re-raised for exit-code mapping
        raise StageError(name, exc) from exc


def _topology_name(cfg: ExperimentConfig) -> str:
    if cfg["name"]:
        return str(cfg["name"])
    topo = cfg["topology"]
    if topo.get("path"):
        return FsPath(topo["path"]).stem
    rnd = topo["random"]
    return f"random-{rnd['nodes']}-{rnd.get('seed', 0)}"


def build_topology(cfg: ExperimentConfig) -> Topology:
    topo = cfg["topology"]
    if topo.get("path"):
        t = load_topology_file(topo["path"], topo.get("format"))
    else:
        rnd = topo["random"]
        t = random_topology(
            rnd["nodes"], rnd.get("mean_degree", 3.0), rnd.get("seed", 0), rnd.get("capacity", 1.0)
        )
    pruned, _ = prune_degree_one(t)
    return pruned


def _topology_key(cfg: ExperimentConfig, t: Topology) -> str:
    return _fingerprint(t.labels, [(e.u, e.v, e.capacity) for e in t.edges])


def _pool_map(workers: int):
    if workers <= 1:
        return None, map
    pool = ProcessPoolExecutor(max_workers=workers)
    return pool, pool.map


def stage_paths(cfg: ExperimentConfig, t: Topology, cache: StageCache) -> tuple[PathSet, str]:
    key = _fingerprint(_topology_key(cfg, t), cfg.section("k", "path_method", "backup_k"))
    target = cache.out / "pathset.json"
    if cache.fresh("pathset.json", key):
        log.info("paths: using cached %s", target)
        return PathSet.from_json(t, target.read_text()), key
    pool, mapper = _pool_map(cfg["workers"])
    try:
        ps = build_path_set(
            t, cfg["k"], method=cfg["path_method"], backup_k=cfg["backup_k"], mapper=mapper
        )
    finally:
        if pool:
            pool.shutdown()
    cache.out.mkdir(parents=True, exist_ok=True)
    target.write_text(ps.to_json())
    cache.record("pathset.json", key)
    return ps, key


def stage_tms(cfg: ExperimentConfig, ps: PathSet, paths_key: str, cache: StageCache) -> tuple[DemandSeries, str]:
    tm = cfg["tm"]
    key = _fingerprint(paths_key, {k: tm[k] for k in ("count", "total_volume", "target_mlu", "seed", "correlation")})
    target = cache.out / "tms.json"
    if cache.fresh("tms.json", key):
        log.info("tm: using cached %s", target)
        return DemandSeries.from_json(target.read_text()), key
    t = ps.topology
    if tm["total_volume"] is None:
        series = gravity_series(t, tm["count"], 1.0, tm["seed"], correlation=tm["correlation"])
        train_part, _ = split(series)
        factor = calibrate_volume(ps, train_part[:CALIBRATION_SAMPLES], tm["target_mlu"])
        series = rescale(series, factor)
    else:
        series = gravity_series(t, tm["count"], float(tm["total_volume"]), tm["seed"], correlation=tm["correlation"])
    target.write_text(series.to_json())
    cache.record("tms.json", key)
    return series, key


def stage_train(cfg: ExperimentConfig, ps: PathSet, series: DemandSeries, tms_key: str, cache: StageCache):
    key = _fingerprint(tms_key, cfg["train"])
    target = cache.out / "model.ckpt"
    if cache.fresh("model.ckpt", key):
        log.info("train: using cached %s", target)
        return PredictorModel.load(target), key
    train_part, _ = split(series)
    model = train(ps, train_part, cfg.train_config())
    model.save(target)
    cache.record("model.ckpt", key)
    return model, key


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalCase:
    index: int  # position within the test split
    history: tuple[DemandMatrix, ...]
    target: DemandMatrix


def make_cases(cfg: ExperimentConfig, series: DemandSeries, history: int) -> list[EvalCase]:
    cut = series.split_index
    mats = series.matrices
    count = len(mats) - cut
    limit = cfg["tm"]["test_limit"]
    if limit is not None:
        count = min(count, limit)
    out = []
    for i in range(count):
        t = cut + i
        if t < history:
            raise ConfigError("history window reaches before the first traffic matrix")
        out.append(EvalCase(i, tuple(mats[t - history : t]), mats[t]))
    return out


def _drop_stranded(view: PathView, dm: DemandMatrix) -> DemandMatrix:
    counts = view.usable_counts()
    entries = dm.entries.copy()
    for i in np.flatnonzero(counts == 0):
        s, d = view.flat.pairs[i]
        entries[s, d] = 0.0
    return DemandMatrix(dm.epoch, entries)


_CTX: dict = {}


def _init_worker(ps, model, regimes):
    _CTX.update(ps=ps, model=model, regimes=regimes)


def _evaluate_case(job: tuple[EvalCase, list[tuple[int, FailureScenario]]]) -> list[dict]:
    case, scenarios = job
    ps, model, regimes = _CTX["ps"], _CTX["model"], _CTX["regimes"]
    r = forward(model, ps, case.history)
    dm = case.target
    rows = []
    for sid, sc in scenarios:
        view = PathView(ps, sc.failed)
        _, base = lp_oracle(view, _drop_stranded(view, dm))
        for regime in regimes:
            woven = recover(regime, ps, dm, r, sc)
            rep = mlu(woven.load)
            rows.append(
                {
                    "regime": regime,
                    "tm_index": case.index,
                    "scenario_id": sid,
                    "failed": list(sc.failed),
                    "weight": sc.weight,
                    "mlu": rep.mlu,
                    "normalized_mlu": normalized_mlu(rep, base),
                    "loss": congestion_loss(rep.mlu),
                    "delay": avg_delay(woven.load).value,
                    "conservation_error": woven.conservation_error(),
                    "failed_edge_load": float(np.abs(woven.load.flow[list(sc.failed)]).max()),
                    "dropped": woven.dropped,
                }
            )
    clean_rep = mlu(compute_loads(ps, dm, r))
    _, clean_lp = lp_oracle(ps, dm)
    rows.append({"regime": None, "tm_index": case.index, "normalized_mlu": normalized_mlu(clean_rep, clean_lp), "mlu": clean_rep.mlu})
    return rows


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class RunResult:
    rows: list[dict]
    clean: list[dict]
    summary: dict
    cases: list[EvalCase]


def evaluate(cfg: ExperimentConfig, ps: PathSet, model: PredictorModel, series: DemandSeries) -> RunResult:
    cases = make_cases(cfg, series, model.history)
    sc_cfg = cfg["scenarios"]
    per = sc_cfg["per_tm"]
    scenarios = sample_scenarios(ps.topology, len(cases) * per, sc_cfg["simultaneous"], sc_cfg["seed"])
    jobs = [
        (case, [(i * per + j, scenarios[i * per + j]) for j in range(per)])
        for i, case in enumerate(cases)
    ]
    regimes = list(cfg["regimes"])
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(
            max_workers=cfg["workers"], initializer=_init_worker, initargs=(ps, model, regimes)
        ) as pool:
            chunks = list(pool.map(_evaluate_case, jobs))
    else:
        _init_worker(ps, model, regimes)
        chunks = [_evaluate_case(j) for j in jobs]
    flat_rows = [row for chunk in chunks for row in chunk]
    order = {r: i for i, r in enumerate(regimes)}
    rows = sorted(
        (r for r in flat_rows if r["regime"] is not None),
        key=lambda r: (r["tm_index"], r["scenario_id"], order[r["regime"]]),
    )
    clean = sorted((r for r in flat_rows if r["regime"] is None), key=lambda r: r["tm_index"])
    summary = summarize_run(cfg, ps, model, rows, clean, series)
    return RunResult(rows, clean, summary, cases)


def summarize_run(cfg, ps, model, rows, clean, series) -> dict:
    regimes = list(cfg["regimes"])
    per_regime = {}
    for regime in regimes:
        sel = [r for r in rows if r["regime"] == regime]
        records = []
        for r in sel:
            dm = series.matrices[series.split_index + r["tm_index"]]
            records.append(scenario_loss(r["mlu"], dm, r["weight"]))
        per_regime[regime] = {
            "mlu": summarize([r["mlu"] for r in sel]),
            "normalized_mlu": summarize([r["normalized_mlu"] for r in sel]),
            "delay": summarize([r["delay"] for r in sel]),
            "perc_loss": {repr(b): perc_loss(records, b) for b in cfg["betas"]},
            "max_conservation_error": max(r["conservation_error"] for r in sel),
            "max_failed_edge_load": max(r["failed_edge_load"] for r in sel),
            "dropped": sum(r["dropped"] for r in sel),
        }
    out = {
        "topology": _topology_name(cfg),
        "nodes": ps.topology.num_nodes,
        "links": ps.topology.num_edges,
        "routing_paths": ps.num_routing_paths,
        "backup_paths": ps.num_backup_paths,
        "test_tms": len(clean),
        "scenarios": len({(r["tm_index"], r["scenario_id"]) for r in rows}),
        "train_loss": {"initial": model.train_log[0] if model.train_log else None,
                       "final": model.train_log[-1] if model.train_log else None},
        "predictor_normalized_mlu": summarize([r["normalized_mlu"] for r in clean]),
        "regimes": per_regime,
    }
    if "weave" in per_regime and "source_reroute" in per_regime:
        w = [r["mlu"] for r in rows if r["regime"] == "weave"]
        s = [r["mlu"] for r in rows if r["regime"] == "source_reroute"]
        out["weave_vs_source_reroute"] = {
            "mean_mlu_change_pct": percent_change(float(np.mean(w)), float(np.mean(s))),
            "weave_not_worse_fraction": float(np.mean([a <= b for a, b in zip(w, s)])),
            "weave_strictly_better_fraction": float(np.mean([a < b for a, b in zip(w, s)])),
        }
    return out


def results_csv(name: str, rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(
            [name, r["regime"], r["tm_index"], r["scenario_id"],
             _fmt(r["mlu"]), _fmt(r["normalized_mlu"]), _fmt(r["loss"]), _fmt(r["delay"])]
        )
    return buf.getvalue()


def _dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Full pipeline; writes pathset.json, tms.json, model.ckpt, results.csv, summary.json."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(cfg.out)
    t = _stage("topology", build_topology, cfg)
    ps, pk = _stage("paths", stage_paths, cfg, t, cache)
    series, tk = _stage("tm", stage_tms, cfg, ps, pk, cache)
    model, _ = _stage("train", stage_train, cfg, ps, series, tk, cache)
    result = _stage("evaluate", evaluate, cfg, ps, model, series)
    (cfg.out / "results.csv").write_text(results_csv(_topology_name(cfg), result.rows))
    (cfg.out / "summary.json").write_text(_dump_json(result.summary))
    return result


def noise_report(cfg: ExperimentConfig, ps: PathSet, model: PredictorModel, series: DemandSeries,
                 alphas: Sequence[float]) -> list[dict]:
    """MLU change of the trained predictor when test demand is perturbed.

    Each test-time matrix (history inputs and targets alike) is perturbed
    with a seed derived from its epoch, so the same uniform draws are scaled
    by every alpha.
    """
    cases = make_cases(cfg, series, model.history)
    base_seed = cfg["noise"]["seed"]

    def noisy(dm: DemandMatrix, alpha: float) -> DemandMatrix:
        return perturb(dm, alpha, base_seed * 1_000_003 + dm.epoch)

    def mlus(transform) -> np.ndarray:
        out = []
        for c in cases:
            hist = [transform(m) for m in c.history]
            r = forward(model, ps, hist)
            out.append(mlu(compute_loads(ps, transform(c.target), r)).mlu)
        return np.array(out)

    clean = mlus(lambda m: m)
    rows = []
    for alpha in sorted(alphas):
        values = mlus(lambda m, a=alpha: noisy(m, a))
        deviation = max(
            float(np.max(np.abs(noisy(c.target, alpha).entries - c.target.entries)
                         / np.where(c.target.entries > 0, c.target.entries, 1.0)))
            for c in cases
        )
        rows.append(
            {
                "alpha": alpha,
                "mean_mlu_change_pct": percent_change(float(values.mean()), float(clean.mean())),
                "p99_mlu_change_pct": percent_change(
                    float(np.percentile(values, 99)), float(np.percentile(clean, 99))
                ),
                "mean_abs_change_pct": float(np.mean(np.abs(values - clean) / clean) * 100.0),
                "max_entry_deviation": deviation,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# subcommands


def _print_json(doc: Any) -> None:
    sys.stdout.write(_dump_json(doc))


def cmd_topo(args) -> int:
    if args.topology and not args.config:
        t = _stage("topology", lambda: prune_degree_one(load_topology_file(args.topology, args.format))[0])
    else:
        cfg = load_config(args)
        t = _stage("topology", build_topology, cfg)
    print(f"{t.num_nodes} nodes, {t.num_edges} links")
    hist = t.degree_histogram()
    print("degree histogram: " + ", ".join(f"{d}:{c}" for d, c in hist.items()))
    return EXIT_OK


def cmd_paths(args) -> int:
    cfg = load_config(args)
    cfg.out.mkdir(parents=True, exist_ok=True)
    t = _stage("topology", build_topology, cfg)
    ps, _ = _stage("paths", stage_paths, cfg, t, StageCache(cfg.out))
    budget = cfg["backup_k"] or cfg["k"]
    report = {
        "routing_paths": ps.num_routing_paths,
        "backup_paths": ps.num_backup_paths,
        "pairs": len(ps.routing),
        "unprotected_links": len(ps.unprotected_edges),
        "backup_coverage": {str(budget): backup_coverage(ps, budget)},
        "risk": {kind: risk_profile(ps, kind).to_dict() for kind in ("adjacent", "nonadjacent", "backup")},
    }
    (cfg.out / "paths_report.json").write_text(_dump_json(report))
    _print_json(report)
    return EXIT_OK


def cmd_tm(args) -> int:
    cfg = load_config(args)
    cfg.out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(cfg.out)
    t = _stage("topology", build_topology, cfg)
    ps, pk = _stage("paths", stage_paths, cfg, t, cache)
    series, _ = _stage("tm", stage_tms, cfg, ps, pk, cache)
    train_part, test_part = split(series)
    _print_json({"matrices": len(series), "train": len(train_part), "test": len(test_part),
                 "total_volume": series[0].total})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    cfg.out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(cfg.out)
    t = _stage("topology", build_topology, cfg)
    ps, pk = _stage("paths", stage_paths, cfg, t, cache)
    series, tk = _stage("tm", stage_tms, cfg, ps, pk, cache)
    model, _ = _stage("train", stage_train, cfg, ps, series, tk, cache)
    _print_json({"params": model.num_params, "initial_loss": model.train_log[0],
                 "final_loss": model.train_log[-1]})
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args)
    result = run_experiment(cfg)
    _print_json({k: result.summary[k] for k in ("topology", "test_tms", "scenarios")}
                | {"regimes": {k: v["normalized_mlu"]["mean"] for k, v in result.summary["regimes"].items()}})
    return EXIT_OK


def cmd_noise(args) -> int:
    cfg = load_config(args)
    cache = StageCache(cfg.out)
    if not (cfg.out / "model.ckpt").exists():
        raise StageError("noise", FileNotFoundError(f"no trained model in {cfg.out}; run 'train' first"))
    t = _stage("topology", build_topology, cfg)
    ps, pk = _stage("paths", stage_paths, cfg, t, cache)
    series, tk = _stage("tm", stage_tms, cfg, ps, pk, cache)
    model, _ = _stage("train", stage_train, cfg, ps, series, tk, cache)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else cfg["noise"]["alphas"]
    for a in alphas:
        _require(0 < a < 1, "noise alphas must lie in (0, 1)")
    rows = _stage("noise", noise_report, cfg, ps, model, series, alphas)
    (cfg.out / "noise.json").write_text(_dump_json(rows))
    _print_json(rows)
    return EXIT_OK


def cmd_state(args) -> int:
    for name in ("nodes", "degree", "buckets", "sids"):
        _require(getattr(args, name) >= 1, f"--{name} must be positive")
    est = router_state(
        args.nodes, args.degree, args.buckets, args.sids,
        paths_per_pair=args.paths_per_pair, backups_per_link=args.backups_per_link,
    )
    _print_json(est.to_dict())
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--topology", help="topology file (overrides topology.path)")
    p.add_argument("--format", choices=("edge-list", "graphml-lite"), help="topology file format")
    p.add_argument("--k", type=int, help="routing path budget per pair")
    p.add_argument("--tm-count", type=int, help="number of traffic matrices")
    p.add_argument("--tm-total-volume", type=float, help="total demand per matrix (skips calibration)")
    p.add_argument("--tm-seed", type=int)
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--workers", type=int, help="worker processes for path building and evaluation")
    p.add_argument("--regimes", help="comma-separated recovery regimes")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set scenarios.per_tm=2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linkweave", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (
        ("topo", cmd_topo, "load and prune a topology, print its size"),
        ("paths", cmd_paths, "build routing and backup paths, report risk"),
        ("tm", cmd_tm, "generate traffic matrices"),
        ("train", cmd_train, "train the split-ratio predictor"),
        ("run", cmd_run, "full failure experiment"),
        ("noise", cmd_noise, "MLU change under perturbed demand"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.set_defaults(func=fn)
        if name == "noise":
            p.add_argument("--alphas", help="comma-separated noise levels in (0, 1)")
    p = sub.add_parser("state", help="per-router table size estimate")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--nodes", type=int, required=True, help="N, routers in the network")
    p.add_argument("--degree", type=int, required=True, help="d, links attached to the router")
    p.add_argument("--buckets", type=int, required=True, help="M, hash buckets per destination")
    p.add_argument("--sids", type=int, required=True, help="L, segments per stored path")
    p.add_argument("--paths-per-pair", type=int)
    p.add_argument("--backups-per-link", type=int)
    p.set_defaults(func=cmd_state)
    return parser


DATA_ERRORS = (OSError, TopologyError, PathError, DemandError, ScenarioError, json.JSONDecodeError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        kind = "data error" if isinstance(exc.exc, DATA_ERRORS) else "runtime failure"
        if isinstance(exc.exc, ConfigError):
            kind = "config error"
        print(f"{kind} {exc}", file=sys.stderr)
        return {"data error": EXIT_DATA, "config error": EXIT_CONFIG}.get(kind, EXIT_RUNTIME)
    except (TrainingError, TEError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
