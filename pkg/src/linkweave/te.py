"""Split-ratio configurations, link-load accounting, MLU and the LP optimum."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .demand import DemandMatrix
from .pathing import FlatPaths, PathSet

SIMPLEX_TOL = 1e-9
LP_TOL = 1e-6


class TEError(ValueError):
    pass


class NoUsablePathError(TEError):
    def __init__(self, pairs: Sequence[tuple[int, int]]):
        self.pairs = list(pairs)
        shown = ", ".join(f"{s}->{d}" for s, d in self.pairs[:10])
        more = f" (+{len(self.pairs) - 10} more)" if len(self.pairs) > 10 else ""
        super().__init__(f"pairs with demand but no usable path: {shown}{more}")


class LPCertificationError(TEError):
    pass


class PathView:
    """A path set seen through a failure: paths crossing ``failed`` are unusable."""

    def __init__(self, ps: PathSet, failed: Iterable[int] = ()):
        self.pathset = ps
        self.flat: FlatPaths = ps.flat
        self.failed = frozenset(int(e) for e in failed)
        if self.failed:
            hit = np.asarray(
                self.flat.incidence[sorted(self.failed)].sum(axis=0)
            ).ravel()
            self.usable = hit == 0
        else:
            self.usable = np.ones(self.flat.num_paths, dtype=bool)

    @property
    def topology(self):
        return self.pathset.topology

    @property
    def num_paths(self) -> int:
        return self.flat.num_paths

    def usable_counts(self) -> np.ndarray:
        return np.add.reduceat(self.usable.astype(np.int64), self.flat.offsets[:-1])


def _as_view(ps: PathSet | PathView) -> PathView:
    return ps if isinstance(ps, PathView) else PathView(ps)


@dataclass(frozen=True)
class RatioConfig:
    """Per-pair simplex weights, flattened in ``FlatPaths`` order."""

    weights: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        off = np.asarray(self.offsets, dtype=np.int64)
        if w.ndim != 1 or off[-1] != w.size:
            raise TEError("weights do not match offsets")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise TEError("split weights must be finite and nonnegative")
        sums = np.add.reduceat(w, off[:-1])
        bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)
        if bad.size:
            raise TEError(f"pair {int(bad[0])} weights sum to {sums[bad[0]]!r}, not 1")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offsets", off)

    @classmethod
    def uniform(cls, ps: PathSet | PathView) -> RatioConfig:
        flat = _as_view(ps).flat
        counts = np.diff(flat.offsets)
        return cls(1.0 / counts[flat.path_pair], flat.offsets)

    def pair_weights(self, i: int) -> np.ndarray:
        return self.weights[self.offsets[i] : self.offsets[i + 1]]

    def to_json(self, ps: PathSet) -> str:
        flat = ps.flat
        doc = [
            {"src": s, "dst": d, "weights": self.pair_weights(i).tolist()}
            for i, (s, d) in enumerate(flat.pairs)
        ]
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, ps: PathSet, text: str) -> RatioConfig:
        flat = ps.flat
        doc = json.loads(text)
        if [(int(r["src"]), int(r["dst"])) for r in doc] != list(flat.pairs):
            raise TEError("ratio file pair order does not match the path set")
        w = np.concatenate([np.asarray(r["weights"], dtype=float) for r in doc])
        return cls(w, flat.offsets)


def normalize_groups(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Divide each group by its sum; all-zero groups become uniform."""
    values = np.asarray(values, dtype=float)
    counts = np.diff(offsets)
    group = np.repeat(np.arange(len(counts)), counts)
    sums = np.add.reduceat(values, offsets[:-1])
    safe = np.where(sums > 0, sums, 1.0)
    out = values / safe[group]
    zero = (sums <= 0)[group]
    out[zero] = 1.0 / counts[group][zero]
    return out


@dataclass(frozen=True)
class LinkLoad:
    flow: np.ndarray  # traffic per edge, both directions summed
    capacity: np.ndarray

    @property
    def utilization(self) -> np.ndarray:
        return self.flow / self.capacity


@dataclass(frozen=True)
class MluReport:
    mlu: float
    argmax_edge: int
    unrouted: dict[tuple[int, int], float] = field(default_factory=dict)
    gap: float | None = None  # LP duality gap, when produced by the LP oracle

    def to_json(self) -> str:
        return json.dumps(
            {
                "mlu": self.mlu,
                "argmax_edge": self.argmax_edge,
                "unrouted": [[s, d, v] for (s, d), v in sorted(self.unrouted.items())],
                "gap": self.gap,
            }
        )


def _check_aligned(view: PathView, r: RatioConfig) -> None:
    if r.weights.size != view.num_paths or not np.array_equal(r.offsets, view.flat.offsets):
        raise TEError(
            f"ratio config covers {r.weights.size} paths in {len(r.offsets) - 1} pairs; "
            f"path set has {view.num_paths} paths in {len(view.flat.pairs)} pairs"
        )


def path_flows(ps: PathSet | PathView, dm: DemandMatrix, r: RatioConfig) -> np.ndarray:
    """Traffic assigned to each routing path, ``D_sd * lambda_p``."""
    view = _as_view(ps)
    _check_aligned(view, r)
    return view.flat.path_demand(dm.entries) * r.weights


def compute_loads(ps: PathSet | PathView, dm: DemandMatrix, r: RatioConfig) -> LinkLoad:
    view = _as_view(ps)
    if dm.num_nodes != view.topology.num_nodes:
        raise TEError(
            f"demand matrix is {dm.num_nodes}x{dm.num_nodes}, topology has "
            f"{view.topology.num_nodes} nodes"
        )
    x = path_flows(view, dm, r)
    return LinkLoad(view.flat.incidence @ x, view.flat.capacity)


def mlu(load: LinkLoad, t=None, unrouted: dict | None = None) -> MluReport:
    """Max utilization and its edge (lowest id on ties)."""
    cap = load.capacity if t is None else t.capacities
    if load.flow.size == 0:
        return MluReport(0.0, -1, dict(unrouted or {}))
    util = load.flow / cap
    e = int(np.argmax(util))
    return MluReport(float(util[e]), e, dict(unrouted or {}))


def lp_oracle(ps: PathSet | PathView, dm: DemandMatrix) -> tuple[RatioConfig, MluReport]:
    """MLU-optimal split ratios over the usable paths of ``ps``.

    Epigraph LP: minimize theta subject to per-pair flow conservation and
    ``load_e <= theta * c_e``. The returned report carries the duality gap,
    certified against ``LP_TOL``.
    """
    view = _as_view(ps)
    flat = view.flat
    demand = flat.pair_demand(dm.entries)
    active = demand > 0
    usable_counts = view.usable_counts()
    stranded = np.flatnonzero(active & (usable_counts == 0))
    if stranded.size:
        raise NoUsablePathError([flat.pairs[i] for i in stranded])

    var_paths = np.flatnonzero(view.usable & active[flat.path_pair])
    weights = np.zeros(flat.num_paths)
    # zero-demand pairs: uniform over usable paths, or over all if none usable
    idle_paths = ~active[flat.path_pair]
    idle_usable = idle_paths & view.usable
    cnt_usable = usable_counts[flat.path_pair]
    cnt_all = np.diff(flat.offsets)[flat.path_pair]
    has_usable = cnt_usable > 0
    weights[idle_usable] = 1.0 / cnt_usable[idle_usable]
    idle_none = idle_paths & ~has_usable
    weights[idle_none] = 1.0 / cnt_all[idle_none]

    if var_paths.size == 0:
        r = RatioConfig(weights, flat.offsets)
        return r, MluReport(0.0, 0 if flat.capacity.size else -1, gap=0.0)

    scale = float(demand[active].sum())
    d_scaled = demand / scale
    nvar = var_paths.size
    cap = flat.capacity
    a_paths = flat.incidence[:, var_paths]
    a_ub = sparse.hstack([a_paths, sparse.csr_matrix(-cap.reshape(-1, 1))], format="csr")
    b_ub = np.zeros(cap.size)
    act_idx = np.flatnonzero(active)
    row_of_pair = np.full(len(flat.pairs), -1)
    row_of_pair[act_idx] = np.arange(act_idx.size)
    a_eq = sparse.csr_matrix(
        (np.ones(nvar), (row_of_pair[flat.path_pair[var_paths]], np.arange(nvar))),
        shape=(act_idx.size, nvar + 1),
    )
    b_eq = d_scaled[act_idx]
    c = np.zeros(nvar + 1)
    c[-1] = 1.0
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs"
    )
    if res.status != 0:
        raise TEError(f"LP solver failed: {res.message}")

    x = np.clip(res.x[:nvar], 0.0, None)
    weights[var_paths] = x / d_scaled[flat.path_pair[var_paths]]
    weights = normalize_groups(weights, flat.offsets)
    r = RatioConfig(weights, flat.offsets)
    report = mlu(compute_loads(view, dm, r))

    # weak-duality lower bound from the capacity-row multipliers
    w = np.clip(-res.ineqlin.marginals, 0.0, None)
    denom = float(w @ cap)
    if denom <= 0:
        raise LPCertificationError("LP returned no usable dual multipliers")
    w = w / denom
    path_len = np.asarray(a_paths.T @ w).ravel()
    best = np.full(len(flat.pairs), np.inf)
    np.minimum.at(best, flat.path_pair[var_paths], path_len)
    lower = float((demand[act_idx] * best[act_idx]).sum())
    gap = report.mlu - lower
    if gap > LP_TOL * max(1.0, report.mlu):
        raise LPCertificationError(
            f"LP optimum not certified: primal {report.mlu!r}, dual bound {lower!r}"
        )
    return r, MluReport(report.mlu, report.argmax_edge, gap=gap)


def normalized_mlu(candidate: MluReport | float, oracle: MluReport | float) -> float:
    c = candidate.mlu if isinstance(candidate, MluReport) else float(candidate)
    o = oracle.mlu if isinstance(oracle, MluReport) else float(oracle)
    if o <= 0:
        if c <= 0:
            return 1.0
        raise TEError("oracle MLU is zero but candidate MLU is positive")
    return c / o


def calibrate_volume(
    ps: PathSet, matrices: Sequence[DemandMatrix], target: float = 0.6
) -> float:
    """Factor that puts the median LP-optimal MLU of ``matrices`` at ``target``.

    LP-optimal MLU is positively homogeneous in the demand, so one solve per
    matrix at the current scale fixes the factor exactly.
    """
    if not matrices:
        raise TEError("no matrices to calibrate against")
    values = [lp_oracle(ps, m)[1].mlu for m in matrices]
    med = float(np.median(values))
    if med <= 0:
        raise TEError("calibration matrices carry no traffic")
    return target / med
