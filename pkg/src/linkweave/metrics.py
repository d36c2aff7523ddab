"""Loss, percentile loss, queueing-delay proxy and router state sizing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demand import DemandMatrix
from .te import LinkLoad

DELAY_CLAMP = 0.999
RULE_BYTES = 8
SID_BYTES = 16
_BETA_EPS = 1e-12


@dataclass(frozen=True)
class LossRecord:
    mlu: float
    flow_loss: np.ndarray  # (N, N) loss fraction per flow, 0 where demand is 0
    weight: float = 1.0


def congestion_loss(mlu: float) -> float:
    """Fraction of every flow lost when the network is scaled down to fit: max(0, 1 - 1/MLU)."""
    if mlu < 0:
        raise ValueError("MLU must be nonnegative")
    if mlu <= 1.0:
        return 0.0
    return 1.0 - 1.0 / mlu


def scenario_loss(mlu: float, dm: DemandMatrix, weight: float = 1.0) -> LossRecord:
    loss = congestion_loss(mlu)
    per_flow = np.where(dm.entries > 0, loss, 0.0)
    return LossRecord(float(mlu), per_flow, float(weight))


def perc_loss(records: Sequence[LossRecord], beta: float) -> float:
    """Worst flow's loss at the first scenario whose cumulative weight exceeds ``beta``.

    Scenarios are ordered by that flow's loss, ascending.
    """
    if not records:
        raise ValueError("no loss records")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    weights = np.array([r.weight for r in records], dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"scenario weights sum to {weights.sum()!r}, not 1")
    losses = np.stack([r.flow_loss.ravel() for r in records])  # (scenarios, flows)
    order = np.argsort(losses, axis=0, kind="stable")
    sorted_loss = np.take_along_axis(losses, order, axis=0)
    cum = np.cumsum(weights[order], axis=0)
    first = np.argmax(cum > beta + _BETA_EPS, axis=0)
    per_flow = sorted_loss[first, np.arange(losses.shape[1])]
    return float(per_flow.max()) if per_flow.size else 0.0


@dataclass(frozen=True)
class Delay:
    value: float
    saturated: tuple[int, ...]  # edges whose load was clamped


def avg_delay(load: LinkLoad, t=None) -> Delay:
    """Sum over links of l / (C - l), with l clamped below 0.999 C."""
    cap = load.capacity if t is None else t.capacities
    limit = DELAY_CLAMP * cap
    sat = np.flatnonzero(load.flow >= limit)
    l = np.minimum(load.flow, limit)
    return Delay(float(np.sum(l / (cap - l))), tuple(int(e) for e in sat))


@dataclass(frozen=True)
class StateEstimate:
    rule_entries: int
    rule_bytes: int
    path_entries: int
    path_bytes: int

    def to_dict(self) -> dict:
        return {
            "rule_entries": self.rule_entries,
            "rule_bytes": self.rule_bytes,
            "path_entries": self.path_entries,
            "path_bytes": self.path_bytes,
        }


def router_state(
    N: int,
    d: int,
    M: int,
    L: int,
    *,
    paths_per_pair: int | None = None,
    backups_per_link: int | None = None,
) -> StateEstimate:
    """Per-router table sizes.

    Splitting rules: ``M`` hash buckets towards each of the ``N - 1`` other
    routers plus ``M`` for each of the ``d`` attached links. Each bucket names
    one path; without ``paths_per_pair`` / ``backups_per_link`` every bucket is
    assumed to reference its own path, otherwise at most that many distinct
    paths per destination / per link are stored. Path entries hold ``L`` SIDs.
    """
    for name, v in (("N", N), ("d", d), ("M", M), ("L", L)):
        if v < 1:
            raise ValueError(f"{name} must be positive")
    rules = M * (N - 1) + M * d
    per_dest = M if paths_per_pair is None else min(M, paths_per_pair)
    per_link = M if backups_per_link is None else min(M, backups_per_link)
    paths = per_dest * (N - 1) + per_link * d
    return StateEstimate(rules, RULE_BYTES * rules, paths, paths * L * SID_BYTES)


def percent_change(new: float, base: float) -> float:
    if base == 0:
        raise ValueError("baseline is zero")
    return 100.0 * (new - base) / base


def summarize(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"count": 0, "mean": float("nan"), "p50": float("nan"), "p99": float("nan"), "max": float("nan")}
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p99": float(np.percentile(arr, 99)),
        "max": float(arr.max()),
    }
