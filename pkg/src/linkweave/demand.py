"""Gravity-model traffic matrices, train/test splitting and multiplicative noise."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .topology import Topology

TRAIN_FRACTION = 0.75


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class DemandMatrix:
    epoch: int
    entries: np.ndarray  # (N, N), zero diagonal

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DemandError(f"demand matrix must be square, got shape {m.shape}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise DemandError("demand entries must be finite and nonnegative")
        if np.any(np.diag(m) != 0):
            raise DemandError("demand matrix diagonal must be zero")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def num_nodes(self) -> int:
        return self.entries.shape[0]

    @property
    def total(self) -> float:
        return float(self.entries.sum())

    def scaled(self, factor: float) -> DemandMatrix:
        return DemandMatrix(self.epoch, self.entries * factor)


@dataclass(frozen=True)
class DemandSeries:
    matrices: tuple[DemandMatrix, ...]

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, i):
        return self.matrices[i]

    @property
    def num_nodes(self) -> int:
        return self.matrices[0].num_nodes

    @property
    def split_index(self) -> int:
        return int(np.floor(TRAIN_FRACTION * len(self.matrices)))

    def to_json(self) -> str:
        doc = {
            "num_nodes": self.num_nodes,
            "matrices": [m.entries.ravel().tolist() for m in self.matrices],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> DemandSeries:
        doc = json.loads(text)
        n = int(doc["num_nodes"])
        mats = []
        for i, flat in enumerate(doc["matrices"]):
            arr = np.asarray(flat, dtype=float)
            if arr.size != n * n:
                raise DemandError(f"matrix {i} has {arr.size} entries, expected {n * n}")
            mats.append(DemandMatrix(i, arr.reshape(n, n)))
        return cls(tuple(mats))


MassHook = Callable[[np.random.Generator, int, int], np.ndarray]


def gravity_matrix(masses: np.ndarray, total_volume: float, epoch: int = 0) -> DemandMatrix:
    m = np.asarray(masses, dtype=float)
    outer = np.outer(m, m)
    np.fill_diagonal(outer, 0.0)
    norm = outer.sum()
    if norm <= 0:
        raise DemandError("gravity masses give zero total product")
    return DemandMatrix(epoch, total_volume * outer / norm)


def gravity_series(
    t: Topology | int,
    count: int,
    total_volume: float,
    seed: int,
    masses: np.ndarray | Sequence[float] | MassHook | None = None,
    correlation: float = 0.0,
) -> DemandSeries:
    """``count`` gravity matrices with node masses drawn from Exp(1).

    Epochs are independent by default. ``correlation`` in [0, 1) makes each
    mass ``(X**2 + Y**2) / 2`` for two unit-variance AR(1) Gaussian series
    with that lag-one coefficient: every epoch's masses are still exactly
    Exp(1), but consecutive epochs resemble each other.

    ``masses`` overrides the draw: a fixed vector used for every epoch, or a
    callable ``(rng, epoch, n) -> masses``.
    """
    n = t if isinstance(t, int) else t.num_nodes
    if count < 4:
        raise DemandError("need at least 4 matrices to split into train and test")
    if not total_volume > 0:
        raise DemandError("total volume must be positive")
    if not 0.0 <= correlation < 1.0:
        raise DemandError("correlation must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((2, n)) if correlation > 0 else None
    innovation = np.sqrt(1.0 - correlation**2)
    mats = []
    for epoch in range(count):
        if masses is None and latent is None:
            m = rng.exponential(1.0, size=n)
        elif masses is None:
            if epoch > 0:
                latent = correlation * latent + innovation * rng.standard_normal((2, n))
            m = 0.5 * (latent**2).sum(axis=0)
        elif callable(masses):
            m = np.asarray(masses(rng, epoch, n), dtype=float)
        else:
            m = np.asarray(masses, dtype=float)
        if m.shape != (n,):
            raise DemandError(f"mass vector has shape {m.shape}, expected ({n},)")
        mats.append(gravity_matrix(m, total_volume, epoch))
    return DemandSeries(tuple(mats))


def perturb(dm: DemandMatrix, alpha: float, seed: int) -> DemandMatrix:
    """Multiply every entry by its own factor drawn from U[1 - alpha, 1 + alpha]."""
    if not 0 < alpha < 1:
        raise DemandError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=dm.entries.shape)
    return DemandMatrix(dm.epoch, dm.entries * (1.0 + alpha * u))


def split(series: DemandSeries) -> tuple[list[DemandMatrix], list[DemandMatrix]]:
    """Chronological 75/25 split; no shuffling."""
    if len(series) < 4:
        raise DemandError("need at least 4 matrices to split")
    cut = series.split_index
    return list(series.matrices[:cut]), list(series.matrices[cut:])


def rescale(series: DemandSeries, factor: float) -> DemandSeries:
    return DemandSeries(tuple(m.scaled(factor) for m in series.matrices))
