"""Fully connected network that maps recent demand to per-path split ratios.

The network is trained end to end on realised MLU: the raw sigmoid outputs
are normalised per pair into split ratios, the ratios route the next demand
matrix, and the loss is the resulting maximum link utilisation. The max is
differentiated through its argmax link.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demand import DemandMatrix
from .pathing import FlatPaths, PathSet
from .te import RatioConfig, normalize_groups

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "linkweave-predictor/1"
HIDDEN = (128, 128, 128, 128)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    history: int = 1
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 16
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN

    def __post_init__(self):
        if self.history < 1:
            raise ValueError("history must be at least 1")
        if not (self.learning_rate > 0 and self.epochs > 0 and self.batch_size > 0):
            raise ValueError("learning rate, epochs and batch size must be positive")


@dataclass
class PredictorModel:
    dims: tuple[int, ...]
    weights: list[np.ndarray]  # layer i maps dims[i] -> dims[i + 1], shape (in, out)
    biases: list[np.ndarray]
    seed: int
    history: int
    input_scale: float = 1.0
    train_log: list[float] = field(default_factory=list, compare=False)

    @classmethod
    def init(
        cls,
        num_inputs: int,
        num_outputs: int,
        *,
        history: int = 1,
        hidden: Sequence[int] = HIDDEN,
        seed: int = 0,
        zero_output: bool = True,
        input_scale: float = 1.0,
    ) -> PredictorModel:
        """Uniform fan-in initialisation.

        With ``zero_output`` the last layer starts at zero, so every path gets
        sigmoid(0) = 0.5 and the initial configuration is uniform splitting.
        """
        dims = (int(num_inputs), *map(int, hidden), int(num_outputs))
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            bound = 1.0 / np.sqrt(a)
            if zero_output and i == len(dims) - 2:
                weights.append(np.zeros((a, b)))
            else:
                weights.append(rng.uniform(-bound, bound, size=(a, b)))
            biases.append(np.zeros(b))
        return cls(dims, weights, biases, seed, history, input_scale)

    @classmethod
    def for_pathset(cls, ps: PathSet, history: int = 1, **kw) -> PredictorModel:
        n = ps.topology.num_nodes
        return cls.init(history * n * (n - 1), ps.flat.num_paths, history=history, **kw)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def save(self, path) -> None:
        arrays = {f"w{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        with open(path, "wb") as fh:
            np.savez(
                fh,
                version=np.array(CHECKPOINT_VERSION),
                dims=np.array(self.dims, dtype=np.int64),
                seed=np.array(self.seed),
                history=np.array(self.history),
                input_scale=np.array(self.input_scale),
                train_log=np.array(self.train_log, dtype=float),
                **arrays,
            )

    @classmethod
    def load(cls, path) -> PredictorModel:
        with np.load(path, allow_pickle=False) as z:
            version = str(z["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version!r}")
            dims = tuple(int(x) for x in z["dims"])
            layers = len(dims) - 1
            return cls(
                dims,
                [z[f"w{i}"].copy() for i in range(layers)],
                [z[f"b{i}"].copy() for i in range(layers)],
                int(z["seed"]),
                int(z["history"]),
                float(z["input_scale"]),
                z["train_log"].tolist(),
            )


def features(flat: FlatPaths, history: Sequence[DemandMatrix], scale: float = 1.0) -> np.ndarray:
    """Off-diagonal demand entries of each history matrix, oldest first."""
    return np.concatenate([flat.pair_demand(m.entries) for m in history]) / scale


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(model: PredictorModel, x: np.ndarray):
    """Batch forward pass; returns (sigmoid outputs, per-layer inputs, pre-activations)."""
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = _sigmoid(z) if i == last else np.maximum(z, 0.0)
        if i != last:
            acts.append(h)
    return h, acts, pre


def _group_normalize(s: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sums = np.add.reduceat(s, offsets[:-1], axis=1)
    counts = np.diff(offsets)
    return sums, np.repeat(np.arange(len(counts)), counts)


def _check_dims(model: PredictorModel, flat: FlatPaths, history: Sequence[DemandMatrix]) -> None:
    if len(history) != model.history:
        raise ValueError(f"model expects {model.history} history matrices, got {len(history)}")
    n_in = len(flat.pairs) * model.history
    if model.dims[0] != n_in or model.dims[-1] != flat.num_paths:
        raise ValueError(
            f"model dims {model.dims[0]}->{model.dims[-1]} do not fit path set "
            f"({n_in} inputs, {flat.num_paths} paths)"
        )


def forward(model: PredictorModel, ps: PathSet, history: Sequence[DemandMatrix]) -> RatioConfig:
    flat = ps.flat
    _check_dims(model, flat, history)
    x = features(flat, history, model.input_scale)[None, :]
    s, _, _ = _forward(model, x)
    return RatioConfig(normalize_groups(s[0], flat.offsets), flat.offsets)


def _loss_and_grads(
    model: PredictorModel,
    flat: FlatPaths,
    x: np.ndarray,
    demand_paths: np.ndarray,
    want_grads: bool = True,
):
    """Mean realised MLU over a batch and its parameter (sub)gradients.

    ``x``: (B, inputs) features; ``demand_paths``: (B, paths) demand of each
    path's pair in the target matrix.
    """
    s, acts, pre = _forward(model, x)
    offsets = flat.offsets
    sums, group = _group_normalize(s, offsets)
    safe = np.where(sums > 0, sums, 1.0)
    lam = s / safe[:, group]
    zero = sums <= 0
    if zero.any():
        counts = np.diff(offsets)
        lam = np.where(zero[:, group], 1.0 / counts[group], lam)

    flows = demand_paths * lam  # (B, P)
    loads = (flat.incidence @ flows.T).T  # (B, E)
    util = loads / flat.capacity
    estar = np.argmax(util, axis=1)
    batch = np.arange(x.shape[0])
    losses = util[batch, estar]
    loss = float(losses.mean())
    if not want_grads:
        return loss, losses, None

    B = x.shape[0]
    rows = flat.incidence[estar].toarray()  # (B, P)
    g_lam = demand_paths * rows / flat.capacity[estar][:, None] / B
    dot = np.add.reduceat(g_lam * lam, offsets[:-1], axis=1)
    g_s = (g_lam - dot[:, group]) / safe[:, group]
    g_s = np.where(zero[:, group], 0.0, g_s)
    delta = g_s * s * (1.0 - s)

    gw: list[np.ndarray] = [None] * len(model.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(model.weights)  # type: ignore[list-item]
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return loss, losses, (gw, gb)


@dataclass
class _Batch:
    x: np.ndarray
    demand_paths: np.ndarray


def _samples(
    flat: FlatPaths, matrices: Sequence[DemandMatrix], history: int, scale: float
) -> _Batch:
    xs, ds = [], []
    for t in range(history, len(matrices)):
        xs.append(features(flat, matrices[t - history : t], scale))
        ds.append(flat.path_demand(matrices[t].entries))
    return _Batch(np.array(xs), np.array(ds))


def sample_loss(model: PredictorModel, ps: PathSet, history: Sequence[DemandMatrix], target: DemandMatrix) -> float:
    """Realised MLU of the forwarded configuration on ``target``."""
    flat = ps.flat
    _check_dims(model, flat, history)
    x = features(flat, history, model.input_scale)[None, :]
    loss, _, _ = _loss_and_grads(model, flat, x, flat.path_demand(target.entries)[None, :], False)
    return loss


def train(
    ps: PathSet, matrices: Sequence[DemandMatrix], cfg: TrainConfig = TrainConfig()
) -> PredictorModel:
    """Fit the predictor on a chronological list of training matrices with Adam."""
    flat = ps.flat
    if len(matrices) <= cfg.history:
        raise TrainingError(
            f"need more than {cfg.history} training matrices, got {len(matrices)}"
        )
    n = ps.topology.num_nodes
    mean_entry = float(np.mean([m.total for m in matrices])) / (n * (n - 1))
    scale = mean_entry if mean_entry > 0 else 1.0
    model = PredictorModel.for_pathset(
        ps, cfg.history, hidden=cfg.hidden, seed=cfg.seed, input_scale=scale
    )
    data = _samples(flat, matrices, cfg.history, scale)
    rng = np.random.default_rng(cfg.seed + 1)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m1 = [np.zeros_like(p) for p in model.params]
    m2 = [np.zeros_like(p) for p in model.params]
    step = 0

    def full_loss() -> float:
        return _loss_and_grads(model, flat, data.x, data.demand_paths, False)[0]

    model.train_log = [full_loss()]
    nsamp = data.x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(nsamp)
        for start in range(0, nsamp, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, _, (gw, gb) = _loss_and_grads(model, flat, data.x[idx], data.demand_paths[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss became non-finite at epoch {epoch}, step {step} "
                    f"(lr={cfg.learning_rate}, last epoch loss={model.train_log[-1]!r}, "
                    f"max |param|={max(float(np.abs(p).max()) for p in model.params)!r})"
                )
            step += 1
            grads = []
            for w, b in zip(gw, gb):
                grads.extend((w, b))
            for p, g, a, v in zip(model.params, grads, m1, m2):
                a *= b1
                a += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                ahat = a / (1 - b1**step)
                vhat = v / (1 - b2**step)
                p -= cfg.learning_rate * ahat / (np.sqrt(vhat) + eps)
        epoch_loss = full_loss()
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss became non-finite after epoch {epoch}")
        model.train_log.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return model


def gradient_check(
    model: PredictorModel,
    ps: PathSet,
    sample: tuple[Sequence[DemandMatrix], DemandMatrix],
    *,
    num_params: int = 100,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between backprop and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)`` over ``num_params``
    parameters drawn uniformly without replacement. The floor keeps
    near-zero gradients, where central differences are dominated by
    roundoff of order ``eps * loss / step``, from inflating the ratio.
    """
    history, target = sample
    flat = ps.flat
    _check_dims(model, flat, history)
    x = features(flat, history, model.input_scale)[None, :]
    dp = flat.path_demand(target.entries)[None, :]
    _, _, (gw, gb) = _loss_and_grads(model, flat, x, dp)
    params = model.params
    grads = []
    for w, b in zip(gw, gb):
        grads.extend((w, b))
    sizes = np.array([p.size for p in params])
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(bounds[-1], size=min(num_params, int(bounds[-1])), replace=False)
    worst = 0.0
    for flat_idx in np.sort(picks):
        li = int(np.searchsorted(bounds, flat_idx, side="right") - 1)
        pos = np.unravel_index(int(flat_idx - bounds[li]), params[li].shape)
        p = params[li]
        orig = p[pos]
        p[pos] = orig + step
        up = _loss_and_grads(model, flat, x, dp, False)[0]
        p[pos] = orig - step
        down = _loss_and_grads(model, flat, x, dp, False)[0]
        p[pos] = orig
        numeric = (up - down) / (2 * step)
        analytic = float(grads[li][pos])
        denom = max(abs(analytic), abs(numeric), floor)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
