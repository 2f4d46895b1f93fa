"""Full-batch training of the edge scorer with Adam and a step LR schedule."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureStats, GraphFeatures
from .model import GcnModel, ModelConfig, backward, forward, init_model, mse_loss, normalized_adjacency

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training diverged or was given unusable data."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1200
    lr: float = 1e-4
    step_size: int = 300
    gamma: float = 0.5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    zero_output: bool = False


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: float = 0.0


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_dataset(graphs, labels):
    if len(graphs) == 0:
        raise TrainingError("no training graphs")
    if len(graphs) != len(labels):
        raise TrainingError("graphs and label arrays differ in count")
    for g, y in zip(graphs, labels):
        if len(y) != g.n_edges:
            raise TrainingError(f"label count {len(y)} does not match {g.n_edges} edges")
        if not (np.all(np.isfinite(g.node)) and np.all(np.isfinite(g.edge)) and np.all(np.isfinite(y))):
            raise TrainingError("non-finite values in training data")


def evaluate_loss(model: GcnModel, graphs, labels, adjacency=None) -> float:
    """Mean per-graph MSE in inference mode; graphs must be normalized."""
    losses = []
    for i, (g, y) in enumerate(zip(graphs, labels)):
        s, _ = forward(model, g, None if adjacency is None else adjacency[i])
        losses.append(mse_loss(s, y)[0])
    return float(np.mean(losses)) if losses else float("nan")


def train(graphs: list[GraphFeatures], labels: list[np.ndarray], config: TrainConfig | None = None,
          model_config: ModelConfig | None = None, val_graphs=(), val_labels=(),
          log_every: int = 0) -> tuple[GcnModel, TrainHistory]:
    """Fit a fresh model; one optimizer step per graph, graphs shuffled each epoch.

    Feature statistics are fitted on the training graphs and stored in the
    returned model.  Raises :class:`TrainingError` if the loss goes non-finite.
    """
    cfg = config or TrainConfig()
    labels = [np.asarray(y, dtype=np.float64) for y in labels]
    val_labels = [np.asarray(y, dtype=np.float64) for y in val_labels]
    _check_dataset(graphs, labels)
    stats = FeatureStats.fit(graphs)
    norm = [g.normalized(stats) for g in graphs]
    val_norm = [g.normalized(stats) for g in val_graphs]
    adj = [normalized_adjacency(g.edge_index, g.n_nodes) for g in norm]
    val_adj = [normalized_adjacency(g.edge_index, g.n_nodes) for g in val_norm]

    model = init_model(model_config, seed=cfg.seed, zero_output=cfg.zero_output)
    model.stats = stats
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params, cfg.lr, cfg.betas, cfg.eps)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.gamma ** (epoch // cfg.step_size)
        total = 0.0
        for i in rng.permutation(len(norm)):
            scores, cache = forward(model, norm[i], adj[i], training=True, rng=rng)
            loss, dscores = mse_loss(scores, labels[i])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            opt.step(backward(model, cache, dscores))
            total += loss
        hist.train_loss.append(total / len(norm))
        if val_norm:
            hist.val_loss.append(evaluate_loss(model, val_norm, val_labels, val_adj))
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d  train %.5f  val %s", epoch + 1, hist.train_loss[-1],
                     f"{hist.val_loss[-1]:.5f}" if hist.val_loss else "-")
    hist.seconds = time.perf_counter() - t0
    model.metadata = {"epochs": cfg.epochs, "lr": cfg.lr, "step_size": cfg.step_size, "gamma": cfg.gamma,
                      "seed": cfg.seed, "n_train": len(norm), "n_val": len(val_norm),
                      "final_train_loss": hist.train_loss[-1] if hist.train_loss else None,
                      "final_val_loss": hist.val_loss[-1] if hist.val_loss else None}
    return model, hist
