"""SGD training with deep supervision, reduce-on-plateau decay and resumable checkpoints.

Every random choice made during training is drawn from a generator keyed on
``(seed, epoch)`` or ``(seed, epoch, sample id)``, so the trainer's state is
a handful of counters and a resumed run continues exactly where the
uninterrupted one would be.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Sample, augment, derive_targets, sample_rng
from .errors import ConfigurationError, DataError, NumericError
from .loss import LossBreakdown, LossWeights, total_loss
from .network import Network

CHECKPOINT_NAME = "last.ckpt"
LOG_NAME = "train_log.txt"


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 4
    epochs: int = 200
    decay_factor: float = 0.5
    patience: int = 10
    momentum: float = 0.0
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_dir: Optional[str] = None
    augment: bool = True
    bce_mean: bool = False
    edge_width: int = 1
    # stop after this many optimizer steps in total (None = run all epochs)
    max_steps: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if not 0 < self.decay_factor <= 1 or self.patience < 1:
            raise ConfigurationError("decay_factor must be in (0, 1] and patience >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.edge_width < 1:
            raise ConfigurationError("edge_width must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"]["side"] = list(d["weights"]["side"])
        return d


@dataclass
class TrainState:
    epoch: int = 0  # completed epochs
    step: int = 0  # completed optimizer steps
    lr: float = 1e-5
    best_loss: float = math.inf
    bad_epochs: int = 0
    seed: int = 0
    history: List[float] = field(default_factory=list)  # mean training loss per epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity; an untouched best loss is stored as null
        d["best_loss"] = None if math.isinf(self.best_loss) else self.best_loss
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        d = dict(d)
        d["best_loss"] = math.inf if d.get("best_loss") is None else d["best_loss"]
        return cls(**d)

    def epoch_rng(self, epoch: Optional[int] = None) -> np.random.Generator:
        return sample_rng(self.seed, self.epoch if epoch is None else epoch)


class SGD:
    """``v <- μ v + g; p <- p - lr v`` (plain SGD when μ = 0)."""

    def __init__(self, net: Network, momentum: float = 0.0):
        self.named = list(net.named_parameters())
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}
        if momentum:
            self.velocity = {n: np.zeros_like(p.data) for n, p in self.named}

    def step(self, lr: float) -> None:
        for name, p in self.named:
            g = p.grad
            if self.momentum:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                g = v
            p.data -= lr * g


def make_batch(samples: Sequence[Sample], edge_width: int = 1) -> tuple:
    """Stack samples into ``(x, mask_gt, edge_gt)`` arrays of shape N×C×H×W."""
    shapes = {s.instances.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples in one batch must share a size, got {sorted(shapes)}")
    x = np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float64)
    pairs = [derive_targets(s.instances, edge_width) for s in samples]
    mask = np.stack([p.mask_gt for p in pairs])[:, None].astype(np.float64)
    edge = np.stack([p.edge_gt for p in pairs])[:, None].astype(np.float64)
    return x, mask, edge


def _check_finite(parts: LossBreakdown) -> None:
    for name, value in parts.terms().items():
        if not math.isfinite(value):
            raise NumericError(f"loss term {name} is not finite ({value})")


def sgd_step(net: Network, batch: tuple, config: TrainConfig, lr: Optional[float] = None,
             optimizer: Optional[SGD] = None) -> LossBreakdown:
    """One forward/backward/update; returns the loss before the update."""
    lr = config.lr if lr is None else lr
    optimizer = optimizer if optimizer is not None else SGD(net, config.momentum)
    x, mask_gt, edge_gt = batch
    net.zero_grad()
    net.train()
    parts = total_loss(net(x), mask_gt, edge_gt, config.weights, config.bce_mean)
    _check_finite(parts)
    T.backward(parts.total)
    for name, p in optimizer.named:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"gradient of {name} is not finite")
    optimizer.step(lr)
    return parts


def update_plateau(state: TrainState, epoch_loss: float, config: TrainConfig) -> None:
    """Record an epoch's mean loss; scale lr by ``decay_factor`` after ``patience`` epochs without improvement."""
    state.history.append(epoch_loss)
    if epoch_loss < state.best_loss:
        state.best_loss, state.bad_epochs = epoch_loss, 0
        return
    state.bad_epochs += 1
    if state.bad_epochs >= config.patience:
        state.lr *= config.decay_factor
        state.bad_epochs = 0


def _log_header(weights: LossWeights) -> str:
    names = ["mask", "edge"] + [f"mask_side{i}" for i in range(1, 7)] + [f"edge_side{i}" for i in range(1, 7)]
    return "\t".join(["epoch", "step", "lr", "total"] + names) + "\n"


def _log_line(epoch: int, step: int, lr: float, parts: LossBreakdown) -> str:
    values = [parts.total.item()] + list(parts.terms().values())
    return "\t".join([str(epoch), str(step), repr(lr)] + [repr(float(v)) for v in values]) + "\n"


def train(net: Network, dataset: Sequence[Sample], config: TrainConfig,
          state: Optional[TrainState] = None, optimizer: Optional[SGD] = None,
          log: Optional[TextIO] = None) -> TrainState:
    """Run epochs ``state.epoch + 1 .. config.epochs``.

    Pass the ``state`` and ``optimizer`` from :func:`resume` to continue an
    interrupted run. When ``config.checkpoint_dir`` is set, ``last.ckpt`` is
    rewritten after every epoch and the step log goes to ``train_log.txt``
    there (unless ``log`` is given).
    """
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    state = state if state is not None else TrainState(lr=config.lr, seed=config.seed)
    optimizer = optimizer if optimizer is not None else SGD(net, config.momentum)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    own_log = False
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        if log is None:
            log_path = ckpt_dir / LOG_NAME
            fresh = state.step == 0 or not log_path.exists()
            log = open(log_path, "w" if fresh else "a")
            own_log = True
            if fresh:
                log.write(_log_header(config.weights))
    try:
        while state.epoch < config.epochs:
            if config.max_steps is not None and state.step >= config.max_steps:
                break
            epoch = state.epoch + 1
            order = state.epoch_rng(epoch).permutation(len(dataset))
            losses = []
            for start in range(0, len(order), config.batch_size):
                if config.max_steps is not None and state.step >= config.max_steps:
                    break
                chosen = [dataset[i] for i in order[start:start + config.batch_size]]
                if config.augment:
                    chosen = [augment(s, sample_rng(config.seed, epoch, s.id)) for s in chosen]
                parts = sgd_step(net, make_batch(chosen, config.edge_width), config, state.lr, optimizer)
                state.step += 1
                losses.append(parts.total.item())
                if log is not None:
                    log.write(_log_line(epoch, state.step, state.lr, parts))
            state.epoch = epoch
            update_plateau(state, float(np.mean(losses)), config)
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / CHECKPOINT_NAME, net, checkpoint_state(state, config),
                                optimizer.velocity)
            if log is not None:
                log.flush()
    finally:
        if own_log:
            log.close()
    return state


def checkpoint_state(state: TrainState, config: TrainConfig) -> dict:
    return {"train": state.to_dict(), "config": config.to_dict()}


def resume(path, net: Network, config: TrainConfig) -> tuple:
    """Load a checkpoint into ``net``; returns ``(state, optimizer)`` for :func:`train`."""
    ckpt = load_checkpoint(path, expected=net.config)
    net.load_state_dict(ckpt.network_state())
    state = TrainState.from_dict(ckpt.state["train"])
    optimizer = SGD(net, config.momentum)
    saved = ckpt.momentum()
    if config.momentum:
        for name in optimizer.velocity:
            if name in saved:
                optimizer.velocity[name][...] = saved[name]
    return state, optimizer
