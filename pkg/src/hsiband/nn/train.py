"""Seeded minibatch training with Adam and loss-curve capture."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple, Protocol

import numpy as np

from hsiband.nn.optim import AdamState, adam_step


class Classifier(Protocol):
    kind: str

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]: ...

    def logits(self, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray: ...

    def loss_and_grad(
        self, params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray, weight_decay: float = 0.0
    ) -> tuple[float, dict[str, np.ndarray]]: ...


class TrainingDiverged(ArithmeticError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    iterations: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0
    loss_record_stride: int = 5
    # L2 penalty on weight tensors; the recorded loss includes it
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.loss_record_stride < 1:
            raise ValueError(f"loss_record_stride must be >= 1, got {self.loss_record_stride}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def replace(self, **changes: Any) -> TrainConfig:
        return TrainConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class LossCurve:
    """Loss averaged over each block of ``stride`` iterations, keyed by the block's last iteration."""

    iterations: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.iterations) != len(self.losses):
            raise ValueError("iterations and losses must have equal length")
        if any(b <= a for a, b in zip(self.iterations, self.iterations[1:])):
            raise ValueError("iterations must be strictly increasing")


class TrainResult(NamedTuple):
    params: dict[str, np.ndarray]
    curve: LossCurve
    train_accuracy: float


def accuracy(model: Classifier, params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray, chunk: int = 512) -> float:
    return float(np.mean(predict(model, params, x, chunk) == np.asarray(y)))


def predict(model: Classifier, params: dict[str, np.ndarray], x: np.ndarray, chunk: int = 512) -> np.ndarray:
    preds = [model.logits(params, x[i : i + chunk]).argmax(axis=1) for i in range(0, len(x), chunk)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


def train_classifier(
    model: Classifier, samples: np.ndarray, labels: np.ndarray, config: TrainConfig
) -> TrainResult:
    """Train from a seeded initialization with minibatches drawn with replacement."""
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(samples) != len(labels):
        raise ValueError(f"{len(samples)} samples but {len(labels)} labels")
    if len(np.unique(labels)) < 2:
        raise ValueError("training data must contain both classes")

    rng = np.random.default_rng(config.rng_seed)
    params = model.init_params(rng)
    state = AdamState()
    iterations: list[int] = []
    losses: list[float] = []
    block = 0.0
    block_len = 0
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, len(samples), size=config.batch_size)
        loss, grads = model.loss_and_grad(params, samples[idx], labels[idx], config.weight_decay)
        if not np.isfinite(loss):
            raise TrainingDiverged(it, loss)
        params, state = adam_step(
            params,
            grads,
            state,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
        block += loss
        block_len += 1
        if it % config.loss_record_stride == 0 or it == config.iterations:
            iterations.append(it)
            losses.append(block / block_len)
            block, block_len = 0.0, 0
    acc = accuracy(model, params, samples, labels)
    return TrainResult(params, LossCurve(iterations, losses), acc)
