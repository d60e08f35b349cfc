"""Desk-scale training on a synthetic two-class orientation task."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .model import TOY_CONFIG, BackboneWeights, ModelConfig, backbone_forward, init_backbone
from .numerics import ops
from .numerics.tensor import GradTape, Tensor, as_dtype

MAX_TOY_TOKENS = 256
MAX_TOY_DIM = 32


def synth_dataset(seed: int, count: int = 8, size: int = 32, noise: float = 0.05,
                  dtype="f64") -> tuple[list[np.ndarray], list[int]]:
    """Alternating labels: 0 = brightness ramps left to right, 1 = top to bottom.

    Each image gets a random offset, slope and per-channel tint, plus Gaussian
    noise; all draws come from ``seed``.
    """
    rng = np.random.default_rng(seed)
    dt = as_dtype(dtype)
    ramp = np.linspace(0.0, 1.0, size)
    images, labels = [], []
    for i in range(count):
        label = i % 2
        base = np.outer(np.ones(size), ramp) if label == 0 else np.outer(ramp, np.ones(size))
        slope = rng.uniform(0.5, 1.0)
        offset = rng.uniform(0.0, 0.3)
        tint = rng.uniform(0.6, 1.0, size=3)
        img = tint[:, None, None] * (offset + slope * base)[None] * 0.7
        img = img + noise * rng.standard_normal(img.shape)
        images.append(img.astype(dt))
        labels.append(label)
    return images, labels


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    weights: BackboneWeights | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1]

    @property
    def steps(self) -> int:
        return len(self.losses)

    def fitted(self) -> bool:
        return self.final_accuracy >= 0.95 and self.final_loss < math.log(2)


def check_toy_bounds(cfg: ModelConfig, image_size: int) -> None:
    h, w = cfg.grid(image_size, image_size)
    if h * w > MAX_TOY_TOKENS or cfg.embed_dim > MAX_TOY_DIM:
        raise ConfigError(
            f"toy training allows T <= {MAX_TOY_TOKENS} and C <= {MAX_TOY_DIM}, "
            f"got T={h * w}, C={cfg.embed_dim}"
        )


def evaluate(weights: BackboneWeights, images, labels) -> tuple[float, float]:
    """Mean cross-entropy and accuracy, no tape."""
    total, correct = 0.0, 0
    for img, y in zip(images, labels):
        _, logits = backbone_forward(Tensor(img), weights)
        total += ops.cross_entropy(logits, y).item()
        correct += int(np.argmax(logits.data) == y)
    return total / len(images), correct / len(images)


def train_toy(cfg: ModelConfig = TOY_CONFIG, steps: int = 500, lr: float = 0.5, seed: int = 0,
              image_size: int = 32, count: int = 8, dtype="f64", stop_when_fit: bool = False,
              log: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Full-batch gradient descent on :func:`synth_dataset`.

    Loss and accuracy recorded for step ``s`` are measured on the weights the
    step starts from, so ``lr=0`` gives a constant curve. With
    ``stop_when_fit`` training stops at the first step whose weights reach
    95% accuracy with loss below ln 2.
    """
    check_toy_bounds(cfg, image_size)
    if steps < 1:
        raise ConfigError("steps must be positive")
    weights = init_backbone(cfg, seed=seed, dtype=dtype)
    images, labels = synth_dataset(seed, count=count, size=image_size, dtype=dtype)
    params = weights.parameters()
    result = TrainResult(weights=weights)
    for step in range(steps):
        for p in params:
            p.requires_grad = True
        with GradTape() as tape:
            losses, correct = [], 0
            for img, y in zip(images, labels):
                _, logits = backbone_forward(Tensor(img), weights)
                losses.append(ops.cross_entropy(logits, y))
                correct += int(np.argmax(logits.data) == y)
            loss = ops.scale(ops.add_n(losses), 1.0 / len(images))
        result.losses.append(loss.item())
        result.accuracies.append(correct / len(images))
        if log is not None:
            log(step, result.losses[-1], result.accuracies[-1])
        if stop_when_fit and result.fitted():
            break
        tape.backward(loss)
        for p in params:
            p.data -= lr * p.grad.data
    for p in params:
        p.requires_grad = False
        p.grad = None
    return result
