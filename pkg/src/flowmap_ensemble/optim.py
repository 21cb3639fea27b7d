"""Seeded stochastic optimizers and mini-batch scheduling.

Two sources of training randomness are modelled: the initial weights and
the per-epoch shuffling of the data.  Both draw from a single
``numpy.random.Generator`` seeded from :attr:`TrainConfig.seed`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .nncore import Architecture, layer_slices, param_count

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 64
    seed: int = 0
    init_scale_rule: str = "glorot_uniform"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate >= 0:
            # lr = 0 is accepted as a degenerate no-op run
            raise InvalidArgumentError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("seed must be an unsigned 64-bit integer")
        if self.init_scale_rule != "glorot_uniform":
            raise InvalidArgumentError(f"unknown init rule {self.init_scale_rule!r}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            optimizer=d["optimizer"],
            learning_rate=float(d["learning_rate"]),
            epochs=int(d["epochs"]),
            batch_size=int(d["batch_size"]),
            seed=int(d["seed"]),
            init_scale_rule=d.get("init_scale_rule", "glorot_uniform"),
        )


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **kw)


def member_seed(base_seed: int, index: int, attempt: int = 0) -> int:
    """64-bit seed for ensemble member ``index`` (``attempt`` > 0 on retrain).

    Hashing through ``SeedSequence`` gives well-separated streams for
    neighbouring indices.
    """
    ss = np.random.SeedSequence([int(base_seed), int(index), int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def init_params(arch: Architecture, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    p = np.zeros(param_count(arch))
    for ws, _, fan_in, fan_out in layer_slices(arch):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        p[ws] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return p


def shuffle_batches(n_samples: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    perm = rng.permutation(n_samples)
    return [perm[i:i + batch_size] for i in range(0, n_samples, batch_size)]


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grad.shape:
        raise InvalidArgumentError("params and grad shapes differ")
    return params - lr * grad


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. The input state is left untouched."""
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise InvalidArgumentError("params, grad and Adam moments must share a shape")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * (grad * grad)
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    new = params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, AdamState(m=m, v=v, t=t, beta1=b1, beta2=b2, eps=state.eps)
