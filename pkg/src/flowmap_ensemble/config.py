"""Experiment configuration, presets, and the exact evaluation window."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .nncore import Architecture
from .optim import TrainConfig
from .systems import BOXES, get_system, integrate

# seed stream tags derived from base_seed
DATA_STREAM, TRAIN_STREAM, BOOTSTRAP_STREAM = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "pendulum"
    dt: float = 0.02
    memory_len: int = 0
    hidden: tuple[int, ...] = (40, 40)
    M: int = 5000
    substeps: int = 10
    pool_size: int = 100
    epochs: int = 500
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    batch_size: int = 64
    K_list: tuple[int, ...] = (1, 5, 10, 50)
    n_ensembles: int = 200
    eval_point: tuple[float, ...] = (-1.193, -3.876)
    horizon: int = 50
    base_seed: int = 2024
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "K_list", tuple(int(k) for k in self.K_list))
        object.__setattr__(self, "eval_point", tuple(float(v) for v in self.eval_point))
        try:
            sys = get_system(self.system)
            self.architecture()
            self.train_config()
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from exc
        if self.dt <= 0 or self.M < 1 or self.pool_size < 1 or self.substeps < 1:
            raise ConfigError("dt, M, pool_size and substeps must be positive")
        if self.n_ensembles < 2 or self.horizon < 0:
            raise ConfigError("n_ensembles must be >= 2 and horizon >= 0")
        if not self.K_list or min(self.K_list) < 1:
            raise ConfigError("K_list must contain positive ensemble sizes")
        if len(self.eval_point) != sys.observed_dim:
            raise ConfigError(
                f"eval_point needs {sys.observed_dim} components for {self.system}"
            )
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")

    def architecture(self) -> Architecture:
        return Architecture(get_system(self.system).observed_dim, self.memory_len, self.hidden)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.optimizer, self.learning_rate, self.epochs, self.batch_size,
                           seed=stream_seed(self.base_seed, TRAIN_STREAM))

    @property
    def data_seed(self) -> int:
        return stream_seed(self.base_seed, DATA_STREAM)

    @property
    def bootstrap_seed(self) -> int:
        return stream_seed(self.base_seed, BOOTSTRAP_STREAM)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("hidden", "K_list", "eval_point"):
            d[k] = list(d[k])
        return d

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def stream_seed(base_seed: int, stream: int) -> int:
    ss = np.random.SeedSequence([int(base_seed), 0x5EED, int(stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


PRESETS = {
    "pendulum": ExperimentConfig(),
    "chaotic": ExperimentConfig(
        system="chaotic4d",
        memory_len=60,
        hidden=(30, 30, 30),
        substeps=40,
        pool_size=60,
        epochs=100,
        optimizer="adam",
        K_list=(1, 10, 50),
        eval_point=(-3.7634, 7.1463, 13.1806),
    ),
}

# the full-size runs: 1000-model pools, 500 bootstrap ensembles
PAPER_SCALE = {
    "pendulum": {"pool_size": 1000, "n_ensembles": 500, "epochs": 2000},
    "chaotic": {"pool_size": 1000, "n_ensembles": 500},
}


def field_names() -> set[str]:
    return {f.name for f in fields(ExperimentConfig)}


def make_config(preset: str | None = None, file: str | Path | None = None,
                overrides: dict | None = None, paper_scale: bool = False) -> ExperimentConfig:
    """Resolve a config: flags beat file values, which beat preset defaults."""
    file_values = {}
    if file is not None:
        file_values = load_config_file(file)
        preset = preset or file_values.pop("preset", None)
    file_values.pop("preset", None)
    preset = preset or "pendulum"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values = PRESETS[preset].to_dict()
    if paper_scale:
        values.update(PAPER_SCALE[preset])
    values.update(file_values)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(values) - field_names()
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid config file ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a flat key-value object")
    for k, v in doc.items():
        if isinstance(v, dict):
            raise ConfigError(f"{path}: key {k!r} is nested; configs are flat")
    return doc


def save_config_file(config: ExperimentConfig, path, preset: str | None = None) -> None:
    d = config.to_dict()
    if preset:
        d["preset"] = preset
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def lift(system: str, observed) -> np.ndarray:
    """Full state for an observed point; hidden variables start on the slow manifold."""
    z = np.asarray(observed, dtype=np.float64)
    if system == "chaotic4d":
        return np.array([z[0], z[1], z[2], z[0] * z[1]])
    return z.copy()


def exact_trajectory(config: ExperimentConfig, n_after: int = 1) -> np.ndarray:
    """Observed oracle states from ``eval_point`` (state 0) onward.

    Returns ``memory_len + 1 + n_after`` states: the exact initial window
    followed by ``n_after`` future states.
    """
    sys = get_system(config.system)
    x0 = lift(config.system, config.eval_point)
    traj = integrate(sys, x0, config.dt, config.memory_len + n_after, config.substeps)
    return sys.observe(traj)


def eval_window(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """``(window newest first, exact next state)`` at the evaluation point."""
    obs = exact_trajectory(config, 1)
    n_m = config.memory_len
    return obs[n_m::-1].copy(), obs[n_m + 1].copy()


def box_for(config: ExperimentConfig):
    return BOXES[config.system]
