"""Ground-truth dynamical systems and the reference integrator.

The fine RK4 integrator plays the part of the exact flow map when
generating training data and evaluating one-step errors.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationError, InvalidArgumentError

BLOWUP = 1e12


@dataclass(frozen=True)
class SystemModel:
    """An autonomous ODE ``dx/dt = rhs(x)``, observed through its leading components.

    The first ``observed_dim`` entries of the full state are observed; the
    rest are hidden.  ``rhs`` acts on the last axis, so it accepts a single
    state or a stack of them.
    """

    id: str
    full_dim: int
    observed_dim: int
    rhs: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.observed_dim <= self.full_dim:
            raise InvalidArgumentError("need 1 <= observed_dim <= full_dim")

    def observe(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[..., : self.observed_dim]


@dataclass(frozen=True)
class DomainBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or not all(a < b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"invalid box {lo} x {hi}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainBox":
        return cls(tuple(d["lower"]), tuple(d["upper"]))


def pendulum(alpha: float = 0.05, beta: float = 8.91) -> SystemModel:
    """Damped pendulum ``x1' = x2``, ``x2' = -alpha x2 - beta sin x1``."""

    def rhs(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, -alpha * x2 - beta * np.sin(x1)], axis=-1)

    return SystemModel("pendulum", 2, 2, rhs, {"alpha": alpha, "beta": beta})


def chaotic4d(eps: float = 0.01) -> SystemModel:
    """Three slow variables driven by a fast hidden variable ``y`` (time scale ``eps``)."""

    def rhs(x):
        x1, x2, x3, y = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        return np.stack([
            -x2 - x3,
            x1 + 0.2 * x2,
            0.2 + y - 5.0 * x3,
            (-y + x1 * x2) / eps,
        ], axis=-1)

    return SystemModel("chaotic4d", 4, 3, rhs, {"eps": eps})


PENDULUM_BOX = DomainBox((-np.pi, -2 * np.pi), (np.pi, 2 * np.pi))
CHAOTIC_BOX = DomainBox((-7.5, -10.0, 0.0, -1.0), (10.0, 7.5, 18.0, 100.0))

SYSTEMS = {"pendulum": pendulum, "chaotic4d": chaotic4d}
BOXES = {"pendulum": PENDULUM_BOX, "chaotic4d": CHAOTIC_BOX}


def get_system(name: str, **params) -> SystemModel:
    try:
        return SYSTEMS[name](**params)
    except KeyError:
        raise InvalidArgumentError(f"unknown system {name!r}") from None


def rhs_eval(sys: SystemModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (sys.full_dim,):
        raise InvalidArgumentError(f"expected state of length {sys.full_dim}, got {x.shape}")
    return sys.rhs(x)


def rk4_step(sys: SystemModel, x, dt: float) -> np.ndarray:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite state passed to rk4_step")
    with np.errstate(over="ignore", invalid="ignore"):
        y = _rk4(sys.rhs, x, dt)
    if not np.all(np.isfinite(y)):
        raise IntegrationError("rk4_step produced a non-finite state")
    return y


def integrate(sys: SystemModel, x0, dt_macro: float, n_steps: int, substeps: int = 10) -> np.ndarray:
    """States at ``n_steps + 1`` macro times, each macro step split into RK4 substeps.

    Returns an array of shape ``(n_steps + 1, full_dim)``.
    """
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (sys.full_dim,):
        raise InvalidArgumentError(f"expected state of length {sys.full_dim}, got {x.shape}")
    traj, ok = integrate_many(sys, x[None, :], dt_macro, n_steps, substeps)
    if not ok[0]:
        raise IntegrationError("trajectory blew up")
    return traj[0]


def integrate_many(sys: SystemModel, x0s, dt_macro: float, n_steps: int,
                   substeps: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`integrate` over a stack of initial states.

    Returns ``(trajectories, ok)`` with shapes ``(n, n_steps + 1, full_dim)``
    and ``(n,)``.  Trajectories that leave ``|x| <= 1e12`` (or go non-finite)
    are flagged in ``ok`` and frozen at their last good state.
    """
    if substeps < 1:
        raise InvalidArgumentError("substeps must be >= 1")
    if n_steps < 0:
        raise InvalidArgumentError("n_steps must be >= 0")
    if not dt_macro > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt_macro}")
    x = np.array(x0s, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != sys.full_dim:
        raise InvalidArgumentError(f"expected states of shape (n, {sys.full_dim}), got {x.shape}")
    ok = np.all(np.isfinite(x), axis=1)
    h = dt_macro / substeps
    out = np.empty((x.shape[0], n_steps + 1, sys.full_dim))
    out[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            y = x
            for _ in range(substeps):
                y = _rk4(sys.rhs, y, h)
            good = np.all(np.abs(y) <= BLOWUP, axis=1)
            ok &= good
            x = np.where(ok[:, None], y, x)
            out[:, n + 1] = x
    return out, ok


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def sample_initial_conditions(box: DomainBox, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    return rng.uniform(np.array(box.lower), np.array(box.upper), size=(n, box.dim))


def write_trajectory_csv(path, states, dt: float, t0: float = 0.0) -> None:
    states = np.atleast_2d(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(states.shape[1])])
        for n, row in enumerate(states):
            w.writerow([repr(t0 + n * dt)] + [repr(float(v)) for v in row])
