"""Ensemble-averaged time stepping.

At every step all members advance the *same* averaged window by one step
and their predictions are averaged; the average is what enters the next
window.  This is not the same as averaging independent member rollouts.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nncore
from .errors import InvalidArgumentError, RolloutDivergedError
from .nncore import Architecture
from .optim import TrainConfig
from .training import Ensemble


@dataclass
class RolloutResult:
    """Predicted states in chronological order.

    ``states[: memory_len + 1]`` is the supplied initial window (oldest
    first); row ``memory_len + k`` is the prediction after ``k`` steps.
    ``member_predictions[k]`` holds the ``K`` one-step member outputs that
    were averaged into step ``k + 1``, when requested.
    """

    states: np.ndarray
    memory_len: int
    member_predictions: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - self.memory_len - 1

    def predictions(self) -> np.ndarray:
        return self.states[self.memory_len + 1:]


def ensemble_step(ens: Ensemble, window) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(averaged next state, (K, d) member next states)``."""
    w = nncore.make_window(ens.arch, window)
    x = w.reshape(-1)
    preds = np.empty((ens.K, ens.arch.state_dim))
    for i, p in enumerate(ens.members):
        with np.errstate(over="ignore", invalid="ignore"):
            preds[i] = w[0] + nncore.forward_batch(ens.arch, p, x[None, :])[0]
        if not np.all(np.isfinite(preds[i])):
            raise RolloutDivergedError(f"member {i} produced a non-finite state", member=i)
    return preds.mean(axis=0), preds


def rollout(ens: Ensemble, init_window, horizon: int, keep_members: bool = False) -> RolloutResult:
    """Iterate :func:`ensemble_step` ``horizon`` times from an exact initial window.

    ``init_window`` is newest first, as everywhere else.
    """
    if horizon < 0:
        raise InvalidArgumentError("horizon must be >= 0")
    w = nncore.make_window(ens.arch, init_window).copy()
    n_m = ens.arch.memory_len
    states = np.empty((n_m + 1 + horizon, ens.arch.state_dim))
    states[: n_m + 1] = w[::-1]
    members = np.empty((horizon, ens.K, ens.arch.state_dim)) if keep_members else None
    for k in range(horizon):
        try:
            avg, preds = ensemble_step(ens, w)
        except RolloutDivergedError as exc:
            raise RolloutDivergedError(
                f"rollout diverged at step {k + 1}: {exc}", member=exc.member, step=k + 1
            ) from exc
        states[n_m + 1 + k] = avg
        if members is not None:
            members[k] = preds
        # drop the oldest state, newest goes in front
        w[1:] = w[:-1]
        w[0] = avg
    return RolloutResult(states, n_m, members)


def rollout_individual(arch: Architecture, params, init_window, horizon: int) -> RolloutResult:
    ens = Ensemble(arch, [params], [TrainConfig()])
    res = rollout(ens, init_window, horizon)
    return RolloutResult(res.states, res.memory_len)


def write_rollout_csv(path, result: RolloutResult, dt: float, extra: dict | None = None) -> None:
    """``step, t, v1..vd`` plus optional extra column blocks (e.g. an oracle).

    ``extra`` maps a column prefix to an array with one row per state.
    """
    d = result.states.shape[1]
    extra = extra or {}
    header = ["step", "t"] + [f"v{j + 1}" for j in range(d)]
    for name, arr in extra.items():
        header += [f"{name}{j + 1}" for j in range(np.shape(arr)[1])]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for n, row in enumerate(result.states):
            line = [n, repr(n * dt)] + [repr(float(v)) for v in row]
            for arr in extra.values():
                line += [repr(float(v)) for v in arr[n]]
            wr.writerow(line)


def write_member_csv(path, result: RolloutResult, dt: float) -> None:
    if result.member_predictions is None:
        raise InvalidArgumentError("rollout was run without keep_members=True")
    _, K, d = result.member_predictions.shape
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "t", "member"] + [f"v{j + 1}" for j in range(d)])
        for k, preds in enumerate(result.member_predictions):
            n = result.memory_len + 1 + k
            for i in range(K):
                wr.writerow([n, repr(n * dt), i] + [repr(float(v)) for v in preds[i]])
