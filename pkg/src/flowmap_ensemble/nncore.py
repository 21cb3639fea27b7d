"""Dense tanh networks with exact reverse-mode gradients.

A network maps a concatenated memory window of ``memory_len + 1`` states
(newest first) to a state increment.  All parameters live in one flat
float64 vector; for each layer the ``(in, out)`` row-major weight matrix is
followed by the ``out`` bias entries, layers in order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidArgumentError

ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class Architecture:
    """Shape of a flow-map network.

    Parameters
    ----------
    state_dim : int
        Dimension ``d`` of one (observed) state.
    memory_len : int
        Number of past states ``n_M`` fed alongside the current one.
        ``0`` is the plain residual stepper.
    hidden : tuple of int
        Hidden layer widths, at least one.
    activation : str
        Hidden-layer nonlinearity. Only ``"tanh"`` is implemented.
    """

    state_dim: int
    memory_len: int = 0
    hidden: tuple[int, ...] = field(default=(40, 40))
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if int(self.state_dim) < 1:
            raise InvalidArgumentError(f"state_dim must be positive, got {self.state_dim}")
        if int(self.memory_len) < 0:
            raise InvalidArgumentError(f"memory_len must be >= 0, got {self.memory_len}")
        if not self.hidden:
            raise InvalidArgumentError("hidden must contain at least one layer")
        if any(h < 1 for h in self.hidden):
            raise InvalidArgumentError(f"hidden widths must be positive, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.state_dim * (self.memory_len + 1)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.state_dim)

    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "memory_len": self.memory_len,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            state_dim=int(d["state_dim"]),
            memory_len=int(d["memory_len"]),
            hidden=tuple(d["hidden"]),
            activation=d.get("activation", "tanh"),
        )


def param_count(arch: Architecture) -> int:
    w = arch.widths
    return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


def layer_slices(arch: Architecture) -> Iterator[tuple[slice, slice, int, int]]:
    """Yield ``(weight_slice, bias_slice, fan_in, fan_out)`` per layer."""
    w = arch.widths
    pos = 0
    for a, b in zip(w[:-1], w[1:]):
        ws = slice(pos, pos + a * b)
        pos += a * b
        bs = slice(pos, pos + b)
        pos += b
        yield ws, bs, a, b


def unpack(arch: Architecture, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into ``params``; ``W`` has shape ``(fan_in, fan_out)``."""
    return [(params[ws].reshape(a, b), params[bs]) for ws, bs, a, b in layer_slices(arch)]


def check_params(arch: Architecture, params) -> np.ndarray:
    p = np.asarray(params, dtype=np.float64)
    if p.ndim != 1 or p.size != param_count(arch):
        raise InvalidArgumentError(
            f"expected {param_count(arch)} parameters for {arch}, got shape {p.shape}"
        )
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError("parameters contain non-finite entries")
    return p


def _check_batch(arch: Architecture, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise InvalidArgumentError(
            f"expected inputs of shape (n, {arch.input_dim}), got {x.shape}"
        )
    return x


def forward_batch(arch: Architecture, params: np.ndarray, inputs: np.ndarray,
                  keep: bool = False):
    """Evaluate the dense net on each row of ``inputs``.

    With ``keep=True`` also return the list of layer activations (input
    first, last hidden layer last) needed by :func:`backward_batch`.
    """
    x = _check_batch(arch, inputs)
    layers = unpack(arch, params)
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = h @ W
        h += b
        np.tanh(h, out=h)
        acts.append(h)
    W, b = layers[-1]
    out = h @ W
    out += b
    if keep:
        return out, acts
    return out


def backward_batch(arch: Architecture, params: np.ndarray, acts: list[np.ndarray],
                   cotangent: np.ndarray, grad_out: np.ndarray | None = None):
    """Reverse pass given stored activations.

    Returns ``(param_grad, input_grad)`` where ``param_grad`` is the gradient
    of ``sum(cotangent * forward(inputs))`` summed over the batch.
    """
    layers = unpack(arch, params)
    g = np.zeros(param_count(arch)) if grad_out is None else grad_out
    gl = unpack(arch, g)
    delta = np.asarray(cotangent, dtype=np.float64)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = gl[li]
        a = acts[li]
        gW[...] = a.T @ delta
        gb[...] = delta.sum(axis=0)
        delta = delta @ W.T
        if li > 0:
            delta = delta * (1.0 - a * a)
    return g, delta


def forward(arch: Architecture, params, x) -> np.ndarray:
    p = check_params(arch, params)
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (arch.input_dim,):
        raise InvalidArgumentError(
            f"expected input of length {arch.input_dim}, got shape {v.shape}"
        )
    return forward_batch(arch, p, v[None, :])[0]


def backward(arch: Architecture, params, x, cotangent) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``<cotangent, forward(x)>`` w.r.t. parameters and input."""
    p = check_params(arch, params)
    v = np.asarray(x, dtype=np.float64)
    c = np.asarray(cotangent, dtype=np.float64)
    if v.shape != (arch.input_dim,):
        raise InvalidArgumentError(
            f"expected input of length {arch.input_dim}, got shape {v.shape}"
        )
    if c.shape != (arch.state_dim,):
        raise InvalidArgumentError(
            f"expected cotangent of length {arch.state_dim}, got shape {c.shape}"
        )
    _, acts = forward_batch(arch, p, v[None, :], keep=True)
    g, dx = backward_batch(arch, p, acts, c[None, :])
    return g, dx[0]


def make_window(arch: Architecture, states) -> np.ndarray:
    """Validate a memory window: ``memory_len + 1`` states, newest first."""
    w = np.asarray(states, dtype=np.float64)
    if w.ndim == 1 and arch.memory_len == 0:
        w = w[None, :]
    if w.shape != (arch.memory_len + 1, arch.state_dim):
        raise InvalidArgumentError(
            f"window must have shape ({arch.memory_len + 1}, {arch.state_dim}), got {w.shape}"
        )
    return w


def residual_step(arch: Architecture, params, window) -> np.ndarray:
    """One flow-map step: newest state plus the network increment."""
    w = make_window(arch, window)
    return w[0] + forward(arch, params, w.reshape(-1))
