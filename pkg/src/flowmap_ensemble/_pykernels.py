"""Pure numpy training kernel, used when the compiled extension is absent."""
from __future__ import annotations

import numpy as np

from . import nncore
from .optim import AdamState, adam_step, sgd_step

SGD, ADAM = 0, 1


def train_epoch(inputs, residuals, perm, batch_size, widths, params,
                method, lr, m, v, t, beta1=0.9, beta2=0.999, eps=1e-8):
    """Run one epoch of mini-batch updates in place; returns the Adam step count.

    ``residuals`` are targets minus newest input state, so the net is fit
    directly to the increment.  ``params``, ``m`` and ``v`` are overwritten.
    """
    arch = nncore.Architecture(
        state_dim=widths[-1],
        memory_len=widths[0] // widths[-1] - 1,
        hidden=tuple(widths[1:-1]),
    )
    n = perm.shape[0]
    grad = np.empty_like(params)
    state = AdamState(m=m.copy(), v=v.copy(), t=t, beta1=beta1, beta2=beta2, eps=eps)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        xb = inputs[idx]
        out, acts = nncore.forward_batch(arch, params, xb, keep=True)
        cot = (2.0 / idx.shape[0]) * (out - residuals[idx])
        nncore.backward_batch(arch, params, acts, cot, grad_out=grad)
        if method == SGD:
            params[:] = sgd_step(params, grad, lr)
        else:
            new, state = adam_step(params, grad, state, lr)
            params[:] = new
    m[:] = state.m
    v[:] = state.v
    return state.t
