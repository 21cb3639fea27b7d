"""Backend selection for the training hot loop.

The compiled extension is used when it imports; setting
``FLOWMAP_ENSEMBLE_BACKEND=python`` forces the numpy fallback.
"""
from __future__ import annotations

import os

from . import _pykernels
from .errors import InvalidArgumentError

BACKENDS = {"python": _pykernels.train_epoch}

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None
else:
    BACKENDS["compiled"] = _kernels.train_epoch

_requested = os.environ.get("FLOWMAP_ENSEMBLE_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(
        f"FLOWMAP_ENSEMBLE_BACKEND={_requested!r} unavailable; have {sorted(BACKENDS)}"
    )
BACKEND = _requested or ("compiled" if "compiled" in BACKENDS else "python")
train_epoch = BACKENDS[BACKEND]


def get_train_epoch(name: str | None = None):
    name = name or BACKEND
    if name not in BACKENDS:
        raise InvalidArgumentError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}")
    return BACKENDS[name]
