"""Training data, the mean-squared flow-map loss, and ensembles of trained models."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels, nncore
from .errors import (CorruptFileError, EnsembleTrainingError, InvalidArgumentError,
                     InvalidModelError, TrainingDivergedError, VersionMismatchError)
from .nncore import Architecture
from .optim import TrainConfig, init_params, member_seed
from .systems import DomainBox, SystemModel, integrate_many, sample_initial_conditions

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODEL_FORMAT = "flowmap-ensemble/model"
DATASET_FORMAT = "flowmap-ensemble/dataset"


@dataclass
class Dataset:
    """``M`` observed sequences of ``memory_len + 2`` consecutive states (oldest first).

    The first ``memory_len + 1`` states of a sequence form the network
    input, the last one is the target.
    """

    sequences: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = np.ascontiguousarray(self.sequences, dtype=np.float64)
        if self.sequences.ndim != 3 or self.sequences.shape[1] < 2:
            raise InvalidArgumentError(
                f"sequences must have shape (M, n_M + 2, d), got {self.sequences.shape}"
            )

    @property
    def M(self) -> int:
        return self.sequences.shape[0]

    @property
    def memory_len(self) -> int:
        return self.sequences.shape[1] - 2

    @property
    def state_dim(self) -> int:
        return self.sequences.shape[2]

    def inputs(self) -> np.ndarray:
        """Network inputs, each row a window flattened newest first."""
        n_m = self.memory_len
        return np.ascontiguousarray(self.sequences[:, n_m::-1, :].reshape(self.M, -1))

    def newest(self) -> np.ndarray:
        return self.sequences[:, self.memory_len, :]

    def targets(self) -> np.ndarray:
        return self.sequences[:, -1, :]

    def residuals(self) -> np.ndarray:
        return np.ascontiguousarray(self.targets() - self.newest())

    def check_arch(self, arch: Architecture) -> None:
        if arch.state_dim != self.state_dim or arch.memory_len != self.memory_len:
            raise InvalidArgumentError(
                f"dataset (d={self.state_dim}, n_M={self.memory_len}) does not match {arch}"
            )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.meta, sort_keys=True).encode())
        h.update(str(self.sequences.shape).encode())
        h.update(self.sequences.tobytes())
        return h.hexdigest()


@dataclass
class Ensemble:
    arch: Architecture
    members: list[np.ndarray]
    configs: list[TrainConfig]
    provenance: str = ""
    indices: list[int] | None = None
    loss_histories: list[list[float]] | None = None

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidModelError("an ensemble needs at least one member")
        if len(self.configs) != len(self.members):
            raise InvalidModelError("one training config per member is required")
        self.members = [nncore.check_params(self.arch, p) for p in self.members]
        if self.indices is None:
            self.indices = list(range(len(self.members)))

    @property
    def K(self) -> int:
        return len(self.members)

    def subset(self, picks: Sequence[int]) -> "Ensemble":
        return Ensemble(
            self.arch,
            [self.members[i] for i in picks],
            [self.configs[i] for i in picks],
            self.provenance,
            [self.indices[i] for i in picks],
        )


@dataclass
class TrainResult:
    params: np.ndarray
    loss_history: list[float]
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)


def build_dataset(sys: SystemModel, box: DomainBox, M: int, dt: float, memory_len: int,
                  substeps: int, seed: int) -> Dataset:
    """Sample initial states uniformly in ``box`` and record observed sequences.

    Each trajectory runs ``memory_len + 1`` macro steps.  Blown-up
    trajectories are discarded and redrawn; the count lands in
    ``meta["n_resampled"]``.
    """
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    if box.dim != sys.full_dim:
        raise InvalidArgumentError("box dimension must equal the full state dimension")
    rng = np.random.default_rng(seed)
    kept = []
    n_have = 0
    n_resampled = 0
    need = M
    for _ in range(100):
        x0 = sample_initial_conditions(box, need, rng)
        traj, ok = integrate_many(sys, x0, dt, memory_len + 1, substeps)
        kept.append(sys.observe(traj[ok]))
        n_have += int(ok.sum())
        n_resampled += int((~ok).sum())
        need = M - n_have
        if need == 0:
            break
    else:
        raise InvalidArgumentError("could not collect enough bounded trajectories")
    if n_resampled:
        log.info("resampled %d blown-up trajectories", n_resampled)
    meta = {
        "system": sys.id,
        "system_params": dict(sys.params),
        "dt": float(dt),
        "memory_len": int(memory_len),
        "box": box.to_dict(),
        "substeps": int(substeps),
        "seed": int(seed),
        "M": int(M),
        "n_resampled": n_resampled,
    }
    return Dataset(np.concatenate(kept, axis=0), meta)


def mse_loss(arch: Architecture, params, dataset: Dataset, with_grad: bool = True):
    """Mean over samples of the squared residual-step error.

    Returns ``(loss, grad)``, or just ``loss`` with ``with_grad=False``.
    """
    dataset.check_arch(arch)
    p = nncore.check_params(arch, params)
    x = dataset.inputs()
    r = dataset.residuals()
    if not with_grad:
        out = nncore.forward_batch(arch, p, x)
        return float(np.mean(np.sum((r - out) ** 2, axis=1)))
    out, acts = nncore.forward_batch(arch, p, x, keep=True)
    diff = out - r
    loss = float(np.mean(np.sum(diff ** 2, axis=1)))
    g, _ = nncore.backward_batch(arch, p, acts, (2.0 / dataset.M) * diff)
    return loss, g


def _full_loss(arch, params, x, r, chunk=512):
    # cache-sized chunks run about twice as fast as one big batch
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(0, x.shape[0], chunk):
            out = nncore.forward_batch(arch, params, x[i:i + chunk])
            total += float(np.sum((r[i:i + chunk] - out) ** 2))
    return total / x.shape[0]


def train_one(arch: Architecture, dataset: Dataset, config: TrainConfig,
              checkpoints: Sequence[int] = (), backend: str | None = None,
              callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit one network by mini-batch SGD or Adam.

    All randomness (initial weights, then one permutation per epoch) comes
    from ``default_rng(config.seed)``, so the first ``e`` epochs of a long
    run coincide with a run of ``e`` epochs; ``checkpoints`` exploits this
    to snapshot parameters at intermediate epoch counts.
    """
    dataset.check_arch(arch)
    rng = np.random.default_rng(config.seed)
    params = init_params(arch, rng)
    x = dataset.inputs()
    r = dataset.residuals()
    epoch_fn = kernels.get_train_epoch(backend)
    widths = np.array(arch.widths, dtype=np.int64)
    method = 0 if config.optimizer == "sgd" else 1
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    t = 0
    wanted = set(int(c) for c in checkpoints)
    snaps = {}
    if 0 in wanted:
        snaps[0] = params.copy()
    history = []
    with threadpool_limits(limits=1):
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(dataset.M)
            with np.errstate(over="ignore", invalid="ignore"):
                t = epoch_fn(x, r, perm, config.batch_size, widths, params, method,
                             config.learning_rate, m, v, t)
            loss = _full_loss(arch, params, x, r)
            if not (np.isfinite(loss) and np.all(np.isfinite(params))):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (seed {config.seed})", epoch=epoch
                )
            history.append(loss)
            if callback is not None:
                callback(epoch, loss)
            if epoch in wanted:
                snaps[epoch] = params.copy()
    return TrainResult(params, history, snaps)


# worker-process state for train_ensemble
_WORKER: dict = {}


def _init_worker(arch, dataset, base_config, checkpoints, backend, log_every=0, n_total=0):
    _WORKER.update(arch=arch, dataset=dataset, config=base_config,
                   checkpoints=checkpoints, backend=backend,
                   log_every=log_every, n_total=n_total)


def _progress(index: int):
    every, total = _WORKER.get("log_every", 0), _WORKER.get("n_total", 0)
    if not every:
        return None

    def report(epoch, loss):
        if epoch % every == 0:
            print(f"model {index + 1}/{total} epoch {epoch} loss {loss:.6e}", flush=True)
    return report


def _train_member(index: int, max_retries: int):
    w = _WORKER
    last = None
    for attempt in range(max_retries + 1):
        cfg = w["config"].with_seed(member_seed(w["config"].seed, index, attempt))
        try:
            res = train_one(w["arch"], w["dataset"], cfg, w["checkpoints"], w["backend"],
                            callback=_progress(index))
        except TrainingDivergedError as exc:
            log.warning("member %d attempt %d diverged: %s", index, attempt, exc)
            last = exc
            continue
        return index, cfg, res, attempt
    return index, None, last, max_retries


def train_members(arch: Architecture, dataset: Dataset, base_config: TrainConfig,
                  indices: Sequence[int], jobs: int = 1, max_retries: int = 2,
                  checkpoints: Sequence[int] = (), backend: str | None = None,
                  on_done: Callable | None = None, log_every: int = 0, n_total: int = 0):
    """Train the members with the given indices; yields nothing, returns a dict.

    The result maps ``index -> (config, TrainResult)``.  Member ``i`` is
    seeded from ``(base_config.seed, i, attempt)``, where ``attempt`` is
    bumped after each divergence, so results do not depend on ``jobs``.
    With ``log_every > 0`` a ``model i/n_total epoch e loss L`` line is
    printed every ``log_every`` epochs.
    """
    dataset.check_arch(arch)
    indices = list(indices)
    done: dict[int, tuple[TrainConfig, TrainResult]] = {}
    failed = []

    def collect(item):
        idx, cfg, res, _ = item
        if cfg is None:
            failed.append(idx)
            return
        done[idx] = (cfg, res)
        if on_done is not None:
            on_done(idx, cfg, res)

    if jobs <= 1 or len(indices) <= 1:
        _init_worker(arch, dataset, base_config, tuple(checkpoints), backend, log_every, n_total)
        try:
            for i in indices:
                collect(_train_member(i, max_retries))
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker,
            initargs=(arch, dataset, base_config, tuple(checkpoints), backend, log_every, n_total),
        ) as pool:
            for item in pool.map(_train_member, indices, [max_retries] * len(indices)):
                collect(item)
    if failed:
        raise EnsembleTrainingError(
            f"members {sorted(failed)} diverged after {max_retries + 1} attempts", sorted(failed)
        )
    return done


def train_ensemble(arch: Architecture, dataset: Dataset, base_config: TrainConfig, K: int,
                   jobs: int = 1, max_retries: int = 2, backend: str | None = None) -> Ensemble:
    """``K`` independent trainings on the same data, differing only in seed."""
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    done = train_members(arch, dataset, base_config, range(K), jobs=jobs,
                         max_retries=max_retries, backend=backend)
    return Ensemble(
        arch,
        [done[i][1].params for i in range(K)],
        [done[i][0] for i in range(K)],
        provenance=dataset.content_hash(),
        indices=list(range(K)),
        loss_histories=[done[i][1].loss_history for i in range(K)],
    )


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------- file formats

def _dump(path, doc: dict) -> None:
    path = Path(path)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text + "\n")
    os.replace(tmp, path)


def _load(path, fmt: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: not a valid document ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise CorruptFileError(f"{path}: not a {fmt} file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    return doc


def ensemble_to_doc(ens: Ensemble) -> dict:
    members = []
    for k in range(ens.K):
        entry = {
            "index": int(ens.indices[k]),
            "seed": int(ens.configs[k].seed),
            "config": ens.configs[k].to_dict(),
            "params": [float(v) for v in ens.members[k]],
        }
        if ens.loss_histories is not None:
            entry["loss_history"] = [float(v) for v in ens.loss_histories[k]]
        members.append(entry)
    return {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "architecture": ens.arch.to_dict(),
        "K": ens.K,
        "dataset_hash": ens.provenance,
        "members": members,
    }


def save_model(ens: Ensemble, path) -> None:
    _dump(path, ensemble_to_doc(ens))


def load_model(path) -> Ensemble:
    doc = _load(path, MODEL_FORMAT)
    try:
        arch = Architecture.from_dict(doc["architecture"])
        members = doc["members"]
        K = int(doc["K"])
    except (KeyError, TypeError, ValueError, InvalidArgumentError) as exc:
        raise CorruptFileError(f"{path}: malformed model header ({exc})") from exc
    if K < 1 or not members:
        raise InvalidModelError(f"{path}: model has no members")
    if K != len(members):
        raise CorruptFileError(f"{path}: K={K} but {len(members)} members stored")
    params, configs, indices, hists = [], [], [], []
    for m in members:
        if not isinstance(m, dict) or not {"params", "config", "index"} <= m.keys():
            raise CorruptFileError(f"{path}: malformed member entry")
        p = np.asarray(m["params"], dtype=np.float64)
        if p.shape != (nncore.param_count(arch),):
            raise InvalidModelError(
                f"{path}: member {m.get('index')} has {p.size} parameters, "
                f"architecture needs {nncore.param_count(arch)}"
            )
        params.append(p)
        configs.append(TrainConfig.from_dict(m["config"]))
        indices.append(int(m["index"]))
        hists.append(m.get("loss_history"))
    return Ensemble(arch, params, configs, doc.get("dataset_hash", ""), indices,
                    hists if all(h is not None for h in hists) else None)


def save_dataset(ds: Dataset, path) -> None:
    _dump(path, {
        "format": DATASET_FORMAT,
        "format_version": FORMAT_VERSION,
        "meta": ds.meta,
        "shape": list(ds.sequences.shape),
        "sequences": ds.sequences.tolist(),
    })


def load_dataset(path) -> Dataset:
    doc = _load(path, DATASET_FORMAT)
    try:
        seq = np.asarray(doc["sequences"], dtype=np.float64)
        shape = tuple(doc["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: malformed dataset ({exc})") from exc
    if seq.shape != shape:
        raise CorruptFileError(f"{path}: sequences have shape {seq.shape}, header says {shape}")
    return Dataset(seq, doc.get("meta", {}))
