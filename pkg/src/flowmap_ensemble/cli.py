"""Command-line front end: generate, train, analyze, predict, report.

Outputs go under ``<output-dir>/{dataset,models,reports}``.  The output
directory defaults to ``$FLOWMAP_ENSEMBLE_OUTPUT_DIR`` or ``./runs``.
Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig, make_config
from .errors import (ConfigError, EnsembleTrainingError, IntegrationError, ModelFileError,
                     RolloutDivergedError, TrainingDivergedError)
from .predict import rollout, rollout_individual, write_member_csv, write_rollout_csv
from .stats import (chi2_gof_gaussian, variance_scaling_report, write_gof_json,
                    write_histogram_csv, write_report_csv)
from .systems import get_system
from .training import (Ensemble, build_dataset, default_jobs, ensemble_to_doc, load_dataset,
                       load_model, save_dataset, train_members)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUTPUT_ENV = "FLOWMAP_ENSEMBLE_OUTPUT_DIR"

log = logging.getLogger("flowmap_ensemble")


class Layout:
    def __init__(self, root):
        self.root = Path(root)
        self.config = self.root / "config.json"
        self.dataset_dir = self.root / "dataset"
        self.models_dir = self.root / "models"
        self.reports_dir = self.root / "reports"
        self.dataset = self.dataset_dir / "dataset.json"
        self.pool = self.models_dir / "pool.json"

    def ensure(self, *dirs):
        for d in dirs:
            d.mkdir(parents=True, exist_ok=True)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("experiment")
    g.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    g.add_argument("--config", help="flat JSON config file (flags override it)")
    g.add_argument("--paper-scale", action="store_true",
                   help="1000-model pools and 500 bootstrap ensembles")
    g.add_argument("-o", "--output-dir", default=os.environ.get(OUTPUT_ENV, "runs"))
    g.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: available CPUs); results do not depend on it")
    g.add_argument("-v", "--verbose", action="store_true")
    ov = common.add_argument_group("overrides")
    ov.add_argument("--dt", type=float)
    ov.add_argument("--memory-len", dest="memory_len", type=int)
    ov.add_argument("--hidden", type=_int_list)
    ov.add_argument("--M", dest="M", type=int)
    ov.add_argument("--substeps", type=int)
    ov.add_argument("--pool-size", dest="pool_size", type=int)
    ov.add_argument("--epochs", type=int)
    ov.add_argument("--optimizer", choices=["sgd", "adam"])
    ov.add_argument("--lr", dest="learning_rate", type=float)
    ov.add_argument("--batch-size", dest="batch_size", type=int)
    ov.add_argument("--K-list", dest="K_list", type=_int_list)
    ov.add_argument("--n-ensembles", dest="n_ensembles", type=int)
    ov.add_argument("--eval-point", dest="eval_point", type=_float_list)
    ov.add_argument("--horizon", type=int)
    ov.add_argument("--seed", dest="base_seed", type=int)
    ov.add_argument("--alpha", type=float)

    p = argparse.ArgumentParser(prog="flowmap-ensemble", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", parents=[common], help="build the training dataset")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", parents=[common], help="train the model pool")
    sp.add_argument("--dataset", help="dataset file (default: <output-dir>/dataset/dataset.json)")
    sp.add_argument("--resume", action="store_true", help="keep members already in the pool file")
    sp.add_argument("--log-every", type=int, default=50, help="epochs between progress lines")
    sp.add_argument("--max-retries", type=int, default=2)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("analyze", parents=[common], help="one-step error statistics by ensemble size")
    sp.add_argument("--pool", help="model pool file (default: <output-dir>/models/pool.json)")
    sp.add_argument("--hist-bins", type=int, default=20)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("predict", parents=[common], help="ensemble-averaged rollout")
    sp.add_argument("--pool", help="model pool file (default: <output-dir>/models/pool.json)")
    sp.add_argument("--members", type=_int_list,
                    help="pool positions forming the ensemble (default: whole pool)")
    sp.add_argument("--individual", type=int, help="roll out only this pool member")
    sp.add_argument("--compare-oracle", action="store_true", help="append oracle columns o1..od")
    sp.add_argument("--per-member", action="store_true", help="also write member one-step outputs")
    sp.add_argument("--out", help="CSV path (default: <output-dir>/reports/rollout.csv)")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("report", parents=[common], help="print the analysis tables")
    sp.set_defaults(func=cmd_report)
    return p


def resolve_config(args, layout: Layout) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in cfgmod.field_names()}
    file = args.config
    if file is None and args.preset is None and layout.config.exists():
        file = layout.config
    return make_config(args.preset, file, overrides, args.paper_scale)


def _check_dataset(config: ExperimentConfig, meta: dict):
    want = {"system": config.system, "dt": config.dt, "memory_len": config.memory_len,
            "substeps": config.substeps, "M": config.M, "seed": config.data_seed}
    bad = {k: (meta.get(k), v) for k, v in want.items() if meta.get(k) != v}
    if bad:
        raise ConfigError(f"dataset does not match the config: {bad} (file, config)")


def cmd_generate(args, config: ExperimentConfig, layout: Layout) -> int:
    layout.ensure(layout.dataset_dir)
    sys_ = get_system(config.system)
    ds = build_dataset(sys_, cfgmod.box_for(config), config.M, config.dt,
                       config.memory_len, config.substeps, config.data_seed)
    save_dataset(ds, layout.dataset)
    cfgmod.save_config_file(config, layout.config)
    print(f"M {ds.M} dt {config.dt} n_M {ds.memory_len} d {ds.state_dim} "
          f"resampled {ds.meta['n_resampled']}")
    print(f"wrote {layout.dataset}")
    return EXIT_OK


def _pool_doc(config: ExperimentConfig, members: dict, arch, dataset_hash: str) -> dict:
    order = sorted(members)
    ens = Ensemble(arch, [members[i][1] for i in order], [members[i][0] for i in order],
                   dataset_hash, order, [members[i][2] for i in order])
    doc = ensemble_to_doc(ens)
    doc["pool_size"] = config.pool_size
    doc["config_hash"] = config.content_hash()
    return doc


def _write_json(path, doc):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def cmd_train(args, config: ExperimentConfig, layout: Layout) -> int:
    ds_path = Path(args.dataset) if args.dataset else layout.dataset
    ds = load_dataset(ds_path)
    _check_dataset(config, ds.meta)
    arch = config.architecture()
    base = config.train_config()
    dataset_hash = ds.content_hash()
    layout.ensure(layout.models_dir)

    members = {}
    if args.resume and layout.pool.exists():
        prev = load_model(layout.pool)
        if prev.provenance != dataset_hash or prev.arch != arch:
            raise ConfigError("existing pool was trained on a different dataset or architecture")
        for k, i in enumerate(prev.indices):
            hist = prev.loss_histories[k] if prev.loss_histories else []
            members[i] = (prev.configs[k], prev.members[k], hist)
        print(f"resuming: {len(members)} of {config.pool_size} members present")
    todo = [i for i in range(config.pool_size) if i not in members]

    def on_done(i, cfg, res):
        members[i] = (cfg, res.params, res.loss_history)
        _write_json(layout.pool, _pool_doc(config, members, arch, dataset_hash))
        print(f"model {i + 1}/{config.pool_size} done loss {res.loss_history[-1]:.6e}", flush=True)

    jobs = args.jobs or default_jobs()
    try:
        train_members(arch, ds, base, todo, jobs=jobs, max_retries=args.max_retries,
                      on_done=on_done, log_every=args.log_every, n_total=config.pool_size)
    except EnsembleTrainingError as exc:
        print(f"error: {exc}; failed member indices: {exc.failed_indices}", file=sys.stderr)
        return EXIT_DIVERGED
    if not todo and members:
        _write_json(layout.pool, _pool_doc(config, members, arch, dataset_hash))
    print(f"wrote {layout.pool} ({len(members)} members)")
    return EXIT_OK


def _component_names(config):
    return [f"x{j + 1}" for j in range(config.architecture().state_dim)]


def cmd_analyze(args, config: ExperimentConfig, layout: Layout) -> int:
    pool_path = Path(args.pool) if args.pool else layout.pool
    pool = load_model(pool_path)
    if pool.arch != config.architecture():
        raise ConfigError(f"pool architecture {pool.arch} differs from the config")
    layout.ensure(layout.reports_dir)
    window, nxt = cfgmod.eval_window(config)
    rng = np.random.default_rng(config.bootstrap_seed)
    K_list = sorted(set(config.K_list) | {1})
    rep = variance_scaling_report(pool, K_list, window, nxt, config.n_ensembles, rng)
    names = _component_names(config)
    write_report_csv(layout.reports_dir / "lte_stats.csv", rep, names)

    K_max = max(K_list)
    errs = rep.errors[K_max]
    st = rep.rows[K_max]
    gof = {}
    for c, name in enumerate(names):
        gof[name] = chi2_gof_gaussian(errs[:, c], st.bias[c], st.variance[c], config.alpha)
        write_histogram_csv(layout.reports_dir / f"histogram_K{K_max}_{name}.csv",
                            errs[:, c], st.bias[c], st.variance[c], args.hist_bins)
    write_gof_json(layout.reports_dir / "gof.json", gof, K_max)
    with open(layout.reports_dir / f"errors_K{K_max}.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        for row in errs:
            wr.writerow([repr(float(v)) for v in row])
    prov = {
        "config_hash": config.content_hash(),
        "pool_file": str(pool_path),
        "pool_sha256": file_sha256(pool_path),
        "dataset_hash": pool.provenance,
        "eval_point": list(config.eval_point),
        "exact_next": [float(v) for v in nxt],
    }
    (layout.reports_dir / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")

    for K in K_list:
        ratio = rep.variance_ratio(K)
        print(f"K {K:4d} bias " + " ".join(f"{b:+.4e}" for b in rep.rows[K].bias)
              + " var " + " ".join(f"{v:.4e}" for v in rep.rows[K].variance)
              + " var/var1 " + " ".join(f"{r:.4f}" for r in ratio))
    for name, res in gof.items():
        print(f"gof K={K_max} {name}: stat {res.statistic:.3f} dof {res.dof} "
              f"p {res.p_value:.4f} {'reject' if res.reject else 'fail to reject'}")
    print(f"wrote reports to {layout.reports_dir}")
    return EXIT_OK


def cmd_predict(args, config: ExperimentConfig, layout: Layout) -> int:
    pool_path = Path(args.pool) if args.pool else layout.pool
    pool = load_model(pool_path)
    if pool.arch != config.architecture():
        raise ConfigError(f"pool architecture {pool.arch} differs from the config")
    obs = cfgmod.exact_trajectory(config, config.horizon)
    n_m = config.memory_len
    window = obs[n_m::-1]
    if args.individual is not None:
        if not 0 <= args.individual < pool.K:
            raise ConfigError(f"--individual must be in [0, {pool.K})")
        res = rollout_individual(pool.arch, pool.members[args.individual], window, config.horizon)
    else:
        ens = pool.subset(args.members) if args.members else pool
        res = rollout(ens, window, config.horizon, keep_members=args.per_member)
    layout.ensure(layout.reports_dir)
    out = Path(args.out) if args.out else layout.reports_dir / "rollout.csv"
    extra = {"o": obs} if args.compare_oracle else None
    write_rollout_csv(out, res, config.dt, extra)
    if args.per_member and args.individual is None:
        write_member_csv(out.with_name(out.stem + "_members.csv"), res, config.dt)
    err = np.sqrt(np.sum((res.states - obs) ** 2, axis=1))
    print(f"horizon {config.horizon} final L2 error vs oracle {err[-1]:.4e}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args, config: ExperimentConfig, layout: Layout) -> int:
    path = layout.reports_dir / "lte_stats.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    var1 = {r["component"]: float(r["variance"]) for r in rows if r["K"] == "1"}
    print(f"{'K':>5} {'comp':>5} {'bias':>12} {'variance':>12} {'mse':>12} {'K*var/var1':>11}")
    for r in rows:
        K = int(r["K"])
        ratio = K * float(r["variance"]) / var1[r["component"]]
        print(f"{K:5d} {r['component']:>5} {float(r['bias']):12.4e} {float(r['variance']):12.4e} "
              f"{float(r['mse']):12.4e} {ratio:11.3f}")
    gof_path = layout.reports_dir / "gof.json"
    if gof_path.exists():
        for g in json.loads(gof_path.read_text()):
            print(f"gof K={g['K']} {g['component']}: stat {g['statistic']:.3f} dof {g['dof']} "
                  f"p {g['p_value']:.4f} reject={g['reject']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    layout = Layout(args.output_dir)
    try:
        config = resolve_config(args, layout)
        return args.func(args, config, layout)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, RolloutDivergedError, IntegrationError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ModelFileError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
