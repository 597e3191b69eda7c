"""Command-line entry point: ``cauirl {make-lt,train,c2g,sweep,bayes-check}``.

Exit codes: 0 success, 2 input/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiment
from .config import RunConfig, from_dict, load_config, set_dotted
from .data import GaussianTask, load_npz, make_long_tailed, save_npz
from .errors import InputError, NumericError, ParameterError
from .metrics import c2g, spearman, write_csv
from .model.checkpoint import load_checkpoint
from .model.network import TrainConfig, extract_features
from .theory import run_bayes_consistency_check
from .training import PipelineConfig

log = logging.getLogger("cauirl")

SWEEP_PARAMS = {
    "lambda": "universum.lam",
    "delta": "universum.delta",
    "defer_epochs": "universum.defer_epochs",
    "imbalance_rate": "dataset.imbalance_rate",
}


def _overrides(args) -> dict:
    return {
        "out_dir": args.out,
        "method": args.method,
        "universum.lam": args.lam,
        "universum.delta": args.delta,
        "universum.defer_epochs": args.defer_epochs,
        "dataset.imbalance_rate": args.imbalance,
        "train.epochs": args.epochs,
        "rebalance_epochs": args.rebalance_epochs,
        "seeds": [args.seed] if args.seed is not None else None,
    }


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def cmd_make_lt(args) -> int:
    cfg = _config(args)
    balanced, test = experiment.load_balanced(cfg)
    profile = experiment.lt_profile(cfg, balanced)
    lt = make_long_tailed(balanced, profile, cfg.dataset.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "class_counts": lt.class_counts.tolist(),
        "seed": cfg.dataset.seed,
        "profile": profile.to_dict(),
        "config": cfg.to_dict(),
    }
    save_npz(out / "lt_train.npz", lt, manifest)
    save_npz(out / "test.npz", test, {"config": cfg.to_dict()})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(json.dumps({"class_counts": manifest["class_counts"], "out": str(out)}))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data = experiment.load_run_data(cfg)
    reports = []
    for seed in cfg.seeds:
        run_dir = Path(cfg.out_dir) / f"seed_{seed}"
        rep = experiment.run_training(cfg, seed, run_dir, data)
        rep.pop("_model", None)
        log.info("seed %d: top1 %.4f groups %s", seed, rep["top1"], np.round(rep["group_accuracy"], 3).tolist())
        reports.append(rep)
    summary = {**experiment.summarize(reports), "config": cfg.to_dict()}
    Path(cfg.out_dir, "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps({k: summary[k] for k in ("top1_mean", "top1_stderr", "group_accuracy_mean")}))
    return 0


def cmd_c2g(args) -> int:
    cfg = _config(args)
    model, header = load_checkpoint(args.checkpoint)
    if args.dataset_a and args.dataset_b:
        a, b = load_npz(args.dataset_a), load_npz(args.dataset_b)
    else:
        a, b, _ = experiment.load_run_data(cfg)
    rep = c2g(extract_features(model, a), a.labels, extract_features(model, b), b.labels,
              num_classes=max(a.num_classes, b.num_classes))
    rho = spearman(np.arange(rep.per_class_gap.size), rep.per_class_gap) if rep.per_class_gap.size > 1 else float("nan")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = {"config": cfg.to_dict(), "seed": header.get("extra", {}).get("seed"),
            "checkpoint": str(args.checkpoint)}
    rep.write(out / "c2g.csv", out / "c2g.json", {**head, "spearman_class_index": rho})
    print(json.dumps({"mean_gap": rep.mean_gap, "spearman_class_index": rho}))
    return 0


def _parse_values(raw: str) -> list:
    vals = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        num = float(tok)
        vals.append(int(num) if num.is_integer() and "." not in tok else num)
    return vals


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.param not in SWEEP_PARAMS:
        raise ParameterError(f"cannot sweep {args.param!r}; choose from {sorted(SWEEP_PARAMS)}")
    values = _parse_values(args.values)
    if not values:
        raise ParameterError("sweep needs at least one value")
    unique = list(dict.fromkeys(values))
    if len(unique) < len(values):
        warnings.warn(f"duplicate sweep values dropped: {values} -> {unique}")
        log.warning("duplicate sweep values dropped: %s -> %s", values, unique)
    rows, summary = sweep(cfg, args.param, unique)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {"config": cfg.to_dict(), "seeds": cfg.seeds, "parameter": args.param, "values": unique}
    write_csv(out / "sweep.csv", ["kind", "value", "seed", "top1", "top1_stderr", "group5", "group5_stderr"],
              rows + summary, header)
    print(json.dumps([dict(zip(["kind", "value", "seed", "top1", "top1_stderr"], r)) for r in summary]))
    return 0


def sweep(cfg: RunConfig, param: str, values: list):
    """Train every (value, seed); returns per-run rows and per-value summary rows."""
    key = SWEEP_PARAMS[param]
    base = cfg.to_dict()
    rows, summary = [], []
    shared = None if param == "imbalance_rate" else experiment.load_run_data(cfg)
    for value in values:
        d = json.loads(json.dumps(base))
        set_dotted(d, key, value)
        d["save_checkpoint"] = False
        run_cfg = from_dict(d)
        data = shared or experiment.load_run_data(run_cfg)
        reps = []
        for seed in run_cfg.seeds:
            rep = experiment.run_training(run_cfg, seed, None, data)
            reps.append(rep)
            rows.append(["run", value, seed, repr(rep["top1"]), "", repr(rep["group_accuracy"][-1]), ""])
        top_m, top_se = experiment.mean_stderr([r["top1"] for r in reps])
        g_m, g_se = experiment.mean_stderr([r["group_accuracy"][-1] for r in reps])
        summary.append(["summary", value, "", repr(top_m), repr(top_se), repr(g_m), repr(g_se)])
    return rows, summary


def cmd_bayes_check(args) -> int:
    cfg = _config(args)
    b = cfg.bayes
    task = GaussianTask(b.means, b.covariance, [0.5, 0.5], [0.5, 0.5])
    train_cfg = TrainConfig(epochs=b.epochs, batch_size=cfg.train.batch_size, learning_rate=b.learning_rate,
                            lr_milestones=tuple(b.lr_milestones), momentum=cfg.train.momentum,
                            weight_decay=0.0, seed=cfg.seeds[0])
    defer = cfg.universum.defer_epochs if cfg.universum.defer_epochs is not None else b.epochs
    pipe = PipelineConfig(method="cauirl", lam=cfg.universum.lam, delta=cfg.universum.delta, defer_epochs=defer)
    seeds = [cfg.seeds[0] + k for k in range(b.n_seeds)]
    result = run_bayes_consistency_check(task, tuple(b.imbalance), pipe, train_cfg, b.n_seeds,
                                         universum=b.universum, grid_resolution=b.grid_resolution, seeds=seeds)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"config": cfg.to_dict(), "seed": cfg.seeds[0], **result.to_dict()}
    (out / "bayes_check.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps({k: payload[k] for k in ("agreement_rate", "self_agreement_p5",
                                              "passes_self_agreement_bar", "beats_erm_every_seed")}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's seed list")
    common.add_argument("--out", help="output directory")
    common.add_argument("--method", help="erm | oversample | cauirl | cauirl_sc | cauirl_external | mixup_universum")
    common.add_argument("--lambda", dest="lam", type=float, help="mixing coefficient")
    common.add_argument("--delta", type=float, help="replacement strength")
    common.add_argument("--defer-epochs", type=int, help="replacement active in the last N epochs")
    common.add_argument("--imbalance", type=float, help="imbalance rate N_max/N_min")
    common.add_argument("--rebalance-epochs", type=int,
                        help="over-sample only in the last N epochs (natural stream before)")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cauirl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("make-lt", parents=[common], help="write a long-tailed dataset + manifest")
    sub.add_parser("train", parents=[common], help="train every configured seed")
    p = sub.add_parser("c2g", parents=[common], help="class gaps between two datasets under a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-a", help="npz dataset (default: configured LT train set)")
    p.add_argument("--dataset-b", help="npz dataset (default: configured test set)")
    p = sub.add_parser("sweep", parents=[common], help="grid over one parameter")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    sub.add_parser("bayes-check", parents=[common], help="two-Gaussian Bayes-consistency check")
    return parser


COMMANDS = {
    "make-lt": cmd_make_lt,
    "train": cmd_train,
    "c2g": cmd_c2g,
    "sweep": cmd_sweep,
    "bayes-check": cmd_bayes_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
