"""Command-line entry point: train / eval / sweep / prune-static / xlab / export.

All randomness flows from explicit --seed flags; identical invocations over
identical input files produce byte-identical report files.  Usage errors exit
with code 2, data/model errors with code 1 and a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import engine, modelio, reports, sweep as sweep_mod, training, xlab
from .archs import parse_arch
from .errors import SumskipError
from .predictors import HeadPredictorCfg


def _parse_data(text: str, part: str | None, split: str | None) -> modelio.Dataset:
    """Data grammar: `blobs:seed,n,dims,classes[,spread]` or `idx:images,labels`."""
    if text.startswith("blobs:"):
        fields = text[6:].split(",")
        if len(fields) not in (4, 5):
            raise SumskipError(f"blobs spec needs seed,n,dims,classes[,spread]: {text!r}")
        seed, n, dims, classes = (int(f) for f in fields[:4])
        spread = float(fields[4]) if len(fields) == 5 else 1.0
        ds = modelio.gen_blobs(seed, n, dims, classes, spread)
    elif text.startswith("idx:"):
        paths = text[4:].split(",")
        if len(paths) != 2:
            raise SumskipError(f"idx spec needs images,labels paths: {text!r}")
        ds = modelio.load_idx(paths[0], paths[1])
    else:
        raise SumskipError(f"unknown data spec {text!r}")
    if split:
        sizes = tuple(int(s) for s in split.split(","))
        if len(sizes) != 3:
            raise SumskipError(f"--split needs train,val,test sizes, got {split!r}")
        parts = dict(zip(("train", "val", "test"), modelio.split_dataset(ds, sizes)))
        if part not in parts:
            raise SumskipError("--split requires --part train|val|test")
        return parts[part]
    return ds


def _model_paths(model_dir: str) -> tuple[str, str]:
    return os.path.join(model_dir, "manifest.json"), os.path.join(model_dir, "weights.bin")


def _load_model(model_dir: str) -> modelio.Model:
    manifest, blob = _model_paths(model_dir)
    return modelio.load_model(manifest, blob)


def _save_model(model: modelio.Model, model_dir: str) -> None:
    os.makedirs(model_dir, exist_ok=True)
    manifest, blob = _model_paths(model_dir)
    modelio.save_model(model, manifest, blob)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="blobs:seed,n,dims,classes[,spread] or idx:images,labels")
    p.add_argument("--split", help="train,val,test sizes for a contiguous split")
    p.add_argument("--part", choices=("train", "val", "test"), help="which split part to use")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sumskip",
                                     description="NN inference with early termination of partial sums")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a model and save it")
    p.add_argument("--arch", required=True, help="mlp:IN-H-OUT or cnn:CxHxW:tokens")
    _add_data_args(p)
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")

    p = sub.add_parser("eval", help="evaluate a model with a pruning config")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--prune-config", help="JSON pruning config (omit for the plain baseline)")
    p.add_argument("--shadow-oracle", action="store_true",
                   help="also compute pruned sums to count mispredictions")
    p.add_argument("--report", required=True, help="per-layer CSV output")
    p.add_argument("--svg", help="fidelity vs normalized FLOPs scatter")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("sweep", help="random-search predicate parameters on a validation set")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--space", help="JSON search space (omit for the default per-layer space)")
    p.add_argument("--kind", choices=("threshold", "statstest"), default="statstest",
                   help="predicate family for the default space")
    p.add_argument("--k", type=int, default=32, help="check position for the default space")
    p.add_argument("--trials", type=int, default=300)
    p.add_argument("--slices", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", required=True, help="trial CSV output")
    p.add_argument("--test-data", help="optional test-set spec for confirmation")
    p.add_argument("--test-split", help="train,val,test sizes for the test data spec")
    p.add_argument("--test-part", choices=("train", "val", "test"))
    p.add_argument("--confirm-report", help="CSV of test-set confirmations")
    p.add_argument("--svg", help="test-set scatter output")

    p = sub.add_parser("prune-static", help="iterative magnitude pruning with fine-tuning")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--finetune-epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("xlab", help="exchangeability laboratory")
    p.add_argument("mode", choices=("ensemble", "equivariance", "symmetry"))
    p.add_argument("--arch", required=True)
    _add_data_args(p)
    p.add_argument("--n-seeds", type=int, default=100)
    p.add_argument("--n-perms", type=int, default=20)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", required=True)

    p = sub.add_parser("export", help="per-sample predictions CSV (and optional scatter)")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--prune-config")
    p.add_argument("--out", required=True, help="per-sample CSV: index,label,pred,flops")
    p.add_argument("--svg")
    p.add_argument("--threads", type=int, default=1)
    return parser


def _cmd_train(args) -> int:
    ds = _parse_data(args.data, args.part, args.split)
    arch = parse_arch(args.arch)
    cfg = training.TrainCfg(seed=args.seed, lr=args.lr, batch_size=args.batch_size,
                            epochs=args.epochs, weight_decay=args.weight_decay)
    model = training.init_model(arch, cfg.seed, precision=args.precision)
    model = training.train(model, ds, cfg)
    _save_model(model, args.out)
    report = engine.evaluate(model, ds)
    print(f"trained {args.arch}: train fidelity {report.fidelity:.4f}, "
          f"flops/sample {report.total_flops // len(ds)}")
    return 0


def _cmd_eval(args) -> int:
    model = _load_model(args.model)
    ds = _parse_data(args.data, args.part, args.split)
    cfg = engine.load_prune_config(args.prune_config) if args.prune_config \
        else engine.PruneConfig.none()
    report = engine.evaluate(model, ds, cfg, shadow_oracle=args.shadow_oracle,
                             threads=args.threads)
    reports.run_report_csv(report, cfg, args.report)
    if args.svg:
        base = engine.evaluate(model, ds) if cfg.layers or cfg.head.kind != "none" else report
        reports.scatter_svg([(report.normalized_flops, report.fidelity, "config")],
                            args.svg, baseline_fidelity=base.fidelity)
    print(f"fidelity {report.fidelity:.4f}, normalized FLOPs {report.normalized_flops:.4f}, "
          f"prunes {report.ledger.prunes}, mispredictions {report.ledger.mispredictions}")
    return 0


def _cmd_sweep(args) -> int:
    model = _load_model(args.model)
    valset = _parse_data(args.data, args.part, args.split)
    space = sweep_mod.load_space(args.space) if args.space \
        else sweep_mod.default_space(model, args.kind, k=args.k)
    results = sweep_mod.random_search(space, args.trials, model, valset,
                                      seed=args.seed, threads=args.threads)
    slices = sweep_mod.pareto_slices(results, args.slices)
    reports.sweep_csv(results, slices, args.report)
    n_front = sum(len(s.members) for s in slices)
    print(f"{len(results)} trials, {n_front} on the first {len(slices)} Pareto slices")
    if args.test_data:
        testset = _parse_data(args.test_data, args.test_part, args.test_split)
        selected = [m for s in slices for m in s.members]
        rows = sweep_mod.confirm_on_test(selected, model, testset, threads=args.threads)
        if args.confirm_report:
            reports.confirm_csv(rows, args.confirm_report)
        if args.svg:
            base = engine.evaluate(model, testset)
            pts = [(r.test_normalized_flops, r.test_fidelity, f"trial {r.trial.index}")
                   for r in rows]
            reports.scatter_svg(pts, args.svg, baseline_fidelity=base.fidelity)
        best = min(rows, key=lambda r: r.test_normalized_flops)
        print(f"best test point: fidelity {best.test_fidelity:.4f} at "
              f"normalized FLOPs {best.test_normalized_flops:.4f}")
    return 0


def _cmd_prune_static(args) -> int:
    model = _load_model(args.model)
    ds = _parse_data(args.data, args.part, args.split)
    cfg = training.TrainCfg(seed=args.seed, lr=args.lr, batch_size=args.batch_size,
                            epochs=args.finetune_epochs)
    mask = None
    for it in range(args.iters):
        model, mask = training.magnitude_prune_step(model, args.fraction)
        model = training.train(model, ds, replace(cfg, seed=args.seed + it), mask=mask)
    _save_model(model, args.out)
    print(f"{args.iters} pruning iterations: conv weight density {mask.density():.4f}")
    return 0


def _cmd_xlab(args) -> int:
    arch = parse_arch(args.arch)
    ds = _parse_data(args.data, args.part, args.split)
    cfg = training.TrainCfg(seed=args.seed, lr=args.lr, batch_size=args.batch_size,
                            epochs=args.epochs)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 4])))
    if args.mode == "ensemble":
        models = xlab.train_ensemble(arch, ds, args.n_seeds, cfg, threads=args.threads)
        first_dense = next(s for s in models[0].layers if s.kind in ("dense", "conv2d"))
        probe = ds.inputs[0]
        relu_block = first_dense.name
        values = xlab.collect_observable(
            models, xlab.activation_observable(relu_block, probe))
        rep = xlab.identical_distribution_report(values, seed=args.seed)
        reports.lab_csv(rep.d_stats, rep.pvalues, rep.rejection_rate, args.report)
        print(f"ensemble of {args.n_seeds}: activation rejection rate "
              f"{rep.rejection_rate:.4f} at the 5% level")
    elif args.mode == "equivariance":
        model = training.init_model(arch, args.seed)
        group = _default_group(model)
        X = ds.stacked(model.dtype)[: args.batch_size]
        y = np.asarray(ds.labels[: args.batch_size])
        worst = 0.0
        rows = []
        for i in range(args.n_perms):
            perm = rng.permutation(group.size)
            res = xlab.equivariance_check(model, group, (X, y), perm, gamma=0.05)
            rows.append((i, res.zeta_deviation, res.other_deviation))
            worst = max(worst, res.zeta_deviation)
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("perm,zeta_deviation,other_deviation\n")
            for i, zd, od in rows:
                fh.write(f"{i},{zd:.3e},{od:.3e}\n")
        print(f"max equivariance deviation over {args.n_perms} permutations: {worst:.3e}")
    else:
        model = training.init_model(arch, args.seed)
        group = _default_group(model)
        probes = [t for t in ds.inputs[:20]]
        worst = 0.0
        rows = []
        for i in range(args.n_perms):
            perm = rng.permutation(group.size)
            dev = xlab.symmetry_check(model, group, perm, probes)
            rows.append((i, dev))
            worst = max(worst, dev)
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("perm,max_deviation\n")
            for i, dev in rows:
                fh.write(f"{i},{dev:.3e}\n")
        print(f"max symmetry deviation over {args.n_perms} permutations: {worst:.3e}")
    return 0


def _default_group(model: modelio.Model) -> xlab.GroupSpec:
    """The hidden group between the first two parameterized layers."""
    parameterized = [s for s in model.layers if s.kind in ("dense", "conv2d", "prediction_head")]
    if len(parameterized) < 2:
        raise SumskipError("architecture has no stacked parameterized layers to group")
    producer, consumer = parameterized[0], parameterized[1]
    bn = None
    seen = False
    for s in model.layers:
        if s.name == producer.name:
            seen = True
        elif seen and s.kind == "batchnorm":
            bn = s.name
            break
        elif s.name == consumer.name:
            break
    if producer.kind == "conv2d" and consumer.kind == "conv2d":
        return xlab.conv_channel_group(model, producer.name, consumer.name, bn=bn)
    if producer.kind == "conv2d":
        return xlab.head_input_group(model, producer.name, consumer.name, bn=bn)
    return xlab.mlp_hidden_group(model, producer.name, consumer.name, bn=bn)


def _cmd_export(args) -> int:
    model = _load_model(args.model)
    ds = _parse_data(args.data, args.part, args.split)
    cfg = engine.load_prune_config(args.prune_config) if args.prune_config \
        else engine.PruneConfig.none()
    report = engine.evaluate(model, ds, cfg, threads=args.threads)
    modelio.export_predictions_csv(args.out, report.labels, report.predictions,
                                   report.sample_flops)
    if args.svg:
        base = engine.evaluate(model, ds) if cfg.layers or cfg.head.kind != "none" else report
        reports.scatter_svg([(report.normalized_flops, report.fidelity, "config")],
                            args.svg, baseline_fidelity=base.fidelity)
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "prune-static": _cmd_prune_static,
    "xlab": _cmd_xlab,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except SumskipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
