"""Command-line entry points for building, merging, and evaluating networks."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .builder import build_redunet
from .classifier import evaluate, fit_subspaces
from .errors import RedunetError
from .experiments import (
    ExperimentConfig,
    load_dataset,
    run_class_il,
    run_equivalence_check,
    tune_hyperparameters,
)
from .merge import TaskBatch, merge_new_task
from .serialize import load_model, save_model


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=["mnist", "cifar10", "synthetic"], default="synthetic")
    p.add_argument("--data-dir", help="directory with the dataset's binary files")
    p.add_argument("--subsample-per-class", type=int, default=None,
                   help="seeded per-class cap on training samples")
    p.add_argument("--test-cap", type=int, default=None,
                   help="seeded per-class cap on test samples")
    p.add_argument("--seed", type=int, default=0,
                   help="master seed (kernel bank, subsampling, synthetic data)")
    p.add_argument("--cifar-downscale", type=int, default=1,
                   help="block-mean downscale factor for CIFAR images")
    p.add_argument("--synth-dim", type=int, default=20)
    p.add_argument("--synth-classes", type=int, default=4)
    p.add_argument("--synth-subrank", type=int, default=2)
    p.add_argument("--synth-per-class", type=int, default=50)
    p.add_argument("--synth-test-per-class", type=int, default=50)
    p.add_argument("--synth-noise", type=float, default=0.05)


def _add_hyper_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--depth", type=int, default=200)
    p.add_argument("--eta0", type=float, default=0.5)
    p.add_argument("--eta-decay", type=float, default=0.933)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--subspace-rank", type=int, default=28)
    p.add_argument("--classes-per-task", type=int, default=2)
    p.add_argument("--class-order", help="comma-separated class ids")


def _config_from_args(args, outdir: str = "runs/latest") -> ExperimentConfig:
    class_order = None
    if getattr(args, "class_order", None):
        class_order = [int(v) for v in args.class_order.split(",")]
    return ExperimentConfig(
        dataset=args.dataset,
        data_dir=args.data_dir,
        outdir=outdir,
        classes_per_task=args.classes_per_task,
        class_order=class_order,
        epsilon=args.epsilon,
        depth=args.depth,
        eta0=args.eta0,
        eta_decay=args.eta_decay,
        lam=args.lam,
        subspace_rank=args.subspace_rank,
        train_cap=args.subsample_per_class,
        test_cap=args.test_cap,
        kernel_seed=args.seed,
        subsample_seed=args.seed + 1,
        data_seed=args.seed + 2,
        cifar_downscale=args.cifar_downscale,
        synth_dim=args.synth_dim,
        synth_classes=args.synth_classes,
        synth_subrank=args.synth_subrank,
        synth_per_class=args.synth_per_class,
        synth_test_per_class=args.synth_test_per_class,
        synth_noise=args.synth_noise,
    )


def _select_classes(X, labels, spec: str | None):
    if spec is None:
        return X, labels
    wanted = [int(v) for v in spec.split(",")]
    idx = np.array([i for i, v in enumerate(labels.labels) if v in set(wanted)], dtype=np.intp)
    return X[:, idx], labels.subset(idx, registry=wanted)


def _reuse_recorded_lift(cfg, model) -> None:
    # data fed to an existing model must go through the exact lift it was
    # built with; the kernel seed and downscale factor ride in the container
    if "kernel_seed" in model.meta:
        cfg.kernel_seed = int(model.meta["kernel_seed"])
    if "cifar_downscale" in model.meta:
        cfg.cifar_downscale = int(model.meta["cifar_downscale"])


def cmd_build(args) -> int:
    cfg = _config_from_args(args)
    Xtr, ltr, _, _, data_meta = load_dataset(cfg)
    Xtr, ltr = _select_classes(Xtr, ltr, args.classes)
    model, trace = build_redunet(Xtr, ltr, cfg.build_config())
    model.meta.update(data_meta)
    save_model(model, args.out)
    print(f"built {model.depth}-layer model over classes {model.registry} "
          f"(dR {trace[0]:.4f} -> {trace[-1]:.4f}), saved to {args.out}")
    return 0


def cmd_merge(args) -> int:
    model = load_model(args.model)
    cfg = _config_from_args(args)
    _reuse_recorded_lift(cfg, model)
    Xtr, ltr, _, _, _ = load_dataset(cfg)
    Xtr, ltr = _select_classes(Xtr, ltr, args.classes)
    model = merge_new_task(model, TaskBatch(X=Xtr, labels=ltr))
    save_model(model, args.out)
    print(f"merged classes {ltr.registry}; model now covers {model.registry}, "
          f"saved to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    cfg = _config_from_args(args)
    _reuse_recorded_lift(cfg, model)
    _, _, Xte, lte, _ = load_dataset(cfg)
    seen = set(model.registry)
    idx = np.array([i for i, v in enumerate(lte.labels) if v in seen], dtype=np.intp)
    subspaces = fit_subspaces(model, min(args.subspace_rank, model.dim))
    acc = evaluate(model, subspaces, Xte[:, idx], lte.subset(idx))
    print(f"accuracy over {idx.size} test samples from {model.k} classes: {acc:.4f}")
    return 0


def cmd_run_il(args) -> int:
    cfg = _config_from_args(args, outdir=args.outdir)
    table, model = run_class_il(cfg)
    for s in table.sessions:
        print(f"session {s.session_index}: classes={s.classes_seen} "
              f"accuracy={s.accuracy:.4f} dR={s.delta_r_final:.4f} "
              f"wall={s.wall_ms:.0f}ms")
    print(f"decay: {table.decay:.4f}")
    print(f"outputs in {cfg.outdir}")
    return 0


def cmd_check_equivalence(args) -> int:
    cfg = _config_from_args(args)
    report = run_equivalence_check(cfg, tolerance=args.tolerance)
    print(report.to_text())
    return 0 if report.passed else 1


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    print(f"dim={model.dim} depth={model.depth} epsilon={model.epsilon} "
          f"lambda={model.lam}")
    print(f"classes: {model.registry}")
    print(f"counts:  {model.counts.tolist()}")
    trace = model.delta_r_trace()
    if trace:
        print("dR trace: " + " ".join(f"{v:.4f}" for v in trace))
    if args.spectra:
        for i, layer in enumerate(model.layers):
            w = np.linalg.eigvalsh(layer.E)
            print(f"layer {i:3d}: eta={layer.eta:.6f} alpha={layer.alpha:.4f} "
                  f"spec(E)=[{w[0]:.4e}, {w[-1]:.4e}]")
    return 0


def cmd_tune(args) -> int:
    cfg = _config_from_args(args)
    Xtr, ltr, _, _, _ = load_dataset(cfg)
    results = tune_hyperparameters(
        Xtr,
        ltr,
        depth=args.depth,
        eps_grid=[float(v) for v in args.eps_grid.split(",")],
        eta0_grid=[float(v) for v in args.eta0_grid.split(",")],
        lam_grid=[float(v) for v in args.lam_grid.split(",")],
        eta_decay=args.eta_decay,
    )
    for r in results:
        print(f"epsilon={r['epsilon']:<6g} eta0={r['eta0']:<6g} "
              f"lambda={r['lam']:<6g} agreement={r['agreement']:.4f}")
    best = results[0]
    print(f"best: epsilon={best['epsilon']} eta0={best['eta0']} lambda={best['lam']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redunet",
        description="Construct, extend, and evaluate rate-reduction networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="construct a network from labeled data")
    _add_data_args(p); _add_hyper_args(p)
    p.add_argument("--classes", help="comma-separated subset of classes to use")
    p.add_argument("--out", required=True, help="output model path")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("merge", help="fold a new task into an existing model")
    _add_data_args(p); _add_hyper_args(p)
    p.add_argument("--model", required=True, help="existing model path")
    p.add_argument("--classes", required=True, help="comma-separated new classes")
    p.add_argument("--out", required=True, help="output model path")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="nearest-subspace accuracy on test data")
    _add_data_args(p); _add_hyper_args(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-il", help="full class-incremental protocol")
    _add_data_args(p); _add_hyper_args(p)
    p.add_argument("--outdir", default="runs/latest")
    p.set_defaults(func=cmd_run_il)

    p = sub.add_parser("check-equivalence",
                       help="compare incremental merging against joint construction")
    _add_data_args(p); _add_hyper_args(p)
    p.add_argument("--tolerance", type=float, default=1e-7)
    p.set_defaults(func=cmd_check_equivalence)

    p = sub.add_parser("inspect", help="print model summary, spectra and dR trace")
    p.add_argument("--model", required=True)
    p.add_argument("--no-spectra", dest="spectra", action="store_false")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("tune", help="grid-search epsilon/eta0/lambda on training data")
    _add_data_args(p); _add_hyper_args(p)
    p.add_argument("--eps-grid", default="0.1,0.5,1.0")
    p.add_argument("--eta0-grid", default="0.1,0.5")
    p.add_argument("--lam-grid", default="1.0,10.0")
    p.set_defaults(func=cmd_tune)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RedunetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
