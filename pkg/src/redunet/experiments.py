"""Class-incremental experiment harness: build, merge chain, per-session metrics.

The protocol: construct a network on the first task, fold each later task in
with the incremental merge, and after every session evaluate a nearest
subspace classifier on test data from all classes seen so far.  Runs are
deterministic given the configured seeds; outputs (CSV metrics, JSON
manifest, serialized model) are written atomically.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datasets
from .builder import build_redunet
from .classifier import evaluate, fit_subspaces
from .errors import InvalidInputError, RedunetError
from .merge import merge_new_task
from .model import BuildConfig, ReduNetModel
from .rates import LabelAssignment
from .serialize import _atomic_write, save_model

__all__ = [
    "ExperimentConfig",
    "SessionMetrics",
    "MetricsTable",
    "EquivalenceReport",
    "run_class_il",
    "run_equivalence_check",
    "tune_hyperparameters",
]

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run; echoed into every output."""

    dataset: str = "synthetic"
    data_dir: str | None = None
    outdir: str = "runs/latest"
    classes_per_task: int = 2
    class_order: list | None = None
    epsilon: float = 0.5
    depth: int = 200
    eta0: float = 0.5
    eta_decay: float = 0.933
    lam: float = 1.0
    subspace_rank: int = 28
    train_cap: int | None = None
    test_cap: int | None = None
    kernel_seed: int = 0
    subsample_seed: int = 1
    data_seed: int = 2
    cifar_downscale: int = 1
    synth_dim: int = 20
    synth_classes: int = 4
    synth_subrank: int = 2
    synth_per_class: int = 50
    synth_test_per_class: int = 50
    synth_noise: float = 0.05

    def __post_init__(self):
        if self.dataset not in ("mnist", "cifar10", "synthetic"):
            raise InvalidInputError(f"unknown dataset {self.dataset!r}")
        for name in ("epsilon", "eta0", "eta_decay", "lam"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.depth < 1 or self.subspace_rank < 1 or self.classes_per_task < 1:
            raise InvalidInputError("depth, subspace_rank and classes_per_task must be >= 1")

    def build_config(self) -> BuildConfig:
        return BuildConfig(
            epsilon=self.epsilon,
            depth=self.depth,
            eta0=self.eta0,
            eta_decay=self.eta_decay,
            lam=self.lam,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SessionMetrics:
    session_index: int
    classes_seen: int
    accuracy: float
    delta_r_final: float
    wall_ms: float


@dataclass
class MetricsTable:
    sessions: list[SessionMetrics] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [s.accuracy for s in self.sessions]

    @property
    def decay(self) -> float:
        return self.sessions[0].accuracy - self.sessions[-1].accuracy

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("session_index,classes_seen,accuracy,delta_r_final,wall_ms\n")
        for s in self.sessions:
            buf.write(
                f"{s.session_index},{s.classes_seen},{s.accuracy!r},"
                f"{s.delta_r_final!r},{s.wall_ms!r}\n"
            )
        return buf.getvalue()


def _load_mnist(cfg: ExperimentConfig):
    root = Path(cfg.data_dir or "data/mnist")
    train = datasets.load_idx(
        root / MNIST_FILES["train_images"], root / MNIST_FILES["train_labels"]
    )
    test = datasets.load_idx(
        root / MNIST_FILES["test_images"], root / MNIST_FILES["test_labels"]
    )
    Xtr, ltr = datasets.preprocess_mnist(train)
    Xte, lte = datasets.preprocess_mnist(test)
    return Xtr, ltr, Xte, lte, {"preprocess": "mnist/flatten-scale"}


def _load_cifar(cfg: ExperimentConfig):
    root = Path(cfg.data_dir or "data/cifar10")
    train = datasets.load_cifar_binary([root / f for f in CIFAR_TRAIN_FILES])
    test = datasets.load_cifar_binary([root / CIFAR_TEST_FILE])
    bank = datasets.KernelBank.generate(cfg.kernel_seed)
    Xtr, ltr, mean = datasets.preprocess_cifar(
        train, bank, downscale=cfg.cifar_downscale
    )
    Xte, lte, _ = datasets.preprocess_cifar(
        test, bank, train_mean=mean, downscale=cfg.cifar_downscale
    )
    meta = {
        "preprocess": "cifar10/lift",
        "kernel_seed": cfg.kernel_seed,
        "kernel_prng": datasets.KERNEL_PRNG,
        "cifar_downscale": cfg.cifar_downscale,
        "train_mean_image": mean,
    }
    return Xtr, ltr, Xte, lte, meta


def _load_synthetic(cfg: ExperimentConfig):
    per_class = cfg.synth_per_class + cfg.synth_test_per_class
    X, labels = datasets.synth_subspace_mixture(
        cfg.synth_dim,
        cfg.synth_classes,
        cfg.synth_subrank,
        per_class,
        cfg.synth_noise,
        cfg.data_seed,
    )
    train_idx, test_idx = [], []
    for idx in labels.indices_by_class:
        train_idx.extend(idx[: cfg.synth_per_class])
        test_idx.extend(idx[cfg.synth_per_class :])
    train_idx, test_idx = np.array(train_idx), np.array(test_idx)
    return (
        X[:, train_idx],
        labels.subset(train_idx, registry=labels.registry),
        X[:, test_idx],
        labels.subset(test_idx, registry=labels.registry),
        {"preprocess": "synthetic", "data_seed": cfg.data_seed},
    )


def load_dataset(cfg: ExperimentConfig):
    """Load and preprocess train/test splits, applying per-class caps."""
    loader = {
        "mnist": _load_mnist,
        "cifar10": _load_cifar,
        "synthetic": _load_synthetic,
    }[cfg.dataset]
    Xtr, ltr, Xte, lte, meta = loader(cfg)
    if cfg.train_cap is not None:
        Xtr, ltr = datasets.subsample_per_class(Xtr, ltr, cfg.train_cap, cfg.subsample_seed)
    if cfg.test_cap is not None:
        Xte, lte = datasets.subsample_per_class(Xte, lte, cfg.test_cap, cfg.subsample_seed + 1)
    return Xtr, ltr, Xte, lte, meta


def _test_subset(Xte, lte: LabelAssignment, seen: set):
    idx = np.array([i for i, v in enumerate(lte.labels) if v in seen], dtype=np.intp)
    if idx.size == 0:
        raise InvalidInputError("no test samples for the classes seen so far")
    return Xte[:, idx], lte.subset(idx)


def run_class_il(
    cfg: ExperimentConfig, clock=time.perf_counter, write_outputs: bool = True
) -> tuple[MetricsTable, ReduNetModel]:
    """Run the full incremental protocol; returns metrics and the final model.

    ``clock`` is injectable so tests can pin wall times and byte-compare the
    emitted CSV.
    """
    Xtr, ltr, Xte, lte, data_meta = load_dataset(cfg)
    split = datasets.split_tasks(Xtr, ltr, cfg.classes_per_task, cfg.class_order)
    del Xtr, ltr

    build_cfg = cfg.build_config()
    if cfg.subspace_rank > Xte.shape[0]:
        raise InvalidInputError(
            f"subspace_rank {cfg.subspace_rank} exceeds feature dimension {Xte.shape[0]}"
        )

    model: ReduNetModel | None = None
    table = MetricsTable()
    for s in range(len(split.tasks)):
        task, split.tasks[s] = split.tasks[s], None  # old tasks stay dropped
        task_classes = list(task.labels.registry)
        t0 = clock()
        try:
            if model is None:
                model, _ = build_redunet(task.X, task.labels, build_cfg)
            else:
                model = merge_new_task(model, task)
        except RedunetError as exc:
            raise type(exc)(
                f"session {s + 1} (task classes {task_classes}): {exc}"
            ) from exc
        del task
        subspaces = fit_subspaces(model, cfg.subspace_rank)
        X_seen, pi_seen = _test_subset(Xte, lte, set(model.registry))
        acc = evaluate(model, subspaces, X_seen, pi_seen)
        wall_ms = (clock() - t0) * 1000.0
        table.sessions.append(
            SessionMetrics(
                session_index=s + 1,
                classes_seen=model.k,
                accuracy=acc,
                delta_r_final=model.delta_r_trace()[-1],
                wall_ms=wall_ms,
            )
        )

    for key, value in data_meta.items():
        model.meta[key] = value
    model.meta["experiment_config"] = cfg.to_dict()

    if write_outputs:
        outdir = Path(cfg.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        _atomic_write(outdir / "metrics.csv", table.to_csv().encode())
        save_model(model, outdir / "model.rnet")
        manifest = {
            "config": cfg.to_dict(),
            "sessions": [asdict(s) for s in table.sessions],
            "decay": table.decay,
            "model_path": str(outdir / "model.rnet"),
        }
        _atomic_write(
            outdir / "manifest.json",
            json.dumps(manifest, indent=2, sort_keys=True).encode() + b"\n",
        )
    return table, model


@dataclass
class EquivalenceReport:
    """Per-layer discrepancies between incremental and joint construction."""

    layer_discrepancies: list[float]
    final_cov_discrepancy: float
    agreement: float
    tolerance: float
    accuracy_joint: float
    accuracy_incremental: float

    @property
    def max_discrepancy(self) -> float:
        return max(self.layer_discrepancies + [self.final_cov_discrepancy])

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.tolerance and self.agreement == 1.0

    def to_text(self) -> str:
        lines = []
        for i, disc in enumerate(self.layer_discrepancies):
            lines.append(f"layer {i:3d}: max |joint - incremental| = {disc:.3e}")
        lines.append(f"final covariances: max diff = {self.final_cov_discrepancy:.3e}")
        lines.append(
            f"classification agreement: {self.agreement:.4%} "
            f"(joint acc {self.accuracy_joint:.4f}, incremental acc {self.accuracy_incremental:.4f})"
        )
        lines.append(
            f"{'PASS' if self.passed else 'FAIL'}: max discrepancy "
            f"{self.max_discrepancy:.3e} vs tolerance {self.tolerance:.1e}, "
            f"agreement {self.agreement:.4%}"
        )
        return "\n".join(lines)


def compare_models(a: ReduNetModel, b: ReduNetModel) -> tuple[list[float], float]:
    """Max-abs parameter difference per layer, and over final covariances."""
    if a.depth != b.depth or a.registry != b.registry:
        raise InvalidInputError("models must share depth and registry to compare")
    per_layer = []
    for la, lb in zip(a.layers, b.layers):
        diff = float(np.abs(la.E - lb.E).max())
        for Ca, Cb in zip(la.C, lb.C):
            diff = max(diff, float(np.abs(Ca - Cb).max()))
        diff = max(diff, float(np.abs(la.gamma - lb.gamma).max()))
        diff = max(diff, float(np.abs(la.alphas - lb.alphas).max()))
        diff = max(diff, abs(la.alpha - lb.alpha), abs(la.eta - lb.eta))
        per_layer.append(diff)
    fdiff = max(
        float(np.abs(Sa - Sb).max())
        for Sa, Sb in zip(a.final_covariances, b.final_covariances)
    )
    return per_layer, fdiff


def run_equivalence_check(
    cfg: ExperimentConfig, tolerance: float = 1e-7
) -> EquivalenceReport:
    """Build jointly and incrementally from the same tasks and compare.

    Passes when every layer parameter agrees within ``tolerance`` max-abs and
    the two models classify every test sample identically.
    """
    Xtr, ltr, Xte, lte, _ = load_dataset(cfg)
    split = datasets.split_tasks(Xtr, ltr, cfg.classes_per_task, cfg.class_order)

    build_cfg = cfg.build_config()
    # align the joint registry with the task order so models compare slot by slot
    order = [c for task in split.tasks for c in task.labels.registry]
    joint, _ = build_redunet(Xtr, LabelAssignment(ltr.labels, registry=order), build_cfg)

    inc, _ = build_redunet(split.tasks[0].X, split.tasks[0].labels, build_cfg)
    for task in split.tasks[1:]:
        inc = merge_new_task(inc, task)

    per_layer, fdiff = compare_models(joint, inc)

    rank = min(cfg.subspace_rank, joint.dim)
    sub_j = fit_subspaces(joint, rank)
    sub_i = fit_subspaces(inc, rank)
    acc_j = evaluate(joint, sub_j, Xte, lte)
    acc_i = evaluate(inc, sub_i, Xte, lte)
    from .classifier import classify_batch
    from .forward import forward_batch

    preds_j = classify_batch(forward_batch(joint, Xte), sub_j)
    preds_i = classify_batch(forward_batch(inc, Xte), sub_i)
    agreement = float(np.mean([p == q for p, q in zip(preds_j, preds_i)]))

    return EquivalenceReport(
        layer_discrepancies=per_layer,
        final_cov_discrepancy=fdiff,
        agreement=agreement,
        tolerance=tolerance,
        accuracy_joint=acc_j,
        accuracy_incremental=acc_i,
    )


def tune_hyperparameters(
    X,
    labels: LabelAssignment,
    depth: int,
    eps_grid=(0.1, 0.5, 1.0),
    eta0_grid=(0.1, 0.5),
    lam_grid=(1.0, 10.0),
    eta_decay: float = 0.933,
) -> list[dict]:
    """Grid-search eps/eta0/lam by training-label agreement of the estimated
    memberships at the final layer (no validation split needed).

    Returns one record per combination, best agreement first.
    """
    from .forward import estimate_membership_batch, forward_batch

    results = []
    for eps in eps_grid:
        for eta0 in eta0_grid:
            for lam in lam_grid:
                cfg = BuildConfig(
                    epsilon=eps, depth=depth, eta0=eta0, eta_decay=eta_decay, lam=lam
                )
                model, _ = build_redunet(X, labels, cfg)
                Z = forward_batch(model, X)
                probs = estimate_membership_batch(Z, model.layers[-1], lam)
                pred = [model.registry[j] for j in probs.argmax(axis=0)]
                agreement = float(
                    np.mean([p == t for p, t in zip(pred, labels.labels)])
                )
                results.append(
                    {"epsilon": eps, "eta0": eta0, "lam": lam, "agreement": agreement}
                )
    results.sort(key=lambda r: -r["agreement"])
    return results
