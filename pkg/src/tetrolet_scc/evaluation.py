"""Recognition metrics, seeded cross-validation and the concept-dimension
sweep.

The headline accuracy is macro-averaged recall in percent; micro accuracy
(total correct / total evaluated) is reported alongside.  CSV artifacts are
byte-reproducible for a fixed (dataset, config, seed): per-image latency is
a wall-clock measurement, so it is carried in the report object, the JSON
artifact and the human-readable table, and is written into the CSV only on
request.
"""

from __future__ import annotations

import io
import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .coder import CoderConfig, learn_basis, project_test, spectral_embedding
from .datasets import FoldPlan, LabeledDataset, stratified_folds
from .recognizer import TrainingSet, build_training_set, classify
from .transform import TransformConfig, feature_vector

logger = logging.getLogger(__name__)

CSV_HEADER = "fold,k,accuracy_macro,accuracy_micro,mean_latency_ms"


@dataclass
class ConfusionMatrix:
    """P x P counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_ids: tuple[int, ...]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        p = len(self.class_ids)
        if self.counts.shape != (p, p):
            raise ValueError(
                f"counts shape {self.counts.shape} does not match "
                f"{p} class ids"
            )
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")

    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(
    predictions, truths, class_ids: tuple[int, ...] | None = None
) -> ConfusionMatrix:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ValueError(
            f"{predictions.shape[0]} predictions but {truths.shape[0]} truths"
        )
    if class_ids is None:
        class_ids = tuple(sorted(set(truths.tolist()) | set(predictions.tolist())))
    index = {cid: i for i, cid in enumerate(class_ids)}
    counts = np.zeros((len(class_ids), len(class_ids)), dtype=np.int64)
    for t, p in zip(truths.tolist(), predictions.tolist()):
        if t not in index or p not in index:
            raise ValueError(f"label {t if t not in index else p} outside class set")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts=counts, class_ids=tuple(class_ids))


@dataclass
class RecallPrecision:
    recalls: np.ndarray
    precisions: np.ndarray
    zero_recall_ids: tuple[int, ...]
    zero_precision_ids: tuple[int, ...]


def recall_precision(cm: ConfusionMatrix) -> RecallPrecision:
    """Per-class recall TP/(TP+FN) and precision TP/(TP+FP).

    Classes with an empty denominator report 0 and are flagged instead of
    aborting the evaluation.
    """
    tp = np.diag(cm.counts).astype(float)
    row = cm.counts.sum(axis=1).astype(float)
    col = cm.counts.sum(axis=0).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        recalls = np.where(row > 0, tp / row, 0.0)
        precisions = np.where(col > 0, tp / col, 0.0)
    zero_r = tuple(cm.class_ids[i] for i in np.flatnonzero(row == 0))
    zero_p = tuple(cm.class_ids[i] for i in np.flatnonzero(col == 0))
    return RecallPrecision(recalls, precisions, zero_r, zero_p)


def accuracy(cm: ConfusionMatrix) -> float:
    """Macro accuracy in percent: 100 times the mean of per-class recalls."""
    return float(100.0 * recall_precision(cm).recalls.mean())


def micro_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total()
    if total == 0:
        return 0.0
    return float(100.0 * np.diag(cm.counts).sum() / total)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the train/evaluate pipeline needs besides the data.

    With ``rho_relative`` (the default) the lasso parameter is resolved at
    training time as ``coder.rho`` times the largest basis correlation
    ``max |U^T x_i|`` over the training columns.  Laplacian eigenvectors
    have unit norm, so their entries -- and with them the useful range of
    the absolute lasso parameter -- shrink as training grows; a relative
    default keeps the code cardinality stable across corpus sizes.
    """

    transform: TransformConfig = TransformConfig()
    coder: CoderConfig = CoderConfig()
    rho_relative: bool = True

    def describe(self) -> dict:
        return {
            "levels": self.transform.levels,
            "covering_mode": self.transform.mode.kind,
            "lambda": self.transform.mode.lam,
            "shrinkage": self.transform.shrinkage.mode,
            "shrink_threshold": self.transform.shrinkage.threshold,
            "k": self.coder.k,
            "tau": self.coder.tau,
            "rho": self.coder.rho,
            "rho_relative": self.rho_relative,
            "graph_p": self.coder.graph_p,
            "seed": self.coder.seed,
        }


def fit_pipeline(dataset: LabeledDataset, config: PipelineConfig) -> TrainingSet:
    """Train the full model on a dataset: transform features, spectral
    embedding, ridge basis, per-class lasso dictionaries."""
    feats = np.stack(
        [feature_vector(img, config.transform) for img in dataset.images], axis=1
    )
    embedding = spectral_embedding(feats, config.coder)
    basis = learn_basis(feats, embedding, config.coder.tau)
    coder = config.coder
    if config.rho_relative:
        rho_abs = coder.rho * float(np.abs(basis.U.T @ feats).max())
        coder = replace(coder, rho=rho_abs)
        logger.info("resolved relative rho %.4g to absolute %.6g", config.coder.rho, rho_abs)
    per_class = {
        cid: feats[:, np.flatnonzero(dataset.labels == cid)]
        for cid in dataset.class_ids()
    }
    return build_training_set(
        per_class,
        basis,
        coder,
        class_names=dict(dataset.class_names),
        transform=config.transform,
    )


def evaluate_model(
    training: TrainingSet,
    dataset: LabeledDataset,
    class_ids: tuple[int, ...],
) -> tuple[ConfusionMatrix, float]:
    """Classify every image; returns the confusion matrix and the mean
    per-image wall-clock latency in milliseconds."""
    predictions = np.empty(len(dataset), dtype=np.int64)
    start = time.perf_counter()
    for i, img in enumerate(dataset.images):
        vec = feature_vector(img, training.transform)
        code = project_test(vec, training.basis)
        predictions[i], _ = classify(code, training)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    cm = confusion_matrix(predictions, dataset.labels, class_ids)
    return cm, elapsed_ms / max(len(dataset), 1)


@dataclass
class FoldResult:
    fold: int
    cm: ConfusionMatrix
    macro: float
    micro: float
    mean_latency_ms: float
    train_seconds: float


@dataclass
class EvalReport:
    dataset_note: str
    seed: int
    k: int
    config: dict
    folds: list[FoldResult]
    flagged_classes: tuple[int, ...] = ()

    @property
    def mean_macro(self) -> float:
        return float(np.mean([f.macro for f in self.folds]))

    @property
    def mean_micro(self) -> float:
        return float(np.mean([f.micro for f in self.folds]))

    @property
    def mean_latency_ms(self) -> float:
        return float(np.mean([f.mean_latency_ms for f in self.folds]))

    def to_csv(self, include_latency: bool = False) -> str:
        """Per-fold rows plus a mean row.  Latency cells stay empty unless
        requested: they are wall-clock measurements and would break the
        byte-reproducibility of the artifact."""
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for f in self.folds:
            lat = f"{f.mean_latency_ms:.3f}" if include_latency else ""
            buf.write(f"{f.fold},{self.k},{f.macro:.10f},{f.micro:.10f},{lat}\n")
        lat = f"{self.mean_latency_ms:.3f}" if include_latency else ""
        buf.write(f"mean,{self.k},{self.mean_macro:.10f},{self.mean_micro:.10f},{lat}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset_note,
            "seed": self.seed,
            "k": self.k,
            "config": self.config,
            "folds": [
                {
                    "fold": f.fold,
                    "accuracy_macro": f.macro,
                    "accuracy_micro": f.micro,
                    "mean_latency_ms": f.mean_latency_ms,
                    "train_seconds": f.train_seconds,
                    "confusion": f.cm.counts.tolist(),
                    "class_ids": list(f.cm.class_ids),
                }
                for f in self.folds
            ],
            "mean_accuracy_macro": self.mean_macro,
            "mean_accuracy_micro": self.mean_micro,
            "mean_latency_ms": self.mean_latency_ms,
            "flagged_classes": list(self.flagged_classes),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def human_table(self) -> str:
        lines = [
            f"dataset: {self.dataset_note}",
            f"seed={self.seed} k={self.k} folds={len(self.folds)}",
            "fold  macro%     micro%     latency_ms",
        ]
        for f in self.folds:
            lines.append(
                f"{f.fold:>4}  {f.macro:9.4f}  {f.micro:9.4f}  {f.mean_latency_ms:10.3f}"
            )
        lines.append(
            f"mean  {self.mean_macro:9.4f}  {self.mean_micro:9.4f}  "
            f"{self.mean_latency_ms:10.3f}"
        )
        if self.flagged_classes:
            lines.append(f"classes with zero-sample denominators: {self.flagged_classes}")
        return "\n".join(lines)


def cross_validate(
    dataset: LabeledDataset,
    config: PipelineConfig,
    fold_plan: FoldPlan | None = None,
    dataset_note: str = "",
) -> EvalReport:
    """Train and evaluate once per fold, deterministically for a fixed seed."""
    if fold_plan is None:
        fold_plan = stratified_folds(dataset.labels, seed=config.coder.seed)
    class_ids = tuple(dataset.class_ids())
    folds: list[FoldResult] = []
    flagged: set[int] = set()
    for f in range(fold_plan.fold_count):
        train_idx = fold_plan.train_indices(f)
        test_idx = fold_plan.test_indices(f)
        assert not np.intersect1d(train_idx, test_idx).size
        try:
            t0 = time.perf_counter()
            model = fit_pipeline(dataset.subset(train_idx), config)
            train_seconds = time.perf_counter() - t0
        except Exception as exc:
            raise RuntimeError(f"training failed on fold {f}: {exc}") from exc
        cm, latency = evaluate_model(model, dataset.subset(test_idx), class_ids)
        rp = recall_precision(cm)
        flagged.update(rp.zero_recall_ids)
        folds.append(
            FoldResult(
                fold=f,
                cm=cm,
                macro=accuracy(cm),
                micro=micro_accuracy(cm),
                mean_latency_ms=latency,
                train_seconds=train_seconds,
            )
        )
        logger.info(
            "fold %d: macro %.4f%% micro %.4f%% (%.1fs train)",
            f,
            folds[-1].macro,
            folds[-1].micro,
            train_seconds,
        )
    return EvalReport(
        dataset_note=dataset_note or f"{len(dataset)} samples",
        seed=fold_plan.seed,
        k=config.coder.k,
        config=config.describe(),
        folds=folds,
        flagged_classes=tuple(sorted(flagged)),
    )


@dataclass
class SweepRow:
    k: int
    status: str  # "ok" | "skipped"
    reason: str = ""
    mean_macro: float = float("nan")
    train_seconds: float = float("nan")
    mean_latency_ms: float = float("nan")
    report: EvalReport | None = None


@dataclass
class SweepTable:
    rows: list[SweepRow]
    seed: int

    def to_csv(self, include_latency: bool = False) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for row in self.rows:
            if row.status != "ok":
                buf.write(f"skipped,{row.k},,,\n")
                continue
            for f in row.report.folds:
                lat = f"{f.mean_latency_ms:.3f}" if include_latency else ""
                buf.write(f"{f.fold},{row.k},{f.macro:.10f},{f.micro:.10f},{lat}\n")
            lat = f"{row.mean_latency_ms:.3f}" if include_latency else ""
            buf.write(
                f"mean,{row.k},{row.report.mean_macro:.10f},"
                f"{row.report.mean_micro:.10f},{lat}\n"
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "rows": [
                {
                    "k": r.k,
                    "status": r.status,
                    "reason": r.reason,
                    "mean_accuracy_macro": None if r.status != "ok" else r.mean_macro,
                    "train_seconds": None if r.status != "ok" else r.train_seconds,
                    "mean_latency_ms": None if r.status != "ok" else r.mean_latency_ms,
                }
                for r in self.rows
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def human_table(self) -> str:
        lines = ["   k  status   macro%     train_s   latency_ms"]
        for r in self.rows:
            if r.status != "ok":
                lines.append(f"{r.k:>4}  skipped  ({r.reason})")
            else:
                lines.append(
                    f"{r.k:>4}  ok       {r.mean_macro:9.4f}  {r.train_seconds:8.2f}"
                    f"  {r.mean_latency_ms:10.3f}"
                )
        return "\n".join(lines)


def sweep_k(
    dataset: LabeledDataset,
    ks: list[int],
    config: PipelineConfig,
    fold_plan: FoldPlan | None = None,
) -> SweepTable:
    """One cross-validation run per concept dimension over identical folds."""
    if fold_plan is None:
        fold_plan = stratified_folds(dataset.labels, seed=config.coder.seed)
    min_train = min(
        fold_plan.train_indices(f).size for f in range(fold_plan.fold_count)
    )
    rows: list[SweepRow] = []
    for k in ks:
        if k + 1 > min_train:
            rows.append(
                SweepRow(
                    k=k,
                    status="skipped",
                    reason=f"k={k} needs at least {k + 1} training samples, "
                    f"smallest training fold has {min_train}",
                )
            )
            continue
        cfg = replace(config, coder=replace(config.coder, k=k))
        t0 = time.perf_counter()
        report = cross_validate(dataset, cfg, fold_plan)
        train_seconds = sum(f.train_seconds for f in report.folds)
        rows.append(
            SweepRow(
                k=k,
                status="ok",
                mean_macro=report.mean_macro,
                train_seconds=train_seconds,
                mean_latency_ms=report.mean_latency_ms,
                report=report,
            )
        )
        logger.info("sweep k=%d done in %.1fs", k, time.perf_counter() - t0)
    return SweepTable(rows=rows, seed=fold_plan.seed)
