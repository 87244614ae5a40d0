"""Metrics and experiment protocol: accuracy, confusion matrices, k-shot sweeps."""

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np

from .data import kshot_sample
from .dml import classify, train_dml
from .errors import ConfigError, DatasetError, InputError
from .seeding import STREAM_KSHOT, substream


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: dict
    confusion: np.ndarray  # raw counts, [true class x predicted class]
    label_space: tuple
    seeds: tuple = ()
    mode: str = ""
    config_hash: str = ""


def evaluate(net, test, ensemble=False, seeds=(), mode="", config_hash=""):
    """Score a trained net on a real-aerial test set; pure and deterministic."""
    if test.domains() != ["real_aerial"]:
        raise ConfigError(f"test records must be real_aerial, got {test.domains()}")
    if net.real_label_space and tuple(net.real_label_space) != tuple(test.label_space):
        raise ConfigError("net and test label spaces differ")
    n_classes = len(test.label_space)
    preds, _ = classify(net, test.features_matrix(), ensemble=ensemble)
    truth = test.label_indices()
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    row_sums = confusion.sum(axis=1)
    per_class = {label: (float(confusion[i, i] / row_sums[i]) if row_sums[i] else 0.0)
                 for i, label in enumerate(test.label_space)}
    overall = float(np.trace(confusion) / len(test))
    return EvalReport(overall, per_class, confusion, tuple(test.label_space),
                      tuple(seeds), mode, config_hash)


def average_reports(reports):
    """Mean accuracies across reports; confusion matrices aggregate by summation."""
    reports = list(reports)
    if not reports:
        raise InputError("cannot average zero reports")
    first = reports[0]
    for r in reports[1:]:
        if r.label_space != first.label_space:
            raise ConfigError("reports have mismatched label spaces")
        if r.mode != first.mode:
            raise ConfigError("reports have mismatched modes")
    overall = float(np.mean([r.overall_accuracy for r in reports]))
    per_class = {label: float(np.mean([r.per_class_accuracy[label] for r in reports]))
                 for label in first.label_space}
    confusion = np.sum([r.confusion for r in reports], axis=0)
    seeds = tuple(sorted({s for r in reports for s in r.seeds}))
    hashes = {r.config_hash for r in reports}
    return EvalReport(overall, per_class, confusion, first.label_space, seeds,
                      first.mode, hashes.pop() if len(hashes) == 1 else "")


def normalized_confusion(report):
    """Row-normalized confusion for presentation; zero rows stay zero."""
    counts = report.confusion.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def report_to_csv(report):
    """One row per class plus an overall row: label, test_count, accuracy."""
    lines = ["label,test_count,accuracy"]
    row_sums = report.confusion.sum(axis=1)
    for i, label in enumerate(report.label_space):
        lines.append(f"{label},{int(row_sums[i])},{report.per_class_accuracy[label]!r}")
    lines.append(f"overall,{int(row_sums.sum())},{report.overall_accuracy!r}")
    return "\n".join(lines) + "\n"


def report_to_text(report, normalized=True):
    """Self-contained plain-text summary with the confusion matrix."""
    width = max(len(l) for l in report.label_space) if report.label_space else 8
    lines = []
    if report.mode:
        lines.append(f"mode: {report.mode}")
    if report.seeds:
        lines.append(f"seeds: {', '.join(str(s) for s in report.seeds)}")
    if report.config_hash:
        lines.append(f"config: {report.config_hash[:12]}")
    lines.append(f"overall accuracy: {report.overall_accuracy:.4f}")
    lines.append("")
    lines.append("per-class accuracy:")
    for label in report.label_space:
        lines.append(f"  {label:<{width}}  {report.per_class_accuracy[label]:.4f}")
    lines.append("")
    matrix = normalized_confusion(report) if normalized else report.confusion
    kind = "row-normalized" if normalized else "raw counts"
    lines.append(f"confusion matrix ({kind}, rows = true class):")
    for i, label in enumerate(report.label_space):
        cells = " ".join(f"{v:6.3f}" if normalized else f"{int(v):6d}" for v in matrix[i])
        lines.append(f"  {label:<{width}}  {cells}")
    return "\n".join(lines) + "\n"


@dataclass
class KShotCurve:
    mode: str
    points: list = field(default_factory=list)  # (k, mean, std) sorted by k

    def to_csv(self):
        lines = ["k,mean,std,mode"]
        for k, mean, std in self.points:
            lines.append(f"{k},{mean!r},{std!r},{self.mode}")
        return "\n".join(lines) + "\n"

    def to_gnuplot(self):
        lines = [f"# k  mean  std   ({self.mode})"]
        for k, mean, std in self.points:
            lines.append(f"{k} {mean!r} {std!r}")
        return "\n".join(lines) + "\n"


def _sweep_cell(args):
    (mode, k, seed, train_real, val_real, test_real, aux_games, aux_generated,
     config) = args
    draw_seed = int(substream(seed, STREAM_KSHOT, k).integers(2 ** 31))
    few = kshot_sample(train_real, k, draw_seed)
    net, _ = train_dml(mode, few, aux_games, aux_generated, val_real, config, seed)
    report = evaluate(net, test_real, ensemble=config.ensemble_heads,
                      seeds=(seed,), mode=mode)
    return mode, k, seed, report.overall_accuracy


def kshot_sweep(train_real, val_real, test_real, ks, seeds, modes, config,
                aux_games=None, aux_generated=None, threads=1):
    """Full pipeline (k-shot sample, train, evaluate) per (mode, k, seed) cell.

    Auxiliary datasets are supplied once and reused across cells.  Cells may
    run in parallel; aggregation order is fixed, so results are reproducible
    regardless of `threads`.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ConfigError("k values must be positive")
    min_class = min(len(ix) for ix in train_real.by_class().values())
    if ks[-1] > min_class:
        raise DatasetError(f"k={ks[-1]} exceeds the smallest class size {min_class}")
    cells = [(mode, k, seed, train_real, val_real, test_real, aux_games,
              aux_generated, config)
             for mode in modes for k in ks for seed in seeds]
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    by_cell = {(m, k, s): acc for m, k, s, acc in results}
    curves = {}
    for mode in modes:
        points = []
        for k in ks:
            accs = np.array([by_cell[(mode, k, s)] for s in seeds])
            points.append((k, float(accs.mean()), float(accs.std())))
        curves[mode] = KShotCurve(mode, points)
    return curves
