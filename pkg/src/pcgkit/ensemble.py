"""Vote fusion, the hierarchical two-stage decision, and evaluation metrics.

Class tuples are ordered from least to most severe (normal, mild, severe);
tie handling relies on that order. Majority voting takes the plurality class;
ties break by the highest mean posterior among the tied classes across voters
that supplied posteriors, and by the most severe tied class when no
posteriors exist (the clinically conservative reading).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import BINARY, THREE_CLASS
from .errors import MetricUndefinedError, ParameterError, PipelineError

ABNORMAL_CLASSES = ("mild", "severe")


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray
    classes: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ParameterError(f"counts must be {k}x{k}, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ParameterError("confusion counts must be non-negative")

    @classmethod
    def from_pairs(cls, truths, predictions, classes=None) -> "ConfusionMatrix":
        truths, predictions = list(truths), list(predictions)
        if len(truths) != len(predictions):
            raise ParameterError(
                f"got {len(predictions)} predictions for {len(truths)} truths")
        if classes is None:
            classes = _canonical_order(set(truths) | set(predictions))
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(truths, predictions):
            if t not in index or p not in index:
                raise ParameterError(f"label pair ({t!r}, {p!r}) outside classes {classes}")
            counts[index[t], index[p]] += 1
        return cls(counts=counts, classes=tuple(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _canonical_order(labels) -> tuple:
    for canonical in (THREE_CLASS, BINARY):
        if set(labels) <= set(canonical):
            return tuple(c for c in canonical if c in labels)
    return tuple(sorted(labels))


def per_class_recall(cm: ConfusionMatrix) -> dict:
    row_sums = cm.counts.sum(axis=1)
    empty = [c for c, r in zip(cm.classes, row_sums) if r == 0]
    if empty:
        raise MetricUndefinedError(f"no true samples for classes {empty}; recall undefined")
    diag = np.diag(cm.counts)
    return {c: float(d) / float(r) for c, d, r in zip(cm.classes, diag, row_sums)}


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall: the mean of per-class recalls."""
    return float(np.mean(list(per_class_recall(cm).values())))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricUndefinedError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


# ---------------------------------------------------------------------------
# Voting
# ---------------------------------------------------------------------------


@dataclass
class VoterOutput:
    """One subsystem's prediction, optionally with a posterior over classes."""

    voter: str
    label: str
    posterior: np.ndarray | None = None

    def __post_init__(self):
        if self.posterior is not None:
            self.posterior = np.asarray(self.posterior, dtype=np.float64)
            if abs(self.posterior.sum() - 1.0) > 1e-6:
                raise ParameterError(
                    f"voter {self.voter!r}: posterior sums to {self.posterior.sum()}, not 1")


def majority_vote(votes: list, classes=None) -> str:
    """Plurality class with the documented posterior/severity tie rule."""
    if not votes:
        raise ParameterError("majority_vote needs at least one vote")
    if classes is None:
        classes = _canonical_order({v.label for v in votes})
    index = {c: i for i, c in enumerate(classes)}
    for v in votes:
        if v.label not in index:
            raise ParameterError(f"voter {v.voter!r} voted {v.label!r}, outside {classes}")
        if v.posterior is not None and v.posterior.size != len(classes):
            raise ParameterError(
                f"voter {v.voter!r}: posterior has {v.posterior.size} entries "
                f"for {len(classes)} classes")

    counts = np.zeros(len(classes), dtype=int)
    for v in votes:
        counts[index[v.label]] += 1
    tied = [c for c in classes if counts[index[c]] == counts.max()]
    if len(tied) == 1:
        return tied[0]

    with_posterior = [v for v in votes if v.posterior is not None]
    if with_posterior:
        # sum each class's contributions in sorted order so the result cannot
        # depend on voter ordering through floating-point rounding
        means = {c: float(np.sort([v.posterior[index[c]] for v in with_posterior]).sum())
                 for c in tied}
        best = max(means.values())
        tied = [c for c in tied if means[c] == best]
    return tied[-1]  # most severe of the remaining tie


def hierarchical_decide(stage1: str, stage2_votes: list | None,
                        mode: str = "redistribute") -> str:
    """Two-stage decision: a binary gate, then mild-vs-severe voting.

    The output is normal exactly when stage 1 says normal. Otherwise stage-2
    votes are restricted to the abnormal classes: a stage-2 normal vote is
    redistributed to the voter's higher-scoring abnormal class (or dropped
    entirely under ``mode="abstain"``).
    """
    if stage1 not in BINARY:
        raise ParameterError(f"stage-1 prediction must be in {BINARY}, got {stage1!r}")
    if mode not in ("redistribute", "abstain"):
        raise ParameterError(f"unknown stage-2 mode {mode!r}")
    if stage1 == "normal":
        return "normal"
    if not stage2_votes:
        raise PipelineError("stage 1 found an abnormality but no stage-2 votes were given")

    restricted = []
    for v in stage2_votes:
        if v.label in ABNORMAL_CLASSES:
            label = v.label
        elif v.label == "normal":
            if mode == "abstain" or v.posterior is None:
                continue
            mild_i, severe_i = (THREE_CLASS.index(c) for c in ABNORMAL_CLASSES)
            label = ABNORMAL_CLASSES[int(v.posterior[severe_i] > v.posterior[mild_i])]
        else:
            raise ParameterError(f"stage-2 vote {v.label!r} outside {THREE_CLASS}")
        posterior = None
        if v.posterior is not None and v.posterior.size == len(THREE_CLASS):
            sub = np.array([v.posterior[THREE_CLASS.index(c)] for c in ABNORMAL_CLASSES])
            if sub.sum() > 0:
                posterior = sub / sub.sum()
        restricted.append(VoterOutput(voter=v.voter, label=label, posterior=posterior))
    if not restricted:
        raise PipelineError("every stage-2 vote abstained; cannot decide mild vs severe")
    return majority_vote(restricted, classes=ABNORMAL_CLASSES)


# ---------------------------------------------------------------------------
# Evaluation and reports
# ---------------------------------------------------------------------------


def evaluate(predictions, truths, classes=None):
    """(confusion matrix, {uar, accuracy, recall_<class>...}) for aligned lists."""
    cm = ConfusionMatrix.from_pairs(truths, predictions, classes)
    metrics = {"uar": uar(cm), "accuracy": accuracy(cm)}
    for c, r in per_class_recall(cm).items():
        metrics[f"recall_{c}"] = r
    return cm, metrics


def write_metrics_csv(metrics: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in metrics.items():
            writer.writerow([name, f"{value:.6f}"])


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_class", *cm.classes])
        for c, row in zip(cm.classes, cm.counts):
            writer.writerow([c, *row.tolist()])


def format_report(metrics: dict, cm: ConfusionMatrix) -> str:
    """Human-readable metrics block with the confusion matrix."""
    lines = ["metric            value", "-" * 24]
    for name, value in metrics.items():
        lines.append(f"{name:<16}  {value:.4f}")
    lines.append("")
    header = "true\\pred  " + "  ".join(f"{c:>8}" for c in cm.classes)
    lines.append(header)
    for c, row in zip(cm.classes, cm.counts):
        lines.append(f"{c:<9}  " + "  ".join(f"{n:>8d}" for n in row.tolist()))
    return "\n".join(lines)


def write_model_table(rows: list, path) -> None:
    """Comparison table across systems: one row per model, challenge-style columns."""
    fields = ["model", "dataset", "features", "classifier",
              "uar_dev_percent", "acc_dev_percent", "uar_test_percent"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})
