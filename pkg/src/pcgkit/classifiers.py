"""Shallow classifiers over fixed-dimension feature vectors.

Linear SVMs are one-vs-rest L2-regularized L1-hinge machines solved by dual
coordinate descent (the LIBLINEAR update: project the Newton step for each
alpha onto [0, C] and fold the change into w incrementally). LDA uses class
means with a shrunk pooled covariance. Both standardize features with
train-split statistics and apply the identical transform at prediction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import BINARY, THREE_CLASS
from .errors import ParameterError, ShapeError, TrainingSetupError
from .model_io import ModelManifest, load_manifest, save_manifest

_EPS = 1e-12


@dataclass
class LinearModel:
    """Per-class linear decision functions with fitted standardization."""

    kind: str  # "svm" | "lda"
    classes: tuple
    weights: np.ndarray  # K x D
    biases: np.ndarray   # K
    mean: np.ndarray     # D
    std: np.ndarray      # D

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.size:
            raise ShapeError(
                f"feature dimension {x.shape[-1]} does not match model "
                f"dimension {self.mean.size}")
        return (x - self.mean) / self.std

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        return self.standardize(x) @ self.weights.T + self.biases


def _canonical_classes(y) -> tuple:
    present = sorted(set(y))
    for canonical in (THREE_CLASS, BINARY):
        if set(present) <= set(canonical):
            return tuple(c for c in canonical if c in present)
    return tuple(present)


def _validate_training_inputs(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ShapeError(f"X must be (n, d) aligned with y; got {X.shape} and {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise ParameterError("training features contain non-finite values")
    classes = _canonical_classes(y)
    if len(classes) < 2:
        raise TrainingSetupError(f"training needs >= 2 classes, found {classes}")
    return X, y, classes


def _fit_standardizer(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < _EPS, 1.0, std)
    return mean, std


# ---------------------------------------------------------------------------
# Linear SVM by dual coordinate descent
# ---------------------------------------------------------------------------


def _dual_cd(X: np.ndarray, y_pm: np.ndarray, C: float, tol: float,
             max_sweeps: int, rng: np.random.Generator) -> np.ndarray:
    """One binary L1-hinge SVM; returns the weight vector (bias column included).

    Maximizes the dual sum(alpha) - 0.5 ||w||^2 one coordinate at a time; the
    objective must never decrease across sweeps, and the sweep stops when the
    largest projected gradient falls below ``tol``.
    """
    n, d = X.shape
    w = np.zeros(d)
    alpha = np.zeros(n)
    q_diag = np.einsum("ij,ij->i", X, X)
    prev_obj = -np.inf
    for _ in range(max_sweeps):
        max_pg = 0.0
        for i in rng.permutation(n):
            if q_diag[i] < _EPS:
                continue
            grad = y_pm[i] * (X[i] @ w) - 1.0
            if alpha[i] <= 0.0:
                pg = min(grad, 0.0)
            elif alpha[i] >= C:
                pg = max(grad, 0.0)
            else:
                pg = grad
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - grad / q_diag[i], 0.0), C)
                if alpha[i] != old:
                    w += (alpha[i] - old) * y_pm[i] * X[i]
            max_pg = max(max_pg, abs(pg))
        obj = alpha.sum() - 0.5 * (w @ w)
        if obj < prev_obj - 1e-9 * max(1.0, abs(prev_obj)):
            raise RuntimeError(f"dual objective decreased: {prev_obj} -> {obj}")
        prev_obj = obj
        if max_pg < tol:
            break
    return w


def train_svm(X, y, C: float = 1e-4, tol: float = 0.3, max_sweeps: int = 1000,
              seed: int = 0) -> LinearModel:
    """One-vs-rest linear SVMs; ``tol`` is the dual stopping tolerance."""
    if C <= 0:
        raise ParameterError(f"C must be positive, got {C}")
    X, y, classes = _validate_training_inputs(X, y)
    mean, std = _fit_standardizer(X)
    Xs = np.column_stack([(X - mean) / std, np.ones(X.shape[0])])  # bias feature

    weights = np.zeros((len(classes), X.shape[1]))
    biases = np.zeros(len(classes))
    for k, cls in enumerate(classes):
        y_pm = np.where(np.asarray(y) == cls, 1.0, -1.0)
        rng = np.random.default_rng(seed + 1000 * k)
        w_aug = _dual_cd(Xs, y_pm, C, tol, max_sweeps, rng)
        weights[k] = w_aug[:-1]
        biases[k] = w_aug[-1]
    return LinearModel(kind="svm", classes=classes, weights=weights, biases=biases,
                       mean=mean, std=std)


# ---------------------------------------------------------------------------
# Linear discriminant analysis
# ---------------------------------------------------------------------------


def train_lda(X, y, shrinkage: float = 0.1) -> LinearModel:
    """Gaussian LDA with shrunk pooled covariance (1-l)S + l diag(S)."""
    if not 0.0 <= shrinkage <= 1.0:
        raise ParameterError(f"shrinkage must be in [0, 1], got {shrinkage}")
    X, y, classes = _validate_training_inputs(X, y)
    mean, std = _fit_standardizer(X)
    Xs = (X - mean) / std
    y_arr = np.asarray(y)

    n, d = Xs.shape
    means = np.stack([Xs[y_arr == c].mean(axis=0) for c in classes])
    priors = np.array([(y_arr == c).mean() for c in classes])
    pooled = np.zeros((d, d))
    for k, c in enumerate(classes):
        centered = Xs[y_arr == c] - means[k]
        pooled += centered.T @ centered
    pooled /= max(n - len(classes), 1)
    shrunk = (1.0 - shrinkage) * pooled + shrinkage * np.diag(np.diag(pooled))

    try:
        chol = np.linalg.cholesky(shrunk)
    except np.linalg.LinAlgError:
        raise ParameterError(
            "pooled covariance is singular; increase the shrinkage parameter")
    solve = np.linalg.solve
    weights = solve(chol.T, solve(chol, means.T)).T  # rows: Sigma^-1 mu_k
    biases = -0.5 * np.einsum("kd,kd->k", weights, means) + np.log(priors)
    return LinearModel(kind="lda", classes=classes, weights=weights, biases=biases,
                       mean=mean, std=std)


# ---------------------------------------------------------------------------
# Prediction and serialization
# ---------------------------------------------------------------------------


def predict(model: LinearModel, x) -> tuple:
    """(class label, per-class decision scores) for one feature vector."""
    scores = model.decision_scores(np.asarray(x, dtype=np.float64))
    return model.classes[int(np.argmax(scores))], scores


def save_linear_model(model: LinearModel, path) -> None:
    descriptor = {"kind": "linear_model", "model": model.kind,
                  "classes": list(model.classes)}
    params = {"weights": model.weights, "biases": model.biases,
              "mean": model.mean, "std": model.std}
    save_manifest(path, ModelManifest(descriptor=descriptor, params=params))


def load_linear_model(path) -> LinearModel:
    manifest = load_manifest(path)
    d = manifest.descriptor
    if d.get("kind") != "linear_model":
        raise ShapeError(f"manifest holds a {d.get('kind')!r} model, not a linear_model")
    return LinearModel(kind=d["model"], classes=tuple(d["classes"]),
                       weights=manifest.params["weights"], biases=manifest.params["biases"],
                       mean=manifest.params["mean"], std=manifest.params["std"])
