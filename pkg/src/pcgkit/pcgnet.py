"""Four-branch 1D-CNN over cardiac-cycle bands, with transfer learning.

The binary network is trained per cycle on normal/abnormal data; its weights
up to the flatten layer are then transferred under a fresh 3-class head
(hidden widths 239 and 20) and fine-tuned with a class-weighted cost at a
small learning rate. Recording-level inference averages per-cycle posteriors
and takes the argmax.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dsp import BINARY, THREE_CLASS
from .errors import NoCyclesError, ShapeError, TrainingDivergedError, TrainingSetupError
from .layers import Conv1dLayer, Dense, flatten
from .model_io import ModelManifest, assign_parameters, load_manifest, save_manifest
from .optim import class_weights, sgd_step, zero_grads
from .segmentation import CYCLE_SAMPLES
from .tconv import TConvLayer

BRANCHES = 4
CONV1_FILTERS = 8
CONV2_FILTERS = 4
KERNEL = 5


@dataclass
class TrainConfig:
    """Knobs for one training phase (defaults follow the fine-tuning setup)."""

    epochs: int = 200
    lr: float = 4.5e-5
    batch_size: int = 64
    dropout: float = 0.5
    seed: int = 0
    weighted_cost: bool = True
    stop_at_uar: float = 0.0  # stop once training UAR reaches this; 0 = full run


def branch_flat_dim(cycle_len: int = CYCLE_SAMPLES) -> int:
    after_conv1 = (cycle_len - (KERNEL - 1)) // 2  # valid conv then pool(2)
    after_conv2 = (after_conv1 - (KERNEL - 1)) // 2
    return CONV2_FILTERS * after_conv2


class BranchCnnModel:
    """Front-end (optional tConv bank) + 4 conv branches + dense head."""

    def __init__(self, classes=BINARY, hidden=(20,), front: str | None = None,
                 kernel_len: int = 61, cycle_len: int = CYCLE_SAMPLES, seed: int = 0):
        if front not in (None, "free", "linear_phase"):
            raise ShapeError(f"unknown front-end variant {front!r}")
        self.classes = tuple(classes)
        self.hidden = tuple(int(h) for h in hidden)
        self.front_variant = front
        self.kernel_len = kernel_len
        self.cycle_len = cycle_len
        self.seed = seed
        self.training_meta = {}
        rng = np.random.default_rng(seed)

        self.front_end = None
        if front is not None:
            self.front_end = [TConvLayer.random(kernel_len, rng, f"front{i}", variant=front)
                              for i in range(BRANCHES)]
        self.branches = []
        for i in range(BRANCHES):
            self.branches.append({
                "conv1": Conv1dLayer(1, CONV1_FILTERS, KERNEL, rng, f"branch{i}.conv1"),
                "conv2": Conv1dLayer(CONV1_FILTERS, CONV2_FILTERS, KERNEL, rng, f"branch{i}.conv2"),
            })
        self.flat_dim = BRANCHES * branch_flat_dim(cycle_len)
        self.head = []
        self.attach_head(self._build_head(rng))

    def _build_head(self, rng) -> list:
        widths = [self.flat_dim, *self.hidden, len(self.classes)]
        return [Dense(widths[i], widths[i + 1], rng, f"head.fc{i}")
                for i in range(len(widths) - 1)]

    def attach_head(self, dense_layers: list) -> None:
        """Install a dense head; its first layer must accept the flatten width."""
        if dense_layers[0].n_in != self.flat_dim:
            raise ShapeError(
                f"head expects input width {dense_layers[0].n_in}, "
                f"flatten produces {self.flat_dim}")
        self.head = dense_layers

    def feature_parameters(self):
        """Everything up to the flatten layer (front-end + branch convs)."""
        params = []
        if self.front_end is not None:
            for layer in self.front_end:
                params.extend(layer.parameters())
        for br in self.branches:
            params.extend(br["conv1"].parameters() + br["conv2"].parameters())
        return params

    def head_parameters(self):
        return [p for layer in self.head for p in layer.parameters()]

    def parameters(self):
        return self.feature_parameters() + self.head_parameters()

    def freeze_feature_extractor(self, frozen: bool = True) -> None:
        for p in self.feature_parameters():
            p.trainable = not frozen

    # -- forward -----------------------------------------------------------

    def forward(self, x, training: bool = False, rng=None, dropout: float = 0.0) -> Tensor:
        """Logits for a (B, 4, L) batch of cycle bands."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.ndim != 3 or x.data.shape[1] != BRANCHES or x.data.shape[2] != self.cycle_len:
            raise ShapeError(f"expected (B, 4, {self.cycle_len}) input, got {x.data.shape}")

        def drop(t):
            if training and dropout > 0.0:
                return ag.dropout(t, dropout, rng, training=True)
            return t

        outs = []
        for i in range(BRANCHES):
            xi = x[:, i:i + 1, :]
            if self.front_end is not None:
                xi = self.front_end[i].apply(xi)
            h = drop(ag.relu(self.branches[i]["conv1"](xi)))
            h = ag.maxpool2(h)
            h = drop(ag.relu(self.branches[i]["conv2"](h)))
            h = ag.maxpool2(h)
            outs.append(flatten(h))
        h = ag.concat(outs, axis=1)
        for layer in self.head[:-1]:
            h = drop(ag.relu(layer(h)))
        return self.head[-1](h)

    def predict_proba(self, bands: np.ndarray) -> np.ndarray:
        """Per-cycle class posteriors for a (B, 4, L) array."""
        logits = self.forward(Tensor(np.asarray(bands, dtype=np.float64)))
        return ag.softmax(logits.data, axis=1)

    # -- serialization -------------------------------------------------------

    def manifest(self) -> ModelManifest:
        descriptor = {
            "kind": "branch_cnn",
            "classes": list(self.classes),
            "hidden": list(self.hidden),
            "front": self.front_variant,
            "kernel_len": self.kernel_len,
            "cycle_len": self.cycle_len,
            "seed": self.seed,
            "training": self.training_meta,
        }
        params = {p.name: p.data for p in self.parameters()}
        return ModelManifest(descriptor=descriptor, params=params)

    @classmethod
    def from_manifest(cls, manifest: ModelManifest) -> "BranchCnnModel":
        d = manifest.descriptor
        if d.get("kind") != "branch_cnn":
            raise ShapeError(f"manifest holds a {d.get('kind')!r} model, not a branch_cnn")
        model = cls(classes=d["classes"], hidden=d["hidden"], front=d["front"],
                    kernel_len=d["kernel_len"], cycle_len=d["cycle_len"], seed=d["seed"])
        model.training_meta = dict(d.get("training", {}))
        assign_parameters(model.parameters(), manifest)
        return model


def save_model(model: BranchCnnModel, path) -> None:
    save_manifest(path, model.manifest())


def load_model(path) -> BranchCnnModel:
    return BranchCnnModel.from_manifest(load_manifest(path))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    recalls: dict
    uar: float
    confusion: np.ndarray


class MetricsLog:
    """Per-epoch loss/recall records, exportable as CSV."""

    def __init__(self, classes):
        self.classes = tuple(classes)
        self.rows: list[EpochMetrics] = []

    def append(self, epoch, loss, confusion):
        diag = np.diag(confusion).astype(float)
        row_sums = confusion.sum(axis=1)
        recalls = {c: (diag[i] / row_sums[i] if row_sums[i] else 0.0)
                   for i, c in enumerate(self.classes)}
        present = row_sums > 0
        uar = float(np.mean((diag[present] / row_sums[present]))) if present.any() else 0.0
        self.rows.append(EpochMetrics(epoch, float(loss), recalls, uar, confusion.copy()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"] + [f"recall_{c}" for c in self.classes] + ["uar"])
            for row in self.rows:
                writer.writerow([row.epoch, f"{row.loss:.6f}"]
                                + [f"{row.recalls[c]:.6f}" for c in self.classes]
                                + [f"{row.uar:.6f}"])


def cycles_to_array(cycles) -> np.ndarray:
    return np.stack([c.bands for c in cycles])


def _train(model: BranchCnnModel, bands: np.ndarray, label_idx: np.ndarray,
           cfg: TrainConfig) -> MetricsLog:
    classes = model.classes
    n = bands.shape[0]
    weights = None
    if cfg.weighted_cost:
        weights = class_weights([classes[i] for i in label_idx], classes)
    rng = np.random.default_rng(cfg.seed)
    log = MetricsLog(classes)
    params = model.parameters()

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            logits = model.forward(Tensor(bands[idx]), training=True, rng=rng,
                                   dropout=cfg.dropout)
            loss = ag.softmax_cross_entropy(logits, label_idx[idx], weights)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            zero_grads(params)
            loss.backward()
            sgd_step(params, cfg.lr)
            losses.append(float(loss.data))
        preds = np.argmax(model.predict_proba(bands), axis=1)
        confusion = np.zeros((len(classes), len(classes)), dtype=int)
        np.add.at(confusion, (label_idx, preds), 1)
        log.append(epoch, np.mean(losses), confusion)
        if cfg.stop_at_uar > 0.0 and log.rows[-1].uar >= cfg.stop_at_uar:
            break
    model.training_meta = {"epochs": cfg.epochs, "lr": cfg.lr, "seed": cfg.seed,
                           "batch_size": cfg.batch_size, "dropout": cfg.dropout}
    return log


def _validate_labels(labels, classes):
    label_idx = []
    for y in labels:
        if y not in classes:
            raise TrainingSetupError(f"label {y!r} is not in the class set {classes}")
        label_idx.append(classes.index(y))
    label_idx = np.asarray(label_idx)
    present = set(label_idx.tolist())
    if len(label_idx) == 0:
        raise TrainingSetupError("training corpus is empty")
    if len(present) < 2:
        raise TrainingSetupError(f"training needs >= 2 classes, found {len(present)}")
    return label_idx


def pretrain_binary(cycles, labels, cfg: TrainConfig | None = None,
                    front: str | None = None, seed: int = 0):
    """Train the binary (normal/abnormal) network from scratch on cycles."""
    cfg = cfg or TrainConfig(lr=1e-3)
    label_idx = _validate_labels(list(labels), BINARY)
    bands = cycles_to_array(cycles)
    model = BranchCnnModel(classes=BINARY, hidden=(20,), front=front,
                           cycle_len=bands.shape[2], seed=seed)
    log = _train(model, bands, label_idx, cfg)
    return model, log


def transfer_head(model: BranchCnnModel, hidden=(239, 20), classes=THREE_CLASS,
                  freeze_front: bool = False, seed: int = 1) -> BranchCnnModel:
    """Copy everything up to the flatten layer under a freshly initialized head."""
    out = BranchCnnModel(classes=classes, hidden=hidden, front=model.front_variant,
                         kernel_len=model.kernel_len, cycle_len=model.cycle_len, seed=seed)
    for dst, src in zip(out.feature_parameters(), model.feature_parameters()):
        if dst.data.shape != src.data.shape:
            raise ShapeError(f"cannot transfer {src.name}: shape {src.data.shape} "
                             f"vs {dst.data.shape}")
        dst.data = src.data.copy()
    out.freeze_feature_extractor(freeze_front)
    return out


def finetune(model: BranchCnnModel, cycles, labels, cfg: TrainConfig | None = None):
    """Fine-tune a 3-class model with the class-weighted cost; logs per-epoch recalls."""
    cfg = cfg or TrainConfig()
    if len(model.classes) != 3:
        raise TrainingSetupError(f"fine-tuning expects a 3-class head, model has {model.classes}")
    label_idx = _validate_labels(list(labels), model.classes)
    bands = cycles_to_array(cycles)
    log = _train(model, bands, label_idx, cfg)
    return model, log


def predict_recording(model: BranchCnnModel, cycles):
    """(class label, posterior) for one recording: mean of per-cycle posteriors."""
    if len(cycles) == 0:
        raise NoCyclesError("cannot predict a recording with no extracted cycles")
    posteriors = model.predict_proba(cycles_to_array(cycles))
    mean_post = posteriors.mean(axis=0)
    return model.classes[int(np.argmax(mean_post))], mean_post
