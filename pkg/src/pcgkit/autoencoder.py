"""Sequence-to-sequence GRU autoencoder over thresholded mel-spectrograms.

The encoder (2 GRU layers) consumes the spectrogram frames; the decoder
(2 GRU layers, initialized from the encoder's final states) reconstructs the
frame sequence in reverse order with teacher forcing during training and
zero-input free-running at feature-extraction time. A recording's feature
vector is the concatenation of all four final hidden states, in the fixed
order [enc-L1, enc-L2, dec-L1, dec-L2]: 4 x 256 = 1024 dimensions at the
default width. Features from the four dB thresholds concatenate (in the
order -30, -45, -60, -75) into a 4096-dimensional fused vector.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dsp import MelSpectrogram, unit_scale
from .errors import ParameterError, ShapeError, TrainingDivergedError
from .layers import Dense, GRUCell
from .model_io import ModelManifest, assign_parameters, load_manifest, save_manifest
from .optim import sgd_step, zero_grads

THRESHOLD_ORDER = (-30.0, -45.0, -60.0, -75.0)


@dataclass
class RlFeature:
    """A learned-representation feature vector with its threshold tag."""

    vector: np.ndarray
    threshold: float | str  # one of the dB floors, or "fused"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise ShapeError("feature vector must be 1D")
        if not np.all(np.isfinite(self.vector)):
            raise ParameterError("feature vector contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vector.size


@dataclass
class AutoencoderConfig:
    epochs: int = 100
    lr: float = 0.05
    seed: int = 0
    frame_step: int = 2  # subsample frames to bound BPTT cost; 1 = full fidelity


class Seq2SeqAutoencoder:
    """2-layer GRU encoder + 2-layer GRU decoder with a band projection."""

    def __init__(self, bands: int = 126, hidden: int = 256, seed: int = 0,
                 threshold: float | None = None):
        self.bands = bands
        self.hidden = hidden
        self.seed = seed
        self.threshold = threshold
        self.training_meta = {}
        rng = np.random.default_rng(seed)
        self.enc1 = GRUCell(bands, hidden, rng, "enc1")
        self.enc2 = GRUCell(hidden, hidden, rng, "enc2")
        self.dec1 = GRUCell(bands, hidden, rng, "dec1")
        self.dec2 = GRUCell(hidden, hidden, rng, "dec2")
        self.proj = Dense(hidden, bands, rng, "proj")

    @property
    def feature_dim(self) -> int:
        return 4 * self.hidden

    def parameters(self):
        return (self.enc1.parameters() + self.enc2.parameters()
                + self.dec1.parameters() + self.dec2.parameters()
                + self.proj.parameters())

    def _encode(self, frames: np.ndarray):
        h1 = self.enc1.zero_state(1)
        h2 = self.enc2.zero_state(1)
        for t in range(frames.shape[0]):
            h1 = self.enc1(Tensor(frames[t: t + 1]), h1)
            h2 = self.enc2(h1, h2)
        return h1, h2

    def _decode(self, init1: Tensor, init2: Tensor, targets: np.ndarray | None,
                n_steps: int):
        """Run the decoder; with targets, teacher-force and return the loss sum."""
        d1, d2 = init1, init2
        loss = None
        zero_in = np.zeros((1, self.bands))
        for t in range(n_steps):
            if targets is None:
                inp = zero_in
            else:
                inp = zero_in if t == 0 else targets[t - 1: t]
            d1 = self.dec1(Tensor(inp), d1)
            d2 = self.dec2(d1, d2)
            if targets is not None:
                err = self.proj(d2) - Tensor(targets[t: t + 1])
                step_loss = ag.tmean(ag.power(err, 2.0))
                loss = step_loss if loss is None else ag.add(loss, step_loss)
        return d1, d2, loss

    def reconstruction_loss(self, frames: np.ndarray) -> Tensor:
        """Mean squared frame error of decoding the reversed sequence."""
        targets = frames[::-1].copy()
        h1, h2 = self._encode(frames)
        _, _, loss = self._decode(h1, h2, targets, frames.shape[0])
        return loss * (1.0 / frames.shape[0])

    def reconstruct(self, frames: np.ndarray) -> np.ndarray:
        """Teacher-forced reconstruction (reversed order), for inspection."""
        targets = frames[::-1].copy()
        h1, h2 = self._encode(frames)
        d1, d2 = h1, h2
        outs = []
        for t in range(frames.shape[0]):
            inp = np.zeros((1, self.bands)) if t == 0 else targets[t - 1: t]
            d1 = self.dec1(Tensor(inp), d1)
            d2 = self.dec2(d1, d2)
            outs.append(self.proj(d2).data[0])
        return np.asarray(outs)[::-1]

    # -- serialization -------------------------------------------------------

    def manifest(self) -> ModelManifest:
        descriptor = {
            "kind": "seq2seq_gru",
            "bands": self.bands,
            "hidden": self.hidden,
            "seed": self.seed,
            "threshold": self.threshold,
            "training": self.training_meta,
        }
        return ModelManifest(descriptor=descriptor,
                             params={p.name: p.data for p in self.parameters()})

    @classmethod
    def from_manifest(cls, manifest: ModelManifest) -> "Seq2SeqAutoencoder":
        d = manifest.descriptor
        if d.get("kind") != "seq2seq_gru":
            raise ShapeError(f"manifest holds a {d.get('kind')!r} model, not a seq2seq_gru")
        model = cls(bands=d["bands"], hidden=d["hidden"], seed=d["seed"],
                    threshold=d["threshold"])
        model.training_meta = dict(d.get("training", {}))
        assign_parameters(model.parameters(), manifest)
        return model


def save_autoencoder(model: Seq2SeqAutoencoder, path) -> None:
    save_manifest(path, model.manifest())


def load_autoencoder(path) -> Seq2SeqAutoencoder:
    return Seq2SeqAutoencoder.from_manifest(load_manifest(path))


# ---------------------------------------------------------------------------
# Training and feature extraction
# ---------------------------------------------------------------------------


def _training_frames(spec: MelSpectrogram, frame_step: int) -> np.ndarray:
    frames = unit_scale(spec)
    return frames[::frame_step] if frame_step > 1 else frames


def train_autoencoder(specs: list, cfg: AutoencoderConfig | None = None,
                      hidden: int = 256):
    """Train one autoencoder on thresholded spectrograms of a single floor.

    One recording per SGD step. Returns (model, per-epoch mean loss list).
    """
    cfg = cfg or AutoencoderConfig()
    if not specs:
        raise ParameterError("no spectrograms to train on")
    bands = {s.bands for s in specs}
    if len(bands) != 1:
        raise ShapeError(f"spectrograms must share one band count, got {sorted(bands)}")
    floors = {s.floor for s in specs}
    if None in floors or len(floors) != 1:
        raise ParameterError("spectrograms must all be thresholded at one floor")

    model = Seq2SeqAutoencoder(bands=bands.pop(), hidden=hidden, seed=cfg.seed,
                               threshold=floors.pop())
    params = model.parameters()
    frame_sets = [_training_frames(s, cfg.frame_step) for s in specs]
    losses = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for frames in frame_sets:
            loss = model.reconstruction_loss(frames)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"autoencoder loss became non-finite at epoch {epoch} "
                    f"(lr={cfg.lr}, threshold={model.threshold})")
            zero_grads(params)
            loss.backward()
            sgd_step(params, cfg.lr)
            epoch_losses.append(float(loss.data))
        losses.append(float(np.mean(epoch_losses)))
    model.training_meta = {"epochs": cfg.epochs, "lr": cfg.lr, "seed": cfg.seed,
                           "frame_step": cfg.frame_step}
    return model, losses


def extract_feature(model: Seq2SeqAutoencoder, spec: MelSpectrogram,
                    frame_step: int = 1) -> RlFeature:
    """Concatenated final hidden states [enc-L1, enc-L2, dec-L1, dec-L2]."""
    if spec.bands != model.bands:
        raise ShapeError(f"spectrogram has {spec.bands} bands, model expects {model.bands}")
    frames = _training_frames(spec, frame_step)
    h1, h2 = model._encode(frames)
    d1, d2, _ = model._decode(h1, h2, None, frames.shape[0])
    vec = np.concatenate([h1.data[0], h2.data[0], d1.data[0], d2.data[0]])
    return RlFeature(vector=vec, threshold=model.threshold)


def fuse_features(f30: RlFeature, f45: RlFeature, f60: RlFeature, f75: RlFeature) -> RlFeature:
    """Concatenate the four per-threshold features in the fixed floor order."""
    parts = (f30, f45, f60, f75)
    dims = {f.dim for f in parts}
    if len(dims) != 1:
        raise ShapeError(f"per-threshold features must share one dimension, got {sorted(dims)}")
    for f, expected in zip(parts, THRESHOLD_ORDER):
        if f.threshold != expected:
            raise ParameterError(
                f"features must arrive in threshold order {THRESHOLD_ORDER}, "
                f"got {[p.threshold for p in parts]}")
    return RlFeature(vector=np.concatenate([f.vector for f in parts]), threshold="fused")


def feature_statistics(features: list) -> np.ndarray:
    """Per-dimension arithmetic mean over a feature collection."""
    if not features:
        raise ParameterError("cannot average an empty feature list")
    dims = {f.dim for f in features}
    if len(dims) != 1:
        raise ShapeError(f"features must share one dimension, got {sorted(dims)}")
    return np.mean([f.vector for f in features], axis=0)


def export_features_csv(rows: list, path) -> None:
    """Write (filename, RlFeature) rows as ``filename,threshold,dim0..dimN``."""
    if not rows:
        raise ParameterError("no feature rows to export")
    dim = rows[0][1].dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "threshold"] + [f"dim{i}" for i in range(dim)])
        for filename, feat in rows:
            writer.writerow([filename, feat.threshold]
                            + [f"{v:.9g}" for v in feat.vector])


def export_mean_csv(mean: np.ndarray, path) -> None:
    """Write a per-dimension mean vector as ``dim,value`` rows (plot-ready)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "mean"])
        for i, v in enumerate(mean):
            writer.writerow([i, f"{v:.9g}"])
