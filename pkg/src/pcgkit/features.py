"""Segment-level acoustic features: frame-wise LLDs summarized by functionals.

Frames are 25 ms Hann windows advanced by 10 ms. Twenty low-level descriptors
are computed per frame (13 MFCCs, log-energy, RMS, zero-crossing rate,
spectral centroid, flux, roll-off at 0.85, flatness) and augmented with their
first-order deltas, giving 40 columns. Thirteen functionals per column
(mean, std, min, max, range, median, q1, q3, iqr, skewness, kurtosis,
least-squares slope and offset) summarize a recording into a 520-dimensional
vector with stable column names.

Estimator conventions, pinned for cross-run comparability: quantiles use
linear interpolation; skewness is the biased m3 / m2^(3/2); kurtosis is the
biased non-excess m4 / m2^2 (3.0 for a Gaussian); slope/offset regress on the
frame index with the offset evaluated at frame 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .dsp import Recording, mel_filterbank
from .errors import ParameterError

FRAME_WINDOW = 0.025
FRAME_HOP = 0.010
N_MFCC = 13
N_MEL_FILTERS = 26

LLD_NAMES = tuple([f"mfcc{i}" for i in range(1, N_MFCC + 1)]
                  + ["log_energy", "rms", "zcr", "centroid", "flux", "rolloff", "flatness"])
FUNCTIONAL_NAMES = ("mean", "std", "min", "max", "range", "median", "q1", "q3", "iqr",
                    "skewness", "kurtosis", "slope", "offset")

_EPS = 1e-12


@dataclass
class LldFrameMatrix:
    frames: np.ndarray  # T x D
    names: tuple
    window: float = FRAME_WINDOW
    hop: float = FRAME_HOP

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != len(self.names):
            raise ParameterError("LLD frames must be T x len(names)")
        if not np.all(np.isfinite(self.frames)):
            raise ParameterError("LLD frames contain non-finite values")


@dataclass
class AcousticFeatureVector:
    values: np.ndarray
    names: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.names),):
            raise ParameterError("feature values must align with names")


def extract_llds(rec: Recording) -> LldFrameMatrix:
    """Per-frame low-level descriptors plus first-order deltas (40 columns)."""
    win = int(round(FRAME_WINDOW * rec.rate))
    hop = int(round(FRAME_HOP * rec.rate))
    if rec.samples.size < win:
        raise ParameterError(
            f"recording of {rec.samples.size} samples is shorter than one {win}-sample frame")
    n_frames = 1 + (rec.samples.size - win) // hop
    nfft = 1 << (win - 1).bit_length()
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    fb = mel_filterbank(N_MEL_FILTERS, nfft, rec.rate)
    freqs = np.fft.rfftfreq(nfft, 1.0 / rec.rate)

    idx = hop * np.arange(n_frames)[:, None] + np.arange(win)[None, :]
    raw = rec.samples[idx]
    spectra = np.abs(np.fft.rfft(raw * hann, n=nfft, axis=1))
    power = spectra ** 2

    mel_energy = power @ fb.T
    mfcc = dct(np.log(mel_energy + _EPS), type=2, norm="ortho", axis=1)[:, :N_MFCC]

    log_energy = np.log(np.sum(raw ** 2, axis=1) + _EPS)
    rms = np.sqrt(np.mean(raw ** 2, axis=1))
    sign_flips = np.signbit(raw[:, 1:]) != np.signbit(raw[:, :-1])
    zcr = np.mean(sign_flips, axis=1)

    total = power.sum(axis=1)
    centroid = (power @ freqs) / (total + _EPS)
    flux = np.zeros(n_frames)
    if n_frames > 1:
        flux[1:] = np.linalg.norm(np.diff(spectra, axis=0), axis=1)
    cumulative = np.cumsum(power, axis=1)
    roll_idx = np.argmax(cumulative >= 0.85 * total[:, None], axis=1)
    rolloff = np.where(total > _EPS, freqs[roll_idx], 0.0)
    flatness = np.exp(np.mean(np.log(power + _EPS), axis=1)) / (np.mean(power, axis=1) + _EPS)

    llds = np.column_stack([mfcc, log_energy, rms, zcr, centroid, flux, rolloff, flatness])
    deltas = np.gradient(llds, axis=0) if n_frames > 1 else np.zeros_like(llds)
    names = LLD_NAMES + tuple(f"{n}_de" for n in LLD_NAMES)
    return LldFrameMatrix(frames=np.column_stack([llds, deltas]), names=names)


def _column_functionals(col: np.ndarray) -> list:
    t = np.arange(col.size, dtype=np.float64)
    mean = col.mean()
    m2 = np.mean((col - mean) ** 2)
    m3 = np.mean((col - mean) ** 3)
    m4 = np.mean((col - mean) ** 4)
    skew = m3 / m2 ** 1.5 if m2 > _EPS else 0.0
    kurt = m4 / m2 ** 2 if m2 > _EPS else 0.0
    q1, median, q3 = np.percentile(col, [25, 50, 75])
    t_mean = t.mean()
    denom = np.sum((t - t_mean) ** 2)
    slope = np.sum((t - t_mean) * (col - mean)) / denom
    offset = mean - slope * t_mean
    return [mean, np.sqrt(m2), col.min(), col.max(), col.max() - col.min(),
            median, q1, q3, q3 - q1, skew, kurt, slope, offset]


def apply_functionals(llds: LldFrameMatrix) -> AcousticFeatureVector:
    """Summarize every LLD column with the 13 functionals (row-major by column)."""
    if llds.frames.shape[0] < 2:
        raise ParameterError("functionals need at least 2 frames (slope is undefined)")
    values = []
    names = []
    for j, col_name in enumerate(llds.names):
        values.extend(_column_functionals(llds.frames[:, j]))
        names.extend(f"{col_name}_{f}" for f in FUNCTIONAL_NAMES)
    return AcousticFeatureVector(values=np.asarray(values), names=tuple(names))


def extract_acoustic_features(rec: Recording) -> AcousticFeatureVector:
    return apply_functionals(extract_llds(rec))


def export_acoustic_csv(rows: list, path) -> None:
    """Write (filename, AcousticFeatureVector) rows with a stable header."""
    if not rows:
        raise ParameterError("no feature rows to export")
    names = rows[0][1].names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", *names])
        for filename, feat in rows:
            if feat.names != names:
                raise ParameterError(f"inconsistent feature columns for {filename}")
            writer.writerow([filename] + [f"{v:.9g}" for v in feat.values])
