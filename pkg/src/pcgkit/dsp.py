"""Waveform-level DSP primitives.

Covers the front half of the pipeline: rational resampling with anti-alias
filtering, window-method FIR band-pass design, causal FIR application,
iterative spike removal, mel-spectrogram extraction, and dB thresholding
with unit rescaling for the autoencoder input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import ParameterError

THREE_CLASS = ("normal", "mild", "severe")
BINARY = ("normal", "abnormal")

# Static four-band decomposition used before a learnable front-end takes over.
BAND_EDGES_HZ = ((25.0, 45.0), (45.0, 80.0), (80.0, 200.0), (200.0, 500.0))


@dataclass
class Recording:
    """A mono waveform with its sample rate and optional label/provenance."""

    samples: np.ndarray
    rate: float
    label: str | None = None
    source: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.rate <= 0:
            raise ParameterError(f"sample rate must be positive, got {self.rate}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ParameterError("samples must be a non-empty 1D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("samples contain non-finite values")

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate

    def with_samples(self, samples, rate=None) -> "Recording":
        return replace(self, samples=np.asarray(samples, dtype=np.float64),
                       rate=self.rate if rate is None else rate)


@dataclass
class FirFilter:
    """FIR filter coefficients b_0..b_N (order N = len - 1)."""

    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.ndim != 1 or self.coefficients.size == 0:
            raise ParameterError("coefficients must be a non-empty 1D array")
        if not np.all(np.isfinite(self.coefficients)):
            raise ParameterError("coefficients contain non-finite values")

    @property
    def order(self) -> int:
        return self.coefficients.size - 1


@dataclass
class MelSpectrogram:
    """T x B mel-band frames in dB relative to the recording maximum (0 dB)."""

    frames: np.ndarray
    bands: int
    window: float
    hop: float
    floor: float | None = None  # dB threshold already applied, if any
    rate: float = 0.0
    name: str | None = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.bands:
            raise ParameterError(
                f"frames must be T x {self.bands}, got shape {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# FIR design (window method, exact symmetry by construction)
# ---------------------------------------------------------------------------


def _hamming_sinc_taps(numtaps: int, cutoffs, rate: float) -> np.ndarray:
    """Windowed-sinc taps over integer offsets, so symmetry is bit-exact.

    ``cutoffs`` is (high,) for low-pass or (low, high) for band-pass, in Hz.
    """
    half = (numtaps - 1) // 2
    m = np.arange(numtaps) - half  # symmetric integer grid
    nyq = rate / 2.0
    if len(cutoffs) == 1:
        c = cutoffs[0] / nyq
        h = c * np.sinc(m * c)
    else:
        lo, hi = cutoffs[0] / nyq, cutoffs[1] / nyq
        h = hi * np.sinc(m * hi) - lo * np.sinc(m * lo)
    window = 0.54 + 0.46 * np.cos(np.pi * m / half) if half > 0 else np.ones(1)
    return h * window


def design_bandpass(low: float, high: float, rate: float, order: int = 60) -> FirFilter:
    """Linear-phase Hamming-window band-pass FIR of even ``order``.

    ``high`` may equal the Nyquist frequency, in which case the band behaves
    as a high-pass from ``low``.
    """
    if not (0 < low < high <= rate / 2):
        raise ParameterError(
            f"band edges must satisfy 0 < low < high <= rate/2, got ({low}, {high}) at {rate} Hz")
    if order <= 0 or order % 2 != 0:
        raise ParameterError(f"order must be a positive even integer, got {order}")
    taps = _hamming_sinc_taps(order + 1, (low, high), rate)
    # Narrow bands lose gain to the window's transition width; normalize the
    # band center to exactly 0 dB (a real scalar, so symmetry is untouched).
    center = (low + high) / 2.0
    n = np.arange(taps.size)
    gain = abs(np.sum(taps * np.exp(-2j * np.pi * center * n / rate)))
    return FirFilter(taps / gain)


def design_lowpass(cutoff: float, rate: float, order: int = 60) -> FirFilter:
    if not (0 < cutoff <= rate / 2):
        raise ParameterError(f"cutoff must be in (0, rate/2], got {cutoff} at {rate} Hz")
    if order <= 0 or order % 2 != 0:
        raise ParameterError(f"order must be a positive even integer, got {order}")
    return FirFilter(_hamming_sinc_taps(order + 1, (cutoff,), rate))


def fir_apply(filt: FirFilter, x: np.ndarray) -> np.ndarray:
    """Causal FIR filtering: y[n] = sum_i b_i x[n-i], zero-extended, same length."""
    x = np.asarray(x, dtype=np.float64)
    return np.convolve(x, filt.coefficients)[: x.size]


def default_filterbank(rate: float = 1000.0, order: int = 60) -> list[FirFilter]:
    """The four-band decomposition filter set at the working rate."""
    nyq = rate / 2.0
    return [design_bandpass(lo, min(hi, nyq), rate, order) for lo, hi in BAND_EDGES_HZ]


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample(rec: Recording, target_rate: float) -> Recording:
    """Polyphase rational resampling with a windowed-sinc anti-alias filter.

    The low-pass cutoff sits at 0.45 x min(input, output) Nyquist, applied
    before decimation, so downsampling is alias-free and DC gain is preserved.
    """
    if target_rate <= 0:
        raise ParameterError(f"target rate must be positive, got {target_rate}")
    if target_rate == rec.rate:
        return rec.with_samples(rec.samples.copy())

    ratio = Fraction(target_rate / rec.rate).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator

    fs_up = rec.rate * up
    cutoff = 0.45 * min(rec.rate, target_rate)
    # Tap count scales with the up/down factor so the transition band stays sharp.
    half = 32 * max(up, down)
    taps = _hamming_sinc_taps(2 * half + 1, (cutoff,), fs_up)
    taps /= taps.sum()  # exact unit DC gain
    taps *= up  # compensate zero-stuffing gain loss

    x_up = np.zeros(rec.samples.size * up)
    x_up[::up] = rec.samples
    filtered = np.convolve(x_up, taps)[half: half + x_up.size]  # zero-phase alignment
    return rec.with_samples(filtered[::down], rate=target_rate)


# ---------------------------------------------------------------------------
# Spike removal (iterative windowed max-amplitude criterion)
# ---------------------------------------------------------------------------


def remove_spikes(rec: Recording, window_s: float = 0.5, max_iter: int | None = None) -> Recording:
    """Zero out isolated amplitude spikes between their bracketing zero crossings.

    The signal is split into non-overlapping windows (default 500 ms); while
    the loudest window's max absolute amplitude (MAA) exceeds 3x the median
    window MAA, the spike in that window is located and the samples between
    the nearest zero crossings around it are cleared. Length is preserved.
    """
    x = rec.samples.copy()
    win = int(round(window_s * rec.rate))
    n_win = x.size // win
    if n_win < 1:
        return rec.with_samples(x)

    if max_iter is None:
        max_iter = x.size  # every iteration zeroes at least one sample

    for _ in range(max_iter):
        frames = np.abs(x[: n_win * win]).reshape(n_win, win)
        maa = frames.max(axis=1)
        med = np.median(maa)
        worst = int(np.argmax(maa))
        if maa[worst] <= 3.0 * med:
            break
        start = worst * win
        seg = x[start: start + win]
        pos = int(np.argmax(np.abs(seg)))
        sign = np.sign(seg)
        crossings = np.nonzero(np.diff(sign) != 0)[0]  # crossing between i and i+1
        before = crossings[crossings < pos]
        after = crossings[crossings >= pos]
        lo = int(before[-1]) + 1 if before.size else 0
        hi = int(after[0]) + 1 if after.size else win
        seg[lo:hi] = 0.0
    return rec.with_samples(x)


# ---------------------------------------------------------------------------
# Mel spectrogram and dB thresholding
# ---------------------------------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, nfft: int, rate: float,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters as an (n_bands, nfft//2 + 1) weight matrix."""
    fmax = rate / 2.0 if fmax is None else fmax
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_bands + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bins = np.floor((nfft + 1) * hz_pts / rate).astype(int)
    fb = np.zeros((n_bands, nfft // 2 + 1))
    for j in range(n_bands):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            if center > left:
                fb[j, i] = (i - left) / (center - left)
        for i in range(center, right):
            if right > center:
                fb[j, i] = (right - i) / (right - center)
    return fb


def frame_count(n_samples: int, win: int, hop: int) -> int:
    """Closed-form frame count for a hop-advanced sliding window."""
    return 1 + (n_samples - win) // hop


def mel_spectrogram(rec: Recording, bands: int = 126,
                    window: float = 0.320, hop: float = 0.160) -> MelSpectrogram:
    """Mel power spectrogram in dB relative to the recording maximum.

    Window and hop are in seconds; the defaults give 50% overlap. The loudest
    cell of the output is exactly 0 dB.
    """
    if window < hop:
        raise ParameterError(f"window ({window}s) must be >= hop ({hop}s)")
    win = int(round(window * rec.rate))
    hop_n = int(round(hop * rec.rate))
    if rec.samples.size < win:
        raise ParameterError(
            f"recording of {rec.samples.size} samples is shorter than one {win}-sample window")

    n_frames = frame_count(rec.samples.size, win, hop_n)
    nfft = 1 << (win - 1).bit_length()
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    fb = mel_filterbank(bands, nfft, rec.rate)

    idx = hop_n * np.arange(n_frames)[:, None] + np.arange(win)[None, :]
    frames = rec.samples[idx] * hann
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    mel_power = power @ fb.T

    db = 10.0 * np.log10(mel_power + 1e-30)
    db -= db.max()
    return MelSpectrogram(frames=db, bands=bands, window=window, hop=hop,
                          rate=rec.rate, name=rec.source)


def threshold_db(spec: MelSpectrogram, floor: float) -> MelSpectrogram:
    """Clamp spectrogram values below ``floor`` dB up to ``floor``."""
    if floor >= 0:
        raise ParameterError(f"floor must be a negative dB value, got {floor}")
    return replace(spec, frames=np.maximum(spec.frames, floor), floor=floor)


def unit_scale(spec: MelSpectrogram) -> np.ndarray:
    """Affinely rescale a thresholded spectrogram to [0, 1] per recording.

    The floor maps to 0 and the per-recording maximum to 1; this is the
    autoencoder's input convention.
    """
    if spec.floor is None:
        raise ParameterError("unit_scale expects a thresholded spectrogram (floor set)")
    span = spec.frames.max() - spec.floor
    if span <= 0:
        return np.zeros_like(spec.frames)
    return (spec.frames - spec.floor) / span
