"""Heart-cycle segmentation and per-cycle band extraction.

States follow the cardiac cycle S1 -> systole -> S2 -> diastole -> S1. The
segmenter runs a duration-constrained Viterbi decode over that 4-state cyclic
chain: emissions come from normalized homomorphic and Hilbert envelopes, and
state-duration priors are Gaussians whose systole/diastole means are derived
from the heart rate estimated by autocorrelation of the homomorphic envelope.
Decoding happens on a decimated envelope frame grid and the optimal path is
expanded back to sample resolution.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt, hilbert

from .dsp import FirFilter, Recording, design_bandpass, fir_apply
from .errors import NoCyclesError, ParameterError

logger = logging.getLogger(__name__)

S1, SYSTOLE, S2, DIASTOLE = 0, 1, 2, 3
STATE_NAMES = ("S1", "systole", "S2", "diastole")

CYCLE_SAMPLES = 2500  # 2.5 s at the 1000 Hz working rate


@dataclass
class StateSequence:
    """Per-sample cardiac state labels; runs always cycle in order."""

    labels: np.ndarray
    rate: float

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.ndim != 1:
            raise ParameterError("state labels must be 1D")
        if self.labels.size:
            changes = np.nonzero(np.diff(self.labels))[0]
            prev = self.labels[changes]
            nxt = self.labels[changes + 1]
            if np.any(nxt != (prev + 1) % 4):
                raise ParameterError("state runs must cycle S1 -> systole -> S2 -> diastole")

    def runs(self):
        """(state, start, end_exclusive) for each run of equal labels."""
        if self.labels.size == 0:
            return []
        changes = np.nonzero(np.diff(self.labels))[0] + 1
        starts = np.concatenate([[0], changes])
        ends = np.concatenate([changes, [self.labels.size]])
        return [(int(self.labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]

    def onsets(self, state: int) -> np.ndarray:
        """Sample indices where ``state`` begins (including index 0)."""
        hits = [s for st, s, _ in self.runs() if st == state]
        return np.asarray(hits, dtype=int)

    def s1_onsets(self) -> np.ndarray:
        return self.onsets(S1)

    def s2_onsets(self) -> np.ndarray:
        return self.onsets(S2)


@dataclass
class CardiacCycle:
    """Fixed-length four-band matrix for one S1-to-S1 span."""

    bands: np.ndarray
    parent: str
    index: int
    length: int  # unpadded span length in samples

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=np.float64)
        if self.bands.shape != (4, CYCLE_SAMPLES):
            raise ParameterError(f"cycle bands must be 4 x {CYCLE_SAMPLES}, got {self.bands.shape}")


@dataclass
class SegmentationConfig:
    """Duration bounds and emission settings for the Viterbi decoder."""

    frame_rate: float = 50.0
    emission_band: tuple = (25.0, 140.0)
    s1_mean: float = 0.122
    s1_std: float = 0.030
    s2_mean: float = 0.092
    s2_std: float = 0.030
    sys_std: float = 0.025
    dia_std: float = 0.050
    hr_min: float = 30.0
    hr_max: float = 200.0
    min_sys_interval: float = 0.15
    on_silence: str = "raise"  # "raise" | "empty"


# ---------------------------------------------------------------------------
# Envelopes and heart-rate estimation
# ---------------------------------------------------------------------------


def _zero_phase_bandpass(x: np.ndarray, low: float, high: float, rate: float) -> np.ndarray:
    filt = design_bandpass(low, min(high, rate / 2), rate, order=60)
    half = filt.order // 2
    return np.convolve(x, filt.coefficients)[half: half + x.size]


def _envelopes(x: np.ndarray, rate: float):
    """Normalized (homomorphic, hilbert) envelopes of a band-limited signal."""
    analytic_abs = np.abs(hilbert(x))
    b_lp, a_lp = butter(2, 8.0 / (rate / 2), btype="low")
    hom = np.exp(filtfilt(b_lp, a_lp, np.log(analytic_abs + 1e-10)))
    b_hi, a_hi = butter(2, 20.0 / (rate / 2), btype="low")
    hil = filtfilt(b_hi, a_hi, analytic_abs)

    def norm(e):
        span = e.max() - e.min()
        return (e - e.min()) / span if span > 0 else np.zeros_like(e)

    return norm(hom), norm(hil)


def _to_frames(env: np.ndarray, rate: float, frame_rate: float) -> np.ndarray:
    n_frames = int(np.floor(env.size / rate * frame_rate))
    centers = (np.arange(n_frames) + 0.5) / frame_rate
    return np.interp(centers, np.arange(env.size) / rate, env)


def _autocorr_peak_lag(env: np.ndarray, frame_rate: float, lo_s: float, hi_s: float) -> float:
    """Lag (seconds) of the strongest autocorrelation peak in [lo_s, hi_s]."""
    e = env - env.mean()
    ac = np.correlate(e, e, mode="full")[e.size - 1:]
    ac = ac / (ac[0] + 1e-12)
    lo = max(1, int(round(lo_s * frame_rate)))
    hi = min(ac.size - 1, int(round(hi_s * frame_rate)))
    if hi <= lo:
        return lo_s
    return (lo + int(np.argmax(ac[lo: hi + 1]))) / frame_rate


def estimate_heart_rate(env_frames: np.ndarray, cfg: SegmentationConfig):
    """(heart_rate_bpm, s1_to_s2_interval_s) from envelope autocorrelation."""
    e = env_frames - env_frames.mean()
    ac = np.correlate(e, e, mode="full")[e.size - 1:]
    ac = ac / (ac[0] + 1e-12)
    lo = max(1, int(round(60.0 / cfg.hr_max * cfg.frame_rate)))
    hi = min(ac.size - 1, int(round(60.0 / cfg.hr_min * cfg.frame_rate)))
    best = lo + int(np.argmax(ac[lo: hi + 1])) if hi > lo else lo
    # octave-error guard: prefer the shortest subharmonic lag nearly as strong
    for divisor in (4, 3, 2):
        sub = int(round(best / divisor))
        if sub >= lo and ac[sub] >= 0.75 * ac[best]:
            best = sub
            break
    cycle = best / cfg.frame_rate
    sys_interval = _autocorr_peak_lag(env_frames, cfg.frame_rate,
                                      cfg.min_sys_interval, 0.55 * cycle)
    return 60.0 / cycle, sys_interval


# ---------------------------------------------------------------------------
# Duration-constrained Viterbi
# ---------------------------------------------------------------------------


def _duration_models(cfg: SegmentationConfig, cycle_s: float, sys_interval_s: float):
    """Per-state (dmin, dmax, log_pdf_array) on the frame grid."""
    fr = cfg.frame_rate
    means = np.array([
        cfg.s1_mean,
        max(sys_interval_s - cfg.s1_mean, 0.05),
        cfg.s2_mean,
        max(cycle_s - sys_interval_s - cfg.s2_mean, 0.05),
    ])
    stds = np.array([cfg.s1_std, cfg.sys_std, cfg.s2_std, cfg.dia_std])

    models = []
    for mean, std in zip(means, stds):
        dmin = max(1, int(np.floor((mean - 3 * std) * fr)))
        dmax = max(dmin, int(np.ceil((mean + 3 * std) * fr)))
        d = np.arange(dmax + 1, dtype=np.float64)
        logp = -0.5 * ((d / fr - mean) / std) ** 2
        sl = slice(dmin, dmax + 1)
        logp[sl] -= np.log(np.sum(np.exp(logp[sl])) + 1e-300)
        models.append((dmin, dmax, logp))
    return models


def _viterbi_decode(emis: np.ndarray, models) -> np.ndarray:
    """Optimal state-per-frame path for a cyclic 4-state duration HSMM."""
    T = emis.shape[0]
    NEG = -1e18
    cum = np.vstack([np.zeros(4), np.cumsum(emis, axis=0)])  # cum[t] = sum emis[:t]
    delta = np.full((T, 4), NEG)
    bp = np.zeros((T, 4), dtype=np.int32)

    # runs starting at frame 0 (duration below dmin allowed: left truncation)
    for j, (dmin, dmax, logp) in enumerate(models):
        d = np.arange(1, min(dmax, T) + 1)
        lp = logp[np.clip(d, dmin, dmax)]
        t_end = d - 1
        score = np.log(0.25) + lp + (cum[t_end + 1, j] - cum[0, j])
        delta[t_end, j] = score
        bp[t_end, j] = d

    for t in range(1, T):
        for j, (dmin, dmax, logp) in enumerate(models):
            hi = min(dmax, t)  # start = t-d+1 >= 1
            if hi < dmin:
                continue
            d = np.arange(dmin, hi + 1)
            score = delta[t - d, (j - 1) % 4] + logp[d] + (cum[t + 1, j] - cum[t - d + 1, j])
            k = int(np.argmax(score))
            if score[k] > delta[t, j]:
                delta[t, j] = score[k]
                bp[t, j] = d[k]

    # termination: the final run may be cut short by the end of the recording
    best = (NEG, 0, 0)
    for j, (dmin, dmax, logp) in enumerate(models):
        d = np.arange(1, min(dmax, T) + 1)
        lp = logp[np.clip(d, dmin, dmax)]
        start = T - d
        ew = cum[T, j] - cum[start, j]
        base = np.where(start == 0, np.log(0.25),
                        delta[np.maximum(start - 1, 0), (j - 1) % 4])
        cand = base + lp + ew
        k = int(np.argmax(cand))
        if cand[k] > best[0]:
            best = (float(cand[k]), j, int(d[k]))

    _, j, d = best
    labels = np.zeros(T, dtype=np.int8)
    t = T - 1
    while True:
        start = t - d + 1
        labels[start: t + 1] = j
        if start <= 0:
            break
        t = start - 1
        j = (j - 1) % 4
        d = int(bp[t, j])
        if d <= 0:
            raise RuntimeError("viterbi backtrace hit an unreachable cell")
    return labels


def segment(rec: Recording, cfg: SegmentationConfig | None = None,
            return_info: bool = False):
    """Label every sample of a recording with its cardiac state.

    The recording should already be resampled to the working rate and
    spike-removed. Silence raises ``NoCyclesError`` unless
    ``cfg.on_silence == "empty"``, in which case an all-diastole path comes
    back and downstream cycle extraction yields an empty list.
    """
    cfg = cfg or SegmentationConfig()
    x = rec.samples
    min_cycle_s = 60.0 / cfg.hr_max
    if rec.duration < min_cycle_s:
        raise NoCyclesError(
            f"recording of {rec.duration:.3f}s is shorter than one minimal cycle "
            f"({min_cycle_s:.3f}s at {cfg.hr_max:.0f} bpm)")

    banded = _zero_phase_bandpass(x, cfg.emission_band[0], cfg.emission_band[1], rec.rate)
    peak = np.max(np.abs(banded))
    if peak < 1e-8:
        if cfg.on_silence == "empty":
            states = StateSequence(np.full(x.size, DIASTOLE, dtype=np.int8), rec.rate)
            return (states, {}) if return_info else states
        raise NoCyclesError("recording is silent; no cycles to segment")

    hom, hil = _envelopes(banded, rec.rate)
    hom_f = _to_frames(hom, rec.rate, cfg.frame_rate)
    hil_f = _to_frames(hil, rec.rate, cfg.frame_rate)

    heart_rate, sys_interval = estimate_heart_rate(hom_f, cfg)
    models = _duration_models(cfg, 60.0 / heart_rate, sys_interval)

    eps = 1e-6
    sound = 0.5 * (np.log(hom_f + eps) + np.log(hil_f + eps))
    silence = 0.5 * (np.log(1.0 - hom_f + eps) + np.log(1.0 - hil_f + eps))
    emis = np.stack([sound, silence, sound, silence], axis=1)

    frame_labels = _viterbi_decode(emis, models)
    idx = np.minimum((np.arange(x.size) / rec.rate * cfg.frame_rate).astype(int),
                     frame_labels.size - 1)
    states = StateSequence(frame_labels[idx], rec.rate)
    if return_info:
        info = {
            "heart_rate_bpm": heart_rate,
            "sys_interval_s": sys_interval,
            "duration_bounds_frames": [(m[0], m[1]) for m in models],
            "frame_rate": cfg.frame_rate,
        }
        return states, info
    return states


# ---------------------------------------------------------------------------
# Cycle extraction
# ---------------------------------------------------------------------------


def extract_cycles(rec: Recording, states: StateSequence,
                   filters: list[FirFilter] | None,
                   parent: str = "") -> list[CardiacCycle]:
    """Cut one fixed-length cycle per complete S1-to-S1 span.

    Each band is the causal FIR response of the span (or the raw span
    replicated when ``filters`` is None, for learnable front-ends), zero
    padded to 2.5 s. Longer spans are truncated with a warning; leading and
    trailing partial cycles are discarded.
    """
    onsets = states.s1_onsets()
    cycles = []
    for i in range(len(onsets) - 1):
        span = rec.samples[onsets[i]: onsets[i + 1]]
        if span.size > CYCLE_SAMPLES:
            logger.warning("cycle %d of %s is %d samples; truncating to %d",
                           i, parent or "recording", span.size, CYCLE_SAMPLES)
            span = span[:CYCLE_SAMPLES]
        padded_len = span.size
        if filters is None:
            row = np.zeros(CYCLE_SAMPLES)
            row[:padded_len] = span
            bands = np.tile(row, (4, 1))
        else:
            if len(filters) != 4:
                raise ParameterError(f"expected 4 band filters, got {len(filters)}")
            bands = np.zeros((4, CYCLE_SAMPLES))
            for b, filt in enumerate(filters):
                bands[b, :padded_len] = fir_apply(filt, span)
        cycles.append(CardiacCycle(bands=bands, parent=parent, index=i, length=padded_len))
    return cycles


def export_states_csv(states: StateSequence, path) -> None:
    """Write the per-sample state path as ``sample_index,state`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "state"])
        for i, lab in enumerate(states.labels):
            writer.writerow([i, STATE_NAMES[lab]])
