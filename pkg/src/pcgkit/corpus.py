"""Dataset handling: manifests, relabeling, fused training sets, splits, and
the synthetic PCG generator used as a desk-scale test oracle.

The generator builds cardiac cycles from Gaussian-windowed S1/S2 tone bursts
with a physiologic systolic fraction, optional band-limited murmur noise
inside systole, and additive white noise at a requested SNR. It returns the
exact ground-truth state sequence, which is what the segmentation and
end-to-end tests score against.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import BINARY, THREE_CLASS, Recording, design_bandpass
from .errors import CorpusError, ParameterError, RecipeError
from .segmentation import DIASTOLE, S1, S2, SYSTOLE, StateSequence
from .wavio import read_wav, write_wav

logger = logging.getLogger(__name__)

MURMUR_CLASSES = ("none", "mild-systolic", "severe-holosystolic")
MURMUR_TO_LABEL = {"none": "normal", "mild-systolic": "mild", "severe-holosystolic": "severe"}


# ---------------------------------------------------------------------------
# Labeled corpora
# ---------------------------------------------------------------------------


@dataclass
class CorpusEntry:
    path: str
    label: str | None
    source: str

    def load(self) -> Recording:
        return read_wav(self.path, label=self.label, source=self.source)


@dataclass
class LabeledCorpus:
    entries: list
    split: str = "all"
    label_set: tuple = THREE_CLASS

    def __len__(self):
        return len(self.entries)

    def counts(self) -> dict:
        out = {c: 0 for c in self.label_set}
        for e in self.entries:
            if e.label is not None:
                out[e.label] += 1
        return out

    def labels(self):
        return [e.label for e in self.entries]


def _normalize_label(raw: str):
    return raw.strip().lower()


def load_corpus(audio_dir, manifest_csv, source: str = "corpus") -> LabeledCorpus:
    """Read a ``filename,label`` manifest and validate it against the files.

    Labels are case-insensitive and must all come from one of the two label
    vocabularies (normal/mild/severe or normal/abnormal). All problems are
    collected and reported together.
    """
    audio_dir = Path(audio_dir)
    problems = []
    entries = []
    seen = set()
    labels_seen = set()
    with open(manifest_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["filename", "label"]:
            raise CorpusError([f"manifest {manifest_csv} must start with header 'filename,label'"])
        for row_no, row in enumerate(reader, start=2):
            fname = row["filename"].strip()
            label = _normalize_label(row["label"])
            path = audio_dir / fname
            if fname in seen:
                problems.append(f"row {row_no}: duplicate path {fname!r}")
                continue
            seen.add(fname)
            if not path.is_file():
                problems.append(f"row {row_no}: missing file {path}")
                continue
            if label not in THREE_CLASS and label not in BINARY:
                problems.append(f"row {row_no}: unknown label {row['label']!r}")
                continue
            labels_seen.add(label)
            entries.append(CorpusEntry(path=str(path), label=label, source=source))
    label_set = BINARY if labels_seen <= set(BINARY) and "abnormal" in labels_seen else THREE_CLASS
    mixed = labels_seen - set(label_set)
    if mixed:
        problems.append(f"labels mix vocabularies: {sorted(labels_seen)}")
    if problems:
        raise CorpusError(problems)
    return LabeledCorpus(entries=entries, label_set=label_set)


def imbalance_report(corpus: LabeledCorpus) -> str:
    """Per-class share summary, e.g. 'normal/mild/severe = 16.7/55.0/28.3%'."""
    counts = corpus.counts()
    total = sum(counts.values())
    if total == 0:
        return "empty corpus"
    shares = "/".join(f"{100.0 * counts[c] / total:.1f}" for c in corpus.label_set)
    names = "/".join(corpus.label_set)
    return f"{names} = {shares}% of {total} recordings"


def relabel_severity(corpus: LabeledCorpus, metadata: dict) -> LabeledCorpus:
    """Replace binary labels with 3-class labels from a per-file metadata map."""
    problems = []
    entries = []
    for e in corpus.entries:
        key = Path(e.path).name
        if key not in metadata:
            problems.append(f"no severity metadata for {key}")
            continue
        new_label = _normalize_label(metadata[key])
        if new_label not in THREE_CLASS:
            problems.append(f"{key}: unknown target label {metadata[key]!r}")
            continue
        entries.append(replace(e, label=new_label))
    if problems:
        raise CorpusError(problems)
    return LabeledCorpus(entries=entries, split=corpus.split, label_set=THREE_CLASS)


# ---------------------------------------------------------------------------
# Fused training sets
# ---------------------------------------------------------------------------


@dataclass
class FusedRecipe:
    """Which sources make up a fused set and how their labels are treated.

    ``kind`` is TL, SL, or RL. Sources listed in ``normals_only`` contribute
    only their normal-labeled recordings. RL strips every label.
    """

    kind: str
    sources: list
    normals_only: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("TL", "SL", "RL"):
            raise RecipeError(f"recipe kind must be TL, SL or RL, got {self.kind!r}")
        unknown = set(self.normals_only) - set(self.sources)
        if unknown:
            raise RecipeError(f"normals_only names absent from sources: {sorted(unknown)}")


def parse_recipe(path) -> FusedRecipe:
    """Read a flat key=value recipe file (keys: kind, sources, normals_only)."""
    values = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RecipeError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in ("kind", "sources", "normals_only"):
            raise RecipeError(f"{path}:{line_no}: unknown recipe key {key!r}")
        values[key] = val.strip()
    if "kind" not in values or "sources" not in values:
        raise RecipeError(f"{path}: recipe needs at least 'kind' and 'sources'")
    split_list = lambda s: [p.strip() for p in s.split(",") if p.strip()]
    return FusedRecipe(kind=values["kind"],
                       sources=split_list(values["sources"]),
                       normals_only=split_list(values.get("normals_only", "")))


def build_fused(sets: dict, recipe: FusedRecipe) -> LabeledCorpus:
    """Union the named source corpora according to the recipe.

    Duplicate file paths keep the first-seen entry (with a warning). Labels
    are never invented: each labeled output entry carries its source label,
    and RL recipes strip labels entirely.
    """
    missing = [name for name in recipe.sources if name not in sets]
    if missing:
        raise RecipeError(f"recipe references absent sources: {missing}")
    entries = []
    seen = set()
    label_set = THREE_CLASS
    for name in recipe.sources:
        corpus = sets[name]
        for e in corpus.entries:
            if name in recipe.normals_only and e.label != "normal":
                continue
            if e.path in seen:
                logger.warning("duplicate path %s (keeping first occurrence)", e.path)
                continue
            seen.add(e.path)
            entries.append(replace(e, label=None) if recipe.kind == "RL" else replace(e))
        if corpus.label_set == BINARY and recipe.kind != "RL":
            label_set = corpus.label_set if len(recipe.sources) == 1 else label_set
    return LabeledCorpus(entries=entries, split=recipe.kind, label_set=label_set)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split_corpus(corpus: LabeledCorpus, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle into disjoint (train, devel, test) corpora."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ParameterError(f"fractions must be three values summing to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(corpus.entries))
    n_train = int(round(fractions[0] * len(order)))
    n_devel = int(round(fractions[1] * len(order)))
    chunks = (order[:n_train], order[n_train:n_train + n_devel], order[n_train + n_devel:])
    names = ("train", "devel", "test")
    return tuple(
        LabeledCorpus(entries=[corpus.entries[i] for i in idx], split=name,
                      label_set=corpus.label_set)
        for idx, name in zip(chunks, names))


def fold_split(corpus: LabeledCorpus, n_folds: int, seed: int = 0):
    """Disjoint fold-k corpora for simple cross-validation."""
    if n_folds < 2:
        raise ParameterError("need at least 2 folds")
    order = np.random.default_rng(seed).permutation(len(corpus.entries))
    folds = []
    for k in range(n_folds):
        idx = order[k::n_folds]
        folds.append(LabeledCorpus(entries=[corpus.entries[i] for i in idx],
                                   split=f"fold-{k}", label_set=corpus.label_set))
    return folds


# ---------------------------------------------------------------------------
# Synthetic PCG generator
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Knobs for one synthetic phonocardiogram."""

    bpm: float = 60.0
    s1_freq: float = 90.0
    s2_freq: float = 120.0
    s1_dur: float = 0.100
    s2_dur: float = 0.080
    murmur: str = "none"
    snr_db: float = 30.0
    duration: float = 10.0
    rate: float = 4000.0
    seed: int = 0

    def __post_init__(self):
        if not 30.0 <= self.bpm <= 200.0:
            raise ParameterError(f"bpm must be in [30, 200], got {self.bpm}")
        if not np.isfinite(self.snr_db):
            raise ParameterError("snr_db must be finite")
        if self.murmur not in MURMUR_CLASSES:
            raise ParameterError(f"murmur must be one of {MURMUR_CLASSES}, got {self.murmur!r}")
        if self.duration <= 0 or self.rate <= 0:
            raise ParameterError("duration and rate must be positive")


def _tone_burst(t: np.ndarray, onset: float, dur: float, freq: float, amp: float) -> np.ndarray:
    sigma = dur / 6.0
    center = onset + dur / 2.0
    window = np.exp(-0.5 * ((t - center) / sigma) ** 2)
    window[(t < onset) | (t >= onset + dur)] = 0.0
    return amp * window * np.sin(2.0 * np.pi * freq * (t - onset))


def synth_pcg(cfg: SynthConfig):
    """Generate (recording, ground-truth state sequence, label).

    S1 onsets land exactly on multiples of the cycle duration. The systolic
    S1-to-S2 interval follows a simple physiologic rule (roughly 35% of the
    cycle, floored so short cycles keep a plausible diastole).
    """
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration * cfg.rate))
    t = np.arange(n) / cfg.rate
    cycle = 60.0 / cfg.bpm

    sys_gap = max(0.12, 0.35 * cycle - cfg.s1_dur)
    sys_gap = min(sys_gap, cycle - cfg.s1_dur - cfg.s2_dur - 0.05)
    sys_gap = max(sys_gap, 0.02)

    x = np.zeros(n)
    labels = np.full(n, DIASTOLE, dtype=np.int8)
    murmur_track = np.zeros(n)

    k = 0
    while k * cycle < cfg.duration:
        on1 = k * cycle
        on2 = on1 + cfg.s1_dur + sys_gap
        x += _tone_burst(t, on1, cfg.s1_dur, cfg.s1_freq, 1.0)
        x += _tone_burst(t, on2, cfg.s2_dur, cfg.s2_freq, 0.9)

        i1 = int(round(on1 * cfg.rate))
        i1e = int(round((on1 + cfg.s1_dur) * cfg.rate))
        i2 = int(round(on2 * cfg.rate))
        i2e = int(round((on2 + cfg.s2_dur) * cfg.rate))
        labels[i1: min(i1e, n)] = S1
        labels[min(i1e, n): min(i2, n)] = SYSTOLE
        labels[min(i2, n): min(i2e, n)] = S2

        if cfg.murmur != "none":
            gap_start, gap_end = on1 + cfg.s1_dur, on2
            if cfg.murmur == "mild-systolic":
                mid = (gap_start + gap_end) / 2.0
                half = (gap_end - gap_start) / 4.0
                gap_start, gap_end = mid - half, mid + half
                amp = 0.18
            else:
                amp = 0.45
            mask = (t >= gap_start) & (t < gap_end)
            if mask.any():
                span = gap_end - gap_start
                hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * (t[mask] - gap_start) / span)
                murmur_track[mask] += amp * hann
        k += 1

    if cfg.murmur != "none":
        band = design_bandpass(150.0, min(400.0, cfg.rate / 2), cfg.rate, order=120)
        half = band.order // 2
        noise = rng.standard_normal(n)
        band_noise = np.convolve(noise, band.coefficients)[half: half + n]
        band_noise /= np.std(band_noise) + 1e-12
        x += murmur_track * band_noise

    sig_power = np.mean(x ** 2)
    noise_power = sig_power / (10.0 ** (cfg.snr_db / 10.0))
    x += rng.standard_normal(n) * np.sqrt(noise_power)

    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.9 / peak

    label = MURMUR_TO_LABEL[cfg.murmur]
    rec = Recording(samples=x, rate=cfg.rate, label=label, source=f"synthetic:{cfg.seed}")
    return rec, StateSequence(labels, cfg.rate), label


def write_synth_corpus(out_dir, n: int, seed: int = 0, duration: float = 10.0,
                       bpm_range=(50.0, 120.0), snr_db: float = 20.0,
                       rate: float = 4000.0, classes=MURMUR_CLASSES):
    """Emit n WAV files plus ``manifest.csv`` and ``ground_truth.csv``.

    Recordings cycle through the murmur classes; per-file heart rates are
    drawn uniformly from ``bpm_range`` with a seeded generator, so the corpus
    is fully reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest_rows = []
    truth_rows = []
    for i in range(n):
        murmur = classes[i % len(classes)]
        bpm = float(rng.uniform(*bpm_range))
        cfg = SynthConfig(bpm=bpm, murmur=murmur, snr_db=snr_db, duration=duration,
                          rate=rate, seed=seed * 100_000 + i)
        rec, states, label = synth_pcg(cfg)
        fname = f"synth_{i:04d}.wav"
        write_wav(out_dir / fname, rec)
        manifest_rows.append((fname, label))
        for kind, onsets in (("s1_onset", states.s1_onsets()), ("s2_onset", states.s2_onsets())):
            for idx in onsets:
                truth_rows.append((fname, kind, f"{idx / rate:.6f}"))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        writer.writerows(manifest_rows)
    with open(out_dir / "ground_truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "event", "time_s"])
        writer.writerows(truth_rows)
    return out_dir / "manifest.csv"
