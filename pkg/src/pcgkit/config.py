"""Flat key=value run configuration with schema validation.

Every knob a subcommand consumes is declared here with its type and default.
Configs come from an optional file plus command-line overrides; unknown keys
are rejected, and the effective configuration is snapshotted into the run
directory so any run can be reproduced bit for bit.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ParameterError

SCHEMA = {
    # global
    "seed": (int, 0),
    "rate": (float, 1000.0),
    # synthesis
    "synth_n": (int, 30),
    "synth_duration": (float, 10.0),
    "synth_snr_db": (float, 20.0),
    "synth_rate": (float, 4000.0),
    "synth_bpm_low": (float, 50.0),
    "synth_bpm_high": (float, 120.0),
    # spectrograms
    "bands": (int, 126),
    "window": (float, 0.320),
    "hop": (float, 0.160),
    "clip_seconds": (float, 30.0),
    "thresholds": (str, "-30,-45,-60,-75"),
    # CNN
    "front": (str, "linear_phase"),  # none | free | linear_phase
    "kernel_len": (int, 61),
    "hidden": (str, "239,20"),
    "epochs": (int, 200),
    "lr": (float, 4.5e-5),
    "pretrain_lr": (float, 1e-3),
    "batch_size": (int, 64),
    "dropout": (float, 0.5),
    "freeze_front": (bool, False),
    "stop_at_uar": (float, 0.0),  # 0 disables early stopping
    # autoencoder
    "ae_hidden": (int, 256),
    "ae_epochs": (int, 100),
    "ae_lr": (float, 0.05),
    "ae_frame_step": (int, 2),
    # shallow classifiers
    "svm_c": (float, 1e-4),
    "svm_tol": (float, 0.3),
    "lda_shrinkage": (float, 0.1),
}


def _coerce(key: str, raw):
    kind, _ = SCHEMA[key]
    if isinstance(raw, kind):
        return raw
    text = str(raw).strip()
    if kind is bool:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ParameterError(f"config key {key!r}: expected a boolean, got {raw!r}")
    try:
        return kind(text)
    except ValueError:
        raise ParameterError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}")


class RunConfig:
    """Validated settings: schema defaults, then file values, then overrides."""

    def __init__(self, file_path=None, overrides=None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        self.provenance = {k: "default" for k in SCHEMA}
        if file_path is not None:
            for key, raw in self._parse_file(file_path):
                self._set(key, raw, f"file:{file_path}")
        for key, raw in (overrides or []):
            self._set(key, raw, "flag")

    @staticmethod
    def _parse_file(path):
        pairs = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            pairs.append((key.strip(), val.strip()))
        return pairs

    def _set(self, key, raw, source):
        if key not in SCHEMA:
            raise ParameterError(f"unknown config key {key!r} (from {source})")
        self.values[key] = _coerce(key, raw)
        self.provenance[key] = source

    def __getattr__(self, key):
        values = object.__getattribute__(self, "values")
        if key in values:
            return values[key]
        raise AttributeError(key)

    def threshold_list(self) -> list:
        return [float(t) for t in self.thresholds.split(",") if t.strip()]

    def hidden_widths(self) -> tuple:
        return tuple(int(h) for h in self.hidden.split(",") if h.strip())

    def front_variant(self):
        return None if self.front == "none" else self.front

    def snapshot(self, path) -> None:
        """Write the exact effective configuration, sufficient to reproduce a run."""
        lines = [f"{k}={self.values[k]}" for k in sorted(self.values)]
        Path(path).write_text("\n".join(lines) + "\n")
