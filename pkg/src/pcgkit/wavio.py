"""WAV file reading and writing for mono PCG recordings.

Accepts PCM 16-bit integer or 32-bit IEEE float files; multichannel input is
rejected. Amplitudes are normalized to [-1, 1] on load.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .dsp import Recording
from .errors import ParameterError


def read_wav(path, label: str | None = None, source: str | None = None) -> Recording:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ParameterError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ParameterError(
            f"{path}: unsupported sample format {data.dtype}; use PCM 16-bit or 32-bit float")
    return Recording(samples=samples, rate=float(rate), label=label, source=source)


def write_wav(path, rec: Recording, fmt: str = "pcm16") -> None:
    if fmt == "pcm16":
        clipped = np.clip(rec.samples, -1.0, 1.0)
        wavfile.write(path, int(rec.rate), (clipped * 32767.0).astype(np.int16))
    elif fmt == "float32":
        wavfile.write(path, int(rec.rate), rec.samples.astype(np.float32))
    else:
        raise ParameterError(f"unknown WAV format {fmt!r}")
