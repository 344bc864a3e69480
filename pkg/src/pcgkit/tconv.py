"""Learnable FIR filterbank front-end built from time-convolution layers.

A tConv layer with linear activation and zero bias computes

    y[n] = beta + sum_i b_i x[n + N/2 - i]

over zero-padded edges, which is an order-N FIR filter advanced by N/2
samples. Kernels are trainable, so the layer learns filterbank coefficients
by gradient descent. The linear-phase variant stores only the first half of
the kernel and mirrors it each forward pass, which keeps b[i] == b[N-i] exact
at every step of training; gradients of both mirror positions fold back onto
the shared half.
"""

from __future__ import annotations

import csv

import numpy as np

from .autograd import Parameter, Tensor, add, concat, conv1d, relu, reshape
from .dsp import FirFilter
from .errors import ParameterError
from .layers import he_uniform


def lp_constrain(half: Tensor) -> Tensor:
    """Mirror a length-(N/2 + 1) half kernel into a symmetric length-(N+1) kernel."""
    return concat([half, half[:-1][::-1]], axis=0)


class TConvLayer:
    """One learnable FIR filter as a same-padded 1D convolution."""

    def __init__(self, coefficients: np.ndarray, name: str,
                 variant: str = "free", activation: str = "linear"):
        coefficients = np.asarray(coefficients, dtype=np.float64)
        if coefficients.ndim != 1 or coefficients.size % 2 == 0:
            raise ParameterError("tConv kernels must be 1D with odd length")
        if variant not in ("free", "linear_phase"):
            raise ParameterError(f"unknown tConv variant {variant!r}")
        if activation not in ("linear", "relu"):
            raise ParameterError(f"unknown tConv activation {activation!r}")
        self.variant = variant
        self.activation = activation
        self.kernel_len = coefficients.size
        self.name = name
        if variant == "linear_phase":
            half_len = coefficients.size // 2 + 1
            if not np.array_equal(coefficients[: half_len - 1],
                                  coefficients[:-half_len:-1]):
                raise ParameterError(
                    "linear-phase tConv requires symmetric initial coefficients")
            self.half = Parameter(coefficients[:half_len].copy(), f"{name}.half")
            self.kernel = None
        else:
            self.kernel = Parameter(coefficients.copy(), f"{name}.kernel")
            self.half = None
        self.bias = Parameter(np.zeros(()), f"{name}.bias")

    @classmethod
    def random(cls, kernel_len: int, rng: np.random.Generator, name: str,
               variant: str = "free", activation: str = "linear") -> "TConvLayer":
        coeffs = he_uniform(rng, (kernel_len,), kernel_len)
        if variant == "linear_phase":
            half = coeffs[: kernel_len // 2 + 1]
            coeffs = np.concatenate([half, half[:-1][::-1]])
        return cls(coeffs, name, variant=variant, activation=activation)

    def kernel_tensor(self) -> Tensor:
        """The full kernel as a graph node (mirrored for the LP variant)."""
        return lp_constrain(self.half) if self.variant == "linear_phase" else self.kernel

    def coefficients(self) -> np.ndarray:
        return self.kernel_tensor().data.copy()

    def parameters(self):
        core = self.half if self.variant == "linear_phase" else self.kernel
        return [core, self.bias]

    def apply(self, x: Tensor) -> Tensor:
        """Filter a (B, 1, L) tensor, preserving length."""
        k = reshape(self.kernel_tensor(), (1, 1, self.kernel_len))
        out = add(conv1d(x, k, mode="same"), self.bias)
        return relu(out) if self.activation == "relu" else out


def tconv_forward(layer: TConvLayer, x: np.ndarray) -> np.ndarray:
    """Run one sequence through a tConv layer (inference path)."""
    x = np.asarray(x, dtype=np.float64)
    out = layer.apply(Tensor(x.reshape(1, 1, -1)))
    return out.data[0, 0]


def init_from_filterbank(designs: list[FirFilter], variant: str = "free",
                         activation: str = "linear", name: str = "tconv") -> list[TConvLayer]:
    """Build one trainable tConv layer per static band-pass design."""
    lengths = {d.coefficients.size for d in designs}
    if len(lengths) != 1:
        raise ParameterError(f"designs must share one kernel length, got {sorted(lengths)}")
    if next(iter(lengths)) % 2 == 0:
        raise ParameterError("designs must have odd length (even order)")
    return [TConvLayer(d.coefficients, f"{name}{i}", variant=variant, activation=activation)
            for i, d in enumerate(designs)]


# ---------------------------------------------------------------------------
# Filter analysis
# ---------------------------------------------------------------------------


def frequency_response(coefficients: np.ndarray, rate: float, nfft: int = 4096):
    """(freqs_hz, magnitude_db, phase_rad) of an FIR kernel on an FFT grid."""
    h = np.fft.rfft(coefficients, n=nfft)
    freqs = np.fft.rfftfreq(nfft, 1.0 / rate)
    mag_db = 20.0 * np.log10(np.abs(h) + 1e-300)
    phase = np.unwrap(np.angle(h))
    return freqs, mag_db, phase


def group_delay(coefficients: np.ndarray, nfft: int = 8192, mag_threshold: float = 1e-3):
    """Group delay tau(w) = Re(FFT(n h) / FFT(h)) in samples.

    Returns (freqs_normalized, tau, mask) where ``mask`` marks bins with
    |H| above ``mag_threshold`` (tau is meaningless where H vanishes).
    """
    coefficients = np.asarray(coefficients, dtype=np.float64)
    h_fft = np.fft.rfft(coefficients, n=nfft)
    g_fft = np.fft.rfft(np.arange(coefficients.size) * coefficients, n=nfft)
    mask = np.abs(h_fft) > mag_threshold
    tau = np.zeros_like(np.real(h_fft))
    tau[mask] = np.real(g_fft[mask] / h_fft[mask])
    freqs = np.fft.rfftfreq(nfft)
    return freqs, tau, mask


def export_filter_analysis(layers: list[TConvLayer], path, rate: float, nfft: int = 4096) -> None:
    """Write per-layer (frequency Hz, magnitude dB, phase rad) rows as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "frequency_hz", "magnitude_db", "phase_rad"])
        for layer in layers:
            freqs, mag, phase = frequency_response(layer.coefficients(), rate, nfft)
            for f, m, p in zip(freqs, mag, phase):
                writer.writerow([layer.name, f"{f:.6f}", f"{m:.9f}", f"{p:.9f}"])
