"""Pre-processing stage: zero-phase Butterworth bandpass followed by
per-recording dominant-frequency FFT filtering and reconstruction.

The transform is an iterative radix-2 FFT over the last axis (inputs are
zero-padded to the next power of two). The bandpass is designed here from the
analog Butterworth prototype via the bilinear transform with frequency
pre-warping and realized as cascaded biquads; scipy only runs the recursion.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .signal_io import PcgSignal


class FilterConfigError(ValueError):
    """A filter configuration is invalid for the signal's sample rate."""


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT bins; bin_hz = sample_rate / n."""

    bins: np.ndarray
    bin_hz: float

    @property
    def n(self) -> int:
        return self.bins.size


@dataclass(frozen=True)
class BandpassConfig:
    low_hz: float = 20.0
    high_hz: float = 250.0
    order: int = 5

    def __post_init__(self):
        if self.order < 1:
            raise FilterConfigError("order must be >= 1")
        if not 0.0 < self.low_hz < self.high_hz:
            raise FilterConfigError("need 0 < low_hz < high_hz")


@dataclass(frozen=True)
class FftFilterConfig:
    n_dominant: int = 2
    delta_hz: float = 10.0

    def __post_init__(self):
        if self.n_dominant < 1:
            raise FilterConfigError("n_dominant must be >= 1")
        if self.delta_hz <= 0:
            raise FilterConfigError("delta_hz must be positive")


def _next_pow2(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


def _bit_reverse_indices(n: int) -> np.ndarray:
    idx = np.zeros(1, dtype=np.intp)
    while idx.size < n:
        idx = np.concatenate([2 * idx, 2 * idx + 1])
    return idx


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Radix-2 decimation-in-time transform along the last axis (len = 2**k)."""
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError(f"transform length {n} is not a power of two")
    data = np.ascontiguousarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)]
    span = 2
    while span <= n:
        half = span // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / span)
        blocks = data.reshape(data.shape[:-1] + (n // span, span))
        t = blocks[..., half:] * twiddle
        blocks[..., half:] = blocks[..., :half] - t
        blocks[..., :half] += t
        span *= 2
    return data


def fft(samples, sample_rate: float = 1.0) -> Spectrum:
    """Forward transform of a real sequence, zero-padded to a power of two."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("fft input must be non-empty")
    n = _next_pow2(x.size)
    if n != x.size:
        x = np.concatenate([x, np.zeros(n - x.size)])
    return Spectrum(bins=_fft_pow2(x), bin_hz=sample_rate / n)


def ifft(spectrum: Spectrum) -> np.ndarray:
    """Inverse transform; returns the real part.

    Warns when the imaginary residue exceeds 1e-6 of the output energy, which
    indicates a spectrum that was not conjugate-symmetric.
    """
    n = spectrum.n
    full = np.conj(_fft_pow2(np.conj(spectrum.bins))) / n
    energy = float(np.sum(np.abs(full) ** 2))
    residue = float(np.sum(full.imag**2))
    if energy > 0 and residue > 1e-6 * energy:
        warnings.warn("ifft input was not conjugate-symmetric; imaginary part discarded")
    return full.real.copy()


def _butter_prototype_poles(order: int) -> np.ndarray:
    k = np.arange(order)
    return np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))


def _sos_response(sos: np.ndarray, w) -> np.ndarray:
    z = np.exp(1j * np.atleast_1d(np.asarray(w, dtype=np.float64)))
    zi = 1.0 / z
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * zi + b2 * zi**2) / (a0 + a1 * zi + a2 * zi**2)
    return h


def design_bandpass_sos(cfg: BandpassConfig, sample_rate: float) -> np.ndarray:
    """Digital Butterworth bandpass as second-order sections.

    Lowpass prototype poles -> bandpass transform -> bilinear transform with
    pre-warped edges. Each of the `order` sections carries one pole pair and
    one (z-1)(z+1) zero pair; gain is unity at the band's geometric center.
    """
    if cfg.high_hz >= sample_rate / 2:
        raise FilterConfigError(
            f"high cutoff {cfg.high_hz} Hz is not below Nyquist ({sample_rate / 2} Hz)"
        )
    fs2 = 2.0 * sample_rate
    wl = fs2 * np.tan(np.pi * cfg.low_hz / sample_rate)
    wu = fs2 * np.tan(np.pi * cfg.high_hz / sample_rate)
    bw = wu - wl
    w0sq = wl * wu

    analog = []
    for p in _butter_prototype_poles(cfg.order):
        b = bw * p
        disc = np.sqrt(b * b - 4.0 * w0sq)
        analog.extend(((b + disc) / 2.0, (b - disc) / 2.0))
    digital = np.array([(fs2 + s) / (fs2 - s) for s in analog])

    tol = 1e-10
    upper = sorted(
        (z for z in digital if z.imag > tol), key=lambda z: (z.real, z.imag)
    )
    reals = sorted(z.real for z in digital if abs(z.imag) <= tol)
    assert 2 * len(upper) + len(reals) == 2 * cfg.order

    sections = []
    for z in upper:
        sections.append([1.0, 0.0, -1.0, 1.0, -2.0 * z.real, abs(z) ** 2])
    for r1, r2 in zip(reals[0::2], reals[1::2]):
        sections.append([1.0, 0.0, -1.0, 1.0, -(r1 + r2), r1 * r2])
    sos = np.array(sections, dtype=np.float64)

    wc = 2.0 * np.arctan(np.sqrt(w0sq) / fs2)
    gain = 1.0 / abs(_sos_response(sos, wc)[0])
    sos[:, :3] *= gain ** (1.0 / len(sos))
    return sos


def butterworth_bandpass(signal: PcgSignal, cfg: BandpassConfig = BandpassConfig()) -> PcgSignal:
    """Zero-phase bandpass: the cascade is run forward and backward so event
    onsets are not delayed. The effective magnitude response is |H|^2."""
    sos = design_bandpass_sos(cfg, signal.sample_rate)
    y = scipy.signal.sosfilt(sos, signal.samples)
    y = scipy.signal.sosfilt(sos, y[::-1])[::-1]
    return PcgSignal(np.ascontiguousarray(y), signal.sample_rate)


def dominant_frequencies(spectrum: Spectrum, n: int) -> list[float]:
    """The n largest-magnitude spectral peaks in (0, Nyquist], ascending.

    A peak is a bin strictly greater than both neighbors, so one wide lobe
    cannot contribute adjacent bins; magnitude ties go to the lower frequency.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mag = np.abs(spectrum.bins)
    top = spectrum.n // 2
    ks = np.arange(1, top + 1)
    ks = ks[ks + 1 < spectrum.n]
    is_peak = (mag[ks] > mag[ks - 1]) & (mag[ks] > mag[ks + 1])
    candidates = sorted(ks[is_peak], key=lambda k: (-mag[k], k))
    if len(candidates) < n:
        warnings.warn(
            f"requested {n} dominant frequencies but found {len(candidates)} peaks"
        )
    chosen = candidates[:n]
    return sorted(float(k * spectrum.bin_hz) for k in chosen)


def fft_filter(signal: PcgSignal, cfg: FftFilterConfig = FftFilterConfig()) -> PcgSignal:
    """Keep only narrow bands around the dominant spectral peaks.

    Every bin outside the union of [f_i - delta, f_i + delta] is zeroed (the
    mask is built on mirrored bin distances, so conjugate symmetry and hence a
    real output are preserved), then the signal is rebuilt by inverse FFT.
    """
    spectrum = fft(signal.samples, signal.sample_rate)
    freqs = dominant_frequencies(spectrum, cfg.n_dominant)
    n = spectrum.n
    bin_freq = np.minimum(np.arange(n), n - np.arange(n)) * spectrum.bin_hz
    keep = np.zeros(n, dtype=bool)
    for f in freqs:
        keep |= np.abs(bin_freq - f) <= cfg.delta_hz
    filtered = np.where(keep, spectrum.bins, 0.0)
    y = ifft(Spectrum(bins=filtered, bin_hz=spectrum.bin_hz))
    return PcgSignal(y[: len(signal)], signal.sample_rate)
