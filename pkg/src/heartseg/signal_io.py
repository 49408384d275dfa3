"""Loading, resampling, and annotating PCG recordings.

WAV ingestion is a minimal little-endian RIFF parser supporting integer PCM
(8/16/24/32 bit) and 32-bit IEEE float. Ground-truth files are delimited text
with one ``time_samples,label`` row per heart sound.
"""

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VALID_LABELS = ("S1", "S2")

_WAVE_PCM = 0x0001
_WAVE_FLOAT = 0x0003
_WAVE_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE stream."""


class UnsupportedWavError(ValueError):
    """The WAVE encoding is outside integer PCM / 32-bit float."""


class AnnotationError(ValueError):
    """An annotation file is malformed or its rows are out of order."""


@dataclass(frozen=True)
class PcgSignal:
    """A mono sampled waveform, amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if samples.size == 0:
            raise ValueError("signal must contain at least one sample")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class AnnotationSet:
    """Ground-truth sound positions (sample index, label) for one recording."""

    entries: list[tuple[float, str]] = field(default_factory=list)
    recording_id: str = ""

    def times(self, label: str | None = None) -> np.ndarray:
        return np.array(
            [t for t, lab in self.entries if label is None or lab == label],
            dtype=np.float64,
        )

    def __len__(self) -> int:
        return len(self.entries)


def _decode_pcm(raw: bytes, fmt: int, bits: int) -> np.ndarray:
    if fmt == _WAVE_FLOAT:
        if bits != 32:
            raise UnsupportedWavError(f"{bits}-bit float WAV is not supported")
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if fmt != _WAVE_PCM:
        raise UnsupportedWavError(f"unsupported WAVE format tag 0x{fmt:04X}")
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        vals = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        return vals.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise UnsupportedWavError(f"{bits}-bit integer PCM is not supported")


def read_wav(path) -> PcgSignal:
    """Read a PCM or float32 WAV file as a PcgSignal.

    Integer PCM is scaled to [-1, 1] by the type's max magnitude. Multichannel
    files keep channel 0 only (a warning is emitted).
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt_tag = None
    n_channels = None
    sample_rate = None
    bits = None
    payload = None

    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise WavFormatError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise WavFormatError(f"{path}: fmt chunk too short")
            fmt_tag, n_channels, sample_rate, _, _, bits = struct.unpack_from(
                "<HHIIHH", body, 0
            )
            if fmt_tag == _WAVE_EXTENSIBLE:
                if chunk_size < 40:
                    raise WavFormatError(f"{path}: extensible fmt chunk too short")
                (fmt_tag,) = struct.unpack_from("<H", body, 24)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt_tag is None or payload is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    if n_channels < 1 or sample_rate <= 0:
        raise WavFormatError(f"{path}: invalid channel count or sample rate")

    frame_bytes = n_channels * (bits // 8)
    if frame_bytes == 0:
        raise WavFormatError(f"{path}: zero-width sample frames")
    payload = payload[: (len(payload) // frame_bytes) * frame_bytes]
    samples = _decode_pcm(payload, fmt_tag, bits)
    if n_channels > 1:
        warnings.warn(f"{path}: {n_channels} channels, keeping channel 0 only")
        samples = samples.reshape(-1, n_channels)[:, 0].copy()
    if samples.size == 0:
        raise WavFormatError(f"{path}: empty data chunk")
    return PcgSignal(samples, int(sample_rate))


def write_wav(path, signal: PcgSignal) -> None:
    """Write a signal as mono 16-bit PCM (the inverse of read_wav's scaling)."""
    scaled = np.round(signal.samples * 32768.0)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_PCM,
        1,
        signal.sample_rate,
        signal.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample(signal: PcgSignal, target_rate: int) -> PcgSignal:
    """Band-limited (windowed-sinc) resampling to target_rate.

    Output duration matches the input within one output sample. Interpolation
    weights are renormalized per output sample so a constant signal survives
    exactly, edges included.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == signal.sample_rate:
        return signal

    x = signal.samples
    n_in = x.size
    ratio = target_rate / signal.sample_rate
    n_out = max(1, int(round(n_in * ratio)))

    # cutoff at the narrower Nyquist, in input-sample units
    cutoff = min(1.0, ratio)
    zero_crossings = 32
    half = int(np.ceil(zero_crossings / cutoff))
    offsets = np.arange(-half, half + 1)

    out = np.empty(n_out, dtype=np.float64)
    chunk = max(1, min(n_out, 8192))
    for start in range(0, n_out, chunk):
        m = np.arange(start, min(start + chunk, n_out))
        pos = m / ratio
        base = np.floor(pos).astype(np.intp)
        idx = base[:, None] + offsets[None, :]
        u = idx - pos[:, None]
        taper = 0.5 + 0.5 * np.cos(np.pi * u / (half + 1))
        w = cutoff * np.sinc(cutoff * u) * taper
        w[(idx < 0) | (idx >= n_in)] = 0.0
        idx = np.clip(idx, 0, n_in - 1)
        norm = w.sum(axis=1)
        out[m] = (x[idx] * w).sum(axis=1) / norm
    return PcgSignal(out, int(target_rate))


def load_annotations(path) -> AnnotationSet:
    """Parse a delimited ``time_samples,label`` file into an AnnotationSet.

    A header row is detected by a non-numeric first field. Times must be
    strictly ascending; out-of-order rows raise rather than being sorted.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    entries: list[tuple[float, str]] = []
    delimiter = "\t" if lines and "\t" in lines[0] else ","
    for row_no, row in enumerate(csv.reader(lines, delimiter=delimiter), start=1):
        fields = [f.strip() for f in row if f.strip()]
        if not fields:
            continue
        if len(fields) != 2:
            raise AnnotationError(f"{path}: row {row_no}: expected 2 fields, got {len(fields)}")
        try:
            t = float(fields[0])
        except ValueError:
            if row_no == 1:
                continue  # header row
            raise AnnotationError(f"{path}: row {row_no}: non-numeric time {fields[0]!r}")
        label = fields[1]
        if label not in VALID_LABELS:
            raise AnnotationError(f"{path}: row {row_no}: unknown label {label!r}")
        if entries and t <= entries[-1][0]:
            raise AnnotationError(
                f"{path}: row {row_no}: time {t} not strictly after {entries[-1][0]}"
            )
        entries.append((t, label))
    return AnnotationSet(entries=entries, recording_id=Path(path).stem)
