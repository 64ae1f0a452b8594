"""STFT/iSTFT framing, the rectangular ERB filterbank and WAV I/O.

Conventions: multichannel signals are ``(channels, samples)``; spectrograms
are ``(channels, frames, bins)`` with ``bins = fft_size // 2 + 1``. The
forward transform uses ``numpy.fft.rfft`` (``exp(-i w t)`` kernel), so a
signal that arrives ``tau`` seconds *earlier* at a microphone picks up a
phase of ``+2 pi f tau`` relative to the reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .errors import DataError

__all__ = [
    "StftParams", "Spectrogram", "stft", "istft", "make_window",
    "ErbFilterbank", "build_erb_filterbank", "erb_compress", "erb_expand",
    "hz_to_erb_rate", "erb_rate_to_hz", "read_wav", "write_wav",
]

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftParams:
    sample_rate: int = SAMPLE_RATE
    frame_len: int = 512
    hop: int = 128
    fft_size: int = 512
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.frame_len > self.fft_size:
            raise ValueError("frame_len must not exceed fft_size")
        if self.hop <= 0 or self.frame_len % self.hop:
            raise ValueError("hop must divide frame_len")
        w2 = make_window(self.window, self.frame_len) ** 2
        ola = w2.reshape(-1, self.hop).sum(axis=0)
        if not np.allclose(ola, ola[0], rtol=1e-10, atol=0) or ola[0] <= 0:
            raise ValueError(f"window {self.window!r} is not COLA at hop {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.frame_len - self.hop

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.fft_size

    def n_frames(self, n_samples: int) -> int:
        """Frame count for a signal of ``n_samples`` after boundary padding."""
        padded = n_samples + 2 * self.pad
        return 1 + -(-(padded - self.frame_len) // self.hop)


def make_window(name: str, n: int) -> np.ndarray:
    k = np.arange(n)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * k / n)  # periodic
    if name == "sqrt_hann":
        return np.sqrt(hann)
    if name == "hann":
        return hann
    if name == "rect":
        return np.ones(n)
    raise ValueError(f"unknown window {name!r}")


@dataclass
class Spectrogram:
    data: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    length: int | None = None  # time-domain samples before padding

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DataError(f"spectrogram must be (M, L, F), got {self.data.shape}")
        if self.data.shape[2] != self.params.n_bins:
            raise DataError(
                f"{self.data.shape[2]} bins, expected {self.params.n_bins}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("spectrogram contains non-finite values")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]


def _as_channels(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError("signal must be (samples,) or (channels, samples)")
    return x


def stft(signal, params: StftParams = StftParams()) -> Spectrogram:
    """Short-time Fourier transform with boundary padding.

    The signal is zero-padded by ``frame_len - hop`` samples on both sides
    (plus up to ``hop - 1`` trailing samples to complete the last frame) so
    that every input sample is covered by a full set of overlapping frames.
    """
    x = _as_channels(signal)
    n = x.shape[1]
    if n < params.frame_len:
        raise DataError(f"signal of {n} samples is shorter than one frame")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite samples")
    n_frames = params.n_frames(n)
    total = params.frame_len + (n_frames - 1) * params.hop
    xp = np.zeros((x.shape[0], total))
    xp[:, params.pad:params.pad + n] = x
    frames = sliding_window_view(xp, params.frame_len, axis=1)[:, ::params.hop]
    win = make_window(params.window, params.frame_len)
    data = np.fft.rfft(frames * win, n=params.fft_size, axis=-1)
    return Spectrogram(data, params, n)


def istft(spec: Spectrogram, params: StftParams | None = None,
          length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`; returns ``(M, samples)``."""
    if params is not None and params != spec.params:
        raise DataError("STFT parameter mismatch between spectrogram and istft")
    p = spec.params
    if length is None:
        length = spec.length
    frames = np.fft.irfft(spec.data, n=p.fft_size, axis=-1)[..., :p.frame_len]
    win = make_window(p.window, p.frame_len)
    frames = frames * win
    m, n_frames, _ = frames.shape
    total = p.frame_len + (n_frames - 1) * p.hop
    out = np.zeros((m, total))
    for k in range(p.frame_len // p.hop):
        # frames k, k+r, k+2r, ... do not overlap each other
        seg = frames[:, k::p.frame_len // p.hop]
        start = k * p.hop
        flat = seg.reshape(m, -1)
        out[:, start:start + flat.shape[1]] += flat
    ola = (win ** 2).reshape(-1, p.hop).sum(axis=0)[0]
    out /= ola
    out = out[:, p.pad:]
    if length is None:
        length = total - 2 * p.pad
    return out[:, :length]


# ---------------------------------------------------------------------------
# ERB filterbank


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


@dataclass(frozen=True)
class ErbFilterbank:
    """Rectangular partition of STFT bins into ``n_bands`` contiguous bands.

    ``edges[b]:edges[b + 1]`` are the bins of band ``b``.
    """
    edges: tuple
    n_bins: int

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def weights(self) -> np.ndarray:
        w = np.zeros((self.n_bands, self.n_bins))
        for b in range(self.n_bands):
            w[b, self.edges[b]:self.edges[b + 1]] = 1.0
        return w

    @property
    def norms(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def band_of_bin(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_bands), np.diff(self.edges))


def build_erb_filterbank(n_bands: int, params: StftParams = StftParams()) -> ErbFilterbank:
    """Bands equally spaced on the ERB-rate scale from 0 Hz to Nyquist.

    At 16 kHz / 512 points the lowest ERB bands are narrower than one bin,
    so edges are pushed apart until every band holds at least one bin.
    """
    n_bins = params.n_bins
    if n_bands < 1 or n_bands > n_bins:
        raise DataError(f"band count {n_bands} outside [1, {n_bins}]")
    nyq = params.sample_rate / 2
    hz = erb_rate_to_hz(np.linspace(0.0, hz_to_erb_rate(nyq), n_bands + 1))
    df = params.sample_rate / params.fft_size
    edges = np.ceil(hz / df - 1e-9).astype(int)
    edges[0], edges[-1] = 0, n_bins
    for b in range(1, n_bands):
        edges[b] = max(edges[b], edges[b - 1] + 1)
    for b in range(n_bands - 1, 0, -1):
        edges[b] = min(edges[b], edges[b + 1] - 1)
    return ErbFilterbank(tuple(int(e) for e in edges), n_bins)


def erb_compress(values, fb: ErbFilterbank, axis: int = -1) -> np.ndarray:
    """Band-wise weighted mean ``(1/pi_b) sum_f w_b(f) v_f`` along ``axis``."""
    v = np.asarray(values)
    if v.shape[axis] != fb.n_bins:
        raise DataError(f"expected {fb.n_bins} bins on axis {axis}, got {v.shape[axis]}")
    v = np.moveaxis(v, axis, -1)
    out = np.add.reduceat(v, np.asarray(fb.edges[:-1]), axis=-1) / fb.norms
    return np.moveaxis(out, -1, axis)


def erb_expand(band_gains, fb: ErbFilterbank, axis: int = -1) -> np.ndarray:
    """Per-bin gains: each bin takes the gain of the band containing it."""
    g = np.asarray(band_gains)
    if g.shape[axis] != fb.n_bands:
        raise DataError(f"expected {fb.n_bands} bands on axis {axis}, got {g.shape[axis]}")
    return np.take(g, fb.band_of_bin, axis=axis)


# ---------------------------------------------------------------------------
# WAV I/O


def read_wav(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a 16-bit PCM or 32-bit float WAV as float64 ``(channels, samples)``."""
    fs, data = wavfile.read(Path(path))
    if fs != sample_rate:
        raise DataError(f"{path}: sample rate {fs} Hz, expected {sample_rate} Hz")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        data = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return np.atleast_2d(data.T) if data.ndim == 2 else data[None, :]


def write_wav(path, data, sample_rate: int = SAMPLE_RATE, pcm16: bool = False):
    x = _as_channels(data)
    if pcm16:
        out = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        out = x.astype(np.float32)
    wavfile.write(Path(path), sample_rate, out.T if out.shape[0] > 1 else out[0])
