"""Shoebox image-source room impulse responses.

Walls share one frequency-independent reflection coefficient, seeded from
Sabine's formula and tuned so the simulated decay meets the target T60. Reflections inside the first
``FRAC_WINDOW_S`` after the direct path use Hann-windowed sinc fractional
delays, which keeps inter-microphone phase exact for arrays a few
centimetres wide; later reflections are rounded to the nearest sample.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..geometry import SPEED_OF_SOUND

FRAC_WINDOW_S = 0.05
SINC_HALF_WIDTH = 32


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple = (6.0, 5.0, 3.0)
    t60: float = 0.4
    max_order: int | None = None  # 0 gives the anechoic (direct path only) case
    sample_rate: int = 16000
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise DataError("room dimensions must be three positive lengths")
        if not self.t60 > 0:
            raise DataError("T60 must be positive")
        if self.max_order is not None and self.max_order < 0:
            raise DataError("max_order must be non-negative")

    @property
    def volume(self) -> float:
        return float(np.prod(self.dimensions))

    @property
    def surface(self) -> float:
        x, y, z = self.dimensions
        return 2.0 * (x * y + x * z + y * z)

    @property
    def sabine_absorption(self) -> float:
        """Sabine: T60 = 24 ln(10) V / (c S a)."""
        a = 24.0 * np.log(10.0) * self.volume / (self.c * self.surface * self.t60)
        return float(min(a, 1.0))

    @property
    def reflection(self) -> float:
        """Wall amplitude reflection coefficient.

        Starts from the Sabine absorption and is refined so the simulated
        decay meets the target T60 (uniform-wall image sources decay slower
        than Sabine predicts in non-cubic rooms).
        """
        if self.max_order == 0:
            return 0.0
        return _calibrated_reflection(tuple(float(d) for d in self.dimensions),
                                      float(self.t60), self.sample_rate, float(self.c),
                                      self.max_order)

    @property
    def absorption(self) -> float:
        return 1.0 - self.reflection ** 2

    def default_length(self) -> int:
        if self.max_order == 0:
            return int(0.05 * self.sample_rate)
        return int(np.ceil(self.t60 * self.sample_rate))

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


@functools.lru_cache(maxsize=64)
def _calibrated_reflection(dims, t60, fs, c, max_order, iterations=4):
    base = RoomSpec(dims, t60, max_order, fs, c)
    beta = float(np.sqrt(1.0 - base.sabine_absorption))
    if beta <= 0.0:
        return 0.0
    d = np.asarray(dims)
    src, mic = 0.31 * d, 0.63 * d
    length = int(np.ceil(1.2 * t60 * fs))
    for _ in range(iterations):
        h = _simulate(base, src, mic[None, :], length, beta)[0]
        ratio = estimate_t60(h, fs) / t60
        if abs(ratio - 1.0) < 0.01:
            break
        beta = float(np.exp(np.log(beta) * ratio))
    return beta


def _image_lattice(room: RoomSpec, src, max_dist: float, beta: float, centre=None):
    """Per-axis image coordinates plus the index triples of images within
    reach, so distances can be formed separably per microphone."""
    dims = np.asarray(room.dimensions, dtype=float)
    src = np.asarray(src, dtype=float)
    coords, orders = [], []
    for a in range(3):
        n_max = int(np.ceil(max_dist / (2 * dims[a]))) + 1
        n = np.arange(-n_max, n_max + 1)
        n = np.concatenate([n, n])
        q = np.repeat([0, 1], 2 * n_max + 1)
        coords.append((1 - 2 * q) * src[a] + 2 * n * dims[a])
        orders.append(np.abs(n - q) + np.abs(n))
    if centre is None:
        centre, max_dist = dims / 2, max_dist + np.linalg.norm(dims / 2)
    d2 = ((coords[0] - centre[0]) ** 2)[:, None, None] \
        + ((coords[1] - centre[1]) ** 2)[None, :, None] \
        + ((coords[2] - centre[2]) ** 2)[None, None, :]
    keep = d2 <= max_dist ** 2
    order = orders[0][:, None, None] + orders[1][None, :, None] + orders[2][None, None, :]
    if room.max_order is not None:
        keep &= order <= room.max_order
    if beta <= 0:
        keep &= order == 0
    idx = np.nonzero(keep)
    order = order[idx]
    gains = beta ** order if beta > 0 else np.ones(len(order))
    return coords, idx, gains, order


def image_sources(room: RoomSpec, src, max_dist: float, beta: float | None = None):
    """Image positions and wall-reflection gains within ``max_dist`` of the room.

    Returns ``(positions (K, 3), gains (K,), orders (K,))``.
    """
    if beta is None:
        beta = room.reflection
    coords, idx, gains, order = _image_lattice(room, src, max_dist, beta)
    pos = np.stack([coords[a][idx[a]] for a in range(3)], axis=1)
    return pos, gains, order


def _windowed_sinc(frac_delay: np.ndarray, half: int = SINC_HALF_WIDTH):
    """Taps at offsets ``-half..half`` around ``floor(delay)``."""
    base = np.floor(frac_delay).astype(int)
    k = np.arange(-half, half + 1)
    t = k[None, :] - (frac_delay - base)[:, None]
    win = 0.5 + 0.5 * np.cos(np.pi * t / (half + 1))
    return base, np.sinc(t) * win, k


def simulate_rirs(room: RoomSpec, src, mics, length: int | None = None) -> np.ndarray:
    """RIRs from one source to several microphones, shape ``(M, length)``.

    Amplitude follows ``1 / (4 pi d)`` per image; the direct path lands at
    ``d / c * fs`` samples (a single tap when that is an integer).
    """
    mics = np.atleast_2d(np.asarray(mics, dtype=float))
    src = np.asarray(src, dtype=float)
    if not room.contains(src):
        raise DataError(f"source {src.tolist()} is not strictly inside the room")
    for m in mics:
        if not room.contains(m):
            raise DataError(f"microphone {m.tolist()} is not strictly inside the room")
    if np.any(np.linalg.norm(mics - src, axis=1) < 1e-6):
        raise DataError("source coincides with a microphone")
    if length is None:
        length = room.default_length()
    return _simulate(room, src, mics, length, room.reflection)


def _simulate(room, src, mics, length, beta):
    fs, c = room.sample_rate, room.c
    dists = np.linalg.norm(mics - src, axis=1)
    max_dist = length / fs * c + SINC_HALF_WIDTH / fs * c
    centre = mics.mean(axis=0)
    spread = np.linalg.norm(mics - centre, axis=1).max()
    coords, idx, gains, _ = _image_lattice(room, src, max_dist + spread, beta, centre)
    h = np.zeros((len(mics), length))
    frac_limit = (dists.min() / c + FRAC_WINDOW_S) * fs
    scale = fs / c
    for i, mic in enumerate(mics):
        d2 = ((coords[0] - mic[0]) ** 2)[idx[0]]
        d2 += ((coords[1] - mic[1]) ** 2)[idx[1]]
        d2 += ((coords[2] - mic[2]) ** 2)[idx[2]]
        d = np.sqrt(d2)
        delay = d * scale
        amp = gains / (4 * np.pi * d)
        early = delay <= frac_limit
        late = ~early & (delay < length - 0.5)
        h[i] = np.bincount(np.rint(delay[late]).astype(int), weights=amp[late],
                           minlength=length)[:length]
        base, taps, k = _windowed_sinc(delay[early])
        cols = base[:, None] + k[None, :]
        ok = (cols >= 0) & (cols < length)
        np.add.at(h[i], cols[ok], (taps * amp[early][:, None])[ok])
    return h


def simulate_rir(room: RoomSpec, src, mic, length: int | None = None) -> np.ndarray:
    return simulate_rirs(room, src, np.asarray(mic, dtype=float)[None, :], length)[0]


def direct_index(rir: np.ndarray) -> int:
    return int(np.argmax(np.abs(rir)))


def split_direct_early(rir, cutoff_ms: float = 50.0, sample_rate: int = 16000,
                       fade_ms: float = 100.0) -> np.ndarray:
    """Keep ``cutoff_ms`` after the direct arrival, then fade out.

    The fade is an exponential reaching -60 dB ``fade_ms`` after the cutoff;
    everything beyond is zeroed. Works on the last axis.
    """
    if cutoff_ms <= 0:
        raise DataError("cutoff_ms must be positive")
    h = np.array(rir, dtype=float)
    flat = h.reshape(-1, h.shape[-1])
    n = flat.shape[-1]
    t = np.arange(n)
    for row in flat:
        start = direct_index(row) + int(round(cutoff_ms * 1e-3 * sample_rate))
        stop = start + int(round(fade_ms * 1e-3 * sample_rate))
        taper = np.ones(n)
        tail = (t >= start) & (t < stop)
        taper[tail] = 10.0 ** (-3.0 * (t[tail] - start) / (stop - start))
        taper[t >= stop] = 0.0
        row *= taper
    return flat.reshape(h.shape)


def energy_decay_curve(rir) -> np.ndarray:
    """Schroeder backward integral in dB, normalised to 0 dB at t = 0."""
    e = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10 * np.log10(e / e[0])


def estimate_t60(rir, sample_rate: int = 16000, lo_db: float = -5.0,
                 hi_db: float = -35.0) -> float:
    """T60 from a straight-line fit to the decay curve between ``lo_db`` and
    ``hi_db``, extrapolated to -60 dB."""
    edc = energy_decay_curve(rir)
    sel = (edc <= lo_db) & (edc >= hi_db)
    if sel.sum() < 2:
        raise DataError("decay curve too short to estimate T60")
    t = np.arange(len(edc))[sel] / sample_rate
    slope, _ = np.polyfit(t, edc[sel], 1)
    return float(-60.0 / slope)
