"""Stand-in source signals for when no speech/music recordings are supplied.

Neither generator aims for realism; they give speech-like (voiced syllables
with pauses) and music-like (overlapping harmonic notes) spectro-temporal
structure so the spatial features have something to work with.
"""
import numpy as np
from scipy.signal import lfilter

from ..signal import SAMPLE_RATE


def _resonator(x, freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    return lfilter([1 - r], [1, -2 * r * np.cos(theta), r * r], x)


def synthetic_speech(duration: float, rng: np.random.Generator,
                     sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    t = 0
    f0_base = rng.uniform(95, 210)
    while t < n:
        t += int(rng.uniform(0.02, 0.15) * sample_rate)
        seg = int(rng.uniform(0.08, 0.25) * sample_rate)
        if t >= n:
            break
        seg = min(seg, n - t)
        tt = np.arange(seg) / sample_rate
        if rng.random() < 0.2:
            src = rng.standard_normal(seg)
            src = src - _resonator(src, 300, 600, sample_rate)
            amp = 0.3
        else:
            f0 = f0_base * rng.uniform(0.85, 1.2) * (1 + rng.uniform(-0.1, 0.1) * tt / max(tt[-1], 1e-3))
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate
            k = np.arange(1, int(4000 / f0_base))
            src = (np.sin(np.outer(phase, k)) / k).sum(axis=1)
            amp = 1.0
        shaped = np.zeros(seg)
        for fmt, bw in ((rng.uniform(300, 900), 90), (rng.uniform(900, 2500), 120),
                        (rng.uniform(2300, 3500), 180)):
            shaped += _resonator(src, fmt, bw, sample_rate)
        out[t:t + seg] += amp * shaped * np.hanning(seg)
        t += seg
    peak = np.max(np.abs(out))
    return out / peak * 0.5 if peak > 0 else out


def synthetic_music(duration: float, rng: np.random.Generator,
                    sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    scale = np.array([0, 2, 4, 5, 7, 9, 11])
    t = 0
    while t < n:
        semis = scale[rng.integers(len(scale))] + 12 * rng.integers(-1, 2)
        f = 220.0 * 2 ** (semis / 12)
        length = min(int(rng.uniform(0.3, 1.2) * sample_rate), n - t)
        tt = np.arange(length) / sample_rate
        env = np.exp(-tt * rng.uniform(2, 6)) * (1 - np.exp(-tt * 200))
        note = sum(np.sin(2 * np.pi * f * h * tt + rng.uniform(0, 2 * np.pi)) / h ** 1.3
                   for h in range(1, 9) if f * h < 0.45 * sample_rate)
        out[t:t + length] += env * note
        t += int(rng.uniform(0.08, 0.3) * sample_rate)
    out += 0.02 * np.std(out) * rng.standard_normal(n)
    peak = np.max(np.abs(out))
    return out / peak * 0.5 if peak > 0 else out
