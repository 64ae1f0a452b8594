"""Head-related impulse response sets: a spherical-head generator and a
JSON/WAV manifest loader.

Azimuth convention: 0 deg is straight ahead (+x), 90 deg is the listener's
left (+y).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..geometry import SPEED_OF_SOUND, DirectionGrid
from ..signal import SAMPLE_RATE, read_wav, write_wav

HEAD_RADIUS = 0.0875


@dataclass
class HrtfSet:
    azimuths_deg: np.ndarray  # (J,)
    left: np.ndarray  # (J, taps)
    right: np.ndarray  # (J, taps)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.azimuths_deg = np.asarray(self.azimuths_deg, dtype=float) % 360.0
        self.left = np.atleast_2d(np.asarray(self.left, dtype=float))
        self.right = np.atleast_2d(np.asarray(self.right, dtype=float))
        if self.sample_rate != SAMPLE_RATE:
            raise DataError(f"HRTF sample rate {self.sample_rate}, expected {SAMPLE_RATE}")
        if self.left.shape != self.right.shape or self.left.shape[0] != len(self.azimuths_deg):
            raise DataError("HRIR arrays must be (J, taps) for both ears and match the azimuth list")
        rounded = np.round(self.azimuths_deg, 6) % 360.0
        if len(np.unique(rounded)) != len(rounded):
            raise DataError("duplicate azimuth in HRTF set")
        order = np.argsort(self.azimuths_deg)
        self.azimuths_deg = self.azimuths_deg[order]
        self.left, self.right = self.left[order], self.right[order]

    @property
    def n_directions(self) -> int:
        return len(self.azimuths_deg)

    @property
    def n_taps(self) -> int:
        return self.left.shape[1]

    def check_grid(self, grid: DirectionGrid):
        if self.n_directions != grid.n_directions or not np.allclose(
                self.azimuths_deg, grid.azimuths_deg, atol=1e-6):
            raise DataError(
                f"HRTF azimuths ({self.n_directions}) do not match the {grid.n_directions}-direction grid")

    def index(self, azimuth_deg: float, tol_deg: float | None = None) -> int:
        """Index of the nearest stored direction (circular distance).

        With ``tol_deg`` set, a direction further away than that is an error.
        """
        d = np.abs((self.azimuths_deg - azimuth_deg + 180.0) % 360.0 - 180.0)
        j = int(np.argmin(d))
        if tol_deg is not None and d[j] > tol_deg:
            raise DataError(f"no HRTF within {tol_deg} deg of azimuth {azimuth_deg}")
        return j

    def pair(self, j: int) -> np.ndarray:
        return np.stack([self.left[j], self.right[j]])

    def frequency_response(self, fft_size: int) -> np.ndarray:
        """``(J, 2, fft_size // 2 + 1)`` complex responses."""
        if self.n_taps > fft_size:
            raise DataError("HRIRs longer than the FFT size")
        return np.fft.rfft(np.stack([self.left, self.right], axis=1), n=fft_size, axis=-1)


def spherical_head_hrtf(grid: DirectionGrid = DirectionGrid(), sample_rate: int = SAMPLE_RATE,
                        n_taps: int = 256, head_radius: float = HEAD_RADIUS,
                        c: float = SPEED_OF_SOUND, base_delay: int = 32) -> HrtfSet:
    """Brown-Duda style spherical head: one-pole/one-zero head shadow per ear
    plus the ear's travel-time delay, realised by frequency sampling."""
    n_fft = 4 * n_taps
    omega = 2 * np.pi * np.fft.rfftfreq(n_fft, 1 / sample_rate)
    w0 = c / head_radius
    alpha_min, theta_min = 0.1, np.deg2rad(150.0)
    fade = np.ones(n_taps)
    tail = n_taps // 8
    fade[-tail:] = 0.5 + 0.5 * np.cos(np.pi * np.arange(1, tail + 1) / tail)
    out = {}
    for ear, ear_az in (("left", 90.0), ("right", -90.0)):
        inc = np.deg2rad(np.abs((grid.azimuths_deg - ear_az + 180.0) % 360.0 - 180.0))
        a = (1 + alpha_min / 2) + (1 - alpha_min / 2) * np.cos(inc / theta_min * np.pi)
        delay = np.where(inc < np.pi / 2, -np.cos(inc), inc - np.pi / 2) * head_radius / c
        delay = delay + base_delay / sample_rate
        H = (1 + 1j * a[:, None] * omega / (2 * w0)) / (1 + 1j * omega / (2 * w0))
        H = H * np.exp(-1j * omega * delay[:, None])
        out[ear] = np.fft.irfft(H, n=n_fft, axis=-1)[:, :n_taps] * fade
    return HrtfSet(grid.azimuths_deg, out["left"], out["right"], sample_rate)


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise DataError(f"duplicate key {k!r} in manifest")
        seen[k] = v
    return seen


def load_hrtf_set(manifest, grid: DirectionGrid | None = DirectionGrid()) -> HrtfSet:
    """Load ``{"sample_rate": 16000, "hrirs": {"<azimuth>": {"left": wav,
    "right": wav}, ...}}``. WAV paths are relative to the manifest."""
    path = Path(manifest)
    try:
        with open(path) as fh:
            obj = json.load(fh, object_pairs_hook=_no_duplicates)
    except FileNotFoundError as exc:
        raise ConfigError(f"HRTF manifest not found: {path}") from exc
    fs = int(obj.get("sample_rate", SAMPLE_RATE))
    if fs != SAMPLE_RATE:
        raise DataError(f"HRTF manifest sample rate {fs}, expected {SAMPLE_RATE}")
    azs, left, right = [], [], []
    for key, entry in obj["hrirs"].items():
        azs.append(float(key))
        left.append(read_wav(path.parent / entry["left"], fs)[0])
        right.append(read_wav(path.parent / entry["right"], fs)[0])
    if len({len(h) for h in left + right}) != 1:
        raise DataError("HRIRs in a set must all have the same length")
    hrtf = HrtfSet(np.array(azs), np.array(left), np.array(right), fs)
    if grid is not None:
        hrtf.check_grid(grid)
    return hrtf


def save_hrtf_set(hrtf: HrtfSet, directory) -> Path:
    """Write float32 WAVs plus ``manifest.json``; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {}
    for j, az in enumerate(hrtf.azimuths_deg):
        tag = f"az{az:07.3f}"
        write_wav(d / f"{tag}_L.wav", hrtf.left[j], hrtf.sample_rate)
        write_wav(d / f"{tag}_R.wav", hrtf.right[j], hrtf.sample_rate)
        entries[f"{az:g}"] = {"left": f"{tag}_L.wav", "right": f"{tag}_R.wav"}
    manifest = d / "manifest.json"
    manifest.write_text(json.dumps({"sample_rate": hrtf.sample_rate, "hrirs": entries}, indent=1))
    return manifest
