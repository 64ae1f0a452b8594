"""Scene description, microphone mixtures and alpha-weighted binaural targets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import fftconvolve

from ..errors import ConfigError, DataError
from ..geometry import SPEED_OF_SOUND, ArrayGeometry, DirectionGrid, look_vector, resolve_geometry
from ..rng import make_rng
from ..signal import SAMPLE_RATE, read_wav
from .hrtf import HrtfSet
from .rir import RoomSpec, simulate_rirs, split_direct_early
from .sources import synthetic_music, synthetic_speech

ALPHA_SET = (0.0, 0.3, 0.5, 0.7, 1.0)
EARLY_CUTOFF_MS = 50.0

# RNG stream keys under the scene seed
_SPEECH, _AMBIENT, _NOISE = 0, 1, 2


@dataclass
class Segment:
    azimuth_deg: float
    radius_m: float


@dataclass
class SceneSpec:
    scene_id: str = "scene"
    geometry: str = "G1"
    trajectory: list = field(default_factory=lambda: [Segment(0.0, 1.2)])
    t60: float = 0.4
    sar_db: float | None = 10.0  # None: no ambient
    snr_db: float | None = 25.0  # None: no sensor noise
    alpha: float = 0.0
    speech: str | None = None  # WAV path; None draws a synthetic signal
    ambient: str | None = None
    duration_s: float = 5.0
    seed: int = 0
    room_dims: tuple = (6.0, 5.0, 3.0)
    array_center: tuple = (3.1, 2.4, 1.3)
    ambient_radius_m: float = 2.0
    ambient_mode: str = "shared"  # or "independent"
    n_directions: int = 72
    max_order: int | None = None
    anechoic: bool = False

    def __post_init__(self):
        self.trajectory = [s if isinstance(s, Segment) else Segment(**s) for s in self.trajectory]
        if not self.trajectory:
            raise ConfigError("trajectory needs at least one segment")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")
        for name in ("sar_db", "snr_db"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise ConfigError(f"{name} must be finite or null")
        if self.ambient_mode not in ("shared", "independent"):
            raise ConfigError(f"unknown ambient_mode {self.ambient_mode!r}")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        self.room_dims = tuple(float(v) for v in self.room_dims)
        self.array_center = tuple(float(v) for v in self.array_center)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown scene fields: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Mixture:
    signal: np.ndarray  # (M, n)
    speech_image: np.ndarray
    ambient_image: np.ndarray  # already scaled to the requested SAR
    noise: np.ndarray
    ambient_gain: float
    sar_db: float
    snr_db: float


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[:min(n, len(x))] = x[:n]
    return out


def _power(x) -> float:
    return float(np.mean(np.asarray(x) ** 2))


class SceneSynth:
    """Room responses for one scene on one array, computed once and reused."""

    def __init__(self, spec: SceneSpec, geom: ArrayGeometry | None = None):
        self.spec = spec
        self.geom = geom if geom is not None else resolve_geometry(spec.geometry)
        self.grid = DirectionGrid(spec.n_directions)
        self.room = RoomSpec(spec.room_dims, spec.t60, 0 if spec.anechoic else spec.max_order)
        self.n = int(round(spec.duration_s * SAMPLE_RATE))
        for p in self.mic_positions:
            if not self.room.contains(p):
                raise ConfigError(f"microphone {p.tolist()} outside the room")

    @property
    def reference(self) -> int:
        return self.geom.reference_index

    @property
    def mic_positions(self) -> np.ndarray:
        return np.asarray(self.spec.array_center) + self.geom.positions

    def target_positions(self) -> np.ndarray:
        c = np.asarray(self.spec.array_center)
        return np.array([c + s.radius_m * look_vector(s.azimuth_deg) for s in self.spec.trajectory])

    def ambient_positions(self) -> np.ndarray:
        c = np.asarray(self.spec.array_center)
        return c + self.spec.ambient_radius_m * self.grid.look_vectors

    @cached_property
    def target_rirs(self) -> np.ndarray:
        """(segments, M, taps)"""
        return np.stack([simulate_rirs(self.room, p, self.mic_positions)
                         for p in self.target_positions()])

    @cached_property
    def ambient_rirs(self) -> np.ndarray:
        """(J, M, taps)"""
        return np.stack([simulate_rirs(self.room, p, self.mic_positions)
                         for p in self.ambient_positions()])

    def segment_bounds(self) -> list[tuple[int, int]]:
        k = len(self.spec.trajectory)
        edges = np.linspace(0, self.n, k + 1).round().astype(int)
        return list(zip(edges[:-1], edges[1:]))

    # -- source signals -------------------------------------------------
    def load_sources(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.spec
        if s.speech:
            speech = _fit(read_wav(s.speech)[0], self.n)
        else:
            speech = synthetic_speech(s.duration_s, make_rng(s.seed, _SPEECH))
        if s.ambient:
            ambient = _fit(read_wav(s.ambient)[0], self.n)
        else:
            ambient = synthetic_music(s.duration_s, make_rng(s.seed, _AMBIENT))
        return _fit(speech, self.n), _fit(ambient, self.n)

    def ambient_signals(self, ambient) -> np.ndarray:
        """Shared mode: one signal for every direction. Independent mode:
        direction ``j`` gets the source circularly shifted by ``j n / J``."""
        a = np.asarray(ambient, dtype=float)
        if a.ndim == 2:
            if a.shape[0] != self.grid.n_directions:
                raise DataError(f"expected {self.grid.n_directions} ambient signals")
            return a
        if self.spec.ambient_mode == "shared":
            return a
        J = self.grid.n_directions
        return np.stack([np.roll(a, j * len(a) // J) for j in range(J)])

    # -- convolution helpers -------------------------------------------
    def _speech_through(self, speech, rirs_per_segment) -> np.ndarray:
        """Piecewise-static source: segment k is filtered by ``rirs[k]``."""
        out = None
        for (a, b), h in zip(self.segment_bounds(), rirs_per_segment):
            seg = np.zeros(self.n)
            seg[a:b] = speech[a:b]
            y = fftconvolve(np.atleast_2d(h), seg[None, :], axes=-1)[:, :self.n]
            out = y if out is None else out + y
        return out

    def _ambient_through(self, ambient, rirs) -> np.ndarray:
        """``rirs`` is (J, C, taps); returns (C, n)."""
        a = self.ambient_signals(ambient)
        if a.ndim == 1:
            return fftconvolve(rirs.sum(axis=0), a[None, :], axes=-1)[:, :self.n]
        nfft = self.n + rirs.shape[-1] - 1
        A = np.fft.rfft(a, n=nfft)  # (J, K)
        H = np.fft.rfft(rirs, n=nfft)  # (J, C, K)
        return np.fft.irfft(np.einsum("jk,jck->ck", A, H), n=nfft)[:, :self.n]

    # -- mixture --------------------------------------------------------
    def mixture(self, speech, ambient) -> Mixture:
        s = self.spec
        speech = _fit(np.asarray(speech, dtype=float), self.n)
        x_t = self._speech_through(speech, self.target_rirs)
        p_t = _power(x_t[self.reference])
        if p_t == 0:
            raise DataError("target speech has zero power; SAR undefined")
        m = x_t.shape[0]
        if s.sar_db is None:
            gain, x_a = 0.0, np.zeros_like(x_t)
        else:
            raw = self._ambient_through(ambient, self.ambient_rirs)
            p_a = _power(raw[self.reference])
            gain = 0.0 if p_a == 0 else float(np.sqrt(p_t / (p_a * 10 ** (s.sar_db / 10))))
            x_a = gain * raw
        if s.snr_db is None:
            v = np.zeros_like(x_t)
        else:
            v = make_rng(s.seed, _NOISE).standard_normal((m, self.n))
            v *= np.sqrt(p_t / (_power(v[self.reference]) * 10 ** (s.snr_db / 10)))
        p_a = _power(x_a[self.reference])
        p_v = _power(v[self.reference])
        return Mixture(
            signal=x_t + x_a + v, speech_image=x_t, ambient_image=x_a, noise=v,
            ambient_gain=gain,
            sar_db=float(10 * np.log10(p_t / p_a)) if p_a > 0 else float("inf"),
            snr_db=float(10 * np.log10(p_t / p_v)) if p_v > 0 else float("inf"),
        )

    # -- binaural target ------------------------------------------------
    def target_parts(self, speech, ambient, hrtf: HrtfSet,
                     ambient_gain: float) -> tuple[np.ndarray, np.ndarray]:
        """``(direct, ambient)`` binaural parts, each (2, n); the target at
        weight alpha is ``direct + alpha * ambient``."""
        hrtf.check_grid(self.grid)
        speech = _fit(np.asarray(speech, dtype=float), self.n)
        filters = []
        for seg, h in zip(self.spec.trajectory, self.target_rirs):
            early = split_direct_early(h[self.reference], EARLY_CUTOFF_MS, SAMPLE_RATE)
            pair = hrtf.pair(hrtf.index(seg.azimuth_deg))
            filters.append(fftconvolve(pair, early[None, :], axes=-1))
        direct = self._speech_through(speech, filters)
        if ambient_gain == 0:
            return direct, np.zeros_like(direct)
        h_ref = self.ambient_rirs[:, self.reference]  # (J, taps)
        hr = np.stack([hrtf.left, hrtf.right], axis=1)  # (J, 2, taps)
        binaural = fftconvolve(hr, h_ref[:, None, :], axes=-1)  # (J, 2, taps')
        amb = ambient_gain * self._ambient_through(ambient, binaural)
        return direct, amb


def synth_mixture(scene: SceneSynth, speech, ambient_signals) -> Mixture:
    return scene.mixture(speech, ambient_signals)


def synth_target_binaural(scene: SceneSynth, speech, ambient_signals, hrtf: HrtfSet,
                          alpha: float, ambient_gain: float | None = None) -> np.ndarray:
    """Binaural target ``direct + alpha * ambient``, shape (2, n).

    ``ambient_gain`` defaults to the gain that sets the scene's SAR in the
    microphone mixture, so alpha = 1 keeps the mixture's speech/ambient
    balance.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha {alpha} outside [0, 1]")
    if ambient_gain is None:
        ambient_gain = scene.mixture(speech, ambient_signals).ambient_gain
    direct, amb = scene.target_parts(speech, ambient_signals, hrtf, ambient_gain)
    return direct + alpha * amb


def plane_wave_capture(signal, geom: ArrayGeometry, azimuth_deg: float,
                       sample_rate: int = SAMPLE_RATE, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Free-field far-field capture of ``signal`` arriving from ``azimuth_deg``.

    Microphone ``m`` receives the signal advanced by ``kappa . (p_m - p_ref) / c``
    (exact fractional delay in the frequency domain). Returns (M, n) in
    geometry order.
    """
    x = np.asarray(signal, dtype=float)
    n = len(x)
    pad = 256
    nfft = n + 2 * pad
    X = np.fft.rfft(np.concatenate([np.zeros(pad), x, np.zeros(pad)]), n=nfft)
    omega = 2 * np.pi * np.fft.rfftfreq(nfft, 1 / sample_rate)
    adv = (geom.positions - geom.reference) @ look_vector(azimuth_deg) / c
    Y = X[None, :] * np.exp(1j * omega[None, :] * adv[:, None])
    return np.fft.irfft(Y, n=nfft)[:, pad:pad + n]


def random_scene(seed: int, index: int, geometry: str = "G1", *, t60_choices=(0.34, 0.46),
                 sar_db: float | None = 10.0, snr_db: float | None = 25.0,
                 duration_s: float = 5.0, radius=(1.0, 1.5), moving: bool = True,
                 n_segments: int = 5, **overrides) -> SceneSpec:
    """Scene ``index`` of a seeded family; identical across geometries."""
    rng = make_rng(seed, 1000, index)
    az0 = float(rng.uniform(0, 360))
    r = float(rng.uniform(*radius))
    step = float(rng.choice([-1, 1]) * rng.uniform(5, 15)) if moving else 0.0
    k = n_segments if moving else 1
    traj = [Segment(round((az0 + i * step) % 360.0, 6), round(r, 6)) for i in range(k)]
    t60 = float(t60_choices[int(rng.integers(len(t60_choices)))])
    return SceneSpec(scene_id=f"s{index:04d}", geometry=geometry, trajectory=traj, t60=t60,
                     sar_db=sar_db, snr_db=snr_db, duration_s=duration_s,
                     seed=int(make_rng(seed, 1001, index).integers(2 ** 31)), **overrides)
