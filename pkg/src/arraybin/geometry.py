"""Microphone array layouts and free-field plane-wave steering vectors."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    name: str
    positions: np.ndarray  # (M, 3) metres
    reference_index: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise DataError("positions must be an (M, 3) array")
        if pos.shape[0] < 2:
            raise DataError("an array needs at least two microphones")
        if not np.all(np.isfinite(pos)):
            raise DataError("microphone positions must be finite")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise DataError(f"reference_index {self.reference_index} out of range")
        object.__setattr__(self, "positions", pos)

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def reference(self) -> np.ndarray:
        return self.positions[self.reference_index]

    def ordered(self) -> np.ndarray:
        """Positions with the reference microphone first."""
        idx = [self.reference_index] + [m for m in range(self.n_mics)
                                        if m != self.reference_index]
        return self.positions[idx]

    def relative_positions(self) -> np.ndarray:
        """``p_m - p_ref`` for the non-reference microphones, shape (M-1, 3)."""
        p = self.ordered()
        return p[1:] - p[0]

    def to_json(self) -> dict:
        return {"name": self.name, "reference_index": self.reference_index,
                "positions_m": self.positions.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ArrayGeometry":
        try:
            return cls(obj["name"], np.asarray(obj["positions_m"], dtype=float),
                       int(obj["reference_index"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad geometry description: {exc}") from exc


def _circle(n, radius, start_deg=0.0):
    az = np.deg2rad(start_deg + 360.0 * np.arange(n) / n)
    return np.stack([radius * np.cos(az), radius * np.sin(az), np.zeros(n)], axis=1)


def builtin_geometry(name: str) -> ArrayGeometry:
    """G1: centre + 4 mics on a 4 cm circle (training layout).
    G2: 5-mic line, 3 cm pitch, reference at one end.
    G3: 6 x 4 cm rectangle corners + centre reference.
    G4: 3-mic triangle, 4 cm circumradius, reference at the first vertex.
    """
    if name == "G1":
        pos = np.vstack([np.zeros((1, 3)), _circle(4, 0.04)])
        return ArrayGeometry("G1", pos, 0)
    if name == "G2":
        x = 0.03 * np.arange(5) - 0.06
        pos = np.stack([x, np.zeros(5), np.zeros(5)], axis=1)
        return ArrayGeometry("G2", pos, 0)
    if name == "G3":
        corners = [[0.03, 0.02, 0], [-0.03, 0.02, 0], [-0.03, -0.02, 0], [0.03, -0.02, 0]]
        pos = np.vstack([np.zeros((1, 3)), np.asarray(corners, dtype=float)])
        return ArrayGeometry("G3", pos, 0)
    if name == "G4":
        return ArrayGeometry("G4", _circle(3, 0.04, start_deg=90.0), 0)
    raise ConfigError(f"unknown geometry {name!r} (expected G1-G4)")


def load_geometry(path) -> ArrayGeometry:
    with open(Path(path)) as fh:
        return ArrayGeometry.from_json(json.load(fh))


def resolve_geometry(name_or_path: str) -> ArrayGeometry:
    if name_or_path in ("G1", "G2", "G3", "G4"):
        return builtin_geometry(name_or_path)
    return load_geometry(name_or_path)


@dataclass(frozen=True)
class DirectionGrid:
    n_directions: int = 72

    @property
    def azimuths_deg(self) -> np.ndarray:
        return 360.0 * np.arange(self.n_directions) / self.n_directions

    @property
    def look_vectors(self) -> np.ndarray:
        az = np.deg2rad(self.azimuths_deg)
        return np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)

    @property
    def spacing_deg(self) -> float:
        return 360.0 / self.n_directions

    def nearest(self, azimuth_deg: float) -> int:
        return int(np.round((azimuth_deg % 360.0) / self.spacing_deg)) % self.n_directions


def look_vector(azimuth_deg: float) -> np.ndarray:
    az = np.deg2rad(azimuth_deg)
    return np.array([np.cos(az), np.sin(az), 0.0])


def _unit(kappa) -> np.ndarray:
    k = np.asarray(kappa, dtype=np.float64)
    norm = np.linalg.norm(k, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DataError("look vector has zero norm")
    if not np.allclose(norm, 1.0, atol=1e-9):
        raise DataError("look vector must have unit norm")
    return k


def steering_vector(geom: ArrayGeometry, kappa, f, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Relative transfer function of a plane wave from direction ``kappa``.

    Entry ``m`` is ``exp(+i 2 pi f/c kappa . (p_m - p_ref))`` over the
    non-reference microphones. ``f`` may be an array; the frequency axis
    comes first in the result.
    """
    k = _unit(kappa)
    if c <= 0:
        raise DataError("speed of sound must be positive")
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise DataError("frequency must be non-negative")
    delay = geom.relative_positions() @ k / c  # (M-1,) seconds of advance
    return np.exp(2j * np.pi * f[..., None] * delay)


def steering_matrix(geom: ArrayGeometry, grid: DirectionGrid, f,
                    c: float = SPEED_OF_SOUND, include_reference: bool = False) -> np.ndarray:
    """Columns are steering vectors for each grid direction.

    Shape ``(..., M-1, J)`` for frequency array ``f`` of shape ``(...)``;
    with ``include_reference`` the reference row (all ones) is prepended.
    """
    if c <= 0:
        raise DataError("speed of sound must be positive")
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise DataError("frequency must be non-negative")
    pos = geom.ordered() - geom.reference
    if not include_reference:
        pos = pos[1:]
    delay = pos @ grid.look_vectors.T / c  # (M', J)
    return np.exp(2j * np.pi * f[..., None, None] * delay)
