"""Spatial features: short-term RTFs, SCORE / ERB-SCORE, ICPD, and MAC.

Tensor layout for every feature is ``(frames, freq, channel)`` where the
frequency axis is STFT bins or ERB bands and the channel axis is candidate
directions (SCORE) or non-reference microphones (ICPD). Flattening in C
order gives the vectorisation used for MAC: channel innermost, then
frequency, then frame.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatch, NumericalError
from .geometry import SPEED_OF_SOUND, ArrayGeometry, DirectionGrid, steering_matrix
from .signal import ErbFilterbank, Spectrogram, erb_compress

LAYOUTS = ("ICPD", "SCORE", "ERB-SCORE")
EPS_MAG = 1e-12
_MAGIC = b"ARRAYBIN-FEATURE\n"


def _reorder(X: Spectrogram, reference_index: int) -> np.ndarray:
    data = X.data
    if data.shape[0] < 2:
        raise DataError("RTF estimation needs at least two channels")
    if not 0 <= reference_index < data.shape[0]:
        raise DataError(f"reference_index {reference_index} out of range")
    idx = [reference_index] + [m for m in range(data.shape[0]) if m != reference_index]
    return data[idx]


def _clipped_frame_sum(a: np.ndarray, half: int, axis: int) -> np.ndarray:
    """Sum over frames ``l - half .. l + half`` clipped to the valid range."""
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    cs = np.concatenate([np.zeros_like(a[:1]), np.cumsum(a, axis=0)], axis=0)
    idx = np.arange(n)
    hi = np.minimum(idx + half + 1, n)
    lo = np.maximum(idx - half, 0)
    return np.moveaxis(cs[hi] - cs[lo], 0, axis)


def short_term_rtf(X: Spectrogram, R: int = 4, reference_index: int = 0,
                   l: int | None = None, f: int | None = None) -> np.ndarray:
    """Ratio of frame-averaged cross- and auto-spectra against the reference.

    Returns ``(L, F, M-1)``, or the ``(M-1,)`` vector at ``(l, f)`` when both
    indices are given. Bins whose averaged reference power is exactly zero
    are degenerate and returned as 0.
    """
    if R < 0 or R % 2:
        raise DataError("averaging span R must be a non-negative even integer")
    x = _reorder(X, reference_index)
    ref = x[0]
    cross = np.moveaxis(x[1:] * np.conj(ref)[None], 0, -1)  # (L, F, M-1)
    auto = (ref.real ** 2 + ref.imag ** 2)
    num = _clipped_frame_sum(cross, R // 2, axis=0)
    den = _clipped_frame_sum(auto, R // 2, axis=0)
    ok = den > 0
    rtf = np.zeros_like(num)
    rtf[ok] = num[ok] / den[ok][:, None]
    if l is not None and f is not None:
        return rtf[l, f]
    return rtf


def whiten_rtf(rtf, eps: float = EPS_MAG) -> np.ndarray:
    """Unit-modulus normalisation; entries below ``eps`` times the frame
    peak (the whole input for a single vector) become exactly 0."""
    r = np.asarray(rtf, dtype=np.complex128)
    mag = np.abs(r)
    if r.ndim == 3:
        peak = mag.max(axis=(1, 2), keepdims=True)
    else:
        peak = mag.max() if mag.size else 0.0
    keep = (mag > eps * peak) & (mag > 0)
    out = np.zeros_like(r)
    out[keep] = r[keep] / mag[keep]
    return out


def score(r, A) -> np.ndarray:
    """SCORE for one bin: ``Re(A^H r) / (M-1)``; ``A`` is ``(M-1, J)``."""
    r = np.asarray(r)
    A = np.asarray(A)
    if A.ndim != 2 or r.shape != (A.shape[0],):
        raise DataError(f"whitened RTF {r.shape} does not match steering {A.shape}")
    return (np.conj(A).T @ r).real / A.shape[0]


@dataclass
class ScoreTensor:
    values: np.ndarray  # (L, F or B, J)
    scale: str = "bin"  # "bin" or "erb"

    def __post_init__(self):
        if self.scale not in ("bin", "erb"):
            raise DataError(f"unknown scale tag {self.scale!r}")
        if np.asarray(self.values).ndim != 3:
            raise DataError("score tensor must be (L, K, J)")


def score_tensor(X: Spectrogram, geom: ArrayGeometry, grid: DirectionGrid = DirectionGrid(),
                 R: int = 4, c: float = SPEED_OF_SOUND, dtype=np.float64,
                 chunk: int = 64) -> ScoreTensor:
    """Per-bin SCORE for every frame of ``X`` (channels in geometry order)."""
    if X.n_channels != geom.n_mics:
        raise DataError(f"{X.n_channels} channels but geometry has {geom.n_mics} mics")
    r = whiten_rtf(short_term_rtf(X, R, geom.reference_index))
    A = steering_matrix(geom, grid, X.params.bin_frequencies(), c)  # (F, M-1, J)
    Ah = np.conj(A) / (geom.n_mics - 1)
    out = np.empty((r.shape[0], r.shape[1], grid.n_directions), dtype=dtype)
    for s in range(0, r.shape[0], chunk):
        out[s:s + chunk] = np.einsum("fmj,lfm->lfj", Ah, r[s:s + chunk]).real
    return ScoreTensor(out, "bin")


def erb_score(gamma: ScoreTensor, fb: ErbFilterbank) -> ScoreTensor:
    if gamma.scale != "bin":
        raise DataError("ERB compression expects a per-bin score tensor")
    vals = erb_compress(np.asarray(gamma.values, dtype=np.float64), fb, axis=1)
    return ScoreTensor(vals.astype(np.asarray(gamma.values).dtype, copy=False), "erb")


@dataclass
class FeatureVector:
    tensor: np.ndarray  # (L, K, C)
    layout: str

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise DataError(f"unknown layout {self.layout!r}")
        self.tensor = np.asarray(self.tensor)
        if self.tensor.ndim != 3:
            raise DataError("feature tensor must be (L, K, C)")

    @property
    def vector(self) -> np.ndarray:
        return self.tensor.reshape(-1)

    @property
    def dims(self) -> tuple:
        return tuple(self.tensor.shape)

    def save(self, path):
        """Magic line, little-endian u32 header length, JSON header
        (layout, shape, dtype), then raw little-endian C-order data."""
        data = np.ascontiguousarray(self.tensor)
        dtype = data.dtype.newbyteorder("<")
        header = json.dumps({"layout": self.layout, "shape": list(data.shape),
                             "dtype": dtype.str}).encode()
        with open(Path(path), "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(data.astype(dtype, copy=False).tobytes())

    @classmethod
    def load(cls, path) -> "FeatureVector":
        raw = Path(path).read_bytes()
        if not raw.startswith(_MAGIC):
            raise DataError(f"{path}: not a feature dump")
        k = len(_MAGIC)
        (n,) = struct.unpack("<I", raw[k:k + 4])
        try:
            head = json.loads(raw[k + 4:k + 4 + n])
            dtype = np.dtype(head["dtype"])
            shape = tuple(int(v) for v in head["shape"])
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed header") from exc
        body = raw[k + 4 + n:]
        if len(body) != dtype.itemsize * math.prod(shape):
            raise DataError(f"{path}: shape header does not match data")
        return cls(np.frombuffer(body, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("=")),
                   head["layout"])


def icpd_feature(X: Spectrogram, reference_index: int = 0) -> FeatureVector:
    """Inter-channel phase differences against the reference, in (-pi, pi]."""
    x = _reorder(X, reference_index)
    prod = x[1:] * np.conj(x[0])[None]
    ipd = np.where(prod != 0, np.angle(prod), 0.0)  # angle(-0) would be pi
    ipd[ipd == -np.pi] = np.pi
    return FeatureVector(np.moveaxis(ipd, 0, -1), "ICPD")


def score_feature(gamma: ScoreTensor) -> FeatureVector:
    return FeatureVector(gamma.values, "SCORE" if gamma.scale == "bin" else "ERB-SCORE")


def mac_terms(psi: FeatureVector, psi2: FeatureVector) -> tuple[float, float, float]:
    """``(psi.psi2, psi.psi, psi2.psi2)``; summed across scenes these give
    the MAC of concatenated vectors."""
    if psi.layout != psi2.layout:
        raise DimensionMismatch(f"layout {psi.layout} vs {psi2.layout}")
    if psi.tensor.shape != psi2.tensor.shape:
        raise DimensionMismatch(f"{psi.layout} dims {psi.dims} vs {psi2.dims}")
    a = psi.vector.astype(np.float64)
    b = psi2.vector.astype(np.float64)
    return float(a @ b), float(a @ a), float(b @ b)


def mac_from_terms(cross: float, aa: float, bb: float) -> float:
    if aa == 0 or bb == 0:
        raise NumericalError("MAC undefined for a zero feature vector")
    return cross * cross / (aa * bb)


def mac(psi: FeatureVector, psi2: FeatureVector) -> float:
    """Modal assurance criterion ``(a.b)^2 / (a.a b.b)`` in [0, 1]."""
    return mac_from_terms(*mac_terms(psi, psi2))
