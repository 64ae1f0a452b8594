"""DSP reference renderers.

LBH: SRP-PHAT localisation -> MPDR beamformer toward the estimate -> HRTF
pair of the estimated direction.
MIF: per-bin Tikhonov-regularised model matching from array channels to a
binaural target response set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .geometry import SPEED_OF_SOUND, ArrayGeometry, DirectionGrid, steering_matrix
from .scene.hrtf import HrtfSet
from .signal import Spectrogram

MIF_REG = 1e-4
LOADING = 1e-3


def _geometry_order(X: Spectrogram, geom: ArrayGeometry) -> np.ndarray:
    if X.n_channels != geom.n_mics:
        raise DataError(f"{X.n_channels} channels but geometry has {geom.n_mics} mics")
    idx = [geom.reference_index] + [m for m in range(geom.n_mics) if m != geom.reference_index]
    return X.data[idx]


def srp_phat_map(X: Spectrogram, geom: ArrayGeometry, grid: DirectionGrid = DirectionGrid(),
                 f_range=(100.0, 4000.0), c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Steered response power over the grid, summed over frames, bins in
    ``f_range`` and all microphone pairs."""
    x = _geometry_order(X, geom)
    mag = np.abs(x)
    if not np.any(mag > 0):
        raise DataError("SRP-PHAT on an all-zero input")
    xt = np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 0.0)
    freqs = X.params.bin_frequencies()
    sel = (freqs >= f_range[0]) & (freqs <= f_range[1])
    A = steering_matrix(geom, grid, freqs[sel], c, include_reference=True)  # (K, M, J)
    power = np.zeros(grid.n_directions)
    # sum_{m<n} Re{x_m x_n^* a_m^* a_n} = (|sum_m a_m^* x_m|^2 - sum_m |x_m|^2) / 2
    for s in range(0, x.shape[1], 64):
        xs = xt[:, s:s + 64][:, :, sel]  # (M, l, K)
        z = np.einsum("kmj,mlk->lkj", np.conj(A), xs)
        energy = (np.abs(xs) ** 2).sum(axis=0)  # (l, K)
        power += 0.5 * ((np.abs(z) ** 2) - energy[..., None]).sum(axis=(0, 1))
    return power


def srp_phat(X: Spectrogram, geom: ArrayGeometry, grid: DirectionGrid = DirectionGrid(),
             f_range=(100.0, 4000.0), c: float = SPEED_OF_SOUND) -> float:
    """Azimuth (deg) of the SRP-PHAT maximum; ties go to the smallest azimuth."""
    p = srp_phat_map(X, geom, grid, f_range, c)
    best = np.flatnonzero(p >= p.max() - 1e-12 * abs(p.max()))
    return float(grid.azimuths_deg[best[0]])


def spatial_covariance(X: Spectrogram, geom: ArrayGeometry | None = None,
                       loading: float = LOADING) -> np.ndarray:
    """Frame-averaged ``x x^H`` per bin with diagonal loading
    ``loading * trace(R) / M``; shape (F, M, M) in geometry order."""
    x = _geometry_order(X, geom) if geom is not None else X.data
    m = x.shape[0]
    R = np.einsum("mlf,nlf->fmn", x, np.conj(x)) / x.shape[1]
    R = 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))
    tr = np.trace(R, axis1=-2, axis2=-1).real
    R = R + (loading * tr / m)[:, None, None] * np.eye(m)
    return R


def mpdr_weights(R: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``w = R^-1 a / (a^H R^-1 a)``; batched over leading axes."""
    R = np.asarray(R, dtype=np.complex128)
    a = np.asarray(a, dtype=np.complex128)
    try:
        ria = np.linalg.solve(R, a[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is singular after loading") from exc
    den = np.einsum("...m,...m->...", np.conj(a), ria)
    if np.any(np.abs(den) == 0) or not np.all(np.isfinite(ria)):
        raise NumericalError("covariance is singular after loading")
    return ria / den[..., None]


def lbh_render(X: Spectrogram, geom: ArrayGeometry, hrtf: HrtfSet,
               grid: DirectionGrid = DirectionGrid(), c: float = SPEED_OF_SOUND,
               azimuth_deg: float | None = None) -> tuple[Spectrogram, float]:
    """Localise, beamform with MPDR toward the estimate, apply that
    direction's HRTF pair. Returns ``(binaural spectrogram, azimuth)``.
    Silent input renders silence (azimuth reported as NaN)."""
    if not np.any(X.data):
        return Spectrogram(np.zeros((2,) + X.data.shape[1:], complex), X.params, X.length), float("nan")
    if azimuth_deg is None:
        azimuth_deg = srp_phat(X, geom, grid, c=c)
    j = grid.nearest(azimuth_deg)
    a = steering_matrix(geom, DirectionGrid(grid.n_directions), X.params.bin_frequencies(), c,
                        include_reference=True)[:, :, j]  # (F, M)
    w = mpdr_weights(spatial_covariance(X, geom), a)
    x = _geometry_order(X, geom)
    beam = np.einsum("fm,mlf->lf", np.conj(w), x)
    H = hrtf.frequency_response(X.params.fft_size)[hrtf.index(grid.azimuths_deg[j])]  # (2, F)
    return Spectrogram(beam[None] * H[:, None, :], X.params, X.length), float(grid.azimuths_deg[j])


@dataclass
class MifFilterBank:
    W: np.ndarray  # (F, 2, M)
    reg: float = MIF_REG
    geometry: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.W)):
            raise NumericalError("MIF filters contain non-finite values")

    def save(self, path):
        """``<path>.npy``-style binary tensor of shape (2, M, F) plus JSON metadata."""
        path = Path(path)
        with open(path.with_suffix(".bin"), "wb") as fh:
            header = np.array([2, self.W.shape[2], self.W.shape[0]], dtype="<i8")
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(np.transpose(self.W, (1, 2, 0))).astype("<c16").tobytes())
        path.with_suffix(".json").write_text(json.dumps(
            {"reg": self.reg, "geometry": self.geometry, "shape": [2, self.W.shape[2], self.W.shape[0]],
             "dtype": "complex128"}))

    @classmethod
    def load(cls, path) -> "MifFilterBank":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".bin").read_bytes()
        shape = tuple(np.frombuffer(raw[:24], dtype="<i8"))
        if list(shape) != meta["shape"]:
            raise DataError("MIF header does not match metadata")
        data = np.frombuffer(raw[24:], dtype="<c16").reshape(shape)
        return cls(np.transpose(data, (2, 0, 1)).copy(), meta["reg"], meta["geometry"])


def mif_design(H: np.ndarray, T: np.ndarray, reg: float = MIF_REG) -> MifFilterBank:
    """``W(f) = T H^H (H H^H + reg I)^-1`` per bin.

    ``H`` is (F, M, J) array responses, ``T`` is (F, 2, J) desired binaural
    responses. Solved through the SVD of ``H`` so the result stays accurate
    for very small ``reg``.
    """
    H = np.asarray(H, dtype=np.complex128)
    T = np.asarray(T, dtype=np.complex128)
    if reg < 0:
        raise DataError("regularisation must be non-negative")
    if H.ndim != 3 or T.ndim != 3 or H.shape[0] != T.shape[0] or H.shape[2] != T.shape[2]:
        raise DataError(f"H {H.shape} and T {T.shape} are inconsistent")
    U, s, Vh = np.linalg.svd(H, full_matrices=False)  # H = U s Vh
    if reg == 0 and (H.shape[1] > H.shape[2] or np.any(s.min(axis=-1) <= s.max(axis=-1) * 1e-14)):
        raise NumericalError("H H^H is singular and reg = 0")
    gain = s / (s ** 2 + reg)
    # W = T Vh^H diag(gain) U^H
    W = np.einsum("fij,fkj,fk,fmk->fim", T, np.conj(Vh), gain, np.conj(U))
    return MifFilterBank(W, reg)


def mif_objective(W, H, T, reg) -> np.ndarray:
    """Per-bin ``||W H - T||_F^2 + reg ||W||_F^2``."""
    E = np.einsum("fim,fmj->fij", W, H) - T
    return (np.abs(E) ** 2).sum(axis=(1, 2)) + reg * (np.abs(W) ** 2).sum(axis=(1, 2))


def mif_residual(W, H, T) -> np.ndarray:
    E = np.einsum("fim,fmj->fij", W, H) - T
    return np.sqrt((np.abs(E) ** 2).sum(axis=(1, 2)))


def mif_apply(bank: MifFilterBank, X: Spectrogram) -> Spectrogram:
    """``Y(l, f) = W(f) x(l, f)`` with channels in the spectrogram's order."""
    if bank.W.shape[0] != X.n_bins or bank.W.shape[2] != X.n_channels:
        raise DataError(f"filters {bank.W.shape} do not fit spectrogram {X.data.shape}")
    return Spectrogram(np.einsum("fim,mlf->ilf", bank.W, X.data), X.params, X.length)


def mif_from_scene(ambient_rirs: np.ndarray, hrtf: HrtfSet, reference: int, fft_size: int = 512,
                   reg: float = MIF_REG) -> MifFilterBank:
    """Design MIF filters from simulated RIRs of the ambient directions.

    ``ambient_rirs`` is (J, M, taps) in microphone order; responses are
    truncated to ``fft_size`` taps (multiplicative transfer-function model).
    The desired response of direction ``j`` is its HRTF pair times the
    reference-microphone response, matching the alpha = 1 target.
    """
    h = ambient_rirs[..., :fft_size]
    Hf = np.fft.rfft(h, n=fft_size, axis=-1)  # (J, M, F)
    H = np.transpose(Hf, (2, 1, 0))
    hr = hrtf.frequency_response(fft_size)  # (J, 2, F)
    T = np.transpose(hr * Hf[:, reference][:, None, :], (2, 1, 0))
    return mif_design(H, T, reg)
