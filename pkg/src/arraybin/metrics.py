"""Objective binaural rendering metrics: magnitude-weighted IPD / ILD errors
and the modified scale-invariant SDR over concatenated ear signals."""
from __future__ import annotations

import math

import numpy as np

from .errors import DataError, NumericalError

MAG_FLOOR = 1e-10


def _pair(Y) -> tuple[np.ndarray, np.ndarray]:
    Y = np.asarray(Y)
    if Y.ndim < 2 or Y.shape[0] != 2:
        raise DataError("binaural spectra must be stacked as (2, L, F)")
    return Y[0], Y[1]


def _check(target, est):
    if np.shape(target) != np.shape(est):
        raise DataError(f"shape mismatch: {np.shape(target)} vs {np.shape(est)}")


def _wrap(phi):
    """Wrap to (-pi, pi]."""
    out = np.mod(phi + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def _weights(target) -> np.ndarray:
    yl, yr = _pair(target)
    sigma = 0.5 * (np.abs(yl) + np.abs(yr))
    if sigma.sum() == 0:
        raise NumericalError("target is silent; magnitude weights sum to zero")
    return sigma


def mw_ipde(target, est, sample_rate: int = 16000, fft_size: int = 512,
            f_max: float = 1500.0) -> float:
    """Magnitude-weighted interaural phase difference error in radians,
    over bins at or below ``f_max``."""
    _check(target, est)
    yl, yr = _pair(target)
    el, er = _pair(est)
    n_bins = yl.shape[-1]
    keep = np.arange(n_bins) * sample_rate / fft_size <= f_max
    sigma = _weights(target)[..., keep]
    if sigma.sum() == 0:
        raise NumericalError("target is silent below f_max")
    ipd_t = np.angle(yl * np.conj(yr))[..., keep]
    ipd_e = np.angle(el * np.conj(er))[..., keep]
    err = np.abs(_wrap(ipd_t - ipd_e))
    return float((sigma * err).sum() / sigma.sum())


def mw_ilde(target, est, floor: float = MAG_FLOOR) -> float:
    """Magnitude-weighted interaural level difference error in dB.

    Magnitudes are floored at ``floor`` times each clip's peak magnitude.
    """
    _check(target, est)
    sigma = _weights(target)

    def ild(Y):
        yl, yr = _pair(Y)
        al, ar = np.abs(yl), np.abs(yr)
        eps = floor * max(al.max(), ar.max(), np.finfo(float).tiny)
        return 20 * np.log10(np.maximum(al, eps) / np.maximum(ar, eps))

    err = np.abs(ild(target) - ild(est))
    return float((sigma * err).sum() / sigma.sum())


def msi_sdr(s, s_hat, convention: str = "squared") -> float:
    """Modified SI-SDR in dB over concatenated binaural signals.

    ``convention="squared"`` takes ``20 log10`` of the ratio of squared norms;
    ``"standard"`` uses ``10 log10``. A residual at floating-point resolution
    returns ``inf``; an estimate orthogonal to the target returns ``-inf``.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    s_hat = np.asarray(s_hat, dtype=np.float64).ravel()
    if s.shape != s_hat.shape:
        raise DataError(f"length mismatch: {s.size} vs {s_hat.size}")
    ss = float(s @ s)
    if ss == 0:
        raise NumericalError("target signal is all zeros")
    factor = {"squared": 20.0, "standard": 10.0}.get(convention)
    if factor is None:
        raise DataError(f"unknown convention {convention!r}")
    eta = float(s_hat @ s) / ss
    proj = eta * s
    num = float(proj @ proj)
    resid = s_hat - proj
    den = float(resid @ resid)
    if num == 0:
        return -math.inf
    if den <= 1e-24 * float(s_hat @ s_hat):
        return math.inf
    return factor * math.log10(num / den)


def format_db(value: float):
    """JSON-safe scalar: infinities become the strings "inf" / "-inf"."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value
