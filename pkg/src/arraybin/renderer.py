"""Toy-scale alpha-conditioned binaural renderer.

Information flow per frame: encoder over (ERB log-power of the reference
mic, ERB-SCORE, compressed low-band spectrum) -> embedding -> FiLM(alpha)
-> two heads: sigmoid ERB masks per ear and complex deep-filter taps per
ear. Masks gain the reference spectrum; the deep filter then runs over the
lowest ``df_bins`` bins.

All parameters live in one flat float64 vector so gradients can be checked
coordinate by coordinate and checkpoints are a single binary blob.
Autograd comes from torch; the public ops also accept numpy arrays.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError, NumericalError
from .signal import ErbFilterbank, erb_compress

ALPHA_SET = (0.0, 0.3, 0.5, 0.7, 1.0)
COMPRESS = 0.3
PHASE_WEIGHT = 0.2
_EPS = 1e-12

_F64 = torch.float64


def _tensor(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    arr = np.asarray(x)
    if dtype is None:
        dtype = torch.complex128 if np.iscomplexobj(arr) else torch.float64
    return torch.as_tensor(arr, dtype=dtype)


def _like(out: torch.Tensor, ref):
    return out if isinstance(ref, torch.Tensor) else out.detach().numpy()


# ---------------------------------------------------------------------------
# Building blocks


@dataclass
class FilmGenerator:
    """alpha -> tanh hidden layer -> (scale, shift)."""
    w1: torch.Tensor  # (H,)
    b1: torch.Tensor  # (H,)
    w2: torch.Tensor  # (2E, H)
    b2: torch.Tensor  # (2E,)

    @property
    def dim(self) -> int:
        return self.b2.shape[0] // 2

    def __call__(self, alpha) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.tanh(self.w1 * float(alpha) + self.b1)
        out = self.w2 @ h + self.b2
        return out[:self.dim], out[self.dim:]

    @classmethod
    def constant(cls, scale, shift) -> "FilmGenerator":
        """Generator whose output ignores alpha; handy for tests."""
        scale, shift = _tensor(scale), _tensor(shift)
        e = scale.shape[0]
        return cls(torch.zeros(1, dtype=_F64), torch.zeros(1, dtype=_F64),
                   torch.zeros(2 * e, 1, dtype=_F64), torch.cat([scale, shift]).to(_F64))


def film(e, alpha: float, gen: FilmGenerator):
    """``scale(alpha) * e + shift(alpha)`` over the last axis."""
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha {alpha} outside [0, 1]")
    et = _tensor(e)
    if et.shape[-1] != gen.dim:
        raise DataError(f"embedding dim {et.shape[-1]} vs FiLM dim {gen.dim}")
    scale, shift = gen(alpha)
    return _like(scale * et + shift, e)


def apply_erb_masks(Y1, masks, fb: ErbFilterbank):
    """``Y1`` (L, F) complex, ``masks`` (2, L, B) -> (2, L, F)."""
    Yt, Gt = _tensor(Y1), _tensor(masks, torch.float64)
    if Gt.shape[-1] != fb.n_bands or Yt.shape[-1] != fb.n_bins:
        raise DataError(f"masks {tuple(Gt.shape)} / spectrum {tuple(Yt.shape)} do not fit "
                        f"{fb.n_bands} bands x {fb.n_bins} bins")
    gains = Gt[..., torch.as_tensor(fb.band_of_bin)]
    return _like(Yt.unsqueeze(0) * gains, Y1)


def apply_deep_filter(YG, C, lookahead: int = 0):
    """``out(l, f) = sum_i C(l, i, f) YG(l - i + q, f)`` on the first
    ``C.shape[-1]`` bins; higher bins pass through. Frames outside the
    signal are zero. Leading axes (e.g. ears) broadcast.
    """
    Yt, Ct = _tensor(YG), _tensor(C, torch.complex128)
    order = Ct.shape[-2] - 1
    if lookahead < 0 or lookahead > order:
        raise DataError(f"look-ahead {lookahead} must be within [0, {order}]")
    n_df = Ct.shape[-1]
    L = Yt.shape[-2]
    if Ct.shape[-3] != L or n_df > Yt.shape[-1]:
        raise DataError(f"coefficients {tuple(Ct.shape)} do not fit spectrum {tuple(Yt.shape)}")
    low = Yt[..., :n_df]
    pad = torch.zeros(low.shape[:-2] + (order,) + low.shape[-1:], dtype=low.dtype)
    padded = torch.cat([pad, low, pad], dim=-2)  # frame l sits at l + order
    acc = torch.zeros_like(low)
    for i in range(order + 1):
        start = order - i + lookahead
        acc = acc + Ct[..., :, i, :] * padded[..., start:start + L, :]
    out = torch.cat([acc, Yt[..., n_df:]], dim=-1)
    return _like(out, YG)


def _compressed(Y, c):
    mag2 = Y.real ** 2 + Y.imag ** 2
    return torch.pow(mag2 + _EPS, 0.5 * c), Y * torch.pow(mag2 + _EPS, 0.5 * (c - 1))


def compressed_loss(Y, Y_hat, c: float = COMPRESS, lam: float = PHASE_WEIGHT):
    """Compressed magnitude error plus compressed complex error, weighted
    ``1 - lam`` and ``lam``, summed over ears, frames and bins."""
    Yt, Ht = _tensor(Y, torch.complex128), _tensor(Y_hat, torch.complex128)
    if Yt.shape != Ht.shape:
        raise DataError(f"shape mismatch {tuple(Yt.shape)} vs {tuple(Ht.shape)}")
    if not 0 < c <= 1 or not 0 <= lam <= 1:
        raise DataError("need c in (0, 1] and lambda in [0, 1]")
    my, cy = _compressed(Yt, c)
    mh, ch = _compressed(Ht, c)
    loss = (1 - lam) * ((my - mh) ** 2).sum() + lam * (torch.abs(cy - ch) ** 2).sum()
    return loss if isinstance(Y_hat, torch.Tensor) or isinstance(Y, torch.Tensor) else float(loss)


# ---------------------------------------------------------------------------
# Toy model


@dataclass(frozen=True)
class ToyConfig:
    n_bins: int = 257
    n_bands: int = 32
    n_dirs: int = 72
    df_bins: int = 160
    order: int = 5
    lookahead: int = 0
    hidden: int = 64
    film_hidden: int = 16

    @property
    def input_dim(self) -> int:
        return self.n_bands + self.n_bands * self.n_dirs + 2 * self.df_bins

    def layers(self) -> list[tuple[str, tuple]]:
        h, d = self.hidden, self.input_dim
        df_out = 2 * 2 * (self.order + 1) * self.df_bins
        return [
            ("enc1.w", (h, d)), ("enc1.b", (h,)),
            ("enc2.w", (h, h)), ("enc2.b", (h,)),
            ("film1.w", (self.film_hidden,)), ("film1.b", (self.film_hidden,)),
            ("film2.w", (2 * h, self.film_hidden)), ("film2.b", (2 * h,)),
            ("erb.w", (2 * self.n_bands, h)), ("erb.b", (2 * self.n_bands,)),
            ("df.w", (df_out, h)), ("df.b", (df_out,)),
        ]

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for _, s in self.layers())


def unpack(params, config: ToyConfig) -> dict:
    p = _tensor(params, torch.float64)
    if p.ndim != 1 or p.shape[0] != config.n_params:
        raise DataError(f"parameter vector of {tuple(p.shape)} does not match manifest "
                        f"({config.n_params} values)")
    out, k = {}, 0
    for name, shape in config.layers():
        n = math.prod(shape)
        out[name] = p[k:k + n].reshape(shape)
        k += n
    return out


def init_params(config: ToyConfig, seed: int = 0) -> np.ndarray:
    """Scaled-normal weights, zero biases, FiLM starting at identity."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in config.layers():
        if name.endswith(".b"):
            v = np.zeros(shape)
            if name == "film2.b":
                v[:config.hidden] = 1.0
        else:
            fan_in = shape[1] if len(shape) == 2 else 1
            v = rng.standard_normal(shape) / np.sqrt(fan_in)
            if name == "film2.w":
                v *= 0.1
        chunks.append(v.ravel())
    return np.concatenate(chunks)


@dataclass
class ToyExample:
    """One scene prepared for the toy model.

    ``inputs`` (L, D) per-frame features, ``ref`` (L, F) reference-mic
    spectrum, ``direct`` / ``ambient`` (2, L, F) binaural target parts; the
    target at alpha is ``direct + alpha * ambient``.
    """
    inputs: torch.Tensor
    ref: torch.Tensor
    direct: torch.Tensor
    ambient: torch.Tensor

    def target(self, alpha: float) -> torch.Tensor:
        return self.direct + alpha * self.ambient


def toy_features(ref_spec, gamma_erb, fb: ErbFilterbank, config: ToyConfig) -> np.ndarray:
    """Per-frame input vector: ERB log-power, flattened ERB-SCORE (bands x
    directions) and the compressed complex spectrum of the low bins."""
    Y = np.asarray(ref_spec)
    g = np.asarray(gamma_erb, dtype=np.float64)
    if g.shape != (Y.shape[0], config.n_bands, config.n_dirs):
        raise DataError(f"ERB-SCORE {g.shape} does not match config")
    logpow = np.log10(erb_compress(np.abs(Y) ** 2, fb, axis=-1) + 1e-10) / 10.0
    low = Y[:, :config.df_bins]
    low = low * (np.abs(low) ** 2 + _EPS) ** ((COMPRESS - 1) / 2)
    return np.concatenate([logpow, g.reshape(len(Y), -1), low.real, low.imag], axis=1)


def make_example(ref_spec, gamma_erb, direct_spec, ambient_spec, fb: ErbFilterbank,
                 config: ToyConfig) -> ToyExample:
    return ToyExample(_tensor(toy_features(ref_spec, gamma_erb, fb, config)),
                      _tensor(np.asarray(ref_spec, dtype=complex)),
                      _tensor(np.asarray(direct_spec, dtype=complex)),
                      _tensor(np.asarray(ambient_spec, dtype=complex)))


def toy_forward(inputs, ref, params, alpha: float, config: ToyConfig, fb: ErbFilterbank):
    """Binaural spectra (2, L, F) for conditioning value ``alpha``."""
    p = unpack(params, config)
    x = _tensor(inputs, torch.float64)
    Y1 = _tensor(ref, torch.complex128)
    if x.shape[-1] != config.input_dim or Y1.shape[-1] != config.n_bins or fb.n_bands != config.n_bands:
        raise DataError("feature dimensions do not match the model manifest")
    e = torch.tanh(x @ p["enc1.w"].T + p["enc1.b"])
    e = torch.tanh(e @ p["enc2.w"].T + p["enc2.b"])
    gen = FilmGenerator(p["film1.w"], p["film1.b"], p["film2.w"], p["film2.b"])
    e = film(e, alpha, gen)
    L = x.shape[0]
    masks = torch.sigmoid(e @ p["erb.w"].T + p["erb.b"]).reshape(L, 2, config.n_bands)
    YG = apply_erb_masks(Y1, masks.permute(1, 0, 2), fb)
    raw = (e @ p["df.w"].T + p["df.b"]).reshape(L, 2, config.order + 1, config.df_bins, 2)
    C = torch.complex(raw[..., 0], raw[..., 1]).permute(1, 0, 2, 3)  # (2, L, N+1, F_DF)
    out = apply_deep_filter(YG, C, config.lookahead)
    if isinstance(params, torch.Tensor) or isinstance(inputs, torch.Tensor):
        return out
    return out.detach().numpy()


def example_loss(params, example: ToyExample, alpha: float, config: ToyConfig,
                 fb: ErbFilterbank, target_alpha: float | None = None) -> torch.Tensor:
    """Loss of the model conditioned on ``alpha`` against the target at
    ``target_alpha`` (defaults to ``alpha``)."""
    t = alpha if target_alpha is None else target_alpha
    est = toy_forward(example.inputs, example.ref, _tensor(params, torch.float64), alpha, config, fb)
    return compressed_loss(example.target(t), est)


def loss_gradient(params, batch, alpha: float, config: ToyConfig, fb: ErbFilterbank):
    """``(loss, gradient)`` of the summed loss over ``batch`` at ``alpha``."""
    p = torch.tensor(np.asarray(params, dtype=np.float64), requires_grad=True)
    loss = sum(example_loss(p, ex, alpha, config, fb) for ex in batch)
    if not torch.isfinite(loss):
        raise NumericalError("non-finite loss")
    loss.backward()
    return float(loss.detach()), p.grad.detach().numpy().copy()


@dataclass
class TrainResult:
    params: np.ndarray
    trace: list  # (step, alpha, loss)
    lr_history: list


def train_toy(examples, params0, config: ToyConfig, fb: ErbFilterbank, steps: int = 500,
              lr: float = 1e-3, alpha_set=ALPHA_SET, seed: int = 0, clip_norm: float = 3.0,
              eval_every: int = 25, patience: int = 3, validation=None) -> TrainResult:
    """Adam on the flat parameter vector. Each step draws alpha from
    ``alpha_set`` and an example, and fits the matching target. Every
    ``eval_every`` steps the mean validation loss over ``alpha_set`` is
    checked; ``patience`` checks without improvement halve the learning rate.
    """
    if not examples:
        raise DataError("training needs at least one example")
    rng = np.random.default_rng(seed)
    validation = examples if validation is None else validation
    p = torch.tensor(np.asarray(params0, dtype=np.float64), requires_grad=True)
    opt = torch.optim.Adam([p], lr=lr)
    trace, lr_hist = [], [(0, lr)]
    best, stale = math.inf, 0
    for step in range(1, steps + 1):
        alpha = float(alpha_set[int(rng.integers(len(alpha_set)))])
        ex = examples[int(rng.integers(len(examples)))]
        opt.zero_grad()
        loss = example_loss(p, ex, alpha, config, fb)
        value = float(loss.detach())
        trace.append((step, alpha, value))
        if not math.isfinite(value):
            err = NumericalError(f"loss diverged at step {step}")
            err.trace = trace
            raise err
        loss.backward()
        if clip_norm:
            torch.nn.utils.clip_grad_norm_([p], clip_norm)
        opt.step()
        if eval_every and step % eval_every == 0:
            with torch.no_grad():
                val = np.mean([float(example_loss(p, v, a, config, fb))
                               for v in validation for a in alpha_set])
            if val < best:
                best, stale = val, 0
            else:
                stale += 1
                if stale >= patience:
                    for group in opt.param_groups:
                        group["lr"] *= 0.5
                    lr_hist.append((step, opt.param_groups[0]["lr"]))
                    stale = 0
    return TrainResult(p.detach().numpy().copy(), trace, lr_hist)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(directory, params, config: ToyConfig, trace=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params = np.asarray(params, dtype="<f8")
    if params.shape != (config.n_params,):
        raise DataError("parameter vector does not match the config")
    (d / "params.bin").write_bytes(params.tobytes())
    manifest = {"config": asdict(config), "n_params": config.n_params,
                "layers": [{"name": n, "shape": list(s)} for n, s in config.layers()]}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    if trace is not None:
        write_trace(d / "loss_trace.csv", trace)


def load_checkpoint(directory) -> tuple[np.ndarray, ToyConfig]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    config = ToyConfig(**manifest["config"])
    if [[n, list(s)] for n, s in config.layers()] != [[l["name"], l["shape"]] for l in manifest["layers"]]:
        raise DataError("checkpoint layer manifest does not match its config")
    params = np.frombuffer((d / "params.bin").read_bytes(), dtype="<f8").copy()
    if params.shape != (config.n_params,):
        raise DataError(f"checkpoint holds {params.size} values, manifest says {config.n_params}")
    return params, config


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "alpha", "loss"])
        for step, alpha, loss in trace:
            w.writerow([step, f"{alpha:.1f}", repr(float(loss))])
