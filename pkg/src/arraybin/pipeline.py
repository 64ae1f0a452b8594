"""On-disk pipeline behind the CLI verbs.

Layout under the output directory, one ``run`` per (scene, geometry):

    scenes/<run>/mixture.wav, direct.wav, ambient.wav, target_alpha<a>.wav, scene.json
    features/<run>/icpd.feat, score.feat, erb_score.feat
    mac/mac_report.json, mac/mac_<layout>.csv
    checkpoint/params.bin, manifest.json, loss_trace.csv
    renders/<run>/<method>.wav, toy_alpha<a>.wav, mif_filters.bin/.json
    report/report.json, report.csv

Every verb checks its inputs for all runs before writing anything, and every
file lands through a temp file plus rename.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache, partial
from pathlib import Path

import numpy as np

from .baselines import lbh_render, mif_apply, mif_from_scene
from .config import RunConfig, alpha_tag, check_writable
from .errors import ConfigError, DataError, DimensionMismatch
from .geometry import DirectionGrid, resolve_geometry
from .metrics import format_db, msi_sdr, mw_ilde, mw_ipde
from .renderer import (ToyConfig, init_params, load_checkpoint, make_example, save_checkpoint,
                       toy_features, toy_forward, train_toy)
from .rng import make_rng
from .scene import SceneSpec, SceneSynth, load_hrtf_set, random_scene, spherical_head_hrtf
from .score import LAYOUTS, FeatureVector, erb_score, icpd_feature, mac_from_terms, mac_terms, \
    score_feature, score_tensor
from .signal import SAMPLE_RATE, Spectrogram, build_erb_filterbank, istft, read_wav, stft, write_wav

REPORT_FIELDS = ("scene_id", "method", "alpha", "mw_ipde_rad", "mw_ilde_db", "msi_sdr_db")
FEATURE_FILES = {"ICPD": "icpd.feat", "SCORE": "score.feat", "ERB-SCORE": "erb_score.feat"}
_METRIC_COLUMN = {"mw_ipde": "mw_ipde_rad", "mw_ilde": "mw_ilde_db", "msi_sdr": "msi_sdr_db"}


@dataclass(frozen=True)
class Run:
    run_id: str
    spec: SceneSpec
    geometry: str  # display name

    @property
    def scene_key(self) -> str:
        return self.spec.scene_id


# ---------------------------------------------------------------------------
# plumbing


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; rename onto it on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_text(path, text: str):
    with atomic_path(path) as tmp:
        tmp.write_text(text)


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_wav(path, data):
    with atomic_path(path) as tmp:
        write_wav(tmp, data)


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _require(paths):
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        shown = ", ".join(missing[:3]) + (" ..." if len(missing) > 3 else "")
        raise DataError(f"{len(missing)} required input file(s) missing: {shown}")


def plan_runs(cfg: RunConfig) -> list[Run]:
    """All (scene, geometry) runs in a fixed order."""
    specs = []
    g = cfg.scenes
    if g is not None:
        for i in range(g.count):
            specs.append(random_scene(
                cfg.seed, i, "G1", t60_choices=tuple(g.t60), sar_db=g.sar_db, snr_db=g.snr_db,
                duration_s=g.duration_s, radius=tuple(g.radius_m), moving=g.moving,
                n_segments=g.n_segments, ambient_mode=g.ambient_mode, anechoic=g.anechoic))
    for p in cfg.scene_files:
        try:
            specs.append(SceneSpec.from_json(json.loads(Path(p).read_text())))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    ids = [s.scene_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("scene ids must be unique")
    runs = []
    for spec in specs:
        for name in cfg.geometries:
            geom = resolve_geometry(name)
            d = spec.to_json()
            d["geometry"] = name
            runs.append(Run(f"{spec.scene_id}-{geom.name}", SceneSpec.from_json(d), geom.name))
    if len({r.run_id for r in runs}) != len(runs):
        raise ConfigError("two geometries share a name")
    for r in runs:
        SceneSynth(r.spec)  # room / array placement checks
    return runs


@lru_cache(maxsize=4)
def _hrtf(manifest: str | None, n_directions: int):
    grid = DirectionGrid(n_directions)
    if manifest is None:
        return spherical_head_hrtf(grid)
    return load_hrtf_set(manifest, grid)


def _dir(cfg, kind: str, run: Run | None = None) -> Path:
    d = Path(cfg.out) / kind
    return d / run.run_id if run is not None else d


def _jsonable(v):
    return format_db(v) if isinstance(v, float) and math.isinf(v) else v


# ---------------------------------------------------------------------------
# synth


def _synth_one(cfg: RunConfig, run: Run):
    scene = SceneSynth(run.spec)
    hrtf = _hrtf(cfg.hrtf, run.spec.n_directions)
    speech, ambient = scene.load_sources()
    mix = scene.mixture(speech, ambient)
    direct, amb = scene.target_parts(speech, ambient, hrtf, mix.ambient_gain)
    d = _dir(cfg, "scenes", run)
    save_wav(d / "mixture.wav", mix.signal)
    save_wav(d / "direct.wav", direct)
    save_wav(d / "ambient.wav", amb)
    for a in cfg.alphas:
        save_wav(d / f"target_alpha{alpha_tag(a)}.wav", direct + a * amb)
    write_json(d / "scene.json", {
        "run_id": run.run_id,
        "scene": run.spec.to_json(),
        "geometry": scene.geom.to_json(),
        "sample_rate": SAMPLE_RATE,
        "n_samples": scene.n,
        "alphas": [float(a) for a in cfg.alphas],
        "ambient_gain": mix.ambient_gain,
        "measured": {"sar_db": _jsonable(mix.sar_db), "snr_db": _jsonable(mix.snr_db)},
    })
    return run.run_id


def cmd_synth(cfg: RunConfig) -> list[str]:
    runs = plan_runs(cfg)
    for n in {r.spec.n_directions for r in runs}:
        _hrtf(cfg.hrtf, n)
    check_writable(cfg.out)
    return _map(partial(_synth_one, cfg), runs, cfg.jobs)


# ---------------------------------------------------------------------------
# features


def _features_one(cfg: RunConfig, run: Run):
    geom = resolve_geometry(run.spec.geometry)
    X = stft(read_wav(_dir(cfg, "scenes", run) / "mixture.wav"))
    grid = DirectionGrid(run.spec.n_directions)
    gamma = score_tensor(X, geom, grid, dtype=np.float32)
    fb = build_erb_filterbank(cfg.n_bands, X.params)
    d = _dir(cfg, "features", run)
    feats = {"ICPD": icpd_feature(X, geom.reference_index),
             "SCORE": score_feature(gamma),
             "ERB-SCORE": score_feature(erb_score(gamma, fb))}
    for layout, fv in feats.items():
        with atomic_path(d / FEATURE_FILES[layout]) as tmp:
            fv.save(tmp)
    return run.run_id


def cmd_features(cfg: RunConfig) -> list[str]:
    runs = plan_runs(cfg)
    _require(_dir(cfg, "scenes", r) / "mixture.wav" for r in runs)
    check_writable(cfg.out)
    return _map(partial(_features_one, cfg), runs, cfg.jobs)


# ---------------------------------------------------------------------------
# mac-report


def mac_tables(features: dict, geometries: list[str]) -> dict:
    """``features[scene][geometry][layout] -> FeatureVector``.

    Each cell pools the MAC terms over every scene, i.e. the MAC of the
    scene-concatenated vectors. Cells whose vectors cannot be compared are
    reported as ``"n/a"``.
    """
    if not features:
        raise DataError("no feature dumps to compare")
    out = {}
    for layout in LAYOUTS:
        table = []
        for ga in geometries:
            row = []
            for gb in geometries:
                cross = aa = bb = 0.0
                try:
                    for per_geom in features.values():
                        c, a, b = mac_terms(per_geom[ga][layout], per_geom[gb][layout])
                        cross, aa, bb = cross + c, aa + a, bb + b
                    row.append(mac_from_terms(cross, aa, bb))
                except DimensionMismatch:
                    row.append("n/a")
            table.append(row)
        off = [table[i][j] for i in range(len(geometries)) for j in range(len(geometries))
               if i != j and table[i][j] != "n/a"]
        out[layout] = {"geometries": list(geometries), "matrix": table, "n_scenes": len(features),
                       "mean_off_diagonal": float(np.mean(off)) if off else "n/a"}
    return out


def cmd_mac_report(cfg: RunConfig) -> dict:
    runs = plan_runs(cfg)
    paths = [_dir(cfg, "features", r) / f for r in runs for f in FEATURE_FILES.values()]
    _require(paths)
    check_writable(cfg.out)
    features: dict = {}
    names = []
    for r in runs:
        if r.geometry not in names:
            names.append(r.geometry)
        d = _dir(cfg, "features", r)
        features.setdefault(r.scene_key, {})[r.geometry] = {
            layout: FeatureVector.load(d / f) for layout, f in FEATURE_FILES.items()}
    tables = mac_tables(features, names)
    mdir = _dir(cfg, "mac")
    write_json(mdir / "mac_report.json", tables)
    for layout, t in tables.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["geometry"] + t["geometries"])
        for g, row in zip(t["geometries"], t["matrix"]):
            w.writerow([g] + [v if v == "n/a" else repr(v) for v in row])
        m = t["mean_off_diagonal"]
        w.writerow(["mean_off_diagonal", m if m == "n/a" else repr(m)])
        write_text(mdir / f"mac_{layout.lower()}.csv", buf.getvalue())
    return tables


# ---------------------------------------------------------------------------
# train-toy


def _example(cfg: RunConfig, run: Run, config: ToyConfig):
    d = _dir(cfg, "scenes", run)
    geom = resolve_geometry(run.spec.geometry)
    X = stft(read_wav(d / "mixture.wav"))
    fb = build_erb_filterbank(config.n_bands, X.params)
    g = erb_score(score_tensor(X, geom, DirectionGrid(run.spec.n_directions)), fb)
    ex = make_example(X.data[geom.reference_index], g.values, stft(read_wav(d / "direct.wav")).data,
                      stft(read_wav(d / "ambient.wav")).data, fb, config)
    return ex, fb


def _toy_config(cfg: RunConfig, n_dirs: int) -> ToyConfig:
    m = cfg.train.model
    return ToyConfig(n_bins=257, n_bands=cfg.n_bands, n_dirs=n_dirs, df_bins=m.df_bins,
                     order=m.order, lookahead=m.lookahead, hidden=m.hidden, film_hidden=m.film_hidden)


def cmd_train_toy(cfg: RunConfig):
    runs = plan_runs(cfg)[:cfg.train.scenes]
    if len({r.spec.n_directions for r in runs}) != 1:
        raise ConfigError("training scenes must share one direction grid")
    for r in runs:
        _require([_dir(cfg, "scenes", r) / f for f in ("mixture.wav", "direct.wav", "ambient.wav")])
    target = Path(cfg.checkpoint) if cfg.checkpoint else _dir(cfg, "checkpoint")
    check_writable(cfg.out)
    config = _toy_config(cfg, runs[0].spec.n_directions)
    pairs = [_example(cfg, r, config) for r in runs]
    examples, fb = [p[0] for p in pairs], pairs[0][1]
    t = cfg.train
    params0 = init_params(config, seed=int(make_rng(cfg.seed, 2000).integers(2 ** 31)))
    result = train_toy(examples, params0, config, fb, steps=t.steps, lr=t.lr,
                       seed=int(make_rng(cfg.seed, 2001).integers(2 ** 31)), clip_norm=t.clip_norm,
                       eval_every=t.eval_every, patience=t.patience)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        save_checkpoint(tmp, result.params, config, result.trace)
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    return result


# ---------------------------------------------------------------------------
# render


def _render_one(cfg: RunConfig, checkpoint, run: Run):
    d_in, d_out = _dir(cfg, "scenes", run), _dir(cfg, "renders", run)
    geom = resolve_geometry(run.spec.geometry)
    mixture = read_wav(d_in / "mixture.wav")
    X = stft(mixture)
    grid = DirectionGrid(run.spec.n_directions)
    hrtf = _hrtf(cfg.hrtf, run.spec.n_directions)
    for method in cfg.methods:
        if method == "passthrough":
            ref = mixture[geom.reference_index]
            save_wav(d_out / "passthrough.wav", np.stack([ref, ref]))
        elif method == "lbh":
            Y, az = lbh_render(X, geom, hrtf, grid)
            save_wav(d_out / "lbh.wav", istft(Y))
            write_json(d_out / "lbh.json", {"azimuth_deg": None if math.isnan(az) else az})
        elif method == "mif":
            bank = mif_from_scene(SceneSynth(run.spec).ambient_rirs, hrtf, geom.reference_index,
                                  X.params.fft_size, cfg.mif_reg)
            bank.geometry = geom.name
            _save_mif(bank, d_out)
            save_wav(d_out / "mif.wav", istft(mif_apply(bank, X)))
        elif method == "toy":
            params, config = checkpoint
            if config.n_bands != cfg.n_bands or config.n_dirs != run.spec.n_directions:
                raise DataError("checkpoint was trained with a different band count or direction grid")
            fb = build_erb_filterbank(config.n_bands, X.params)
            ref = X.data[geom.reference_index]
            inputs = toy_features(ref, erb_score(score_tensor(X, geom, grid), fb).values, fb, config)
            for a in cfg.alphas:
                Y = toy_forward(inputs, ref, params, a, config, fb)
                save_wav(d_out / f"toy_alpha{alpha_tag(a)}.wav",
                         istft(Spectrogram(Y, X.params, X.length)))
    return run.run_id


def _save_mif(bank, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=directory) as tmp:
        bank.save(Path(tmp) / "mif_filters")
        for ext in (".bin", ".json"):
            os.replace(Path(tmp) / f"mif_filters{ext}", directory / f"mif_filters{ext}")


def cmd_render(cfg: RunConfig) -> list[str]:
    runs = plan_runs(cfg)
    _require(_dir(cfg, "scenes", r) / "mixture.wav" for r in runs)
    checkpoint = None
    if "toy" in cfg.methods:
        ck = Path(cfg.checkpoint) if cfg.checkpoint else _dir(cfg, "checkpoint")
        if not (ck / "manifest.json").is_file():
            raise ConfigError(f"method 'toy' needs a checkpoint; none at {ck}")
        checkpoint = load_checkpoint(ck)
    for n in {r.spec.n_directions for r in runs}:
        _hrtf(cfg.hrtf, n)
    check_writable(cfg.out)
    return _map(partial(_render_one, cfg, checkpoint), runs, cfg.jobs)


# ---------------------------------------------------------------------------
# eval


def _estimate_path(cfg, run, method, alpha) -> Path:
    if method == "target":
        return _dir(cfg, "scenes", run) / f"target_alpha{alpha_tag(alpha)}.wav"
    if method == "toy":
        return _dir(cfg, "renders", run) / f"toy_alpha{alpha_tag(alpha)}.wav"
    return _dir(cfg, "renders", run) / f"{method}.wav"


def evaluate_pair(target: np.ndarray, estimate: np.ndarray, metrics=("mw_ipde", "mw_ilde", "msi_sdr"),
                  convention: str = "squared") -> dict:
    """Metric values for one binaural estimate; both inputs are (2, n)."""
    if target.shape != estimate.shape:
        raise DataError(f"rendered audio {estimate.shape} and target {target.shape} differ in length")
    T, E = stft(target), stft(estimate)
    out = {}
    if "mw_ipde" in metrics:
        out["mw_ipde"] = mw_ipde(T.data, E.data, T.params.sample_rate, T.params.fft_size)
    if "mw_ilde" in metrics:
        out["mw_ilde"] = mw_ilde(T.data, E.data)
    if "msi_sdr" in metrics:
        out["msi_sdr"] = msi_sdr(target, estimate, convention)
    return out


def _eval_one(cfg: RunConfig, run: Run) -> list[dict]:
    rows = []
    for method in cfg.methods:
        for a in cfg.alphas:
            target = read_wav(_dir(cfg, "scenes", run) / f"target_alpha{alpha_tag(a)}.wav")
            est = read_wav(_estimate_path(cfg, run, method, a))
            vals = evaluate_pair(target, est, cfg.metrics, cfg.sdr_convention)
            row = {"scene_id": run.run_id, "method": method, "alpha": float(a)}
            for key, col in _METRIC_COLUMN.items():
                row[col] = vals.get(key)
            rows.append(row)
    return rows


def cmd_eval(cfg: RunConfig) -> list[dict]:
    runs = plan_runs(cfg)
    _require(_dir(cfg, "scenes", r) / f"target_alpha{alpha_tag(a)}.wav" for r in runs for a in cfg.alphas)
    _require(_estimate_path(cfg, r, m, a) for r in runs for m in cfg.methods for a in cfg.alphas)
    check_writable(cfg.out)
    rows = [row for chunk in _map(partial(_eval_one, cfg), runs, cfg.jobs) for row in chunk]
    d = _dir(cfg, "report")
    write_json(d / "report.json", {
        "sdr_convention": cfg.sdr_convention,
        "rows": [{k: _jsonable(v) for k, v in row.items()} for row in rows]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for row in rows:
        w.writerow(["" if row[k] is None else _csv_value(row[k]) for k in REPORT_FIELDS])
    write_text(d / "report.csv", buf.getvalue())
    return rows


def _csv_value(v):
    if isinstance(v, float):
        return format_db(v) if math.isinf(v) else repr(v)
    return v
