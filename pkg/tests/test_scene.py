import json

import numpy as np
import pytest

from arraybin.errors import ConfigError, DataError
from arraybin.geometry import DirectionGrid, builtin_geometry, look_vector
from arraybin.scene import (HrtfSet, RoomSpec, SceneSpec, SceneSynth, Segment, energy_decay_curve,
                            estimate_t60, load_hrtf_set, plane_wave_capture, random_scene,
                            save_hrtf_set, simulate_rir, simulate_rirs, spherical_head_hrtf,
                            split_direct_early, synth_mixture, synth_target_binaural)
from arraybin.scene.rir import image_sources
from arraybin.scene.sources import synthetic_music, synthetic_speech
from arraybin.rng import make_rng

ANECHOIC = RoomSpec(max_order=0)
FS = 16000


def power_db(x):
    return 10 * np.log10(np.mean(np.asarray(x) ** 2))


# -- RIR ------------------------------------------------------------------

def test_anechoic_integer_delay_is_single_tap():
    src = np.array([1.0, 2.0, 1.5])
    d = 100 * 343.0 / FS  # exactly 100 samples
    h = simulate_rir(ANECHOIC, src, src + [d, 0, 0])
    assert np.count_nonzero(np.abs(h) > 1e-12) == 1
    assert np.argmax(h) == 100
    assert h[100] == pytest.approx(1 / (4 * np.pi * d), rel=1e-12)


def test_anechoic_fractional_delay_peak_and_band_limit():
    src = np.array([1.0, 2.0, 1.5])
    mic = src + [1.234, 0.0, 0.0]
    h = simulate_rir(ANECHOIC, src, mic)
    delay = 1.234 / 343 * FS
    assert np.argmax(np.abs(h)) == round(delay)
    # band-limited oracle: the interpolator reproduces the analytic phase ramp at low f
    H = np.fft.rfft(h, 4096)
    f = np.fft.rfftfreq(4096, 1 / FS)
    sel = f < 4000
    expect = np.exp(-2j * np.pi * f[sel] * delay / FS) / (4 * np.pi * 1.234)
    np.testing.assert_allclose(H[sel], expect, rtol=1e-2, atol=1e-5)


def test_inverse_distance_law():
    src = np.array([1.0, 1.0, 1.5])
    d1 = 64 * 343.0 / FS
    h1 = simulate_rir(ANECHOIC, src, src + [d1, 0, 0])
    h2 = simulate_rir(ANECHOIC, src, src + [2 * d1, 0, 0])
    assert h2.max() == pytest.approx(h1.max() / 2, rel=1e-12)


def test_rir_errors():
    with pytest.raises(DataError):
        simulate_rir(RoomSpec(), [1, 1, 1], [1, 1, 1])
    with pytest.raises(DataError):
        simulate_rir(RoomSpec(), [7, 1, 1], [1, 1, 1])
    with pytest.raises(DataError):
        RoomSpec(t60=0)
    with pytest.raises(DataError):
        RoomSpec(dimensions=(1, 2))


def test_image_source_first_order_positions():
    room = RoomSpec(dimensions=(4.0, 5.0, 3.0), max_order=1)
    src = np.array([1.0, 2.0, 1.2])
    pos, gains, orders = image_sources(room, src, 100.0, beta=0.5)
    expect = {tuple(src), (-1.0, 2.0, 1.2), (7.0, 2.0, 1.2), (1.0, -2.0, 1.2), (1.0, 8.0, 1.2),
              (1.0, 2.0, -1.2), (1.0, 2.0, 4.8)}
    assert {tuple(np.round(p, 9)) for p in pos} == expect
    np.testing.assert_array_equal(np.sort(gains), [0.5] * 6 + [1.0])


@pytest.mark.parametrize("t60", [0.4, 0.6])
def test_t60_within_twenty_percent(t60):
    h = simulate_rir(RoomSpec(t60=t60), [1.3, 1.7, 1.4], [4.1, 3.2, 1.6], int(1.2 * t60 * FS))
    edc = energy_decay_curve(h)
    # oracle: the sample where the extrapolated Schroeder line crosses -60 dB
    assert estimate_t60(h) == pytest.approx(t60, rel=0.2)
    assert edc[0] == 0 and np.all(np.diff(edc[np.isfinite(edc)]) <= 1e-9)


def test_schroeder_oracle_on_exponential():
    t60 = 0.3
    n = np.arange(int(0.5 * FS))
    h = np.random.default_rng(0).standard_normal(len(n)) * 10 ** (-3 * n / (t60 * FS))
    assert estimate_t60(h) == pytest.approx(t60, rel=0.05)


def test_split_direct_early():
    h = simulate_rir(ANECHOIC, [1.0, 1.0, 1.5], [2.0, 1.0, 1.5])
    np.testing.assert_array_equal(split_direct_early(h), h)
    rev = simulate_rir(RoomSpec(t60=0.6), [1.3, 1.7, 1.4], [4.1, 3.2, 1.6])
    early = split_direct_early(rev, 50.0)
    assert np.sum(early ** 2) < np.sum(rev ** 2)
    d0 = np.argmax(np.abs(rev))
    cut = d0 + 800
    np.testing.assert_array_equal(early[:cut], rev[:cut])
    assert np.all(early[d0 + 800 + 1600:] == 0)
    # continuity: on a dense response the gain never jumps by 6 dB between samples
    dense = np.full(6000, 0.1)
    dense[10] = 1.0
    taper = split_direct_early(dense, 50.0) / dense
    steps = np.abs(np.diff(20 * np.log10(taper[:10 + 800 + 1600])))
    assert steps.max() < 6
    with pytest.raises(DataError):
        split_direct_early(h, 0.0)


# -- HRTF -----------------------------------------------------------------

def test_spherical_head_itd_ild():
    hr = spherical_head_hrtf()
    assert hr.n_directions == 72 and hr.n_taps == 256
    left_j, right_j = hr.index(90), hr.index(270)
    l, r = hr.pair(left_j)
    assert np.sum(l ** 2) > np.sum(r ** 2)
    assert np.argmax(np.abs(l)) < np.argmax(np.abs(r))
    l0, r0 = hr.pair(0)
    np.testing.assert_allclose(l0, r0, atol=1e-12)
    # mirror symmetry: left ear at az equals right ear at -az
    np.testing.assert_allclose(hr.left[hr.index(30)], hr.right[hr.index(330)], atol=1e-12)


def test_hrtf_manifest_roundtrip(tmp_path):
    hr = spherical_head_hrtf()
    manifest = save_hrtf_set(hr, tmp_path)
    back = load_hrtf_set(manifest)
    assert back.n_directions == 72
    np.testing.assert_allclose(back.left, hr.left, atol=1e-7)


def test_hrtf_manifest_errors(tmp_path):
    hr = spherical_head_hrtf(DirectionGrid(8))
    manifest = save_hrtf_set(hr, tmp_path)
    with pytest.raises(DataError):
        load_hrtf_set(manifest, DirectionGrid(72))
    text = manifest.read_text()
    obj = json.loads(text)
    first = next(iter(obj["hrirs"]))
    dup = text.replace("{", "{" + f'"{first}": {json.dumps(obj["hrirs"][first])}, ', 2)
    dup = dup.replace(f'"hrirs": {{"{first}"', f'"hrirs": {{"{first}"', 1)
    (tmp_path / "dup.json").write_text(dup)
    with pytest.raises(DataError):
        load_hrtf_set(tmp_path / "dup.json", None)
    obj["sample_rate"] = 44100
    (tmp_path / "sr.json").write_text(json.dumps(obj))
    with pytest.raises(DataError):
        load_hrtf_set(tmp_path / "sr.json", None)
    with pytest.raises(DataError):
        HrtfSet([0, 360], np.zeros((2, 4)), np.zeros((2, 4)))


# -- scenes ---------------------------------------------------------------

def small_spec(**kw):
    base = dict(scene_id="t", geometry="G1", trajectory=[Segment(30.0, 1.2)], t60=0.3,
                sar_db=0.0, snr_db=25.0, duration_s=0.5, seed=5, n_directions=12)
    base.update(kw)
    return SceneSpec(**base)


@pytest.fixture(scope="module")
def scene():
    return SceneSynth(small_spec())


def test_sar_snr_bookkeeping(scene):
    sp, amb = scene.load_sources()
    mix = synth_mixture(scene, sp, amb)
    ref = scene.reference
    assert mix.sar_db == pytest.approx(0.0, abs=0.1)
    assert mix.snr_db == pytest.approx(25.0, abs=0.1)
    # independent power-meter oracle on the returned components
    sar = power_db(mix.speech_image[ref]) - power_db(mix.ambient_image[ref])
    snr = power_db(mix.speech_image[ref]) - power_db(mix.noise[ref])
    assert sar == pytest.approx(0.0, abs=0.1) and snr == pytest.approx(25.0, abs=0.1)
    np.testing.assert_allclose(mix.signal, mix.speech_image + mix.ambient_image + mix.noise)


def test_clean_mixture_is_convolved_speech():
    sc = SceneSynth(small_spec(sar_db=None, snr_db=None, trajectory=[Segment(30.0, 1.2)]))
    sp, amb = sc.load_sources()
    mix = sc.mixture(sp, amb)
    oracle = np.stack([np.convolve(sp, h)[:sc.n] for h in sc.target_rirs[0]])
    np.testing.assert_allclose(mix.signal, oracle, atol=1e-12)


def test_mixture_linearity_in_speech(scene):
    sc = SceneSynth(small_spec(sar_db=None, snr_db=None))
    a = synthetic_speech(0.5, make_rng(1))
    b = synthetic_speech(0.5, make_rng(2))
    mab = sc.mixture(a + b, None).signal
    np.testing.assert_allclose(mab, sc.mixture(a, None).signal + sc.mixture(b, None).signal, atol=1e-12)


def test_silent_speech_error(scene):
    with pytest.raises(DataError):
        scene.mixture(np.zeros(scene.n), np.ones(scene.n))


def test_target_affine_in_alpha(scene):
    sp, amb = scene.load_sources()
    hr = spherical_head_hrtf(DirectionGrid(12))
    t0, t5, t1 = (synth_target_binaural(scene, sp, amb, hr, a) for a in (0.0, 0.5, 1.0))
    assert t0.shape == (2, scene.n)
    np.testing.assert_allclose(t5, 0.5 * (t0 + t1), atol=1e-12)
    direct, ambient = scene.target_parts(sp, amb, hr, 1.0)
    assert np.any(ambient)
    np.testing.assert_array_equal(synth_target_binaural(scene, sp, amb, hr, 0.0, 1.0), direct)
    with pytest.raises(DataError):
        synth_target_binaural(scene, sp, amb, hr, 1.5)
    with pytest.raises(DataError):
        synth_target_binaural(scene, sp, amb, spherical_head_hrtf(DirectionGrid(8)), 0.5)


def test_moving_source_segments():
    spec = small_spec(trajectory=[Segment(0.0, 1.2), Segment(90.0, 1.2)], sar_db=None, snr_db=None)
    sc = SceneSynth(spec)
    assert sc.segment_bounds() == [(0, 4000), (4000, 8000)]
    sp = np.zeros(sc.n)
    sp[100] = 1.0
    mix = sc.mixture(sp, None).signal
    np.testing.assert_allclose(mix[:, :sc.target_rirs.shape[-1] + 100][:, 100:],
                               sc.target_rirs[0][:, :mix.shape[1] - 100][:, :sc.target_rirs.shape[-1]],
                               atol=1e-12)


def test_independent_ambient_mode():
    sc = SceneSynth(small_spec(ambient_mode="independent"))
    a = np.arange(120.0)
    sig = sc.ambient_signals(a)
    assert sig.shape == (12, 120)
    np.testing.assert_array_equal(sig[1], np.roll(a, 10))


def test_scene_spec_json():
    spec = random_scene(4, 2, "G3", duration_s=1.0)
    again = SceneSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert again == spec
    assert all(1.0 <= s.radius_m <= 1.5 for s in spec.trajectory)
    assert spec.t60 in (0.34, 0.46) and spec.sar_db == 10 and spec.snr_db == 25
    with pytest.raises(ConfigError):
        SceneSpec.from_json({**spec.to_json(), "colour": "red"})
    with pytest.raises(ConfigError):
        SceneSpec(alpha=1.2)


def test_random_scene_same_across_geometries():
    a, b = random_scene(9, 3, "G1"), random_scene(9, 3, "G4")
    assert a.trajectory == b.trajectory and a.seed == b.seed and a.t60 == b.t60


def test_scene_determinism():
    s1, s2 = SceneSynth(small_spec()), SceneSynth(small_spec())
    m1 = s1.mixture(*s1.load_sources()).signal
    m2 = s2.mixture(*s2.load_sources()).signal
    assert m1.tobytes() == m2.tobytes()


def test_plane_wave_capture_delays():
    g = builtin_geometry("G2")
    x = np.random.default_rng(0).standard_normal(2048)
    y = plane_wave_capture(x, g, 0.0)
    # mic at +x leads the reference by 0.12 m / c
    lag = 0.12 / 343 * FS
    Y0, Y4 = np.fft.rfft(y[0]), np.fft.rfft(y[4])
    f = np.fft.rfftfreq(2048, 1 / FS)
    sel = (f > 200) & (f < 3000)
    ph = np.unwrap(np.angle(Y4[sel] * np.conj(Y0[sel])))
    slope = np.polyfit(2 * np.pi * f[sel], ph, 1)[0] * FS
    assert slope == pytest.approx(lag, rel=0.02)


def test_source_generators_deterministic():
    a = synthetic_speech(0.5, make_rng(3))
    b = synthetic_speech(0.5, make_rng(3))
    assert a.tobytes() == b.tobytes() and len(a) == 8000 and np.any(a)
    m = synthetic_music(0.5, make_rng(3))
    assert len(m) == 8000 and np.all(np.isfinite(m))
