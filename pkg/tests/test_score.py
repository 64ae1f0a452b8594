import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arraybin.errors import DataError, DimensionMismatch, NumericalError
from arraybin.geometry import DirectionGrid, builtin_geometry, steering_matrix, steering_vector, look_vector
from arraybin.scene import plane_wave_capture
from arraybin.score import (FeatureVector, ScoreTensor, erb_score, icpd_feature, mac, score,
                            score_feature, score_tensor, short_term_rtf, whiten_rtf)
from arraybin.signal import Spectrogram, build_erb_filterbank, stft

rng = np.random.default_rng(11)


def spec_of(data):
    return Spectrogram(np.asarray(data, dtype=complex))


def rand_spec(m=3, l=6, f=257):
    return rng.standard_normal((m, l, f)) + 1j * rng.standard_normal((m, l, f))


def test_rtf_identity_and_ratio():
    x1 = rand_spec(1)[0]
    c = 0.3 - 1.7j
    X = spec_of([x1, x1, c * x1])
    r = short_term_rtf(X)
    np.testing.assert_allclose(r[..., 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(r[..., 1], c, atol=1e-12)


def test_rtf_against_loop_oracle():
    data = rand_spec(3, 9, 257)
    X = spec_of(data)
    R = 4
    r = short_term_rtf(X, R)
    L = data.shape[1]
    for l in (0, 1, 4, 8):
        for f in (0, 100, 256):
            lo, hi = max(0, l - R // 2), min(L, l + R // 2 + 1)
            num = sum(data[1:, n, f] * np.conj(data[0, n, f]) for n in range(lo, hi))
            den = sum(abs(data[0, n, f]) ** 2 for n in range(lo, hi))
            np.testing.assert_allclose(r[l, f], num / den, rtol=1e-12)
            np.testing.assert_allclose(short_term_rtf(X, R, l=l, f=f), num / den, rtol=1e-12)


def test_rtf_reference_reordering_and_errors():
    data = rand_spec(3)
    r = short_term_rtf(spec_of(data), reference_index=2)
    r2 = short_term_rtf(spec_of(data[[2, 0, 1]]))
    np.testing.assert_allclose(r, r2)
    with pytest.raises(DataError):
        short_term_rtf(spec_of(data), R=3)
    with pytest.raises(DataError):
        short_term_rtf(spec_of(data[:1]))


def test_rtf_degenerate_reference_bin():
    data = rand_spec(2)
    data[0, :, 5] = 0
    assert np.all(short_term_rtf(spec_of(data))[:, 5] == 0)


@pytest.mark.parametrize("k", [7, 16, 32, 48, 96])
def test_anechoic_tone_rtf_matches_steering_phases(k):
    g = builtin_geometry("G1")
    f = k * 16000 / 512
    t = np.arange(16000) / 16000
    X = stft(plane_wave_capture(np.cos(2 * np.pi * f * t + 0.4), g, 40.0))
    r = short_term_rtf(X)[10:-10, k]
    a = steering_vector(g, look_vector(40.0), f)
    assert np.abs(np.angle(r * np.conj(a))).max() < 1e-3


def test_anechoic_noise_rtf_phases_close():
    # broadband: window edges add a small per-frame phase jitter
    g = builtin_geometry("G1")
    X = stft(plane_wave_capture(np.random.default_rng(0).standard_normal(16000), g, 40.0))
    freqs = X.params.bin_frequencies()
    band = (freqs >= 200) & (freqs <= 4000)
    a = steering_vector(g, look_vector(40.0), freqs[band])
    err = np.abs(np.angle(short_term_rtf(X)[10:-10][:, band] * np.conj(a)[None]))
    assert np.median(err) < 5e-3 and err.max() < 0.05


def test_whitening_examples():
    np.testing.assert_allclose(whiten_rtf([2, -3j]), [1, -1j])
    np.testing.assert_array_equal(whiten_rtf([0, 1]), [0, 1])
    v = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    np.testing.assert_allclose(np.abs(whiten_rtf(v)), 1.0)
    # relative threshold against the peak
    np.testing.assert_array_equal(whiten_rtf([1e-13, 1.0]), [0, 1])


def test_score_examples():
    g, grid = builtin_geometry("G1"), DirectionGrid()
    A = steering_matrix(g, grid, 1000.0)
    gam = score(A[:, 13], A)
    assert gam[13] == pytest.approx(1.0, abs=1e-14)
    assert np.argmax(gam) == 13
    np.testing.assert_array_equal(score(np.zeros(4, complex), A), 0.0)
    with pytest.raises(DataError):
        score(np.zeros(3, complex), A)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 8000))
def test_score_bound(seed, f):
    r0 = np.random.default_rng(seed)
    r = whiten_rtf(r0.standard_normal(4) + 1j * r0.standard_normal(4))
    A = steering_matrix(builtin_geometry("G1"), DirectionGrid(), f)
    assert np.all(np.abs(score(r, A)) <= 1 + 1e-12)


def test_score_tensor_matches_per_bin_score():
    g, grid = builtin_geometry("G3"), DirectionGrid(36)
    X = stft(np.random.default_rng(3).standard_normal((5, 4000)))
    gam = score_tensor(X, g, grid)
    assert gam.values.shape == (X.n_frames, 257, 36)
    assert np.all(np.abs(gam.values) <= 1 + 1e-12)
    r = whiten_rtf(short_term_rtf(X))
    A = steering_matrix(g, grid, X.params.bin_frequencies())
    for l, f in [(0, 0), (3, 50), (X.n_frames - 1, 256)]:
        np.testing.assert_allclose(gam.values[l, f], score(r[l, f], A[f]), atol=1e-12)


def test_direction_recovery_on_plane_wave():
    g, grid = builtin_geometry("G1"), DirectionGrid()
    for az in (0.0, 125.0, 270.0):
        X = stft(plane_wave_capture(np.random.default_rng(1).standard_normal(8000), g, az))
        gam = score_tensor(X, g, grid).values
        freqs = X.params.bin_frequencies()
        sel = (freqs >= 300) & (freqs <= 1500)
        picks = np.argmax(gam[8:-8][:, sel], axis=-1)
        assert np.all(picks == grid.nearest(az))


def test_erb_score_cases():
    fb = build_erb_filterbank(32)
    const = np.broadcast_to(rng.uniform(-1, 1, (4, 1, 5)), (4, 257, 5)).copy()
    out = erb_score(ScoreTensor(const), fb).values
    np.testing.assert_allclose(out, np.broadcast_to(const[:, :1], (4, 32, 5)), atol=1e-15)
    full = build_erb_filterbank(257)
    v = rng.uniform(-1, 1, (3, 257, 4))
    np.testing.assert_array_equal(erb_score(ScoreTensor(v), full).values, v)
    W = fb.weights
    oracle = np.einsum("bf,lfj->lbj", W, v) / W.sum(axis=1)[None, :, None]
    np.testing.assert_allclose(erb_score(ScoreTensor(v), fb).values, oracle, atol=1e-14)
    with pytest.raises(DataError):
        erb_score(ScoreTensor(v, "erb"), fb)


def test_icpd():
    x1 = rand_spec(1)[0]
    fv = icpd_feature(spec_of([x1, x1, 1j * x1]))
    assert fv.layout == "ICPD" and fv.vector.size == 2 * 257 * 6
    np.testing.assert_allclose(fv.tensor[..., 0], 0.0, atol=1e-15)
    np.testing.assert_allclose(fv.tensor[..., 1], np.pi / 2, atol=1e-12)
    x1[0, 0] = 0
    fv = icpd_feature(spec_of([x1, -x1]))
    assert fv.tensor[0, 0, 0] == 0
    assert np.all(fv.tensor[..., 0].ravel()[1:] == np.pi)


def test_layout_flattening_order():
    t = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4) + 1
    fv = FeatureVector(t, "SCORE")
    # channel innermost, then frequency, then frame
    assert fv.vector[1] == t[0, 0, 1] and fv.vector[4] == t[0, 1, 0] and fv.vector[12] == t[1, 0, 0]


def test_mac_examples():
    v = rng.standard_normal((3, 5, 4))
    a = FeatureVector(v, "SCORE")
    assert mac(a, a) == 1.0
    assert mac(a, FeatureVector(-2.5 * v, "SCORE")) == pytest.approx(1.0, abs=1e-14)
    g1 = icpd_feature(stft(np.random.default_rng(0).standard_normal((5, 2000))))
    g4 = icpd_feature(stft(np.random.default_rng(0).standard_normal((3, 2000))))
    with pytest.raises(DimensionMismatch):
        mac(g1, g4)
    with pytest.raises(DimensionMismatch):
        mac(a, FeatureVector(v, "ERB-SCORE"))
    with pytest.raises(NumericalError):
        mac(a, FeatureVector(np.zeros_like(v), "SCORE"))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100), st.booleans())
def test_mac_properties(seed, c, neg):
    r0 = np.random.default_rng(seed)
    a = FeatureVector(r0.standard_normal((2, 3, 4)), "SCORE")
    b = FeatureVector(r0.standard_normal((2, 3, 4)), "SCORE")
    m = mac(a, b)
    assert 0 <= m <= 1 + 1e-12
    assert m == pytest.approx(mac(b, a), rel=1e-12)
    scaled = FeatureVector((-c if neg else c) * a.tensor, "SCORE")
    assert mac(scaled, b) == pytest.approx(m, rel=1e-9, abs=1e-15)
    # oracle: squared cosine of the angle between the vectors
    cos = np.dot(a.vector, b.vector) / np.linalg.norm(a.vector) / np.linalg.norm(b.vector)
    assert m == pytest.approx(cos ** 2, rel=1e-9, abs=1e-15)


def test_feature_dump_roundtrip(tmp_path):
    for dtype in (np.float32, np.float64):
        fv = score_feature(ScoreTensor(rng.uniform(-1, 1, (3, 8, 6)).astype(dtype), "erb"))
        fv.save(tmp_path / "f.feat")
        back = FeatureVector.load(tmp_path / "f.feat")
        assert back.layout == "ERB-SCORE" and back.tensor.dtype == dtype
        np.testing.assert_array_equal(back.tensor, fv.tensor)
    raw = (tmp_path / "f.feat").read_bytes()
    (tmp_path / "bad.feat").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        FeatureVector.load(tmp_path / "bad.feat")
    (tmp_path / "junk.feat").write_bytes(b"not a dump")
    with pytest.raises(DataError):
        FeatureVector.load(tmp_path / "junk.feat")
