import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arraybin.errors import DataError
from arraybin.signal import (
    StftParams, Spectrogram, build_erb_filterbank, erb_compress, erb_expand, istft,
    make_window, read_wav, stft, write_wav,
)

P = StftParams()
FS = 16000


def direct_dft(frame):
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


def interior_error(x, y):
    return np.linalg.norm(x - y) / np.linalg.norm(x)


def test_defaults_match_frame_settings():
    assert (P.frame_len, P.hop, P.fft_size, P.sample_rate) == (512, 128, 512, 16000)
    assert P.n_bins == 257


def test_zero_signal_gives_zero_spectrogram():
    X = stft(np.zeros(FS))
    assert not np.any(X.data)
    assert not np.any(istft(X))


def test_frame_count_and_bins():
    n = 12345
    X = stft(np.random.default_rng(0).standard_normal(n))
    padded = n + 2 * P.pad
    assert X.n_frames == 1 + -(-(padded - P.frame_len) // P.hop)
    assert X.n_bins == 257


def test_sine_peak_bin_against_direct_dft():
    t = np.arange(FS) / FS
    x = np.sin(2 * np.pi * 1000 * t)
    X = stft(x)
    l = X.n_frames // 2
    assert np.argmax(np.abs(X.data[0, l])) == 32
    start = l * P.hop - P.pad
    oracle = direct_dft(x[start:start + P.frame_len] * make_window("sqrt_hann", 512))
    np.testing.assert_allclose(X.data[0, l], oracle, atol=1e-9)


def test_impulse_and_constant_frames_against_window_dft():
    win = make_window("sqrt_hann", 512)
    x = np.zeros(4096)
    x[1000] = 1.0
    X = stft(x)
    # frame l starts at sample l * hop - pad
    l = (1000 + P.pad) // P.hop
    offset = 1000 - (l * P.hop - P.pad)
    np.testing.assert_allclose(np.abs(X.data[0, l]), win[offset], atol=1e-12)
    c = stft(np.ones(4096))
    np.testing.assert_allclose(np.abs(c.data[0, 10]), np.abs(direct_dft(win)), atol=1e-9)


@pytest.mark.parametrize("kind", ["noise", "sine"])
def test_roundtrip(kind):
    rng = np.random.default_rng(1)
    t = np.arange(FS) / FS
    x = rng.standard_normal(FS) if kind == "noise" else np.sin(2 * np.pi * 437 * t + 0.3)
    y = istft(stft(x))[0]
    assert y.shape == x.shape
    assert interior_error(x, y) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=512, max_value=3000), st.integers(0, 2 ** 31 - 1))
def test_roundtrip_property(n, seed):
    x = np.random.default_rng(seed).standard_normal((2, n))
    np.testing.assert_allclose(istft(stft(x)), x, atol=1e-10)


def test_parseval_per_frame():
    x = np.random.default_rng(2).standard_normal(4000)
    X = stft(x).data[0]
    win = make_window("sqrt_hann", 512)
    w = np.full(257, 2.0)
    w[[0, -1]] = 1.0
    xp = np.concatenate([np.zeros(P.pad), x, np.zeros(P.pad + P.hop)])
    for l in range(X.shape[0]):
        frame = xp[l * P.hop:l * P.hop + 512] * win
        e_time = np.sum(frame ** 2)
        e_freq = np.sum(w * np.abs(X[l]) ** 2) / 512
        assert abs(e_freq - e_time) <= 1e-9 * max(e_time, 1e-300)


def test_stft_errors():
    with pytest.raises(DataError):
        stft(np.zeros(100))
    bad = np.zeros(1000)
    bad[3] = np.nan
    with pytest.raises(DataError):
        stft(bad)
    X = stft(np.zeros(1000))
    with pytest.raises(DataError):
        istft(X, StftParams(frame_len=256, hop=64, fft_size=256))


def test_invalid_params():
    with pytest.raises(ValueError):
        StftParams(frame_len=1024, fft_size=512)
    with pytest.raises(ValueError):
        StftParams(hop=100)
    with pytest.raises(ValueError):
        StftParams(window="rect", hop=384)


# -- ERB filterbank ---------------------------------------------------------

@pytest.mark.parametrize("B", [48, 32])
def test_band_counts_non_empty(B):
    fb = build_erb_filterbank(B)
    assert fb.n_bands == B
    assert np.all(np.diff(fb.edges) >= 1)
    np.testing.assert_array_equal(fb.weights.sum(axis=0), 1.0)
    np.testing.assert_array_equal(fb.norms, fb.weights.sum(axis=1))
    assert np.all(fb.norms > 0)


def test_bands_follow_erb_rate_spacing():
    fb = build_erb_filterbank(16)
    widths = np.diff(fb.edges)
    # rectangular ERB bands widen with frequency
    assert widths[-1] > widths[len(widths) // 2] > 0
    assert fb.edges[0] == 0 and fb.edges[-1] == 257


def test_full_resolution_is_identity():
    fb = build_erb_filterbank(257)
    v = np.random.default_rng(3).standard_normal((5, 257))
    np.testing.assert_array_equal(erb_compress(v, fb), v)


def test_too_many_bands():
    with pytest.raises(DataError):
        build_erb_filterbank(258)
    with pytest.raises(DataError):
        build_erb_filterbank(0)


def test_compress_constant_and_indicator():
    fb = build_erb_filterbank(32)
    np.testing.assert_allclose(erb_compress(np.full(257, 2.5), fb), 2.5)
    b0 = 7
    v = np.zeros(257)
    v[fb.edges[b0]:fb.edges[b0 + 1]] = 1.0
    expect = np.zeros(32)
    expect[b0] = 1.0
    np.testing.assert_array_equal(erb_compress(v, fb), expect)


def test_compress_matches_direct_summation():
    fb = build_erb_filterbank(48)
    v = np.random.default_rng(4).standard_normal(257)
    W = fb.weights
    oracle = np.array([sum(W[b, f] * v[f] for f in range(257)) / sum(W[b]) for b in range(48)])
    np.testing.assert_allclose(erb_compress(v, fb), oracle, rtol=1e-12)


def test_expand_cases():
    fb = build_erb_filterbank(32)
    np.testing.assert_array_equal(erb_expand(np.ones(32), fb), np.ones(257))
    g = np.ones(32)
    g[5] = 0.5
    out = erb_expand(g, fb)
    halved = np.flatnonzero(out == 0.5)
    np.testing.assert_array_equal(halved, np.arange(fb.edges[5], fb.edges[6]))


def test_compress_expand_roundtrip_on_basis():
    fb = build_erb_filterbank(32)
    for b in range(32):
        e = np.zeros(32)
        e[b] = 1.0
        np.testing.assert_array_equal(erb_compress(erb_expand(e, fb), fb), e)


def test_expand_compress_is_projection():
    fb = build_erb_filterbank(24)
    v = np.random.default_rng(5).standard_normal(257)
    once = erb_expand(erb_compress(v, fb), fb)
    np.testing.assert_allclose(erb_expand(erb_compress(once, fb), fb), once, atol=1e-14)


def test_compress_linear_and_axis():
    fb = build_erb_filterbank(32)
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((2, 4, 257, 3))
    np.testing.assert_allclose(erb_compress(2 * a - b, fb, axis=1),
                               2 * erb_compress(a, fb, axis=1) - erb_compress(b, fb, axis=1),
                               atol=1e-12)
    assert erb_compress(a, fb, axis=1).shape == (4, 32, 3)
    with pytest.raises(DataError):
        erb_compress(a, fb)
    with pytest.raises(DataError):
        erb_expand(np.ones(31), fb)


def test_spectrogram_validation():
    with pytest.raises(DataError):
        Spectrogram(np.zeros((1, 3, 100)))
    with pytest.raises(DataError):
        Spectrogram(np.full((1, 3, 257), np.inf))


def test_wav_roundtrip(tmp_path):
    x = np.random.default_rng(7).uniform(-0.5, 0.5, (3, 800))
    write_wav(tmp_path / "f.wav", x)
    np.testing.assert_allclose(read_wav(tmp_path / "f.wav"), x, atol=1e-7)
    write_wav(tmp_path / "i.wav", x[0], pcm16=True)
    y = read_wav(tmp_path / "i.wav")
    assert y.shape == (1, 800)
    np.testing.assert_allclose(y[0], x[0], atol=1 / 32768)
    write_wav(tmp_path / "r.wav", x, sample_rate=8000)
    with pytest.raises(DataError):
        read_wav(tmp_path / "r.wav")
