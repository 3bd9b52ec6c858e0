import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synthasr import dsp
from synthasr.dsp import FeatureMatrix, StftConfig, Waveform

CFG = StftConfig()
FB = dsp.make_mel_filterbank()

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def _noise(rng, n=16000, scale=0.3):
    return Waveform(scale * rng.standard_normal(n))


# preemphasis ----------------------------------------------------------------

def test_preemphasis_zero_and_impulse():
    assert np.all(dsp.preemphasize(Waveform(np.zeros(10))).samples == 0)
    y = dsp.preemphasize(Waveform([1.0, 0.0, 0.0]), 0.97).samples
    np.testing.assert_array_equal(y, [1.0, -0.97, 0.0])


def test_preemphasis_matches_scalar_loop(rng):
    x = rng.standard_normal(16)
    y = dsp.preemphasize(Waveform(x), 0.97).samples
    ref = [x[0]] + [x[t] - 0.97 * x[t - 1] for t in range(1, 16)]
    np.testing.assert_allclose(y, ref, rtol=0, atol=1e-15)


def test_preemphasis_empty_and_bad_alpha():
    assert len(dsp.preemphasize(Waveform(np.zeros(0)))) == 0
    with pytest.raises(dsp.DspError):
        dsp.preemphasize(Waveform(np.zeros(4)), 1.0)


@given(arrays(np.float64, 32, elements=finite), arrays(np.float64, 32, elements=finite), finite, finite)
def test_preemphasis_is_linear(x, y, a, b):
    lhs = dsp.preemphasize(Waveform(a * x + b * y)).samples
    rhs = a * dsp.preemphasize(Waveform(x)).samples + b * dsp.preemphasize(Waveform(y)).samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# STFT ---------------------------------------------------------------------

def test_frame_geometry():
    assert CFG.win_samples == 800 and CFG.hop_samples == 200
    n = 16000
    assert dsp.stft(Waveform(np.zeros(n))).shape == ((n - 800) // 200 + 1, 513)


def test_short_signal_gives_one_padded_frame():
    assert dsp.stft(Waveform(np.ones(100))).shape == (1, 513)


def test_stft_zero_signal():
    assert np.all(np.abs(dsp.stft(Waveform(np.zeros(4000)))) == 0)


def test_bin_centre_sinusoid_peaks_at_its_bin():
    k = 37
    t = np.arange(4000) / 16000
    spec = np.abs(dsp.stft(Waveform(np.sin(2 * np.pi * k * 16000 / 1024 * t))))
    assert np.all(np.argmax(spec, axis=1) == k)
    # one frame against a naive DFT
    frame = np.sin(2 * np.pi * k * 16000 / 1024 * t[:800]) * CFG.window()
    padded = np.concatenate([frame, np.zeros(224)])
    n = np.arange(1024)
    naive = np.array([np.sum(padded * np.exp(-2j * np.pi * b * n / 1024)) for b in range(513)])
    np.testing.assert_allclose(dsp.stft(Waveform(np.sin(2 * np.pi * k * 16000 / 1024 * t[:800])))[0], naive,
                               atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(3 * 800, 6000), st.integers(0, 2**31 - 1))
def test_stft_istft_round_trip(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    y = dsp.istft(dsp.stft(Waveform(x))).samples
    m = len(y)
    assert np.max(np.abs(y[800:m - 800] - x[800:m - 800])) < 1e-6


def test_round_trip_whole_covered_span(rng):
    # the endpoint-free window keeps every covered sample recoverable
    x = rng.uniform(-1, 1, 5000)
    y = dsp.istft(dsp.stft(Waveform(x))).samples
    assert np.max(np.abs(y - x[:len(y)])) < 1e-6


def test_parseval_per_frame(rng):
    x = rng.standard_normal(3000)
    spec = dsp.stft(Waveform(x))
    frames = dsp.frame_signal(x, 800, 200) * CFG.window()
    for t in range(spec.shape[0]):
        full = np.abs(spec[t, 0]) ** 2 + np.abs(spec[t, -1]) ** 2 + 2 * np.sum(np.abs(spec[t, 1:-1]) ** 2)
        np.testing.assert_allclose(np.sum(frames[t] ** 2), full / 1024, rtol=1e-6)


def test_istft_zero_and_single_frame():
    assert np.all(dsp.istft(np.zeros((5, 513), complex)).samples == 0)
    t = np.arange(800)
    frame = np.sin(2 * np.pi * 440 * t / 16000)
    spec = np.fft.rfft(frame * CFG.window(), 1024)[None]
    # naive inverse DFT of the single frame, then the synthesis window over its square
    n = np.arange(1024)
    full = np.concatenate([spec[0], np.conj(spec[0, 1:-1][::-1])])
    naive = np.real(np.array([np.sum(full * np.exp(2j * np.pi * np.arange(1024) * m / 1024)) for m in n])) / 1024
    expect = naive[:800] * CFG.window() / CFG.window() ** 2
    np.testing.assert_allclose(dsp.istft(spec).samples, expect, atol=1e-9)
    np.testing.assert_allclose(expect, frame, atol=1e-9)


def test_istft_rejects_bad_shape():
    with pytest.raises(dsp.DspError):
        dsp.istft(np.zeros((3, 100)))


def test_stft_istft_stft_idempotent(rng):
    spec = rng.standard_normal((12, 513)) + 1j * rng.standard_normal((12, 513))
    once = dsp.stft(dsp.istft(spec))
    twice = dsp.stft(dsp.istft(once))
    np.testing.assert_allclose(once, twice, atol=1e-9)


# mel ------------------------------------------------------------------------

def test_filterbank_shape_and_order():
    assert FB.weights.shape == (80, 513)
    assert np.all(FB.weights >= 0)
    assert np.all(FB.weights.max(axis=1) > 0)
    peaks = np.argmax(FB.weights, axis=1)
    assert np.all(np.diff(FB.centers) > 0)
    assert np.all(np.diff(peaks) >= 0)
    assert FB.centers[0] > 60.0


def test_filterbank_too_many_bands():
    with pytest.raises(dsp.DspError):
        dsp.make_mel_filterbank(fft_size=64, n_mels=80)
    with pytest.raises(dsp.DspError):
        dsp.make_mel_filterbank(f_min=9000, f_max=8000)


@pytest.mark.parametrize("scale", ["htk", "slaney"])
@given(st.floats(0.0, 8000.0))
def test_mel_hz_round_trip(scale, f):
    back = dsp.mel_to_hz(dsp.hz_to_mel(f, scale), scale)
    assert abs(back - f) <= 1e-9 * max(f, 1e-3)


def test_log_mel_zero_signal_and_shape():
    lm = dsp.log_mel(Waveform(np.zeros(4000)), CFG, FB)
    assert lm.data.shape[1] == 80 and lm.kind == "log_mel"
    assert np.all(lm.data == np.log(dsp.LOG_FLOOR))


def test_log_mel_amplitude_scaling(rng):
    w = _noise(rng, 6000)
    a = dsp.log_mel(w, CFG, FB).data
    b = dsp.log_mel(Waveform(2 * w.samples), CFG, FB).data
    np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-9)


def test_mfcc_shape_and_naive_dct(rng):
    m = dsp.mfcc(_noise(rng, 6000), CFG, FB)
    assert m.data.shape[1] == 40 and m.kind == "mfcc"
    frame = rng.standard_normal(80)
    n = np.arange(80)
    naive = np.array([np.sum(frame * np.cos(np.pi * k * (2 * n + 1) / 160)) for k in range(40)])
    naive *= np.sqrt(2 / 80)
    naive[0] /= np.sqrt(2)
    np.testing.assert_allclose(dsp.dct2(frame, 40), naive, atol=1e-10)


def test_mfcc_of_constant_frame():
    c = dsp.mfcc_from_log_mel(FeatureMatrix(np.full((3, 80), -2.5), "log_mel")).data
    assert np.all(np.abs(c[:, 1:]) < 1e-12) and np.all(np.abs(c[:, 0]) > 1)


def test_mfcc_white_noise_c0_dominates(rng):
    # preemphasis would tilt the spectrum, so analyse the noise as it is
    flat = StftConfig(preemphasis_alpha=0.0)
    c = dsp.mfcc(_noise(rng, 16000, scale=1.0), flat, FB).data
    assert np.all(np.abs(c[:, 0]) > np.abs(c[:, 1:]).max(axis=1))


# normalisation --------------------------------------------------------------

def test_norm_stats_small_cases():
    s = dsp.estimate_norm_stats([np.array([[0.0], [2.0]])])
    assert s.mean[0] == 1.0 and s.std[0] == 1.0
    s = dsp.estimate_norm_stats([np.ones((5, 3))])
    np.testing.assert_array_equal(s.std, dsp.STD_FLOOR)
    with pytest.raises(dsp.DspError):
        dsp.estimate_norm_stats([np.ones((1, 3))])


def test_norm_stats_two_pass_oracle(rng):
    corpus = [rng.normal(3.0, 2.0, (rng.integers(5, 50), 7)) for _ in range(6)]
    s = dsp.estimate_norm_stats(corpus)
    pooled = np.concatenate(corpus)
    mean = pooled.sum(axis=0) / len(pooled)
    std = np.sqrt(((pooled - mean) ** 2).sum(axis=0) / len(pooled))
    np.testing.assert_allclose(s.mean, mean, rtol=1e-10)
    np.testing.assert_allclose(s.std, std, rtol=1e-10)


def test_norm_stats_merge_is_exact(rng):
    a, b = rng.standard_normal((10, 4)), rng.standard_normal((13, 4))
    merged = dsp.estimate_norm_stats([a]).merge(dsp.estimate_norm_stats([b]))
    whole = dsp.estimate_norm_stats([a, b])
    np.testing.assert_array_equal(merged.sum, whole.sum)
    assert merged.n_frames == 23


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_apply_norm_whitens_estimation_corpus(seed):
    r = np.random.default_rng(seed)
    corpus = [FeatureMatrix(r.normal(-5, 3, (r.integers(2, 40), 6)), "mfcc") for _ in range(4)]
    s = dsp.estimate_norm_stats(corpus)
    pooled = np.concatenate([dsp.apply_norm(f, s).data for f in corpus])
    assert np.all(np.abs(pooled.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(pooled.var(axis=0) - 1) < 1e-6)


def test_apply_norm_identity_and_mean_frame(rng):
    f = FeatureMatrix(rng.standard_normal((4, 3)), "mfcc")
    ident = dsp.NormStats(np.zeros(3), np.full(3, 2.0), 2)
    np.testing.assert_array_equal(dsp.apply_norm(f, ident).data, f.data)
    s = dsp.estimate_norm_stats([f])
    assert np.allclose(dsp.apply_norm(FeatureMatrix(s.mean[None], "mfcc"), s).data, 0)
    with pytest.raises(dsp.DspError):
        dsp.apply_norm(FeatureMatrix(np.zeros((2, 5)), "mfcc"), s)


# files ----------------------------------------------------------------------

def test_feature_file_round_trip(tmp_path, rng):
    f = FeatureMatrix(rng.standard_normal((7, 40)).astype(np.float32), "mfcc", 80.0)
    dsp.write_features(tmp_path / "a.fea", f)
    raw = (tmp_path / "a.fea").read_bytes()
    assert raw[:4] == b"FEA1" and len(raw) == 17 + 7 * 40 * 4
    g = dsp.read_features(tmp_path / "a.fea")
    np.testing.assert_array_equal(g.data, f.data)
    assert g.kind == "mfcc" and g.frame_rate == 80.0


def test_wav_round_trip_and_duration(tmp_path, rng):
    x = rng.uniform(-0.5, 0.5, 12345)
    dsp.write_wav(tmp_path / "a.wav", Waveform(x))
    y = dsp.read_wav(tmp_path / "a.wav")
    assert y.sample_rate == 16000
    assert np.max(np.abs(y.samples - x)) <= 1 / 32768
    assert dsp.wav_duration(tmp_path / "a.wav") == 12345 / 16000
    (tmp_path / "bad.wav").write_bytes(b"nope")
    with pytest.raises(dsp.DspError):
        dsp.wav_duration(tmp_path / "bad.wav")


def test_waveform_rejects_non_finite():
    with pytest.raises(dsp.DspError):
        Waveform([0.0, np.nan])
