import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthasr import nn
from synthasr.dsp import FeatureMatrix, estimate_norm_stats
from synthasr.tts.model import (AttentionModule, MelToLinearNet, StyleTokenBank, Tacotron, TtsConfig, TtsEncoder,
                                posenc, stop_targets, tts_loss)
from synthasr.tts.synth import EXTRA_STEPS, STOP_THRESHOLD, StopController, mel_to_linear, synthesize
from synthasr.tts.train import (TrainConfig, TtsExample, make_tts_batch, tts_batch_loss, tts_trainer,
                                train_tts)


def tiny_cfg(**kw):
    base = dict(char_embed=8, conv_filters=8, enc_hidden=6, speaker_dim=5, n_tokens=4,
                ref_filters=(2, 2, 2, 2, 2, 2), ref_hidden=6, gst_att_dim=4, att_dim=6, posenc_dim=4,
                feedback_filters=3, feedback_width=5, dec_hidden=8, n_mels=6, seed=3)
    base.update(kw)
    return TtsConfig(**base)


def zero_params(module):
    for p in module.parameters():
        p.data[...] = 0


# encoder -------------------------------------------------------------------

def test_encoder_shape_and_speaker_columns(rng):
    cfg = tiny_cfg()
    enc = TtsEncoder(cfg, np.random.default_rng(0))
    ids = rng.integers(1, cfg.n_symbols, (2, 7))
    spk = rng.normal(size=(2, cfg.speaker_dim)).astype(np.float32)
    H = enc(ids, [7, 4], nn.as_tensor(spk))
    assert H.shape == (2, 7, cfg.enc_dim)
    # the speaker vector is broadcast unchanged to every position
    np.testing.assert_array_equal(H.data[:, :, -cfg.speaker_dim:], np.repeat(spk[:, None], 7, axis=1))


def test_encoder_zero_speaker(rng):
    cfg = tiny_cfg()
    enc = TtsEncoder(cfg, np.random.default_rng(0))
    H = enc(rng.integers(1, cfg.n_symbols, (1, 5)), [5], nn.as_tensor(np.zeros((1, cfg.speaker_dim), np.float32)))
    assert not H.data[..., -cfg.speaker_dim:].any()


def test_encoder_rejects_empty_text():
    cfg = tiny_cfg()
    enc = TtsEncoder(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        enc(np.zeros((1, 0), np.int64), [0], nn.as_tensor(np.zeros((1, cfg.speaker_dim), np.float32)))


# style tokens --------------------------------------------------------------

@pytest.mark.parametrize("n_frames", [10, 64, 90])
def test_gst_is_convex_mixture_of_tokens(rng, n_frames):
    cfg = tiny_cfg()
    gst = StyleTokenBank(cfg, np.random.default_rng(1))
    ref = rng.normal(size=(2, n_frames, cfg.n_mels)).astype(np.float32)
    w = gst.weights(ref, [n_frames, max(1, n_frames // 2)]).data
    assert w.shape == (2, cfg.n_tokens)
    assert (w >= 0).all()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    emb = gst(ref, [n_frames, max(1, n_frames // 2)]).data
    np.testing.assert_allclose(emb, w @ gst.tokens.data, rtol=1e-5, atol=1e-6)
    lo, hi = gst.tokens.data.min(axis=0), gst.tokens.data.max(axis=0)
    assert ((emb >= lo - 1e-6) & (emb <= hi + 1e-6)).all()


def test_gst_deterministic(rng):
    cfg = tiny_cfg()
    ref = rng.normal(size=(30, cfg.n_mels)).astype(np.float32)
    a = StyleTokenBank(cfg, np.random.default_rng(1))(ref).data
    b = StyleTokenBank(cfg, np.random.default_rng(1))(ref).data
    np.testing.assert_array_equal(a, b)


def test_gst_rejects_empty_reference():
    cfg = tiny_cfg()
    gst = StyleTokenBank(cfg, np.random.default_rng(1))
    with pytest.raises(ValueError):
        gst(np.zeros((0, cfg.n_mels), np.float32))


# attention -----------------------------------------------------------------

def make_attention(seed=0, **kw):
    return AttentionModule(query_dim=5, enc_dim=4, att_dim=6, posenc_dim=4, filters=3, width=5, seed=seed, **kw)


def test_zero_parameter_attention_is_uniform(rng):
    att = make_attention()
    zero_params(att)
    J = 9
    s = nn.as_tensor(rng.normal(size=(2, 5)).astype(np.float32))
    H = nn.as_tensor(rng.normal(size=(2, J, 4)).astype(np.float32))
    accum = nn.as_tensor(rng.random((2, J)).astype(np.float32))
    ctx, alpha, _ = att(s, H, accum)
    np.testing.assert_array_equal(alpha.data, np.full((2, J), 1.0 / J, np.float32))
    np.testing.assert_allclose(ctx.data, H.data.mean(axis=1), rtol=1e-5, atol=1e-6)


def test_step0_feedback_matches_hand_rolled_convolution(float64):
    att = make_attention(seed=4)
    J, width = 7, att.width
    left = (width - 1) // 2
    gamma = att.feedback_features(nn.as_tensor(np.zeros((1, J)))).data[0]
    kernel = att.feedback.data[:, 0, :]                    # filters x width
    padded = np.concatenate([np.ones(left), np.zeros(J), np.zeros(width - 1 - left)])
    expected = np.zeros((J, kernel.shape[0]))
    for j in range(J):
        for f in range(kernel.shape[0]):
            acc = 0.0
            for k in range(width):
                acc += kernel[f, k] * padded[j + k]
            expected[j, f] = acc
    np.testing.assert_allclose(gamma, expected, rtol=0, atol=1e-15)
    # only the first ``left`` positions see the padding
    assert not gamma[left:].any()
    assert gamma[:left].any()


def test_ones_padding_changes_first_energies(float64, rng):
    ones, zeros = make_attention(seed=2), make_attention(seed=2, pad_before=0.0)
    J = 8
    s = nn.as_tensor(rng.normal(size=(1, 5)))
    H = nn.as_tensor(rng.normal(size=(1, J, 4)))
    accum = nn.as_tensor(np.zeros((1, J)))
    e1 = ones.energies(s, ones.preprocess(H), accum).data[0]
    e0 = zeros.energies(s, zeros.preprocess(H), accum).data[0]
    left = (ones.width - 1) // 2
    assert not np.allclose(e1[:left], e0[:left])
    np.testing.assert_array_equal(e1[left:], e0[left:])


def test_weights_sum_to_one_and_accumulate(rng):
    att = make_attention(seed=5)
    J = 11
    H = nn.as_tensor(rng.normal(size=(3, J, 4)).astype(np.float32))
    accum = nn.as_tensor(np.zeros((3, J), np.float32))
    mask = nn.length_mask([11, 8, 3], J, np.float32)
    keys = att.preprocess(H)
    for i in range(1, 13):
        s = nn.as_tensor(rng.normal(size=(3, 5)).astype(np.float32))
        _, alpha, accum = att(s, H, accum, keys, mask)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-5)
        assert alpha.data[1, 8:].max() < 1e-6 and alpha.data[2, 3:].max() < 1e-6
        np.testing.assert_allclose(accum.data.sum(axis=1), i, rtol=1e-5)


def test_without_position_term_keys_are_position_free(float64, rng):
    # identical encoder rows give identical keys once the position matrix is zero
    att = make_attention(seed=1)
    att.W_p.data[...] = 0
    H = nn.as_tensor(np.repeat(rng.normal(size=(1, 1, 4)), 6, axis=1))
    keys = att.preprocess(H).data[0]
    np.testing.assert_allclose(keys, np.repeat(keys[:1], 6, axis=0), atol=1e-15)
    fresh = make_attention(seed=1)
    assert not np.allclose(fresh.preprocess(H).data[0][0], fresh.preprocess(H).data[0][3])


def test_attention_shape_mismatch(rng):
    att = make_attention()
    with pytest.raises(nn.ShapeError, match="attention"):
        att(nn.as_tensor(np.zeros((1, 5))), nn.as_tensor(np.zeros((1, 4, 4))), nn.as_tensor(np.zeros((1, 3))))


def test_posenc_values():
    p = posenc(np.arange(50), 16)
    assert p.shape == (50, 16)
    np.testing.assert_array_equal(p[0], np.tile([0.0, 1.0], 8))
    np.testing.assert_allclose(p[:, 0::2] ** 2 + p[:, 1::2] ** 2, 1.0, atol=1e-12)
    np.testing.assert_allclose(p[:, 0], np.sin(np.arange(50)))
    np.testing.assert_allclose(p[:, 15], np.cos(np.arange(50) / 10000 ** (14 / 16)))


# decoder and stop handling -------------------------------------------------

def test_decoder_step_shapes(rng):
    cfg = tiny_cfg()
    model = Tacotron(cfg)
    spk = nn.as_tensor(rng.normal(size=(2, cfg.speaker_dim)).astype(np.float32))
    H = model.encode(rng.integers(1, cfg.n_symbols, (2, 6)), [6, 4], spk)
    keys = model.decoder.attention.preprocess(H)
    state = model.decoder.initial_state(H)
    frames, stop, alpha, state = model.decoder.step(state, H, keys, nn.length_mask([6, 4], 6, np.float32))
    assert frames.shape == (2, cfg.frames_per_step, cfg.n_mels)
    assert stop.shape == (2,) and ((stop.data > 0) & (stop.data < 1)).all()
    assert alpha.shape == (2, 6)
    np.testing.assert_array_equal(state.frame.data, frames.data[:, -1])


@pytest.mark.parametrize("n,expected", [
    (8, [0, 0, 0, 0.2, 0.4, 0.6, 0.8, 1.0]),
    (5, [0.2, 0.4, 0.6, 0.8, 1.0]),
    (3, [0.6, 0.8, 1.0]),
    (1, [1.0]),
])
def test_stop_targets(n, expected):
    np.testing.assert_allclose(stop_targets(n), expected)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 50))
def test_stop_controller(values, max_steps):
    ctl = StopController(max_steps)
    steps = 0
    for v in values:
        steps += 1
        if ctl.update(v):
            break
    crossings = [i + 1 for i, v in enumerate(values) if v > STOP_THRESHOLD]
    first = crossings[0] if crossings and crossings[0] <= steps else None
    assert ctl.first_crossing == first
    end = min(max_steps, first + EXTRA_STEPS if first else max_steps)
    if end <= len(values):
        assert ctl.steps == end
        assert ctl.truncated == (first is None or first + EXTRA_STEPS > max_steps)
    else:
        assert ctl.steps == len(values)


def test_threshold_is_strict():
    ctl = StopController(100)
    assert not any(ctl.update(STOP_THRESHOLD) for _ in range(20))
    assert ctl.first_crossing is None


def test_synthesis_stops_six_steps_after_immediate_crossing():
    model = Tacotron(tiny_cfg())
    model.decoder.stop.weight.data[...] = 0
    model.decoder.stop.bias.data[...] = 5.0
    res = synthesize(model, "hello", np.zeros(5), max_steps=50)
    assert res.first_crossing == 1
    assert res.steps == 1 + EXTRA_STEPS and res.mel.data.shape == (18, 6)
    assert not res.truncated


def test_synthesis_truncates_without_crossing():
    model = Tacotron(tiny_cfg())
    model.decoder.stop.weight.data[...] = 0
    model.decoder.stop.bias.data[...] = -5.0
    res = synthesize(model, "hello", np.zeros(5), max_steps=13)
    assert res.truncated and res.first_crossing is None
    assert res.steps == 13 and len(res.mel.data) == 39
    assert res.alignments.shape[0] == 13
    np.testing.assert_allclose(res.alignments.sum(axis=1), 1.0, atol=1e-5)


def test_synthesis_rejects_empty_text():
    with pytest.raises(ValueError):
        synthesize(Tacotron(tiny_cfg()), "!!", np.zeros(5))


def test_random_stop_heads_terminate_on_schedule():
    model = Tacotron(tiny_cfg())
    rng = np.random.default_rng(7)
    head = model.decoder.stop
    max_steps = 40
    for _ in range(20):
        head.weight.data[...] = rng.normal(0, 1.0, head.weight.shape)
        head.bias.data[...] = rng.uniform(-3, 1)
        res = synthesize(model, "a short line", rng.normal(0, 0.3, 5), max_steps=max_steps)
        assert len(res.mel.data) == 3 * res.steps
        if res.first_crossing is not None and res.first_crossing + EXTRA_STEPS <= max_steps:
            assert res.steps == res.first_crossing + EXTRA_STEPS and not res.truncated
            assert res.stops[res.first_crossing - 1] > STOP_THRESHOLD
            assert (res.stops[:res.first_crossing - 1] <= STOP_THRESHOLD).all()
        else:
            assert res.steps == max_steps and res.truncated


# losses, mel-to-linear, training -------------------------------------------

def test_tts_loss_by_hand(float64, rng):
    pred = nn.as_tensor(rng.normal(size=(2, 6, 3)))
    target = rng.normal(size=(2, 6, 3))
    stops = nn.as_tensor(rng.uniform(0.05, 0.95, (2, 2)))
    stop_t = np.array([[0.8, 1.0], [1.0, 0.0]])
    fmask = np.array([[1, 1, 1, 1, 1, 1], [1, 1, 1, 0, 0, 0]], float)
    smask = np.array([[1, 1], [1, 0]], float)
    got = float(tts_loss(pred, stops, target, stop_t, fmask, smask).data)
    l1 = (np.abs(pred.data - target) * fmask[:, :, None]).sum() / (fmask.sum() * 3)
    p = stops.data
    bce = -(stop_t * np.log(p) + (1 - stop_t) * np.log(1 - p))
    assert got == pytest.approx(l1 + (bce * smask).sum() / smask.sum(), rel=1e-12)


def test_tts_loss_shape_error():
    with pytest.raises(nn.ShapeError):
        tts_loss(nn.as_tensor(np.zeros((1, 3, 2))), nn.as_tensor(np.zeros((1, 1))), np.zeros((1, 6, 2)),
                 np.zeros((1, 1)))


def test_mel2lin_shapes_and_residual_identity(float64, rng):
    net = MelToLinearNet(6, 4, 10, seed=0)
    mel = rng.normal(size=(9, 6))
    out = net(mel)
    assert out.shape == (1, 9, 10)
    for block in net.blocks:
        zero_params(block)
    expected = (mel @ net.inp.weight.data + net.inp.bias.data) @ net.out.weight.data + net.out.bias.data
    np.testing.assert_allclose(net(mel).data[0], expected, atol=1e-12)


def test_mel_to_linear_is_nonnegative(rng):
    net = MelToLinearNet(6, 4, 10, seed=0)
    stats = estimate_norm_stats([rng.normal(size=(50, 10))])
    lin = mel_to_linear(net, FeatureMatrix(rng.normal(size=(12, 6)).astype(np.float32), "log_mel"), stats)
    assert lin.shape == (12, 10) and (lin >= 0).all()
    with pytest.raises(nn.ShapeError):
        mel_to_linear(net, rng.normal(size=(12, 5)), stats)


def tiny_examples(rng, n=6, n_mels=6):
    out = []
    for i in range(n):
        J, F = int(rng.integers(3, 7)), int(rng.integers(5, 14))
        out.append(TtsExample(rng.integers(1, 20, J), rng.normal(size=(F, n_mels)).astype(np.float32)))
    return out


def test_tts_batch_layout(rng):
    ex = tiny_examples(rng, 3)
    b = make_tts_batch(ex, 3)
    steps = [-(-len(e.mel) // 3) for e in ex]
    assert b["n_steps"] == max(steps) and b["mels"].shape == (3, 3 * max(steps), 6)
    for i, e in enumerate(ex):
        np.testing.assert_array_equal(b["mels"][i, :len(e.mel)], e.mel)
        np.testing.assert_array_equal(b["mels"][i, len(e.mel):3 * steps[i]], np.repeat(e.mel[-1:], 3 * steps[i] - len(e.mel), 0))
        np.testing.assert_allclose(b["stops"][i, :steps[i]], stop_targets(steps[i]))
        assert b["frame_mask"][i].sum() == 3 * steps[i]


def test_training_reduces_loss(rng):
    # smooth, learnable targets: each utterance is a slow ramp plus a per-bin offset
    ex = []
    for i in range(4):
        F = 9 + 2 * i
        mel = np.linspace(-1, 1, F)[:, None] + np.linspace(0.5, -0.5, 6)[None, :]
        ex.append(TtsExample(np.arange(1, 4 + i), mel.astype(np.float32)))
    _, trainer = train_tts(ex, tiny_cfg(), TrainConfig(epochs=15, batch_size=4, lr=1e-2))
    assert trainer.history[-1] < 0.8 * trainer.history[0]


def test_resume_is_bit_identical(tmp_path, rng):
    ex = tiny_examples(rng, 5)
    tcfg = TrainConfig(epochs=2, batch_size=2, lr=5e-3, seed=4)
    straight, _ = train_tts(ex, tiny_cfg(), tcfg)

    first = Tacotron(tiny_cfg())
    ckpt = tmp_path / "tts.npz"
    tts_trainer(first, tcfg).fit(ex, lambda b: make_tts_batch(b, 3), 1, tcfg.batch_size, ckpt)
    resumed = Tacotron(tiny_cfg(seed=99))
    trainer = tts_trainer(resumed, tcfg)
    trainer.load(ckpt)
    assert trainer.epoch == 1
    trainer.fit(ex, lambda b: make_tts_batch(b, 3), 1, tcfg.batch_size)
    for (name, a), (_, b) in zip(straight.named_parameters(), resumed.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)


def test_batch_loss_is_finite(rng):
    model = Tacotron(tiny_cfg())
    loss = tts_batch_loss(model, make_tts_batch(tiny_examples(rng, 2), 3))
    assert np.isfinite(loss.data) and loss.data > 0
