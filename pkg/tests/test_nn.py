import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _gradcheck import CASES, TOLERANCE, run_case
from synthasr import kernels, nn
from synthasr.nn import tensor as T


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    assert run_case(name) < TOLERANCE


def test_trivial_gradients():
    x = nn.Tensor(np.array(3.0), requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)
    y = nn.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (y.detach() * 5.0 + y * 0.0).sum().backward()
    np.testing.assert_array_equal(y.grad, 0.0)
    with pytest.raises(ValueError):
        nn.Tensor(np.ones(3), requires_grad=True).backward()


def test_shared_subexpression_accumulates():
    x = nn.Tensor(np.array([2.0]), requires_grad=True)
    a = x * x
    (a + a * 3.0).sum().backward()
    assert x.grad[0] == pytest.approx(16.0)


def test_forward_identities(rng):
    lin = nn.Linear(3, 3)
    lin.weight.data = np.eye(3, dtype=lin.weight.dtype)
    lin.bias.data[:] = 0
    x = rng.standard_normal((2, 3)).astype(lin.weight.dtype)
    np.testing.assert_array_equal(lin(nn.constant(x)).data, x)
    lstm = nn.LSTM(3, 4)
    for p in lstm.parameters():
        p.data[...] = 0
    assert np.all(lstm(nn.constant(rng.standard_normal((2, 5, 3)))).data == 0)


def test_maxpool_ceil():
    x = nn.constant(np.arange(7, dtype=float).reshape(1, 7, 1))
    out = T.maxpool_time(x, 2)
    assert out.shape == (1, 4, 1)
    np.testing.assert_array_equal(out.data[0, :, 0], [1, 3, 5, 6])
    assert T.pooled_lengths([7, 8, 1], 2) == [4, 4, 1]


def test_shape_errors_name_the_op():
    with pytest.raises(T.ShapeError, match="conv1d"):
        T.conv1d(nn.constant(np.zeros((1, 3, 2))), nn.constant(np.zeros((4, 5, 3))))
    with pytest.raises(T.ShapeError, match="l1_loss"):
        nn.l1_loss(nn.constant(np.zeros(3)), np.zeros(4))


@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
def test_softmax_and_sigmoid_ranges(x):
    s = T.softmax(nn.constant(x, np.float64)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    g = T.sigmoid(nn.constant(x / 10, np.float64)).data
    assert np.all((g > 0) & (g < 1))


def test_blstm_mirror_symmetry(rng, float64):
    blstm = nn.BLSTM(2, 3, seed=4)
    for name in ("W", "U", "b"):
        getattr(blstm.bwd, name).data = getattr(blstm.fwd, name).data.copy()
    half = rng.standard_normal((1, 3, 2))
    x = np.concatenate([half, half[:, ::-1]], axis=1)
    out = blstm(nn.constant(x)).data[0]
    np.testing.assert_allclose(out[:, :3], out[::-1, 3:], atol=1e-12)


# losses -----------------------------------------------------------------

def test_loss_trivial_values(float64):
    p = nn.constant(np.array([0.3, 0.8]))
    assert nn.l1_loss(p, p.data).item() == 0
    assert nn.bce_loss(nn.constant(np.array([0.5])), [1.0]).item() == pytest.approx(np.log(2))
    t = np.array([0.3, 0.8])
    ent = -np.mean(t * np.log(t) + (1 - t) * np.log(1 - t))
    assert nn.bce_loss(p, t).item() == pytest.approx(ent)
    logits = np.array([[0.2, 1.0, -0.5]])
    lp = logits - np.log(np.exp(logits).sum())
    assert nn.ce_loss(nn.constant(logits), [1]).item() == pytest.approx(-lp[0, 1])
    with pytest.raises(IndexError):
        nn.ce_loss(nn.constant(logits), [3])


def test_losses_match_scalar_loops(rng, float64):
    pred, target = rng.random((4, 5)) * 0.98 + 0.01, rng.random((4, 5))
    l1 = sum(abs(pred[i, j] - target[i, j]) for i in range(4) for j in range(5)) / 20
    bce = -sum(target[i, j] * np.log(pred[i, j]) + (1 - target[i, j]) * np.log(1 - pred[i, j])
               for i in range(4) for j in range(5)) / 20
    assert abs(nn.l1_loss(nn.constant(pred), target).item() - l1) < 1e-10
    assert abs(nn.bce_loss(nn.constant(pred), target).item() - bce) < 1e-10
    logits, labels = rng.standard_normal((6, 4)), rng.integers(0, 4, 6)
    ce = 0.0
    for i in range(6):
        z = max(logits[i])
        ce -= logits[i, labels[i]] - z - np.log(sum(np.exp(v - z) for v in logits[i]))
    assert abs(nn.ce_loss(nn.constant(logits), labels).item() - ce / 6) < 1e-10


def brute_force_ctc(probs, labels, blank):
    """-log of the summed probability of every frame path collapsing to labels."""
    n_steps, K = probs.shape
    total = 0.0
    for path in itertools.product(range(K), repeat=n_steps):
        collapsed = [k for i, k in enumerate(path) if k != blank and (i == 0 or path[i - 1] != k)]
        if collapsed == list(labels):
            total += np.prod([probs[t, k] for t, k in enumerate(path)])
    return -np.log(total)


def test_ctc_hand_examples(float64):
    uniform = np.full((2, 3), 1 / 3)
    assert nn.ctc_loss(nn.constant(np.log(uniform)), [0]).item() == pytest.approx(np.log(3), abs=1e-12)
    p = np.array([[0.6, 0.3, 0.1]])
    assert nn.ctc_loss(nn.constant(np.log(p)), [1]).item() == pytest.approx(-np.log(0.3), abs=1e-12)


def test_ctc_infeasible_is_distinct_error(float64):
    with pytest.raises(nn.CtcInfeasibleError):
        nn.ctc_loss(nn.constant(np.log(np.full((2, 3), 1 / 3))), [0, 0])
    assert kernels.ctc_min_length(np.array([0, 0, 1])) == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.data())
def test_ctc_matches_brute_force(n_steps, K, data):
    labels = data.draw(st.lists(st.integers(0, K - 2), max_size=3))
    if kernels.ctc_min_length(np.array(labels, dtype=np.int64)) > n_steps:
        return
    seed = data.draw(st.integers(0, 2**31 - 1))
    logits = np.random.default_rng(seed).standard_normal((n_steps, K)) * 2
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    with nn.precision(np.float64):
        got = nn.ctc_loss(nn.constant(np.log(probs)), labels).item()
    assert abs(got - brute_force_ctc(probs, labels, K - 1)) < 1e-6


# optimiser and checkpoints ----------------------------------------------

def test_sgd_rules():
    p = nn.Parameter(np.zeros(2))
    p.grad = np.ones(2)
    nn.SGD([p], lr=0.1, clip_norm=0).step()
    np.testing.assert_allclose(p.data, -0.1)
    q = nn.Parameter(np.array([1.0, 2.0]))
    q.grad = np.zeros(2)
    nn.SGD([q], lr=0.1).step()
    np.testing.assert_array_equal(q.data, [1.0, 2.0])
    r = nn.Parameter(np.zeros(1))
    nn.sgd_step([r], [np.ones(1)], 0.1)
    np.testing.assert_allclose(r.data, -0.1)


def test_schedule_decay_and_reset():
    opt = nn.SGD([nn.Parameter(np.zeros(1))], lr=0.5, decay=0.5, decay_every=2)
    for _ in range(5):
        opt.step()
    assert opt.lr == 0.5 * 0.25
    opt.reset_schedule()
    assert opt.lr == 0.5
    with pytest.raises(ValueError):
        nn.SGD([], lr=0.0)


def test_gradient_clipping():
    p = nn.Parameter(np.zeros(2))
    p.grad = np.array([30.0, 40.0])
    nn.SGD([p], lr=1.0, clip_norm=5.0).step()
    np.testing.assert_allclose(p.data, [-3.0, -4.0])


def test_checkpoint_bit_exact(tmp_path, rng):
    model = nn.BLSTM(3, 4, seed=2)
    opt = nn.Adam(model.parameters(), lr=1e-2)
    x = nn.constant(rng.standard_normal((2, 4, 3)).astype(np.float32))
    model(x).sum().backward()
    opt.step()
    nn.save_checkpoint(tmp_path / "m.npz", model.state_dict(), opt.state_dict(), {"note": "x"})
    params, state, meta = nn.load_checkpoint(tmp_path / "m.npz")
    other = nn.BLSTM(3, 4, seed=9)
    other.load_state_dict(params)
    for (n, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=n)
    assert meta == {"note": "x"}
    opt2 = nn.Adam(other.parameters(), lr=1e-2)
    opt2.load_state_dict(state)
    assert opt2.steps == 1
