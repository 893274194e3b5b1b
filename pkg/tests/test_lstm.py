import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartrul.lstm import (
    Mode,
    backward,
    dropout_masks,
    dumps_model,
    forward,
    grad_check,
    init_model,
    load_model,
    loads_model,
    loss_grad,
    loss_mse,
    relative_error,
    save_model,
)

from oracles import finite_difference, lstm_forward_loops


def _tiny(seed=0, hidden=(4, 4), ts=5, dropout=0.2):
    return init_model(5, hidden, dropout=dropout, ts=ts, seed=seed)


def test_init_shapes_and_forget_bias():
    m = init_model(5, (7, 3), seed=1)
    assert m.layers[0].W.shape == (5, 28) and m.layers[0].U.shape == (7, 28)
    assert m.layers[1].W.shape == (7, 12)
    np.testing.assert_array_equal(m.layers[0].gate("forget")[2], 1.0)
    np.testing.assert_array_equal(m.layers[0].gate("input")[2], 0.0)
    assert np.abs(m.layers[0].W).max() <= 1 / np.sqrt(7)
    assert m.n_parameters() == sum(p.size for _, p in m.named_parameters())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_forward_matches_scalar_loops(seed):
    m = _tiny(seed, hidden=(3, 2), ts=4)
    x = np.random.default_rng(seed).random((4, 5))
    y, _ = forward(m, x, Mode.INFER, clamp=False)
    assert y == pytest.approx(lstm_forward_loops(m, x), rel=1e-12, abs=1e-12)


def test_forward_with_masks_matches_loops():
    m = _tiny(3, hidden=(3, 2), ts=4, dropout=0.5)
    x = np.random.default_rng(3).random((4, 5))
    masks = dropout_masks(m, 1, 4, np.random.default_rng(9))
    y, _ = forward(m, x[None], Mode.TRAIN, masks=masks)
    assert y[0] == pytest.approx(lstm_forward_loops(m, x, masks), rel=1e-12)


def test_batch_equals_single_windows():
    m = _tiny(1)
    xs = np.random.default_rng(1).random((6, 5, 5))
    batch, _ = forward(m, xs, Mode.INFER)
    singles = [forward(m, x, Mode.INFER)[0] for x in xs]
    np.testing.assert_allclose(batch, singles, rtol=1e-13)


def test_infer_clamps_train_does_not():
    m = _tiny(2)
    m.head_b[0] = 500.0
    x = np.zeros((5, 5))
    assert forward(m, x, Mode.INFER)[0] == 125.0
    assert forward(m, x, Mode.INFER, clamp=False)[0] > 125.0
    y, _ = forward(m, x, Mode.TRAIN, rng=np.random.default_rng(0))
    assert y > 125.0
    m.head_b[0] = -50.0
    assert forward(m, x, Mode.INFER)[0] == 0.0


def test_zero_model_returns_head_bias():
    m = _tiny(0)
    for _, p in m.named_parameters():
        p[...] = 0.0
    m.head_b[0] = 60.0
    assert forward(m, np.zeros((5, 5)), Mode.INFER)[0] == 60.0


def test_shape_errors():
    m = _tiny(0)
    with pytest.raises(ValueError):
        forward(m, np.zeros((5, 4)))
    with pytest.raises(ValueError):
        forward(m, np.zeros((6, 5)))
    with pytest.raises(ValueError):
        forward(m, np.zeros((5, 5)), Mode.TRAIN)


def test_loss_and_grad():
    assert loss_mse(3.0, 1.0) == 2.0
    assert loss_mse(np.array([1.0, 3.0]), np.array([0.0, 0.0])) == 2.5
    np.testing.assert_array_equal(loss_grad(np.array([1.0, 3.0]), np.array([0.0, 0.0])), [0.5, 1.5])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_backward_matches_independent_differences(seed):
    rng = np.random.default_rng(seed)
    m = _tiny(seed, hidden=(3, 3), ts=4)
    x = rng.random((2, 4, 5))
    label = rng.uniform(0, 2, 2)
    masks = dropout_masks(m, 2, 4, rng)

    def f():
        y, _ = forward(m, x, Mode.TRAIN, masks=masks)
        return loss_mse(y, label)

    y, cache = forward(m, x, Mode.TRAIN, masks=masks)
    grads = backward(m, cache, loss_grad(y, label))
    names = [n for n, _ in m.named_parameters()]
    numeric = finite_difference(f, [p for _, p in m.named_parameters()])
    for name, num in zip(names, numeric):
        assert relative_error(grads[name], num).max() < 1e-4, name


def test_zero_upstream_gradient():
    m = _tiny(0)
    y, cache = forward(m, np.random.default_rng(0).random((3, 5, 5)), Mode.TRAIN, rng=np.random.default_rng(1))
    grads = backward(m, cache, np.zeros(3))
    assert all(not g.any() for g in grads.values())


def test_backward_needs_cache():
    with pytest.raises(RuntimeError):
        backward(_tiny(0), None, 1.0)


def test_grad_check_passes_and_locates():
    m = _tiny(5)
    x = np.random.default_rng(5).random((5, 5))
    report = grad_check(m, x, 1.0, seed=5)
    assert report.passed and report.max_rel_error < 1e-4
    assert report.n_checked == m.n_parameters()
    strict = grad_check(m, x, 1.0, tolerance=0.0, seed=5)
    assert not strict.passed and strict.parameter


def test_grad_check_with_saturated_unit():
    # a huge negative output-gate bias pins one hidden unit of the last layer at 0
    m = _tiny(6)
    h = m.layers[-1].hidden_size
    m.layers[-1].b[2 * h] = -40.0
    report = grad_check(m, np.random.default_rng(6).random((5, 5)), 1.0, seed=6)
    assert report.passed


def test_grad_check_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        grad_check(_tiny(0), np.zeros((5, 5)), 1.0, epsilon=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.integers(1, 6), min_size=1, max_size=3))
def test_model_text_round_trip_is_exact(seed, hidden):
    m = init_model(5, hidden, dropout=0.3, ts=7, seed=seed)
    rng = np.random.default_rng(seed)
    for _, p in m.named_parameters():
        p[...] = rng.normal(size=p.shape) * 10.0 ** rng.integers(-30, 30, size=p.shape)
    back = loads_model(dumps_model(m))
    for (n1, a), (n2, b) in zip(m.named_parameters(), back.named_parameters()):
        assert n1 == n2
        assert a.tobytes() == b.tobytes()
    assert (back.ts, back.dropout, back.seed, back.feature_order) == (7, 0.3, seed, m.feature_order)
    assert dumps_model(back) == dumps_model(m)


def test_model_file(tmp_path):
    m = _tiny(0)
    save_model(m, tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_text().startswith("smartrul-lstm 1\n")
    assert dumps_model(load_model(tmp_path / "m.txt")) == dumps_model(m)


def test_rejects_foreign_model_text():
    with pytest.raises(ValueError):
        loads_model("something else 1\n")


def test_dropout_masks_shapes_and_scale():
    m = init_model(5, (8, 6), dropout=0.5, seed=0)
    masks = dropout_masks(m, 4, 25, np.random.default_rng(0))
    assert masks[0].shape == (25, 4, 8) and masks[1].shape == (4, 6)
    assert set(np.unique(masks[0])) <= {0.0, 2.0}
