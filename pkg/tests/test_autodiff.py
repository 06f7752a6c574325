import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st


def rand(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def test_bce_example():
    from pedintent.autodiff import Tensor, backward, bce_loss

    y_hat = Tensor([0.25], requires_grad=True)
    loss = bce_loss(y_hat, [1])
    assert 1.386294 == round(float(loss.value), 6)
    backward(loss)
    assert -4.0 == pytest.approx(float(y_hat.grad[0]))


def test_bce_clamp_and_labels():
    from pedintent.autodiff import Tensor, backward, bce_loss
    from pedintent.errors import LabelError

    y_hat = Tensor([1.0, 0.0], requires_grad=True)
    loss = bce_loss(y_hat, [0, 1])
    assert np.isfinite(loss.value)
    backward(loss)
    assert np.all(np.isfinite(y_hat.grad))

    with pytest.raises(LabelError):
        bce_loss([0.5], [2])


def test_backward_accumulates():
    from pedintent.autodiff import Tensor, backward, total

    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    gradients = backward(total(x * x + x))
    assert [3.0, -3.0, 7.0] == x.grad.tolist()
    assert [3.0, -3.0, 7.0] == gradients[x.node_id].tolist()

    # A second pass adds to the gradient slot.
    backward(total(x))
    assert [4.0, -2.0, 8.0] == x.grad.tolist()


def test_backward_unreached_and_scalar():
    from pedintent.autodiff import Tensor, backward, total
    from pedintent.errors import ShapeError

    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([[1.0]], requires_grad=True)
    gradients = backward(total(x), wrt=[x, unused])
    assert [[0.0]] == gradients[unused.node_id].tolist()
    assert unused.grad is None

    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_computation_record_order():
    from pedintent.autodiff import ComputationRecord, Tensor, matmul, sigmoid, total

    w = Tensor(rand(3, 2), requires_grad=True)
    x = Tensor(rand(4, 3))
    loss = total(sigmoid(matmul(x, w)))
    record = ComputationRecord(loss)
    # Constant input is not recorded.
    assert [w] == record.leaves
    seen = {w.node_id}
    for node in record:
        assert all(i in seen for i in node.inputs)
        seen.add(node.output)
    assert ["matmul", "sigmoid", "sum"] == [node.op for node in record]


def test_matmul_shapes():
    from pedintent.autodiff import matmul
    from pedintent.errors import ShapeError

    assert (2, 5, 4) == matmul(rand(2, 5, 3), rand(3, 4)).shape
    assert (2, 5, 4) == matmul(rand(2, 5, 3), rand(2, 3, 4)).shape
    with pytest.raises(ShapeError, match=r"\(2, 3\) and \(2, 3\)"):
        matmul(rand(2, 3), rand(2, 3))


@pytest.mark.parametrize(
    "name",
    [
        "matmul",
        "batched_matmul",
        "sigmoid",
        "tanh",
        "relu",
        "absolute",
        "index",
        "gather",
        "concat_transpose",
        "mean",
        "conv1d_time",
        "conv2d",
        "mean_pool2d",
        "lstm_cell",
        "bce",
        "mse",
    ],
)
@pytest.mark.parametrize("trial", range(100))
def test_gradcheck(name, trial):
    from pedintent import autodiff as ad

    def draw(*shape, seed=0):
        return rand(*shape, seed=1000 * trial + seed)

    def away_from_zero(*shape, seed=0):
        # Kinks of relu and abs are never hit by finite differences.
        x = draw(*shape, seed=seed)
        return np.where(np.abs(x) < 0.1, 0.5, x)

    cases = {
        "matmul": (lambda a, b: ad.matmul(a, b), [draw(4, 3), draw(3, 2, seed=1)]),
        "batched_matmul": (
            lambda a, b: ad.matmul(a, b),
            [draw(2, 4, 3), draw(2, 3, 2, seed=1)],
        ),
        "sigmoid": (ad.sigmoid, [draw(3, 4)]),
        "tanh": (ad.tanh, [draw(3, 4)]),
        "relu": (ad.relu, [away_from_zero(3, 4)]),
        "absolute": (ad.absolute, [away_from_zero(5)]),
        "index": (lambda a: ad.index(a, ([0, 2, 0], slice(None))), [draw(3, 2)]),
        "gather": (
            lambda a: ad.gather(a, np.array([[1, -1], [1, 0]])),
            [draw(2, 3)],
        ),
        "concat_transpose": (
            lambda a, b: ad.transpose(ad.concat([a, b], axis=1), (1, 0)),
            [draw(2, 3), draw(2, 1, seed=1)],
        ),
        "mean": (lambda a: ad.mean(ad.reshape(a, (6,))), [draw(2, 3)]),
        "conv1d_time": (
            lambda x, w: ad.conv1d_time(x, w, k=3),
            [draw(2, 3, 6), draw(3, 4, 3, seed=1)],
        ),
        "conv2d": (ad.conv2d, [draw(2, 2, 5, 5), draw(3, 2, 3, 3, seed=1)]),
        "mean_pool2d": (ad.mean_pool2d, [draw(2, 5, 5)]),
        "lstm_cell": (
            lambda x, h, c, w, b: ad.lstm_cell(x, h, c, w, b)[0],
            [
                draw(2, 3),
                draw(2, 4, seed=1),
                draw(2, 4, seed=2),
                draw(7, 16, seed=3),
                draw(16, seed=4),
            ],
        ),
        "bce": (
            lambda a: ad.bce_loss(ad.sigmoid(a), [1, 0, 0, 1]),
            [draw(4)],
        ),
        "mse": (lambda a: ad.mse_loss(a, np.ones((2, 3))), [draw(2, 3)]),
    }
    op, values = cases[name]
    weights = draw(*op(*[ad.Tensor(v) for v in values]).shape, seed=9)

    def f(inputs):
        return ad.total(ad.mul(op(*inputs), weights))

    inputs = [ad.Tensor(v) for v in values]
    assert ad.gradcheck(f, inputs) < 1e-4


def test_gradcheck_samples():
    from pedintent import autodiff as ad

    x = ad.Tensor(rand(20, 20))
    error = ad.gradcheck(
        lambda inputs: ad.total(ad.tanh(inputs[0])),
        [x],
        samples=10,
        rng=np.random.default_rng(3),
    )
    assert error < 1e-5


def test_conv1d_time_causal():
    from pedintent.autodiff import conv1d_time

    x = rand(3, 8)
    w = rand(2, 4, 3, seed=1)
    y = conv1d_time(x, w, k=2).value
    changed = x.copy()
    changed[:, 5:] += 10.0
    z = conv1d_time(changed, w, k=2).value
    assert np.array_equal(y[:, :5], z[:, :5])
    assert not np.allclose(y[:, 5], z[:, 5])


def test_conv1d_time_leading_axes():
    from pedintent.autodiff import Tensor, backward, conv1d_time, total

    x = Tensor(np.ones((2, 3, 2, 4)), requires_grad=True)
    w = Tensor(np.ones((2, 2, 2)), requires_grad=True)
    y = conv1d_time(x, w, k=2)
    assert (2, 3, 2, 4) == y.shape
    backward(total(y))
    # Current frame over 2 * 3 * 4 positions, previous frame over 2 * 3 * 3.
    np.testing.assert_array_equal(np.full((2, 2), 24.0), w.grad[0])
    np.testing.assert_array_equal(np.full((2, 2), 18.0), w.grad[1])
    np.testing.assert_array_equal([4.0, 4.0, 4.0, 2.0], x.grad[1, 2, 0])


def test_conv1d_time_errors():
    from pedintent.autodiff import conv1d_time
    from pedintent.errors import ParameterError, ShapeError

    with pytest.raises(ParameterError):
        conv1d_time(rand(3, 8), rand(1, 4, 3), k=0)
    with pytest.raises(ShapeError):
        conv1d_time(rand(3, 8), rand(2, 4, 2), k=2)


def test_conv2d_valid():
    from pedintent.autodiff import conv2d, mean_pool2d

    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 3, 3))
    assert [[[[45.0, 54.0], [81.0, 90.0]]]] == conv2d(x, w).value.tolist()
    assert [[[[67.5]]]] == mean_pool2d(conv2d(x, w)).value.tolist()
    # Odd trailing row and column are dropped.
    assert (1, 1, 1, 1) == mean_pool2d(conv2d(np.ones((1, 1, 5, 5)), w)).shape


def test_gather_padding():
    from pedintent.autodiff import Tensor, backward, gather, total

    table = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    out = gather(table, np.array([1, -1, 1]))
    assert [[3.0, 4.0], [0.0, 0.0], [3.0, 4.0]] == out.value.tolist()
    backward(total(out))
    assert [[0.0, 0.0], [2.0, 2.0]] == table.grad.tolist()


def test_lstm_cell_zero_state():
    from pedintent.autodiff import lstm_cell
    from pedintent.errors import ShapeError

    state = np.zeros(3)
    h, c = lstm_cell(np.zeros(2), state, state, np.zeros((5, 12)), np.zeros(12))
    # Zero weights: gates at 0.5, candidate at 0.
    assert [0.0, 0.0, 0.0] == h.value.tolist()
    assert [0.0, 0.0, 0.0] == c.value.tolist()

    with pytest.raises(ShapeError):
        lstm_cell(np.zeros(2), state, state, np.zeros((4, 12)), np.zeros(12))


@settings(deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20))
def test_sigmoid_bounded(values):
    from pedintent.autodiff import Tensor, backward, sigmoid, total

    x = Tensor(values, requires_grad=True)
    s = sigmoid(x)
    assert np.all((0.0 <= s.value) & (s.value <= 1.0))
    backward(total(s))
    assert np.all(np.isfinite(x.grad))
    assert np.all(x.grad <= 0.25)
