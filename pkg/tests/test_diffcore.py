import numpy as np
import pytest

from hotflip import diffcore as dc
from hotflip.diffcore import Tape
from hotflip.errors import ContractError, DimensionError, LabelIndexError, NonFiniteError


def numeric_gradient(fn, value, h=1e-6):
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        up, down = value.copy(), value.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (fn(up) - fn(down)) / (2 * h)
    return grad


def check_gradient(build, *arrays, rtol=1e-5, atol=1e-7):
    """Compare tape gradients of ``build(tape, *leaves) -> scalar`` with central differences."""
    tape = Tape()
    leaves = [tape.leaf(a, requires_grad=True, name=f"a{i}") for i, a in enumerate(arrays)]
    grads = tape.backward(build(tape, *leaves))

    for i, array in enumerate(arrays):

        def value_at(replacement, i=i):
            inner = Tape()
            inputs = [inner.leaf(replacement if j == i else a) for j, a in enumerate(arrays)]
            return float(build(inner, *inputs).value)

        np.testing.assert_allclose(grads[f"a{i}"], numeric_gradient(value_at, array), rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_affine_tanh_sum(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    check_gradient(lambda t, x, w, b: dc.sum_all(dc.tanh(dc.affine(x, w, b))), x, w, b)


def test_elementwise_chain(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    check_gradient(lambda t, a, b: dc.sum_all(dc.mul(dc.sigmoid(a), dc.sub(b, a))), a, b)


def test_conv1d_and_max_over_time(rng):
    x, k = rng.normal(size=(2, 6, 3)), rng.normal(size=(3, 3, 4))
    check_gradient(lambda t, x, k: dc.sum_all(dc.max_over_time(dc.conv1d(x, k, 3))), x, k)


def test_structural_ops(rng):
    x = rng.normal(size=(2, 3, 4))

    def build(t, x):
        picked = dc.pick_steps(x, np.array([2, 0]))
        columns = dc.slice_last(picked, 1, 3)
        stacked = dc.stack([columns, dc.tanh(columns)], axis=0)
        joined = dc.concat([dc.reshape(stacked, (4, 2)), dc.reshape(dc.take(x, 1, axis=1), (4, 2))], axis=-1)
        return dc.sum_all(dc.scale(joined, 0.5))

    check_gradient(build, x)


def test_gather_rows_accumulates_repeats(rng):
    table = rng.normal(size=(5, 3))
    indices = np.array([[0, 2], [2, 4]])
    check_gradient(lambda t, table: dc.sum_all(dc.relu(dc.gather_rows(table, indices))), table)


def test_softmax_cross_entropy(rng):
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    check_gradient(lambda t, z: dc.softmax_cross_entropy(z, labels), logits)


def test_softmax_is_stable_for_large_logits():
    probs = dc.softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.isclose(probs.sum(), 1.0)
    assert probs[0] == pytest.approx(1.0)


def test_tape_cannot_be_reused():
    tape = Tape()
    x = tape.leaf(np.ones(2), requires_grad=True, name="x")
    tape.backward(dc.sum_all(x))
    with pytest.raises(ContractError):
        tape.backward(dc.sum_all(x))
    with pytest.raises(ContractError):
        tape.leaf(np.ones(1))


def test_backward_needs_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        tape.backward(dc.tanh(x))


def test_unused_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.ones(2), requires_grad=True, name="x")
    unused = tape.leaf(np.ones(3), requires_grad=True, name="unused")
    grads = tape.backward(dc.sum_all(x))
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))
    assert unused.grad is not None


def test_shape_mismatch_raises():
    tape = Tape()
    with pytest.raises(DimensionError):
        dc.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 3))))


def test_label_out_of_range():
    tape = Tape()
    with pytest.raises(LabelIndexError):
        dc.softmax_cross_entropy(tape.leaf(np.zeros((1, 3))), [3])


def test_non_finite_values_are_rejected():
    tape = Tape()
    with pytest.raises(NonFiniteError):
        tape.leaf(np.array([np.inf]))


def test_directional_error_shrinks_with_step(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 3)), rng.normal(size=3)
    labels = np.array([0, 2, 1])

    def value(xv, requires_grad=False):
        tape = Tape()
        leaf = tape.leaf(xv, requires_grad=requires_grad, name="x")
        loss = dc.softmax_cross_entropy(dc.tanh(dc.affine(leaf, tape.leaf(w), tape.leaf(b))), labels)
        return tape, loss

    tape, loss = value(x, requires_grad=True)
    grad = tape.backward(loss)["x"]
    direction = rng.normal(size=x.shape)
    direction /= np.linalg.norm(direction)
    exact = float(np.sum(grad * direction))

    errors = []
    for eps in (1e-2, 1e-3, 1e-4):
        up = float(value(x + eps * direction)[1].value)
        down = float(value(x - eps * direction)[1].value)
        errors.append(abs((up - down) / (2 * eps) - exact))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-4 * max(1.0, abs(exact))
