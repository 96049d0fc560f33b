import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from expdate import tensor as T
from expdate.tensor import DomainError, Rng, ShapeError, Tape, Tensor, backward
from expdate.testing import gradient_check


def test_matmul_examples():
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]])).data, [[3, 4], [5, 6]])
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_elementwise_examples():
    assert T.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]
    assert T.sigmoid(Tensor([0.0])).data.tolist() == [0.5]
    assert T.mul(Tensor([1.0, 2, 3]), Tensor([4.0, 5, 6])).data.tolist() == [4, 10, 18]
    assert T.elementwise("add", Tensor([1.0]), Tensor([2.0])).data.tolist() == [3.0]


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))


def test_broadcast_only_trailing_singleton():
    a = Tensor(np.ones((3, 4)))
    assert T.add(a, Tensor(np.ones((3, 1)))).shape == (3, 4)
    with pytest.raises(ShapeError):
        T.add(a, Tensor(np.ones((1, 4, 1))))


def test_reduce_examples():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert float(T.reduce("sum", x).data) == 10
    assert T.reduce("mean", x, axis=0).data.tolist() == [2, 3]
    assert float(T.reduce("max", Tensor([-5.0, -2.0, -9.0])).data) == -2
    with pytest.raises(ShapeError):
        T.reduce("sum", x, axis=2)


def test_backward_examples():
    tape = Tape()
    x = tape.watch(Tensor([1.0, 2.0, 3.0]))
    g = backward(T.reduce("sum", T.mul(x, x)), tape)
    assert g[x].tolist() == [2, 4, 6]

    tape = Tape()
    w = tape.watch(Tensor(0.0))
    assert backward(T.sigmoid(w), tape)[w] == pytest.approx(0.25)


def test_backward_rejects_bad_losses():
    tape = Tape()
    x = tape.watch(Tensor([1.0, 2.0]))
    with pytest.raises(ShapeError):
        backward(T.mul(x, x), tape)
    with pytest.raises(ValueError):
        backward(Tensor(1.0), tape)


def test_unreachable_leaf_gets_zero_and_detached_gets_nothing():
    tape = Tape()
    a = tape.watch(Tensor([1.0, 2.0]))
    b = tape.watch(Tensor([[3.0]]))
    c = Tensor([5.0, 6.0])
    g = backward(T.reduce("sum", T.mul(a, c)), tape)
    assert g[b].shape == (1, 1) and not g[b].any()
    assert c not in g


def test_backward_twice_is_identical():
    tape = Tape()
    x = tape.watch(Tensor(np.linspace(-1, 1, 5)))
    loss = T.reduce("sum", T.tanh(T.mul(x, x)))
    assert np.array_equal(backward(loss, tape)[x], backward(loss, tape)[x])


def test_ops_do_not_mutate_inputs():
    raw = np.array([[1.0, -2.0], [3.0, 4.0]])
    keep = raw.copy()
    tape = Tape()
    x = tape.watch(Tensor(raw))
    loss = T.reduce("sum", T.log_softmax(T.relu(T.mul(x, x)), axis=1))
    backward(loss, tape)
    assert np.array_equal(raw, keep)
    assert not x.data.flags.writeable


@pytest.mark.parametrize("name", ["matmul", "mul", "add", "sub", "exp", "log", "sigmoid", "tanh", "relu",
                                  "sum", "mean", "max", "transpose", "concat", "getitem", "log_softmax"])
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 4))
    b = rng.normal(size=(4, 3))
    c = rng.normal(size=(5, 4))
    fns = {
        "matmul": lambda p: T.reduce("sum", T.matmul(p["a"], p["b"])),
        "mul": lambda p: T.reduce("sum", T.mul(p["a"], p["c"])),
        "add": lambda p: T.reduce("sum", T.mul(T.add(p["a"], p["c"]), p["a"])),
        "sub": lambda p: T.reduce("sum", T.mul(T.sub(p["a"], p["c"]), p["c"])),
        "exp": lambda p: T.reduce("sum", T.exp(p["a"])),
        "log": lambda p: T.reduce("sum", T.log(T.exp(p["a"]))),
        "sigmoid": lambda p: T.reduce("sum", T.mul(T.sigmoid(p["a"]), p["c"])),
        "tanh": lambda p: T.reduce("sum", T.mul(T.tanh(p["a"]), p["c"])),
        "relu": lambda p: T.reduce("sum", T.mul(T.relu(p["a"]), p["c"])),
        "sum": lambda p: T.reduce("sum", T.mul(T.reduce("sum", p["a"], axis=0), T.reduce("sum", p["c"], axis=0))),
        "mean": lambda p: T.reduce("sum", T.mul(T.reduce("mean", p["a"], axis=1), T.reduce("mean", p["c"], axis=1))),
        "max": lambda p: T.reduce("sum", T.reduce("max", T.mul(p["a"], p["c"]), axis=1)),
        "transpose": lambda p: T.reduce("sum", T.matmul(T.transpose(p["a"], (1, 0)), p["c"])),
        "concat": lambda p: T.reduce("sum", T.mul(T.concat([p["a"], p["c"]], 0), T.concat([p["c"], p["a"]], 0))),
        "getitem": lambda p: T.reduce("sum", T.mul(p["a"][1:4, ::2], p["c"][[0, 0, 2], 1:3])),
        "log_softmax": lambda p: T.reduce("sum", T.mul(T.log_softmax(p["a"], axis=1), p["c"])),
    }
    arrays = {"a": a, "b": b} if name == "matmul" else {"a": a, "c": c}
    errors = gradient_check(fns[name], arrays)
    assert max(errors.values()) < 1e-4, errors


def test_rng_determinism_and_statistics():
    a = T.randn(Rng(42), (4,)).data
    assert np.array_equal(a, T.randn(Rng(42), (4,)).data)
    assert not np.array_equal(a, T.randn(Rng(43), (4,)).data)
    draws = Rng(0).normal((1_000_000,), np.float64)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1) < 0.05


def test_rng_derive_and_state_round_trip():
    root = Rng(5)
    assert np.array_equal(root.derive(3, 1).random(6), Rng(5).derive(3, 1).random(6))
    assert not np.array_equal(root.derive(3, 1).random(6), root.derive(1, 3).random(6))
    r = Rng(9).derive(2)
    r.random(10)
    clone = Rng.from_state(r.get_state())
    assert np.array_equal(r.random(5), clone.random(5))


def test_precision_context_switches_default_dtype():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-30, 30, allow_nan=False)))
def test_log_softmax_rows_normalize(x):
    out = T.log_softmax(Tensor(x), axis=1).data
    assert np.allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-9)
