import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vlnlab import autodiff as ad


def rand(rng, *shape, grad=True):
    return ad.Tensor(rng.uniform(-2, 2, size=shape), requires_grad=grad)


# ------------------------------------------------------------------ matmul


def test_matmul_identity():
    out = ad.matmul(ad.tensor([[1, 0], [0, 1]]), ad.tensor([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[3], [4]])


def test_matmul_by_hand():
    out = ad.matmul(ad.tensor([[1, 2]]), ad.tensor([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[11]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))))


@pytest.mark.parametrize("which", ["a", "b"])
def test_matmul_gradients(which):
    rng = np.random.default_rng(3)
    a, b = rand(rng, 3, 4), rand(rng, 4, 2)
    f = lambda _: ad.sum_(ad.tanh(ad.matmul(a, b)))
    report = ad.gradient_check(f, a if which == "a" else b, step=1e-6, tol=1e-5)
    assert report.passed, report


def test_vector_matrix_products_gradients():
    rng = np.random.default_rng(4)
    v, M, w = rand(rng, 4), rand(rng, 4, 3), rand(rng, 3)
    f = lambda _: ad.sum_(ad.tanh(ad.matmul(ad.matmul(v, M), ad.tensor(np.eye(3))))) + ad.sum_(ad.matmul(M, w))
    for x in (v, M, w):
        assert ad.gradient_check(f, x, tol=1e-5).passed


# ----------------------------------------------------------------- softmax


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(ad.tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_no_overflow():
    out = ad.softmax(ad.tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.5, 0.5])


def test_softmax_matches_arbitrary_precision():
    mpmath.mp.dps = 50
    xs = [1, 2, 3]
    denom = sum(mpmath.exp(x) for x in xs)
    expected = [float(mpmath.exp(x) / denom) for x in xs]
    np.testing.assert_allclose(ad.softmax(ad.tensor(xs)).data, expected, rtol=1e-15)


def test_softmax_empty_is_dimension_error():
    with pytest.raises(ad.DimensionError):
        ad.softmax(ad.tensor([]))


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
@settings(max_examples=200, deadline=None)
def test_softmax_is_a_distribution(x):
    y = ad.softmax(ad.tensor(x)).data
    assert np.all(y > 0) or np.ptp(x) > 700
    assert abs(y.sum() - 1.0) <= 1e-12


def test_softmax_gradient():
    rng = np.random.default_rng(5)
    x = rand(rng, 6)
    w = ad.tensor(rng.normal(size=6))
    f = lambda _: ad.dot(ad.softmax(x), w)
    assert ad.gradient_check(f, x, tol=1e-5).passed


# ------------------------------------------------------------ elementwise


def test_tanh_and_sigmoid_at_zero():
    assert ad.tanh(ad.tensor([0.0])).item() == 0.0
    assert ad.sigmoid(ad.tensor([0.0])).item() == 0.5


@pytest.mark.parametrize("kind", ["add", "mul", "sub"])
def test_binary_gradients(kind):
    rng = np.random.default_rng(6)
    a, b = rand(rng, 2, 3), rand(rng, 2, 3)
    f = lambda _: ad.sum_(ad.tanh(ad.elementwise(a, b, kind)))
    assert ad.gradient_check(f, a, tol=1e-5).passed
    assert ad.gradient_check(f, b, tol=1e-5).passed


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "exp", "neg"])
def test_unary_gradients(kind):
    rng = np.random.default_rng(7)
    x = rand(rng, 5)
    f = lambda _: ad.sum_(ad.unary(x, kind))
    assert ad.gradient_check(f, x, tol=1e-5).passed


def test_log_gradient_and_domain():
    x = ad.tensor([0.5, 1.5, 2.0], requires_grad=True)
    assert ad.gradient_check(lambda _: ad.sum_(ad.log(x)), x, tol=1e-5).passed
    with pytest.raises(ad.DomainError):
        ad.log(ad.tensor([1.0, 0.0]))


def test_binary_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.add(ad.tensor([1.0, 2.0]), ad.tensor([1.0, 2.0, 3.0]))


# ------------------------------------------------------------ concat / mean


def test_concat_vectors():
    np.testing.assert_array_equal(ad.concat(ad.tensor([1, 2]), ad.tensor([3])).data, [1, 2, 3])


def test_concat_rows_gradient():
    rng = np.random.default_rng(8)
    a, b = rand(rng, 2, 3), rand(rng, 4, 3)
    w = ad.tensor(rng.normal(size=(6, 3)))
    f = lambda _: ad.sum_(ad.tanh(ad.mul(ad.concat(a, b, axis=0), w)))
    assert ad.gradient_check(f, a, tol=1e-5).passed
    assert ad.gradient_check(f, b, tol=1e-5).passed


def test_mean_of_single_tensor_recovers_it():
    x = ad.tensor([1.0, -2.0, 3.5])
    np.testing.assert_array_equal(ad.mean([x]).data, x.data)


def test_mean_gradient_is_one_over_m():
    rng = np.random.default_rng(9)
    xs = [rand(rng, 4) for _ in range(3)]
    out = ad.sum_(ad.mean(xs))
    ad.backward(out)
    for x in xs:
        np.testing.assert_allclose(x.grad, np.full(4, 1 / 3))
    w = ad.tensor(rng.normal(size=4))
    f = lambda _: ad.sum_(ad.tanh(ad.mul(ad.mean(xs), w)))
    for x in xs:
        x.grad = None
        assert ad.gradient_check(f, x, tol=1e-5).passed


def test_mean_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.mean([ad.tensor([1.0]), ad.tensor([1.0, 2.0])])


# ----------------------------------------------------------- cross entropy


def test_cross_entropy_uniform_is_log_n():
    assert ad.cross_entropy(ad.tensor([0.3] * 4), 2).item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_confident_correct():
    assert ad.cross_entropy(ad.tensor([0.0, 800.0, 0.0]), 1).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(10)
    x = rand(rng, 5)
    loss = ad.cross_entropy(x, 3)
    ad.backward(loss)
    expected = ad.softmax(ad.tensor(x.data)).data - np.eye(5)[3]
    np.testing.assert_allclose(x.grad, expected, atol=1e-15)
    x.grad = None
    assert ad.gradient_check(lambda _: ad.cross_entropy(x, 3), x, tol=1e-5).passed


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        ad.cross_entropy(ad.tensor([1.0, 2.0]), 2)


def test_sequence_cross_entropy_gradient():
    rng = np.random.default_rng(11)
    x = rand(rng, 4, 6)
    f = lambda _: ad.sequence_cross_entropy(x, [0, 5, 2, 2], [1.0, 0.0, 2.0, 1.0])
    assert ad.gradient_check(f, x, tol=1e-5).passed


# ----------------------------------------------------------------- backward


def test_backward_identity():
    x = ad.tensor([2.0], requires_grad=True)
    y = ad.sum_(x)
    ad.backward(y)
    assert x.grad.tolist() == [1.0]


def test_backward_square():
    x = ad.tensor(3.0, requires_grad=True)
    ad.backward(ad.mul(x, x))
    assert float(x.grad) == 6.0


def test_backward_requires_scalar_root():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.tanh(x))


def test_backward_accumulates_until_zero_grad():
    x = ad.tensor(3.0, requires_grad=True)
    ad.backward(ad.mul(x, x))
    ad.backward(ad.mul(x, x))
    assert float(x.grad) == 12.0
    ad.zero_grad([x])
    assert x.grad is None


def test_backward_visits_each_node_once():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    a = ad.tanh(x)
    b = ad.mul(a, a)  # diamond: a used twice
    c = ad.add(b, a)
    root = ad.sum_(c)
    nodes = ad.graph_nodes(root)
    assert len(nodes) == len({id(n) for n in nodes}) == 5
    assert [n._seq for n in nodes] == sorted(n._seq for n in nodes)
    assert ad.backward(root) == 5
    t = np.tanh([1.0, 2.0])
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t))


def test_tape_parents_precede_children():
    rng = np.random.default_rng(12)
    x = rand(rng, 3)
    y = ad.sum_(ad.softmax(ad.add(ad.tanh(x), ad.exp(x))))
    nodes = ad.graph_nodes(y)
    for node in nodes:
        for p in node._parents:
            if p.requires_grad:
                assert p._seq < node._seq


def test_no_grad_records_nothing():
    x = ad.tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(x)
    assert not y.requires_grad and y._parents == ()


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(13)
    X = ad.tensor(rng.normal(size=(7, 5)))
    W = ad.tensor(rng.normal(size=(5 + 4, 16)))
    b = ad.tensor(rng.normal(size=16))
    assert ad.lstm_seq(X, W, b).data.tobytes() == ad.lstm_seq(X, W, b).data.tobytes()


# ---------------------------------------------------------- fused LSTM ops


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_seq_gradients(reverse):
    rng = np.random.default_rng(14)
    X = rand(rng, 6, 5)
    W = ad.parameter(rng.uniform(-0.5, 0.5, size=(5 + 4, 16)))
    b = ad.parameter(rng.uniform(-0.5, 0.5, size=16))
    f = lambda _: ad.sum_(ad.tanh(ad.lstm_seq(X, W, b, reverse=reverse)))
    for x in (X, W, b):
        assert ad.gradient_check(f, x, tol=1e-5).passed


def test_lstm_seq_reverse_matches_flipped_input():
    rng = np.random.default_rng(15)
    X = rng.normal(size=(5, 3))
    W = ad.tensor(rng.normal(size=(3 + 2, 8)))
    b = ad.tensor(rng.normal(size=8))
    rev = ad.lstm_seq(ad.tensor(X), W, b, reverse=True).data
    fwd_on_flipped = ad.lstm_seq(ad.tensor(X[::-1].copy()), W, b).data
    np.testing.assert_allclose(rev, fwd_on_flipped[::-1], rtol=0, atol=1e-14)


def test_lstm_cell_matches_sequence_and_gradients():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(3, 4))
    W = ad.parameter(rng.uniform(-0.5, 0.5, size=(4 + 5, 20)))
    b = ad.parameter(rng.uniform(-0.5, 0.5, size=20))
    hc = ad.tensor(np.zeros(10))
    for row in X:
        hc = ad.lstm_cell(ad.tensor(row), hc, W, b)
    np.testing.assert_allclose(hc.data[:5], ad.lstm_seq(ad.tensor(X), W, b).data[-1], atol=1e-14)

    x = rand(rng, 4)
    h0 = ad.tensor(rng.uniform(-1, 1, size=10), requires_grad=True)
    f = lambda _: ad.sum_(ad.tanh(ad.lstm_cell(x, ad.lstm_cell(x, h0, W, b), W, b)))
    for t in (x, h0, W, b):
        assert ad.gradient_check(f, t, tol=1e-5).passed


# ----------------------------------------------------------- gradient check


def test_gradient_check_of_sum_is_exact():
    x = ad.tensor(np.random.default_rng(17).normal(size=(3, 3)), requires_grad=True)
    report = ad.gradient_check(lambda t: ad.sum_(t), x, step=0.5)
    assert report.max_rel_error == 0.0


def test_gradient_check_softmax_cross_entropy_composite():
    rng = np.random.default_rng(18)
    W = rand(rng, 4, 6)
    v = ad.tensor(rng.normal(size=6))
    f = lambda _: ad.cross_entropy(ad.matmul(W, v), 1)
    assert ad.gradient_check(f, W).max_rel_error < 1e-5


def test_gradient_check_detects_wrong_gradient():
    def bad_square(x):
        # forward x^2, backward claims 3x
        return ad._make(x.data ** 2, (x,), lambda g: (g * 3 * x.data,), "bad_square")

    x = ad.tensor([0.7, -1.2], requires_grad=True)
    report = ad.gradient_check(lambda t: ad.sum_(bad_square(t)), x)
    assert not report.passed


def test_gradient_check_rejects_nondeterminism():
    rng = np.random.default_rng(19)
    x = ad.tensor([1.0], requires_grad=True)
    with pytest.raises(ad.OracleError):
        ad.gradient_check(lambda t: ad.sum_(ad.add(t, ad.tensor([rng.random()]))), x)


@given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)), arrays(np.float64, (4,), elements=st.floats(-2, 2)))
@settings(max_examples=25, deadline=None)
def test_random_composites_pass_gradient_check(M, v):
    Mt = ad.tensor(M, requires_grad=True)
    vt = ad.tensor(v, requires_grad=True)
    f = lambda _: ad.cross_entropy(ad.tanh(ad.matmul(Mt, ad.sigmoid(vt))), 0)
    # below ~1e-5 the central difference at step 1e-6 is mostly cancellation noise
    assert ad.gradient_check(f, Mt, tol=1e-4, floor=1e-5).passed
    assert ad.gradient_check(f, vt, tol=1e-4, floor=1e-5).passed


# -------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(20)
    recs = [("a/W", rng.normal(size=(3, 4))), ("b", rng.normal(size=7)), ("scalar", np.array([np.pi]))]
    path = tmp_path / "x.ckpt"
    ad.save_checkpoint(path, recs, tag="demo")
    tag, loaded = ad.load_checkpoint(path)
    assert tag == "demo" and list(loaded) == ["a/W", "b", "scalar"]
    for (name, arr), got in zip(recs, loaded.values()):
        assert got.tobytes() == arr.tobytes() and got.shape == arr.shape
    assert ad.dump_checkpoint(loaded.items(), tag) == path.read_bytes()


def test_checkpoint_layout_header():
    blob = ad.dump_checkpoint([("w", np.array([1.0, 2.0]))], tag="t")
    assert blob[:8] == ad.MAGIC and blob[8] == ad.VERSION
    assert blob[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ad.CheckpointError):
        ad.parse_checkpoint(b"not a checkpoint")
    blob = ad.dump_checkpoint([("w", np.ones(4))])
    with pytest.raises(ad.CheckpointError):
        ad.parse_checkpoint(blob[:-3])
