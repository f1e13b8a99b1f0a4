import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigrl import autodiff as ad


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# forward semantics


def test_matmul_known_product():
    a = ad.constant([[1.0, 2.0], [3.0, 4.0]])
    b = ad.constant([[5.0], [6.0]])
    out = ad.matmul(a, b)
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_hadamard_elementwise():
    out = ad.hadamard(ad.constant([1.0, 2.0]), ad.constant([3.0, 4.0]))
    assert out.data.tolist() == [3.0, 8.0]


def test_softmax_uniform_on_equal_scores():
    out = ad.softmax(ad.constant([0.0, 0.0]), axis=0)
    assert out.data.tolist() == [0.5, 0.5]


def test_leaky_relu_negative_branch():
    out = ad.leaky_relu(ad.constant([-1.0]), slope=0.2)
    assert out.data[0] == -0.2


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(ValueError):
        ad.leaky_relu(ad.constant([1.0]), slope=1.5)


def test_sigmoid_midpoint():
    assert ad.sigmoid(ad.constant(0.0)).item() == 0.5


def test_topk_mean_basic():
    assert ad.topk_mean(ad.constant([3.0, 1.0, 2.0]), 2).item() == 2.5


def test_topk_mean_tie_takes_lowest_indices():
    v = ad.parameter([1.0, 1.0, 1.0])
    out = ad.topk_mean(v, 2)
    out.backward()
    # gradient 1/k lands on indices 0 and 1, not on the later duplicate
    assert v.grad.tolist() == [0.5, 0.5, 0.0]


def test_topk_mean_matches_sort_oracle():
    v = rng(7).standard_normal(196)
    got = ad.topk_mean(ad.constant(v), 16).item()
    expected = float(np.mean(np.sort(v)[::-1][:16]))
    assert got == pytest.approx(expected, abs=1e-12)


def test_topk_mean_rejects_k_out_of_range():
    with pytest.raises(ValueError):
        ad.topk_mean(ad.constant([1.0, 2.0]), 3)


def test_cosine_sim_self_is_one():
    v = ad.constant([0.3, -1.2, 0.7])
    assert ad.cosine_sim(v, v).item() == pytest.approx(1.0, abs=1e-12)


def test_cosine_sim_zero_vector_is_zero():
    z = ad.constant([0.0, 0.0])
    v = ad.constant([1.0, 2.0])
    assert ad.cosine_sim(z, v).item() == 0.0


def test_cosine_rows_matches_scalar_op():
    a = rng(1).standard_normal((3, 5))
    b = rng(2).standard_normal((4, 5))
    mat = ad.cosine_rows(ad.constant(a), ad.constant(b)).data
    for i in range(3):
        for j in range(4):
            want = ad.cosine_sim(ad.constant(a[i]), ad.constant(b[j])).item()
            assert mat[i, j] == pytest.approx(want, abs=1e-15)


def test_l1_distance_known_value():
    assert ad.l1_distance(ad.constant([0.0, 0.0]), ad.constant([3.0, 4.0])).item() == 7.0


def test_l1_normalize_rows_uniform_fallback():
    q = ad.constant([[2.0, 2.0], [0.0, 0.0]])
    out = ad.l1_normalize_rows(q).data
    assert out.tolist() == [[0.5, 0.5], [0.5, 0.5]]


def test_concat_and_stack_round_trip():
    a, b = ad.constant([[1.0, 2.0]]), ad.constant([[3.0, 4.0]])
    assert ad.concat(a, b, axis=1).data.tolist() == [[1.0, 2.0, 3.0, 4.0]]
    assert ad.stack([ad.constant([1.0]), ad.constant([2.0])]).data.tolist() == [[1.0], [2.0]]


def test_neg_binary_entropy_bounds_and_saturation():
    p = ad.constant([0.0, 0.5, 1.0])
    out = ad.neg_binary_entropy(p).data
    assert out[0] == 0.0 and out[2] == 0.0
    assert out[1] == pytest.approx(-math.log(2.0), abs=1e-15)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=12))
@settings(max_examples=60, deadline=None)
def test_softmax_rows_are_distributions(xs):
    out = ad.softmax(ad.constant(xs), axis=0).data
    assert np.all(out >= 0.0)
    assert abs(out.sum() - 1.0) <= 1e-12


@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=20),
    st.integers(min_value=1, max_value=20),
)
@settings(max_examples=60, deadline=None)
def test_topk_mean_dominates_full_mean(xs, k):
    if k > len(xs):
        k = len(xs)
    got = ad.topk_mean(ad.constant(xs), k).item()
    assert got >= float(np.mean(xs)) - 1e-9


# ---------------------------------------------------------------------------
# backward engine


def test_backward_requires_scalar():
    v = ad.parameter([1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        ad.relu(v).backward()


def test_backward_visits_shared_node_once():
    calls = {"n": 0}
    x = ad.parameter([1.0, 2.0])
    y = ad.tanh(x)
    original = y._backward_rule

    def counting(g):
        calls["n"] += 1
        return original(g)

    y._backward_rule = counting
    # y feeds two consumers; its rule must still fire exactly once
    out = ad.reduce_sum(ad.add(y, y))
    out.backward()
    assert calls["n"] == 1
    assert np.allclose(x.grad, 2.0 * (1.0 - np.tanh(x.data) ** 2))


def test_gradient_accumulation_is_linear():
    base = rng(3).standard_normal(6)

    def grad_of(build):
        x = ad.parameter(base)
        build(x).backward()
        return x.grad.copy()

    g_f = grad_of(lambda x: ad.reduce_sum(ad.tanh(x)))
    g_g = grad_of(lambda x: ad.dot(x, x))
    g_sum = grad_of(lambda x: ad.add(ad.reduce_sum(ad.tanh(x)), ad.dot(x, x)))
    assert np.allclose(g_sum, g_f + g_g, atol=1e-15)


def test_graph_is_deterministic_bitwise():
    def run():
        x = ad.parameter(rng(11).standard_normal((4, 3)))
        w = ad.parameter(rng(12).standard_normal((3, 2)))
        out = ad.reduce_sum(ad.softmax(ad.matmul(ad.tanh(x), w), axis=1))
        out.backward()
        return out.data.copy(), x.grad.copy(), w.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# finite-difference oracle


def test_gradcheck_sum_of_squares_tight():
    report = ad.gradcheck(
        lambda t: ad.dot(t["x"], t["x"]),
        {"x": rng(0).uniform(-1.0, 1.0, size=5)},
        step=1e-6,
        tol=1e-8,
    )
    assert report.passed, report.errors


def test_gradcheck_flags_corrupted_backward_rule():
    def broken(t):
        x = t["x"]
        out = ad.tanh(x)
        good = out._backward_rule
        out._backward_rule = lambda g: tuple(2.0 * p for p in good(g))
        return ad.reduce_sum(out)

    report = ad.gradcheck(broken, {"x": rng(1).uniform(0.2, 1.0, size=4)})
    assert not report.passed
    assert report.failures() == ["x"]


def _away_from_kinks(values, margin=1e-3):
    values = np.asarray(values)
    values[np.abs(values) < margin] += margin
    return values


OP_CASES = {
    "add": lambda t: ad.reduce_sum(ad.add(t["a"], t["b"])),
    "sub": lambda t: ad.reduce_sum(ad.sub(t["a"], t["b"])),
    "mul": lambda t: ad.reduce_sum(ad.mul(t["a"], t["b"])),
    "matmul": lambda t: ad.reduce_sum(ad.matmul(t["m"], t["n"])),
    "matmul_exact": lambda t: ad.reduce_sum(ad.matmul_exact(t["m"], t["n"])),
    "matvec": lambda t: ad.reduce_sum(ad.matvec(t["m"], t["v3"])),
    "vecmat": lambda t: ad.reduce_sum(ad.vecmat(t["v4"], t["m"])),
    "dot": lambda t: ad.dot(t["a"], t["b"]),
    "transpose": lambda t: ad.reduce_sum(ad.tanh(ad.transpose(t["m"]))),
    "reshape": lambda t: ad.reduce_sum(ad.tanh(ad.reshape(t["m"], (3, 4)))),
    "concat": lambda t: ad.reduce_sum(ad.tanh(ad.concat(t["m"], t["m2"], axis=1))),
    "stack": lambda t: ad.reduce_sum(ad.tanh(ad.stack([t["a"], t["b"]]))),
    "gather": lambda t: ad.reduce_sum(ad.gather(t["v4"], [2, 0, 2])),
    "reduce_mean": lambda t: ad.reduce_mean(ad.mul(t["a"], t["a"])),
    "sum_exact": lambda t: ad.reduce_sum(ad.sum_exact(ad.tanh(t["m"]), axis=0)),
    "tanh": lambda t: ad.reduce_sum(ad.tanh(t["a"])),
    "relu": lambda t: ad.reduce_sum(ad.relu(t["a"])),
    "leaky_relu": lambda t: ad.reduce_sum(ad.leaky_relu(t["a"], 0.2)),
    "elu": lambda t: ad.reduce_sum(ad.elu(t["a"])),
    "sigmoid": lambda t: ad.reduce_sum(ad.sigmoid(t["a"])),
    "log": lambda t: ad.reduce_sum(ad.log(t["pos"])),
    "absolute": lambda t: ad.reduce_sum(ad.absolute(t["a"])),
    "neg_binary_entropy": lambda t: ad.reduce_sum(ad.neg_binary_entropy(t["prob"])),
    "softmax": lambda t: ad.reduce_sum(ad.mul(t["m"], ad.softmax(t["m"], axis=1))),
    "l1_normalize_rows": lambda t: ad.reduce_sum(
        ad.mul(t["m"], ad.l1_normalize_rows(ad.relu(t["moff"])))
    ),
    "cosine_sim": lambda t: ad.cosine_sim(t["a"], t["b"]),
    "cosine_rows": lambda t: ad.reduce_sum(ad.cosine_rows(t["m"], t["m2"])),
    "topk_mean": lambda t: ad.topk_mean(t["v4"], 2),
    "topk_mean_rows": lambda t: ad.reduce_sum(ad.topk_mean_rows(t["m"], 2)),
    "add_outer": lambda t: ad.reduce_sum(ad.tanh(ad.add_outer(t["a"], t["b"]))),
    "sub_outer": lambda t: ad.reduce_sum(ad.tanh(ad.sub_outer(t["a"], t["b"]))),
    "l1_distance": lambda t: ad.l1_distance(t["a"], t["b"]),
    "linear_vec": lambda t: ad.reduce_sum(ad.linear(t["v3"], t["w32"], t["bias"])),
    "linear_mat": lambda t: ad.reduce_sum(ad.linear(t["m43"], t["w32"], t["bias"])),
    "softmax_axis0": lambda t: ad.reduce_sum(ad.mul(t["m"], ad.softmax(t["m"], axis=0))),
}


def op_inputs(seed):
    r = rng(seed)
    # sampled away from kinks so relu/abs/topk stay on one branch under FD
    return {
        "a": _away_from_kinks(r.uniform(-1, 1, 5)),
        "b": _away_from_kinks(r.uniform(-1, 1, 5)),
        "m": r.uniform(-1, 1, (4, 3)) + np.linspace(0, 0.37, 12).reshape(4, 3),
        "m2": r.uniform(-1, 1, (4, 3)),
        "m43": r.uniform(-1, 1, (4, 3)),
        "moff": r.uniform(0.1, 1.0, (4, 3)),
        "n": r.uniform(-1, 1, (3, 2)),
        "v3": r.uniform(-1, 1, 3),
        "v4": _away_from_kinks(r.uniform(-1, 1, 4)),
        "w32": r.uniform(-1, 1, (3, 2)),
        "bias": r.uniform(-1, 1, 2),
        "pos": r.uniform(0.1, 2.0, 5),
        "prob": r.uniform(0.05, 0.95, 5),
    }


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradcheck(name):
    report = ad.gradcheck(OP_CASES[name], op_inputs(42), step=1e-6, tol=1e-6)
    assert report.passed, (name, report.errors)


def test_sum_exact_is_order_independent():
    vals = rng(5).standard_normal(64)
    perm = rng(6).permutation(64)
    a = ad.sum_exact(ad.constant(vals.reshape(1, -1)), axis=1).data
    b = ad.sum_exact(ad.constant(vals[perm].reshape(1, -1)), axis=1).data
    assert a[0] == b[0]
