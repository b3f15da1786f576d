"""Finite-difference checks and mechanics tests for the reverse-mode engine."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sit.autodiff import Array, Tape, engine as ad
from sit.errors import DataError, ShapeError

H = 1e-5
REL_TOL = 1e-4


def weighted_sum(x, w):
    """Scalar projection sum(x * w) built from engine ops."""
    flat = ad.reshape(ad.multiply(x, Array(w)), (1, w.size))
    return ad.matmul(flat, Array(np.ones((w.size, 1))))


def gradcheck(fn, *inits, probes=20, seed=0):
    """Compare analytic gradients to central differences at random entries."""
    params = [Array(np.array(p, dtype=np.float64), requires_grad=True) for p in inits]
    with Tape() as tape:
        out = fn(*params)
        tape.backward(out)
    rng = np.random.default_rng(seed)
    for k, arr in enumerate(params):
        assert arr.grad is not None, f"no gradient reached input {k}"
        flat = arr.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        for j in picks:
            orig = flat[j]
            flat[j] = orig + H
            up = float(fn(*params).data.sum())
            flat[j] = orig - H
            down = float(fn(*params).data.sum())
            flat[j] = orig
            fd = (up - down) / (2.0 * H)
            an = float(arr.grad.reshape(-1)[j])
            denom = max(abs(fd), abs(an), 1.0)
            assert abs(fd - an) <= REL_TOL * denom, (
                f"input {k} entry {j}: finite-diff {fd} vs analytic {an}"
            )


@pytest.fixture
def g(rng):
    return rng


# --- per-primitive gradient checks ----------------------------------------


def test_grad_matmul(g):
    w = g.standard_normal((3, 5))
    gradcheck(
        lambda a, b: weighted_sum(ad.matmul(a, b), w),
        g.standard_normal((3, 4)),
        g.standard_normal((4, 5)),
    )


def test_grad_matmul_broadcast(g):
    # batched a against a shared 2-D b exercises _sum_to on the b side
    w = g.standard_normal((2, 3, 5))
    gradcheck(
        lambda a, b: weighted_sum(ad.matmul(a, b), w),
        g.standard_normal((2, 3, 4)),
        g.standard_normal((4, 5)),
    )


def test_grad_add_broadcast(g):
    w = g.standard_normal((6, 4))
    gradcheck(
        lambda a, b: weighted_sum(ad.add(a, b), w),
        g.standard_normal((6, 4)),
        g.standard_normal((4,)),
    )


def test_grad_scale_scalar_and_array(g):
    w = g.standard_normal((5, 5))
    gradcheck(lambda a: weighted_sum(ad.scale(a, -2.5), w), g.standard_normal((5, 5)))
    factor = g.standard_normal((5,))
    gradcheck(lambda a: weighted_sum(ad.scale(a, factor), w), g.standard_normal((5, 5)))


def test_grad_multiply(g):
    w = g.standard_normal((4, 6))
    gradcheck(
        lambda a, b: weighted_sum(ad.multiply(a, b), w),
        g.standard_normal((4, 6)),
        g.standard_normal((4, 6)),
    )


def test_grad_transpose(g):
    w = g.standard_normal((5, 4))
    gradcheck(lambda a: weighted_sum(ad.transpose(a), w), g.standard_normal((4, 5)))


def test_grad_reshape(g):
    w = g.standard_normal((2, 12))
    gradcheck(lambda a: weighted_sum(ad.reshape(a, (2, 12)), w), g.standard_normal((4, 6)))


def test_grad_concat(g):
    w = g.standard_normal((3, 9))
    gradcheck(
        lambda a, b: weighted_sum(ad.concat([a, b], axis=-1), w),
        g.standard_normal((3, 4)),
        g.standard_normal((3, 5)),
    )


def test_grad_slice(g):
    w = g.standard_normal((6, 3))
    gradcheck(
        lambda a: weighted_sum(ad.slice(a, 2, 5, axis=1), w),
        g.standard_normal((6, 8)),
    )


def test_grad_gather_rows_with_repeats(g):
    idx = np.array([0, 2, 2, 4, 1])  # repeated row 2 must accumulate
    w = g.standard_normal((5, 3))
    gradcheck(lambda a: weighted_sum(ad.gather_rows(a, idx), w), g.standard_normal((6, 3)))


def test_grad_gather_rows_batched(g):
    # per-batch row permutation-with-repeats; idx shape matches a.shape[:-1]
    idx = np.array([[0, 2, 1, 2], [3, 3, 0, 1]])
    w = g.standard_normal((2, 4, 4))
    gradcheck(lambda a: weighted_sum(ad.gather_rows(a, idx), w), g.standard_normal((2, 4, 4)))


def test_grad_softmax(g):
    w = g.standard_normal((5, 7))
    gradcheck(lambda a: weighted_sum(ad.softmax_rows(a), w), g.standard_normal((5, 7)))


def test_grad_layernorm_all_inputs(g):
    w = g.standard_normal((6, 8))
    gradcheck(
        lambda a, gamma, beta: weighted_sum(ad.layernorm_rows(a, gamma, beta), w),
        g.standard_normal((6, 8)),
        g.standard_normal((8,)),
        g.standard_normal((8,)),
    )


def test_grad_gelu(g):
    w = g.standard_normal((5, 6))
    gradcheck(lambda a: weighted_sum(ad.gelu(a), w), g.standard_normal((5, 6)) * 2.0)


def test_grad_dropout_fixed_mask(g):
    # a fresh identically-seeded rng per call keeps the mask constant, so
    # finite differences see the same linear map as backward
    w = g.standard_normal((6, 6))
    gradcheck(
        lambda a: weighted_sum(ad.dropout(a, 0.4, True, np.random.default_rng(99)), w),
        g.standard_normal((6, 6)),
    )


def test_grad_mse_plain(g):
    target = g.standard_normal((5, 4))
    gradcheck(lambda a: ad.mse(a, target), g.standard_normal((5, 4)))


def test_grad_mse_masked(g):
    target = g.standard_normal((6, 4))
    mask = np.array([True, False, True, True, False, True])
    gradcheck(lambda a: ad.mse(a, target, mask=mask), g.standard_normal((6, 4)))


# --- values -----------------------------------------------------------------


def test_softmax_of_zeros_is_uniform():
    out = ad.softmax_rows(Array(np.zeros((3, 8))))
    npt.assert_allclose(out.data, 1.0 / 8.0, atol=1e-15)


def test_softmax_shift_invariant(g):
    x = g.standard_normal((4, 6))
    a = ad.softmax_rows(Array(x)).data
    b = ad.softmax_rows(Array(x + 1000.0)).data
    npt.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=25)
@given(
    rows=st.integers(min_value=1, max_value=6),
    cols=st.integers(min_value=1, max_value=9),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 10.0
    out = ad.softmax_rows(Array(x)).data
    npt.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    assert (out >= 0).all()


def test_gelu_special_values():
    out = ad.gelu(Array(np.array([[0.0, 10.0, -10.0]]))).data
    assert out[0, 0] == 0.0
    npt.assert_allclose(out[0, 1], 10.0, atol=1e-12)
    npt.assert_allclose(out[0, 2], 0.0, atol=1e-12)


def test_layernorm_normalizes(g):
    x = g.standard_normal((7, 16)) * 3.0 + 5.0
    out = ad.layernorm_rows(Array(x), Array(np.ones(16)), Array(np.zeros(16))).data
    npt.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    npt.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)


def test_layernorm_shape_validation():
    with pytest.raises(ShapeError):
        ad.layernorm_rows(Array(np.zeros((2, 4))), Array(np.ones(3)), Array(np.zeros(4)))


def test_mse_value_oracle(g):
    a, b = g.standard_normal((4, 5)), g.standard_normal((4, 5))
    assert float(ad.mse(Array(a), b).data) == pytest.approx(np.mean((a - b) ** 2), rel=1e-12)
    mask = np.array([True, False, False, True])
    expect = np.mean((a[mask] - b[mask]) ** 2)
    assert float(ad.mse(Array(a), b, mask=mask).data) == pytest.approx(expect, rel=1e-12)


# --- mechanics ---------------------------------------------------------------


def test_fanout_accumulates():
    x = Array(np.array([[1.0, 2.0]]), requires_grad=True)
    with Tape() as tape:
        out = ad.mse(ad.add(ad.scale(x, 2.0), ad.scale(x, 3.0)), np.zeros((1, 2)))
        tape.backward(out)
    # d/dx mean((5x)^2) = 25x
    npt.assert_allclose(x.grad, 25.0 * x.data, atol=1e-12)


def test_identity_fanout_gradients_do_not_alias():
    # add passes the output grad through unchanged on both branches; the
    # second accumulation must not corrupt the first (copy-on-first-store)
    x = Array(np.ones((1, 3)), requires_grad=True)
    with Tape() as tape:
        y = ad.add(ad.add(x, x), x)
        root = ad.matmul(y, Array(np.ones((3, 1))))
        tape.backward(root)
    npt.assert_array_equal(x.grad, np.full((1, 3), 3.0))


def test_diamond_graph(g):
    w = g.standard_normal((3, 3))
    gradcheck(
        lambda a: weighted_sum(ad.multiply(ad.add(a, a), ad.scale(a, 0.5)), w),
        g.standard_normal((3, 3)),
    )


def test_backward_requires_scalar():
    x = Array(np.zeros((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.scale(x, 2.0)
        with pytest.raises(ShapeError, match="scalar"):
            tape.backward(y)


def test_ops_without_tape_record_nothing():
    tape = Tape()
    x = Array(np.ones((2, 2)), requires_grad=True)
    ad.scale(x, 3.0)  # no active tape
    assert len(tape) == 0
    with tape:
        ad.scale(x, 3.0)
    assert len(tape) == 1


def test_inner_tape_captures_ops():
    x = Array(np.ones((1, 2)), requires_grad=True)
    with Tape() as outer:
        with Tape() as inner:
            ad.scale(x, 2.0)
        assert len(inner) == 1
        assert len(outer) == 0


def test_ops_on_constant_inputs_record_nothing():
    tape = Tape()
    with tape:
        out = ad.scale(Array(np.ones((2, 2))), 2.0)
    assert len(tape) == 0
    assert not out.requires_grad


def test_grad_none_inputs_skipped():
    x = Array(np.ones((1, 4)), requires_grad=True)
    const = Array(np.ones((1, 4)))
    with Tape() as tape:
        out = ad.mse(ad.multiply(x, const), np.zeros((1, 4)))
        tape.backward(out)
    assert x.grad is not None
    assert const.grad is None


def test_dropout_passthrough_modes():
    x = Array(np.ones((3, 3)))
    assert ad.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ad.dropout(x, 0.5, False) is x


def test_dropout_scales_survivors(g):
    x = Array(np.ones((200, 200)))
    out = ad.dropout(x, 0.25, True, np.random.default_rng(3)).data
    values = np.unique(out)
    npt.assert_allclose(values, [0.0, 1.0 / 0.75], atol=1e-12)
    assert abs((out == 0).mean() - 0.25) < 0.01


def test_dropout_deterministic_per_seed():
    x = Array(np.ones((10, 10)))
    a = ad.dropout(x, 0.5, True, np.random.default_rng(42)).data
    b = ad.dropout(x, 0.5, True, np.random.default_rng(42)).data
    npt.assert_array_equal(a, b)


def test_dropout_validation():
    x = Array(np.ones((2, 2)))
    with pytest.raises(DataError):
        ad.dropout(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(DataError):
        ad.dropout(x, -0.1, True, np.random.default_rng(0))
    with pytest.raises(DataError, match="rng"):
        ad.dropout(x, 0.5, True)


def test_mse_validation():
    with pytest.raises(ShapeError):
        ad.mse(Array(np.zeros((2, 3))), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        ad.mse(Array(np.zeros((2, 3))), np.zeros((2, 3)), mask=np.array([True]))
    with pytest.raises(DataError, match="no rows"):
        ad.mse(Array(np.zeros((2, 3))), np.zeros((2, 3)), mask=np.array([False, False]))


def test_shape_validation_misc():
    with pytest.raises(ShapeError):
        ad.matmul(Array(np.zeros((2, 3))), Array(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ad.transpose(Array(np.zeros(4)))
    with pytest.raises(ShapeError):
        ad.concat([])
    with pytest.raises(ShapeError):
        ad.scale(Array(np.zeros(2)), Array(np.ones(2)))
    with pytest.raises(ShapeError):
        ad.gather_rows(Array(np.zeros((2, 3))), np.zeros((9, 9, 9), dtype=int))


@settings(max_examples=15)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_linear_chain_gradient_property(seed):
    # d/dx mean((c*x)^2) == 2*c^2*x/size for any random c, x
    r = np.random.default_rng(seed)
    c = float(r.uniform(-2.0, 2.0))
    xval = r.standard_normal((3, 4))
    x = Array(xval.copy(), requires_grad=True)
    with Tape() as tape:
        out = ad.mse(ad.scale(x, c), np.zeros((3, 4)))
        tape.backward(out)
    npt.assert_allclose(x.grad, 2.0 * c * c * xval / xval.size, atol=1e-12)
