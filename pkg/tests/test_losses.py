import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsmil import autodiff as ad
from wsmil.errors import ContractError, ParameterError
from wsmil.gradcheck import numerical_gradient, relative_error
from wsmil.losses import (
    LOSS_KINDS,
    bag_loss,
    bag_losses,
    batch_loss,
    fsl_loss,
    max_bce_loss,
    max_mean_loss,
    max_min_loss,
    max_se_loss,
    mmm_loss,
)

from oracles import loss as oracle_loss

LN2 = math.log(2.0)


@pytest.mark.parametrize("fn,o,Y,expected,tol", [
    (fsl_loss, [0, 0, 0], 0, 0.0, 1e-6),
    (fsl_loss, [0.5, 0.5], 1, LN2, 1e-9),
    (fsl_loss, [1, 0], 1, -math.log(1e-7) / 2, 1e-6),
    (max_se_loss, [0.2, 0.9, 0.1], 1, 0.005, 1e-12),
    (max_se_loss, [0, 0, 0], 0, 0.0, 0.0),
    (max_se_loss, [1, 0, 0], 1, 0.0, 0.0),
    (max_bce_loss, [0, 0], 0, 0.0, 1e-6),
    (max_bce_loss, [0.5, 0.2], 1, LN2, 1e-12),
    (max_bce_loss, [1], 1, 0.0, 1e-6),
    (mmm_loss, [0, 0, 0, 0], 0, 0.0, 1e-6),
    (mmm_loss, [1, 0.5, 0], 1, LN2 / 3, 1e-6),
    (mmm_loss, [0.5, 0.5], 1, LN2, 1e-12),
    (max_mean_loss, [1, 0], 1, LN2 / 2, 1e-6),
    (max_min_loss, [1, 0], 1, 0.0, 1e-6),
    (max_min_loss, [0.5, 0.5], 0, LN2, 1e-12),
])
def test_examples(fn, o, Y, expected, tol):
    assert fn(o, Y).value == pytest.approx(expected, abs=tol)


def test_mmm_terms_recorded():
    res = mmm_loss([1, 0.5, 0], 1)
    assert set(res.terms) == {"max", "mean", "min"}
    assert res.terms["mean"] == pytest.approx(LN2)
    assert res.value == pytest.approx(np.mean(list(res.terms.values())))


def test_empty_bag():
    for kind in LOSS_KINDS:
        with pytest.raises(ContractError):
            bag_loss(kind, [], 1)


def test_unknown_kind_and_bad_label():
    with pytest.raises(ParameterError):
        bag_loss("noisy_or", [0.5], 1)
    with pytest.raises(ContractError):
        bag_loss("mmm", [0.5], 0.5)


bags = st.tuples(
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30),
    st.sampled_from([0, 1]),
    st.sampled_from(LOSS_KINDS),
)


@given(bags)
@settings(max_examples=300, deadline=None)
def test_matches_oracle_and_nonnegative(bag):
    o, Y, kind = bag
    value = bag_loss(kind, o, Y).value
    assert math.isfinite(value) and value >= 0
    assert value == pytest.approx(oracle_loss(kind, o, Y), abs=1e-9)


@given(bags, st.randoms(use_true_random=False))
@settings(max_examples=200, deadline=None)
def test_permutation_invariance(bag, rnd):
    o, Y, kind = bag
    shuffled = list(o)
    rnd.shuffle(shuffled)
    assert bag_loss(kind, shuffled, Y).value == pytest.approx(bag_loss(kind, o, Y).value, abs=1e-12)


@pytest.mark.parametrize("kind,o,Y", [
    ("fsl", [1, 1], 1), ("fsl", [0, 0], 0), ("max_se", [0.3, 1], 1), ("max_bce", [0, 0], 0),
    ("max_mean", [0, 0], 0), ("max_min", [1, 0], 1), ("mmm", [0, 0], 0),
])
def test_zero_when_perfect(kind, o, Y):
    # the mean term's soft target Y/2 has an entropy floor, so positive bags never reach 0 under it
    assert bag_loss(kind, o, Y).value <= 1e-6


def _grad(kind, o, Y):
    t = ad.Tensor(np.asarray(o, dtype=np.float64)[None, :], requires_grad=True)
    (g,) = ad.backward(batch_loss(kind, t, [Y]), [t])
    return g[0]


def _distinct_bag(rng, m):
    # well-separated values away from the clamp region so no ties or kinks
    return rng.permutation(np.linspace(0.05, 0.95, m) + rng.uniform(-0.01, 0.01, m))


def test_gradient_sparsity_contrast():
    rng = np.random.default_rng(0)
    for _ in range(100):
        o = _distinct_bag(rng, int(rng.integers(2, 50)))
        for kind in ("max_se", "max_bce"):
            assert np.count_nonzero(_grad(kind, o, 1)) == 1
        assert np.count_nonzero(_grad("mmm", o, 1)) >= 2


@given(st.lists(st.floats(0.0, 0.45), min_size=2, max_size=20), st.data())
@settings(max_examples=100, deadline=None)
def test_mean_term_monotone(o, data):
    # with Y=1 and mean < 0.5, raising any instance lowers the mean term
    o = np.asarray(o)
    j = data.draw(st.integers(0, len(o) - 1))
    bumped = o.copy()
    bumped[j] += 0.01
    before = bag_loss("mmm", o, 1).terms["mean"]
    after = bag_loss("mmm", bumped, 1).terms["mean"]
    assert after < before


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(20):
        B = int(rng.integers(1, 4))
        T = int(rng.integers(2, 12))
        o = np.stack([_distinct_bag(rng, T) for _ in range(B)])
        Y = rng.integers(0, 2, B)
        mask = np.ones((B, T), bool)
        for b in range(B):
            mask[b, int(rng.integers(1, T + 1)):] = False

        def f():
            return float(batch_loss(kind, o, Y, mask).data)

        t = ad.Tensor(o.copy(), requires_grad=True)
        (g,) = ad.backward(batch_loss(kind, t, Y, mask), [t])
        (n,) = numerical_gradient(f, [o])
        assert relative_error([g], [n]) <= 1e-6


def test_batch_loss_matches_per_bag_oracle():
    rng = np.random.default_rng(7)
    for kind in LOSS_KINDS:
        B, T = 6, 25
        o = rng.uniform(0, 1, (B, T))
        Y = rng.integers(0, 2, B)
        lengths = rng.integers(1, T + 1, B)
        mask = np.arange(T)[None, :] < lengths[:, None]
        expected = sum(oracle_loss(kind, o[b, :lengths[b]], Y[b]) for b in range(B)) / B
        assert float(batch_loss(kind, o, Y, mask).data) == pytest.approx(expected, abs=1e-12)


def test_batch_of_one_and_two():
    a = bag_loss("mmm", [0.2, 0.7], 1).value
    b = bag_loss("mmm", [0.1, 0.3], 0).value
    assert float(batch_loss("mmm", [[0.2, 0.7]], [1]).data) == pytest.approx(a, abs=1e-15)
    assert float(batch_loss("mmm", [[0.2, 0.7], [0.1, 0.3]], [1, 0]).data) == pytest.approx((a + b) / 2, abs=1e-15)
    per_bag = bag_losses("mmm", [[0.2, 0.7], [0.1, 0.3]], [1, 0]).data
    np.testing.assert_allclose(per_bag, [a, b], atol=1e-15)


def test_padding_never_becomes_the_minimum():
    o = np.array([[0.6, 0.8, 0.0, 0.0]])
    mask = np.array([[True, True, False, False]])
    assert float(batch_loss("mmm", o, [1], mask).data) == pytest.approx(oracle_loss("mmm", [0.6, 0.8], 1), abs=1e-12)
