import numpy as np
import pytest

import smc2grad.tangent as tg
from smc2grad.tangent import NumericDomainError, TangentValue, lift_const, lift_param


def central_difference(f, x, d, h):
    xp, xm = x.copy(), x.copy()
    xp[d] += h
    xm[d] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def test_lift_param_seeds_identity():
    v = lift_param(np.array([0.75, 1.0, 1.0]), 0)
    assert v.value == 0.75
    assert np.array_equal(v.tangent, [1.0, 0.0, 0.0])

    v = lift_param(np.array([0.6, 0.3]), 1)
    assert v.value == 0.3
    assert np.array_equal(v.tangent, [0.0, 1.0])


def test_lift_param_out_of_range():
    with pytest.raises(IndexError):
        lift_param(np.array([1.0, 2.0]), 2)
    with pytest.raises(IndexError):
        lift_param(np.array([1.0, 2.0]), -1)


def test_lift_const_zero_tangent():
    c = lift_const(5.0, 3)
    assert c.value == 5.0
    assert np.array_equal(c.tangent, np.zeros(3))


def test_product_rule():
    a = TangentValue(2.0, [1.0, 0.0])
    b = TangentValue(3.0, [0.0, 1.0])
    out = a * b
    assert out.value == 6.0
    assert np.array_equal(out.tangent, [3.0, 2.0])


def test_log_at_one():
    out = tg.log(TangentValue(1.0, [5.0, 0.0]))
    assert out.value == 0.0
    assert np.array_equal(out.tangent, [5.0, 0.0])


def test_sqrt_matches_central_difference():
    # Independent oracle: central difference of sqrt at 4 with h = 1e-6.
    h = 1e-6
    fd = (np.sqrt(4.0 + h) - np.sqrt(4.0 - h)) / (2.0 * h)
    out = tg.sqrt(TangentValue(4.0, [1.0, 0.0]))
    assert out.value == 2.0
    assert out.tangent[0] == pytest.approx(fd, rel=1e-9)
    assert out.tangent[0] == pytest.approx(0.25, rel=1e-12)
    assert out.tangent[1] == 0.0


def test_quotient_rule():
    a = TangentValue(1.0, [1.0, 0.0])
    b = TangentValue(4.0, [0.0, 1.0])
    out = a / b
    assert out.value == 0.25
    assert np.allclose(out.tangent, [0.25, -1.0 / 16.0])


def test_domain_errors():
    zero = TangentValue(0.0, [0.0])
    one = TangentValue(1.0, [1.0])
    with pytest.raises(NumericDomainError):
        one / zero
    with pytest.raises(NumericDomainError):
        one / 0.0
    with pytest.raises(NumericDomainError):
        tg.log(zero)
    with pytest.raises(NumericDomainError):
        tg.log(TangentValue(-1.0, [0.0]))
    with pytest.raises(NumericDomainError):
        tg.sqrt(zero)
    with pytest.raises(NumericDomainError):
        tg.gaussian_logpdf(0.0, one, TangentValue(0.0, [0.0]))


def test_gaussian_logpdf_standard_normal_at_mode():
    out = tg.gaussian_logpdf(0.0, lift_const(0.0, 2), lift_const(1.0, 2))
    assert out.value == pytest.approx(-0.5 * np.log(2.0 * np.pi), rel=1e-15)
    assert np.array_equal(out.tangent, [0.0, 0.0])


def test_gaussian_logpdf_mean_partial():
    # d/dh log N(y; h, R) = (y - h)/R = 1 at y=1, h=0, R=1.
    out = tg.gaussian_logpdf(1.0, TangentValue(0.0, [1.0, 0.0]), lift_const(1.0, 2))
    assert out.tangent[0] == pytest.approx(1.0, rel=1e-12)
    assert out.tangent[1] == 0.0

    def f(x):
        return tg.gaussian_logpdf(1.0, TangentValue(x[0], [1.0, 0.0]), lift_const(1.0, 2)).value

    fd = central_difference(f, np.array([0.0]), 0, 1e-6)
    assert out.tangent[0] == pytest.approx(fd, rel=1e-8)


def test_gaussian_logpdf_variance_partial():
    # d/dR log N(y; h, R) = -1/(2R) + (y-h)^2/(2R^2) = 0 at y=1, h=0, R=1.
    out = tg.gaussian_logpdf(1.0, lift_const(0.0, 2), TangentValue(1.0, [0.0, 1.0]))
    assert out.tangent[0] == 0.0
    assert out.tangent[1] == pytest.approx(0.0, abs=1e-15)

    def f(x):
        return tg.gaussian_logpdf(1.0, lift_const(0.0, 2), TangentValue(x[0], [0.0, 1.0])).value

    fd = central_difference(f, np.array([1.0]), 0, 1e-6)
    assert out.tangent[1] == pytest.approx(fd, abs=1e-8)


def _composite(theta):
    """A composition exercising every operation; defined on (0.1, 2)^3."""
    a, b, c = tg.lift_params(theta)
    out = tg.exp(a * 0.3) * tg.log(b + 3.0) / tg.sqrt(c + 2.0)
    out = out + a * b - (a - b) / (c + 1.5)
    out = out + tg.gaussian_logpdf(0.7, a * b, tg.exp(c))
    return out - 2.0 / (a + 3.0)


def test_composites_match_finite_differences():
    rng = np.random.default_rng(123)
    h = 1e-5
    for _ in range(100):
        theta = 0.1 + 1.9 * rng.random(3)
        out = _composite(theta)
        for d in range(3):
            fd = central_difference(lambda x: _composite(x).value, theta, d, h)
            assert out.tangent[d] == pytest.approx(fd, rel=1e-4)


def test_linearity_is_exact():
    rng = np.random.default_rng(7)
    for _ in range(20):
        theta = 0.1 + rng.random(3)
        a, b = rng.standard_normal(2)
        f = _composite(theta)
        g = tg.log(tg.lift_params(theta)[0] + 2.0) * 1.7
        combined = a * f + b * g
        assert np.array_equal(combined.tangent, a * f.tangent + b * g.tangent)


def test_constants_propagate_exact_zeros():
    c1 = lift_const(2.5, 3)
    c2 = lift_const(np.array([1.0, 4.0]), 3)
    out = tg.sqrt(c2 * c1 + 1.0) / tg.exp(c1 - 2.0) - tg.log(c2)
    assert np.array_equal(out.tangent, np.zeros((2, 3)))


def test_broadcast_const_shift():
    scalar = TangentValue(1.5, [1.0, 2.0])
    shifted = scalar + np.array([0.0, 1.0, 2.0])
    assert shifted.value.shape == (3,)
    assert shifted.tangent.shape == (3, 2)
    assert np.array_equal(shifted.tangent, np.tile([1.0, 2.0], (3, 1)))
    flipped = np.array([1.0, 2.0]) - scalar
    assert np.array_equal(flipped.value, [-0.5, 0.5])
    assert np.array_equal(flipped.tangent, np.tile([-1.0, -2.0], (2, 1)))


def test_clip_nonnegative():
    x = TangentValue(np.array([-1.0, 0.0, 2.0]), np.array([[1.0], [1.0], [1.0]]))
    out = tg.clip_nonnegative(x)
    assert np.array_equal(out.value, [0.0, 0.0, 2.0])
    assert np.array_equal(out.tangent, [[0.0], [1.0], [1.0]])


def test_stack_and_getitem():
    a = TangentValue(np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    b = TangentValue(np.array([3.0, 4.0]), np.array([[2.0, 0.0], [0.0, 2.0]]))
    stacked = tg.stack([a, b], axis=1)
    assert stacked.value.shape == (2, 2)
    assert stacked.tangent.shape == (2, 2, 2)
    col = stacked[:, 1]
    assert np.array_equal(col.value, b.value)
    assert np.array_equal(col.tangent, b.tangent)


def test_logsumexp_value_and_tangent():
    values = np.array([-1.0, 0.5, 2.0])
    tangents = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    out = tg.logsumexp(TangentValue(values, tangents))
    expected = np.log(np.sum(np.exp(values)))
    assert out.value == pytest.approx(expected, rel=1e-14)
    w = np.exp(values - expected)
    assert np.allclose(out.tangent, w @ tangents, rtol=1e-13)


def test_logsumexp_handles_minus_inf_entries():
    values = np.array([-np.inf, 0.0])
    tangents = np.array([[5.0], [2.0]])
    out = tg.logsumexp(TangentValue(values, tangents))
    assert out.value == pytest.approx(0.0, abs=1e-15)
    assert out.tangent[0] == pytest.approx(2.0, rel=1e-14)

    all_dead = tg.logsumexp(TangentValue(np.array([-np.inf, -np.inf]), np.zeros((2, 1))))
    assert all_dead.value == -np.inf
    assert np.array_equal(all_dead.tangent, [0.0])
