import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cganrise import tfs


def _random_coeffs(rng, n_channels, n_harmonics, omega):
    return tfs.TfsCoefficients(rng.normal(size=(n_channels, 2 * n_harmonics + 1)), omega,
                               n_harmonics)


@pytest.mark.parametrize("omega,n,t,expected", [
    (2 * np.pi, 1, 0.0, [0.5, 1, 0]),
    (2 * np.pi, 1, 0.25, [0.5, 0, 1]),
    (2 * np.pi, 2, 0.5, [0.5, -1, 1, 0, 0]),
])
def test_kernel_examples(omega, n, t, expected):
    np.testing.assert_allclose(tfs.kernel(omega, n, t), expected, atol=1e-12)


def test_kernel_rejects_bad_arguments():
    with pytest.raises(ValueError):
        tfs.kernel(0.0, 2, 0.1)
    with pytest.raises(ValueError):
        tfs.kernel(-1.0, 2, 0.1)
    with pytest.raises(ValueError):
        tfs.kernel(1.0, -1, 0.1)


def test_kernel_vectorized_over_time():
    t = np.linspace(0, 1, 7)
    k = tfs.kernel(3.0, 4, t)
    assert k.shape == (9, 7)
    np.testing.assert_allclose(k[:, 3], tfs.kernel(3.0, 4, t[3]))


@settings(max_examples=200, deadline=None)
@given(omega=st.floats(0.01, 100), n=st.integers(0, 12), t=st.floats(-1e3, 1e3))
def test_kernel_element_bounds(omega, n, t):
    k = tfs.kernel(omega, n, t)
    assert k.shape == (2 * n + 1,)
    assert k[0] == 0.5
    assert np.all(np.abs(k[1:]) <= 1.0)


def test_decode_examples():
    c = tfs.TfsCoefficients([[2 * 1.7, 0, 0, 0, 0]], 2.0, 2)
    for t in (0.0, 0.3, 11.0):
        assert tfs.decode(c, t)[0] == pytest.approx(1.7)
    assert tfs.decode(tfs.TfsCoefficients([[0, 1, 0]], 2 * np.pi, 1), 0.0)[0] == pytest.approx(1.0)
    assert tfs.decode(tfs.TfsCoefficients([[0, 0, 1]], 2 * np.pi, 1), 0.25)[0] == pytest.approx(1.0)


def test_encode_examples():
    omega = 3.0
    t = tfs.sample_times(omega)
    c = tfs.encode(np.full_like(t, 0.7), omega, 4)
    np.testing.assert_allclose(c.coeffs[0], [1.4] + [0] * 8, atol=1e-12)
    c = tfs.encode(np.cos(omega * t), omega, 4)
    np.testing.assert_allclose(c.coeffs[0], [0, 1] + [0] * 7, atol=1e-12)


def test_encode_rejects_wrong_window_and_few_samples():
    omega = 2 * np.pi
    with pytest.raises(ValueError, match="period"):
        tfs.encode(np.zeros(100), omega, 2, dt=0.011)
    with pytest.raises(ValueError, match="samples"):
        tfs.encode(np.zeros(9), omega, 3)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 8), n_ch=st.integers(1, 3),
       omega=st.floats(0.1, 50), n_samples=st.integers(64, 300), t0=st.floats(-10, 10))
def test_round_trip_recovers_coefficients(seed, n, n_ch, omega, n_samples, t0):
    rng = np.random.default_rng(seed)
    c = _random_coeffs(rng, n_ch, n, omega)
    ts = tfs.sample_times(omega, n_samples, t0)
    back = tfs.encode(tfs.decode(c, ts).T, omega, n, t0=t0)
    assert np.max(np.abs(back.coeffs - c.coeffs)) < 1e-9


def test_derivative_matches_finite_difference():
    rng = np.random.default_rng(3)
    c = _random_coeffs(rng, 2, 3, 2.5)
    t, h = 0.37, 1e-5
    for order in (1, 2):
        fd = (tfs.decode(c, t + h, order - 1) - tfs.decode(c, t - h, order - 1)) / (2 * h)
        np.testing.assert_allclose(tfs.decode(c, t, order), fd, rtol=1e-6, atol=1e-6)


def test_decode_is_periodic():
    c = _random_coeffs(np.random.default_rng(1), 2, 5, 1.3)
    np.testing.assert_allclose(tfs.decode(c, 0.4), tfs.decode(c, 0.4 + c.period), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 8))
def test_quadratic_form_identity(seed, n):
    """(1/T) int |u - u_hat|^2 dt equals trace(dC W dC^T) with the exact weight."""
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.5, 10)
    a, b = _random_coeffs(rng, 2, n, omega), _random_coeffs(rng, 2, n, omega)
    # exact time average of a trigonometric polynomial of degree 2n via uniform sampling
    ts = tfs.sample_times(omega, 4 * n + 8)
    diff = tfs.decode(a, ts) - tfs.decode(b, ts)
    time_avg = np.mean(np.sum(diff ** 2, axis=0))
    dc = a.coeffs - b.coeffs
    quad = np.trace(dc @ tfs.quadratic_weight(n) @ dc.T)
    assert abs(time_avg - quad) < 1e-9 * max(1.0, time_avg)
    np.testing.assert_allclose(tfs.mean_square(a), np.mean(tfs.decode(a, ts) ** 2, axis=1))


def test_coefficients_validation_and_json():
    with pytest.raises(ValueError):
        tfs.TfsCoefficients(np.zeros((2, 4)), 1.0, 2)
    with pytest.raises(ValueError):
        tfs.TfsCoefficients(np.zeros((2, 5)), 0.0, 2)
    c = _random_coeffs(np.random.default_rng(0), 2, 2, 1.5)
    back = tfs.TfsCoefficients.from_json(c.to_json())
    np.testing.assert_array_equal(back.coeffs, c.coeffs)
    assert (back.omega, back.n_harmonics) == (c.omega, c.n_harmonics)
