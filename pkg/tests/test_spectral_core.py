import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg, special

from cylmeasure.errors import DomainError, InvalidArgumentError, PoleError, ResolutionError
from cylmeasure.spectral_core import (
    OperatorSpec,
    build_box_dirichlet,
    build_interval_dirichlet,
    build_oscillator_basis,
    build_torus,
    calibrate_trace_constant,
    dirichlet_green_volume_limit,
    momentum_trace,
    riesz_green,
    sphere_area,
)


def beta_trace(nu, alpha, m2, j):
    """Closed form of the radial integral through the Beta function."""
    q = nu / (2 * alpha)
    return sphere_area(nu) * m2 ** (q - j) / (2 * alpha) * special.beta(q, j - q)


def test_interval_dirichlet_unit_spectrum():
    model = build_interval_dirichlet(math.pi / 2, 3)
    np.testing.assert_allclose(model.eigenvalues, [1.0, 4.0, 9.0], rtol=1e-14)
    x = np.linspace(-1.5, 1.5, 7)
    expected = np.sqrt(2 / math.pi) * np.sin(np.outer([1, 2, 3], x + math.pi / 2))
    np.testing.assert_allclose(model.evaluate(x), expected, atol=1e-14)


def test_interval_dirichlet_scaling():
    model = build_interval_dirichlet(1.0, 1)
    assert model.eigenvalues[0] == pytest.approx((math.pi / 2) ** 2, rel=1e-15)


def test_interval_dirichlet_orthonormal():
    gram = build_interval_dirichlet(1.3, 5).gram(points=1000)
    np.testing.assert_allclose(gram, np.eye(5), atol=1e-8)


def test_interval_dirichlet_gram_matches_scipy_quad():
    model = build_interval_dirichlet(0.7, 3)

    def entry(i, j):
        return integrate.quad(lambda x: model.evaluate(np.array([x]))[i, 0] * model.evaluate(np.array([x]))[j, 0], -0.7, 0.7)[0]

    brute = np.array([[entry(i, j) for j in range(3)] for i in range(3)])
    np.testing.assert_allclose(brute, np.eye(3), atol=1e-10)


@pytest.mark.parametrize("L,K", [(0.0, 3), (-1.0, 3), (1.0, 0)])
def test_interval_dirichlet_rejects_bad_args(L, K):
    with pytest.raises(InvalidArgumentError):
        build_interval_dirichlet(L, K)


def test_torus_orthonormal_and_spectrum():
    model = build_torus(2.0, 7)
    np.testing.assert_allclose(model.gram(points=2000), np.eye(7), atol=1e-10)
    expected = (np.array([0, 1, 1, 2, 2, 3, 3]) * math.pi / 2.0) ** 2
    np.testing.assert_allclose(model.eigenvalues, expected)


def test_box_dirichlet_degeneracy_and_normalisation():
    model = build_box_dirichlet(1.0, 4, 2)
    unit = (math.pi / 2) ** 2
    np.testing.assert_allclose(model.eigenvalues, unit * np.array([2, 5, 5, 8]))
    # tensor-product Gauss quadrature over the square
    xg, wg = np.polynomial.legendre.leggauss(60)
    X, Y = np.meshgrid(xg, xg, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    w = np.outer(wg, wg).ravel()
    e = model.evaluate(pts)
    np.testing.assert_allclose((e * w) @ e.T, np.eye(4), atol=1e-10)


def test_oscillator_free_spectrum():
    model = build_oscillator_basis(8)
    np.testing.assert_allclose(model.eigenvalues, 2 * np.arange(8) + 1, atol=1e-3)


def test_oscillator_constant_shift():
    base = build_oscillator_basis(6).eigenvalues
    shifted = build_oscillator_basis(6, V=lambda x: np.full_like(x, 2.5)).eigenvalues
    np.testing.assert_allclose(shifted - base, 2.5, atol=1e-9)


def test_oscillator_bounded_perturbation_minmax():
    pert = build_oscillator_basis(8, V=lambda x: np.minimum(x**2, 1.0)).eigenvalues
    free = build_oscillator_basis(8).eigenvalues
    assert np.all(np.abs(pert - free) <= 1.0 + 1e-12)
    # dense eigensolve of the same discretisation as an independent route
    x = np.linspace(-10, 10, 2000)
    h = x[1] - x[0]
    H = (np.diag(2 / h**2 + x**2 + np.minimum(x**2, 1.0))
         - np.diag(np.full(1999, 1 / h**2), 1) - np.diag(np.full(1999, 1 / h**2), -1))
    dense = linalg.eigvalsh(H, subset_by_index=(0, 7))
    np.testing.assert_allclose(pert, dense, rtol=1e-9)


def test_oscillator_orthonormal_and_even_odd():
    model = build_oscillator_basis(4)
    np.testing.assert_allclose(model.gram(points=4000), np.eye(4), atol=1e-4)
    x = np.linspace(-3, 3, 11)
    e = model.evaluate(x)
    np.testing.assert_allclose(e[0], e[0][::-1], atol=1e-8)
    np.testing.assert_allclose(e[1], -e[1][::-1], atol=1e-8)


def test_oscillator_resolution_error():
    with pytest.raises(ResolutionError):
        build_oscillator_basis(8, half_width=3.0)


def test_operator_spec_eigenvalues():
    base = build_interval_dirichlet(math.pi / 2, 4)
    op = OperatorSpec(base, power=1.5, mass2=0.5, ir_cutoff=0.1)
    np.testing.assert_allclose(op.eigenvalues, np.arange(1, 5) ** 3 + 0.6)
    with pytest.raises(InvalidArgumentError):
        OperatorSpec(base, power=0.0)


def test_momentum_trace_one_dimension():
    assert momentum_trace(1, 1, 1, 1).value == pytest.approx(math.pi, rel=1e-10)


def test_momentum_trace_two_dimension_quartic():
    # 2 pi int_0^inf r dr / (r^4 + 1) = pi^2 / 2
    brute = 2 * math.pi * integrate.quad(lambda r: r / (r**4 + 1), 0, math.inf)[0]
    value = momentum_trace(2, 2, 1, 1).value
    assert value == pytest.approx(math.pi**2 / 2, rel=1e-6)
    assert value == pytest.approx(brute, rel=1e-8)


def test_momentum_trace_flags_uv_divergence():
    res = momentum_trace(2, 1, 1, 1)
    assert res.divergent and res.reason == "ultraviolet"


def test_momentum_trace_flags_infrared():
    res = momentum_trace(1, 1, 0.0, 1)
    assert res.divergent and res.reason == "infrared"


@pytest.mark.parametrize("nu", [1, 2, 3])
@pytest.mark.parametrize("alpha", [0.6, 1.0, 1.6, 2.4])
@pytest.mark.parametrize("j", [1, 2])
def test_momentum_trace_divergence_grid(nu, alpha, j):
    res = momentum_trace(nu, alpha, 1.0, j)
    assert res.divergent == (2 * alpha * j <= nu)
    if not res.divergent:
        assert res.value == pytest.approx(beta_trace(nu, alpha, 1.0, j), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(nu=st.integers(1, 4), alpha=st.floats(0.3, 3.0), m2=st.floats(0.05, 20.0), j=st.integers(1, 3))
def test_momentum_trace_matches_beta_closed_form(nu, alpha, m2, j):
    res = momentum_trace(nu, alpha, m2, j)
    if 2 * alpha * j <= nu:
        assert res.divergent
    elif 2 * alpha * j - nu > 0.05:
        assert res.value == pytest.approx(beta_trace(nu, alpha, m2, j), rel=1e-6)


@pytest.mark.parametrize("nu", [1, 2, 3])
def test_calibrated_constant_is_sphere_area(nu):
    c, resid = calibrate_trace_constant(nu, [nu / 2 + 0.4, nu / 2 + 1.0, nu + 1.0], [0.3, 1.0, 4.0])
    assert resid < 1e-8
    assert c == pytest.approx(sphere_area(nu), rel=1e-8)


def test_riesz_green_values():
    assert riesz_green(0.5, 2.0) == pytest.approx(2.0, rel=1e-14)
    assert riesz_green(0.75, 1.0) == pytest.approx(2.9587, abs=1e-4)
    assert riesz_green(0.75, 1.0) == pytest.approx(math.gamma(0.25) / math.gamma(0.75), rel=1e-14)


@given(s=st.floats(0.1, 10), alpha=st.floats(0.05, 2.95).filter(lambda a: abs(a - round(a)) > 1e-3),
       r=st.floats(0.01, 10))
def test_riesz_green_scaling_law(s, alpha, r):
    assert riesz_green(alpha, s * r) == pytest.approx(s ** (2 * (1 - alpha)) * riesz_green(alpha, r), rel=1e-12)


def test_riesz_green_errors():
    with pytest.raises(PoleError):
        riesz_green(2.0, 1.0)
    with pytest.raises(DomainError):
        riesz_green(0.5, 0.0)


def test_dirichlet_green_examples():
    assert dirichlet_green_volume_limit(1, 1, 0, 0) == pytest.approx(math.tanh(1) / 2, rel=1e-14)
    assert dirichlet_green_volume_limit(1, 20, 0, 0) == pytest.approx(0.5, abs=1e-8)
    assert dirichlet_green_volume_limit(1, 1, 0.3, -0.2) == dirichlet_green_volume_limit(1, 1, -0.2, 0.3)


def test_dirichlet_green_matches_eigen_expansion():
    # sum_k e_k(x) e_k(y) / (lambda_k + m^2) over many Dirichlet modes
    model = build_interval_dirichlet(1.0, 20000)
    e = model.evaluate(np.array([0.3, -0.2]))
    series = np.sum(e[:, 0] * e[:, 1] / (model.eigenvalues + 1.7**2))
    assert dirichlet_green_volume_limit(1.7, 1.0, 0.3, -0.2) == pytest.approx(series, rel=1e-5)


def test_dirichlet_green_monotone_in_volume():
    values = [dirichlet_green_volume_limit(0.8, L, 0, 0) for L in np.linspace(0.1, 60, 300)]
    assert np.all(np.diff(values) >= 0)
    assert max(values) <= 1 / (2 * 0.8)


def test_dirichlet_green_out_of_domain():
    with pytest.raises(DomainError):
        dirichlet_green_volume_limit(1, 1, 1.0, 0)
