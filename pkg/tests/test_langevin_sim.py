import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cylmeasure.errors import InstabilityError, InvalidArgumentError
from cylmeasure.langevin_sim import (
    EquilibriumVerdict,
    GalerkinSystem,
    LangevinConfig,
    anomalous_generator,
    detailed_balance_defect,
    equilibrium_test,
    euler_maruyama_stationary_variance,
    gibbs_density,
    load_trajectory,
    potential,
    project_nonlinearity,
    save_trajectory,
    simulate,
)
from cylmeasure.spectral_core import build_interval_dirichlet


def dirichlet(n, L=1.0):
    return build_interval_dirichlet(L, n)


def quartic(n=1):
    return GalerkinSystem(dirichlet(n), V=lambda u: u**3, W=lambda u: u**4 / 4)


def single_mode(lam, **kw):
    return GalerkinSystem(dirichlet(1), generator=np.array([[lam]]), **kw)


def test_linear_nonlinearity_is_identity():
    sys_ = GalerkinSystem(dirichlet(5), V=lambda u: u, W=lambda u: u**2 / 2)
    a = np.array([0.3, -1.2, 0.5, 2.0, -0.1])
    np.testing.assert_allclose(project_nonlinearity(sys_, a), a, atol=1e-8)


def test_zero_nonlinearity():
    sys_ = GalerkinSystem(dirichlet(3))
    np.testing.assert_array_equal(project_nonlinearity(sys_, [1.0, 2.0, 3.0]), 0.0)


def test_cubic_projection_matches_adaptive_quadrature():
    model = dirichlet(2)
    sys_ = GalerkinSystem(model, V=lambda u: u**3, W=lambda u: u**4 / 4)
    a = np.array([0.7, -0.4])

    def field(x):
        return float(a @ model.evaluate(np.array([x]))[:, 0])

    oracle = [integrate.quad(lambda x: field(x) ** 3 * model.evaluate(np.array([x]))[i, 0], -1, 1,
                             epsabs=1e-13, epsrel=1e-13)[0] for i in range(2)]
    np.testing.assert_allclose(project_nonlinearity(sys_, a), oracle, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 4), seed=st.integers(0, 10_000),
       kind=st.sampled_from(["quartic", "cubic"]))
def test_projection_is_gradient_of_potential(n, seed, kind):
    if kind == "quartic":
        sys_ = GalerkinSystem(dirichlet(n), V=lambda u: u**3, W=lambda u: u**4 / 4)
    else:
        sys_ = GalerkinSystem(dirichlet(n), V=lambda u: u**2, W=lambda u: u**3 / 3)
    a = np.random.default_rng(seed).normal(size=n)
    h = 1e-4
    fd = np.array([(potential(sys_, a + h * e) - potential(sys_, a - h * e)) / (2 * h) for e in np.eye(n)])
    np.testing.assert_allclose(project_nonlinearity(sys_, a), fd, atol=1e-5)


def test_nonlinearity_needs_antiderivative():
    with pytest.raises(InvalidArgumentError):
        GalerkinSystem(dirichlet(2), V=lambda u: u**3)


def test_gibbs_density_gaussian_case():
    sys_ = GalerkinSystem(dirichlet(3))
    a = np.array([0.2, -0.1, 0.4])
    rho, log_rho = gibbs_density(sys_, 0.7, a)
    assert log_rho == pytest.approx(-np.sum(sys_.model.eigenvalues * a**2) / 0.7, rel=1e-14)
    assert rho == pytest.approx(math.exp(log_rho))


def test_gibbs_density_maximised_at_minimiser():
    sys_ = quartic(2)
    grid = np.stack(np.meshgrid(np.linspace(-2, 2, 41), np.linspace(-2, 2, 41)), axis=-1).reshape(-1, 2)
    rho, _ = gibbs_density(sys_, 1.0, grid)
    assert np.all(rho > 0)
    np.testing.assert_allclose(grid[np.argmax(rho)], 0.0, atol=1e-12)


def test_ou_stationary_variance():
    sys_ = single_mode(1.0)
    stats = simulate(sys_, LangevinConfig(dt=5e-3, kT=1.0, steps=25_000, burn_in=2_000, seed=3, chains=40))
    assert abs(stats.second_moment[0] - 0.5) < 3 * stats.second_moment_se[0]
    report = equilibrium_test(stats, sys_, 1.0)
    assert report.verdict is EquilibriumVerdict.PASS


def test_two_free_modes_uncorrelated():
    sys_ = GalerkinSystem(dirichlet(2))
    stats = simulate(sys_, LangevinConfig(dt=5e-3, steps=20_000, burn_in=2_000, seed=5, chains=40))
    cov = stats.covariance
    corr = cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1])
    # effective sample size is at least 40 chains * 18000 / (2 * tau)
    n_eff = stats.flat.shape[0] / stats.tau_int.max()
    assert abs(corr) < 4 / math.sqrt(n_eff)


def test_euler_maruyama_bias_is_first_order():
    lam, kT = 10.0, 1.0
    biases, ses, expected = [], [], []
    for dt in (1e-2, 5e-3, 2.5e-3):
        stats = simulate(single_mode(lam), LangevinConfig(dt=dt, kT=kT, steps=20_000, burn_in=1_000,
                                                          seed=7, chains=200))
        biases.append(stats.second_moment[0] - kT / (2 * lam))
        ses.append(stats.second_moment_se[0])
        expected.append(euler_maruyama_stationary_variance(lam, kT, dt) - kT / (2 * lam))
    for b, s, e in zip(biases, ses, expected):
        assert abs(b - e) < 3 * s
    assert biases[0] / biases[1] == pytest.approx(2.0, rel=0.25)
    assert biases[1] / biases[2] == pytest.approx(2.0, rel=0.4)


def test_mismatched_temperature_fails():
    sys_ = single_mode(1.0)
    stats = simulate(sys_, LangevinConfig(dt=5e-3, kT=1.0, steps=25_000, burn_in=2_000, seed=3, chains=40))
    report = equilibrium_test(stats, sys_, 2.0)
    assert report.verdict is EquilibriumVerdict.FAIL
    assert report.expected_second_moment[0] / report.second_moment[0] == pytest.approx(2.0, rel=0.05)


def test_self_comparison_passes():
    sys_ = quartic(1)
    stats = simulate(sys_, LangevinConfig(dt=5e-3, steps=5_000, burn_in=500, seed=2, chains=20))
    report = equilibrium_test(stats, sys_, 1.0, reference=stats.flat)
    assert report.verdict is EquilibriumVerdict.PASS
    assert report.ks[0] < 1e-3


def test_undersampled_flag():
    sys_ = single_mode(1.0)
    stats = simulate(sys_, LangevinConfig(dt=5e-3, steps=2_000, burn_in=100, seed=1))
    assert equilibrium_test(stats, sys_, 1.0).verdict is EquilibriumVerdict.UNDERSAMPLED


def test_quartic_marginal_ks():
    sys_ = quartic(1)
    stats = simulate(sys_, LangevinConfig(dt=5e-3, steps=30_000, burn_in=2_000, seed=9, chains=30))
    report = equilibrium_test(stats, sys_, 1.0)
    assert report.ks[0] < 0.05
    assert report.verdict is EquilibriumVerdict.PASS


def test_two_mode_quartic_marginals():
    sys_ = quartic(2)
    stats = simulate(sys_, LangevinConfig(dt=5e-3, steps=20_000, burn_in=2_000, seed=4, chains=30))
    assert np.all(equilibrium_test(stats, sys_, 1.0).ks < 0.05)


def test_seed_determinism():
    sys_ = quartic(2)
    cfg = LangevinConfig(dt=5e-3, steps=3_000, burn_in=100, seed=11, chains=3)
    a = simulate(sys_, cfg, initial=[0.1, -0.2]).samples
    b = simulate(sys_, cfg, initial=[0.1, -0.2]).samples
    assert a.tobytes() == b.tobytes()


def test_stability_bound_enforced():
    with pytest.raises(InstabilityError, match="dt \\* lambda_max"):
        simulate(single_mode(10.0), LangevinConfig(dt=0.2, steps=100, burn_in=0))


def test_divergence_detected():
    sys_ = GalerkinSystem(dirichlet(1), V=lambda u: -6 * u**5, W=lambda u: -u**6)
    with pytest.raises(InstabilityError):
        simulate(sys_, LangevinConfig(dt=1e-2, steps=10_000, burn_in=0), initial=[3.0])


def test_detailed_balance_defect_shrinks_with_dt():
    sys_ = quartic(1)
    rng = np.random.default_rng(0)
    a = rng.normal(0, 0.4, size=(2000, 1))
    defects = []
    for dt in (1e-2, 1e-3, 1e-4):
        b = a - dt * (2 * a * sys_.model.eigenvalues + project_nonlinearity(sys_, a)) \
            + math.sqrt(2 * dt) * rng.standard_normal(a.shape)
        defects.append(np.mean(np.abs(detailed_balance_defect(sys_, 1.0, dt, np.stack([a, b], axis=1)))))
    assert defects[0] > defects[1] > defects[2]
    assert defects[2] < 1e-2


def test_anomalous_generator_examples():
    model = dirichlet(6)
    gen = anomalous_generator(model, 1.5, lambda x: np.zeros_like(x), 0.3)
    np.testing.assert_allclose(gen.matrix, np.diag(model.eigenvalues**1.5 + 0.3), atol=1e-12)
    shifted = anomalous_generator(model, 1.5, lambda x: np.full_like(x, 2.0), 0.3)
    np.testing.assert_allclose(shifted.matrix - gen.matrix, 2.0 * np.eye(6), atol=1e-10)
    assert gen.trace_class


def test_anomalous_generator_bump_bound():
    model = dirichlet(8)
    bump = anomalous_generator(model, 0.8, lambda x: -1.5 * np.exp(-10 * x**2), 0.5)
    np.testing.assert_array_equal(bump.matrix, bump.matrix.T)
    assert np.linalg.eigvalsh(bump.matrix)[0] >= 0.5 - 1.5 - 1e-12
    assert np.all(np.diff(bump.trace_partial_sums) > 0)


def test_anomalous_generator_trace_class_flag_and_validation():
    model = dirichlet(4)
    assert not anomalous_generator(model, 0.4, lambda x: 0 * x, 1.0).trace_class
    with pytest.raises(InvalidArgumentError):
        anomalous_generator(model, 1.0, lambda x: np.where(x > 0, np.inf, 0.0), 1.0)


def test_anomalous_generator_drives_simulation():
    model = dirichlet(2)
    gen = anomalous_generator(model, 1.0, lambda x: 0.5 + 0 * x, 0.2)
    sys_ = GalerkinSystem(model, generator=gen.matrix)
    stats = simulate(sys_, LangevinConfig(dt=2e-3, steps=20_000, burn_in=2_000, seed=1, chains=40))
    expected = 0.5 / np.diag(gen.matrix)
    np.testing.assert_allclose(stats.second_moment, expected, rtol=0.05)


def test_trajectory_roundtrip(tmp_path):
    stats = simulate(single_mode(1.0), LangevinConfig(dt=1e-2, steps=500, burn_in=0, seed=0, chains=2))
    raw, side = save_trajectory(tmp_path / "traj", stats)
    back = load_trajectory(side)
    assert back.tobytes() == stats.samples.tobytes()
