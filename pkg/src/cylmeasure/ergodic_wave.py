"""Lattice nonlinear string: thermostatted dynamics, Gibbs averages, bridge sums.

Sites ``i = 0..N`` sit at ``sigma_i = -L + i a`` with ``a = 2L/N``; the end
sites are pinned at zero.  Configurations are sampled from

    exp(-U(x) / kT),   U(x) = 1/2 sum (x_{i+1} - x_i)^2 / a + 1/2 sum_i w_i V(x_i),

with trapezoid weights ``w``.  Momenta are site velocities with kinetic
energy ``sum a p^2 / 2``, so their Gibbs marginal has variance ``kT / a``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, InstabilityError, InvalidArgumentError, ReweightingError
from .spectral_core import dirichlet_green_volume_limit

DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True, eq=False)
class Potential:
    """Site potential ``V`` with derivative ``dV``; ``quadratic = c`` declares ``V(x) = c x^2``."""

    V: Callable
    dV: Callable
    quadratic: float | None = None
    even: bool = True

    @classmethod
    def zero(cls) -> "Potential":
        return cls(lambda x: np.zeros_like(x), lambda x: np.zeros_like(x), 0.0)

    @classmethod
    def harmonic(cls, c: float = 1.0) -> "Potential":
        return cls(lambda x: c * x**2, lambda x: 2.0 * c * x, float(c))


@dataclass(frozen=True, eq=False)
class LatticeString:
    N: int
    L: float = 1.0
    x: np.ndarray | None = None
    p: np.ndarray | None = None
    potential: Potential = field(default_factory=Potential.zero)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidArgumentError(f"need N >= 2 sites, got {self.N}")
        if not self.L > 0:
            raise InvalidArgumentError(f"L must be positive, got {self.L}")
        for name in ("x", "p"):
            v = getattr(self, name)
            v = np.zeros(self.N + 1) if v is None else np.array(v, dtype=float)
            if v.shape != (self.N + 1,):
                raise InvalidArgumentError(f"{name} must have N + 1 = {self.N + 1} entries")
            v[[0, -1]] = 0.0
            object.__setattr__(self, name, v)

    @property
    def a(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def sites(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.N + 1)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.N + 1, self.a)
        w[[0, -1]] *= 0.5
        return w

    def with_potential(self, potential: Potential) -> "LatticeString":
        return replace(self, potential=potential)


def hamiltonian_energy(s: LatticeString, x=None, p=None) -> float:
    """``sum a p^2/2 + 1/2 sum (dx)^2 / a + sum w V(x)``."""
    x = s.x if x is None else np.asarray(x, dtype=float)
    p = s.p if p is None else np.asarray(p, dtype=float)
    kinetic = 0.5 * s.a * float(np.sum(p[1:-1] ** 2))
    gradient = 0.5 * float(np.sum(np.diff(x) ** 2)) / s.a
    return kinetic + gradient + float(np.sum(s.weights * s.potential.V(x)))


def configurational_energy(s: LatticeString, x) -> np.ndarray:
    """The Gibbs exponent ``U(x)`` (note the 1/2 on ``V``); ``x`` may be batched."""
    x = np.asarray(x, dtype=float)
    return 0.5 * np.sum(np.diff(x, axis=-1) ** 2, axis=-1) / s.a + 0.5 * (s.potential.V(x) @ s.weights)


def _force(s: LatticeString, x: np.ndarray) -> np.ndarray:
    """``-dU/dx`` on interior sites, divided by the site mass ``a``."""
    a = s.a
    lap = (x[..., 2:] - 2.0 * x[..., 1:-1] + x[..., :-2]) / a**2
    return lap - 0.5 * s.potential.dV(x[..., 1:-1])


# ---------------------------------------------------------------- observables

def x_mid(s: LatticeString) -> Callable:
    """Displacement at ``sigma = 0`` (linear interpolation for odd ``N``)."""
    i, frac = divmod(s.N, 2)
    if frac == 0:
        return lambda x: x[..., i]
    return lambda x: 0.5 * (x[..., i] + x[..., i + 1])


def default_observables(s: LatticeString) -> dict[str, Callable]:
    mid = x_mid(s)
    w = s.weights
    return {
        "x_mid": mid,
        "x_mid2": lambda x: mid(x) ** 2,
        "l2": lambda x: (x**2) @ w,
        "exp_l2": lambda x: np.exp(-((x**2) @ w)),
    }


class Mode(str, enum.Enum):
    CANONICAL = "canonical"
    MICROCANONICAL = "microcanonical"


@dataclass(frozen=True)
class ThermostatConfig:
    dt: float
    kT: float = 1.0
    friction: float = 2.0
    steps: int = 100_000
    burn_in: int = 10_000
    seed: int = 0
    chains: int = 1
    record_every: int = 1
    mode: Mode = Mode.CANONICAL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt > 0 or not self.kT > 0:
            raise InvalidArgumentError("dt and kT must be positive")
        if self.mode is Mode.CANONICAL and not self.friction > 0:
            raise InvalidArgumentError("canonical sampling needs friction > 0")
        if not 0 <= self.burn_in < self.steps:
            raise InvalidArgumentError("need 0 <= burn_in < steps")
        if self.chains < 1 or self.record_every < 1:
            raise InvalidArgumentError("chains and record_every must be >= 1")


@dataclass(frozen=True, eq=False)
class Estimate:
    value: float
    stderr: float

    def __iter__(self):
        return iter((self.value, self.stderr))


@dataclass(frozen=True, eq=False)
class ThermostatStats:
    series: dict            # name -> (records, chains)
    estimates: dict         # name -> Estimate
    final_x: np.ndarray
    final_p: np.ndarray


def _batch_se(series: np.ndarray, batches: int = 20) -> float:
    size = series.shape[0] // batches
    if size < 1:
        return float("nan")
    means = series[: size * batches].reshape(batches, size, -1).mean(axis=1).ravel()
    return float(means.std(ddof=1) / math.sqrt(len(means)))


def thermostat_simulate(s: LatticeString, cfg: ThermostatConfig, observables: dict | None = None
                        ) -> ThermostatStats:
    """BAOAB Langevin splitting (or velocity Verlet in microcanonical mode).

    ``observables`` maps names to functions of configurations; the per-site
    kinetic energy ``"kinetic"`` is always recorded.
    """
    a = s.a
    if cfg.dt * 2.0 / a >= 1.0:
        raise InstabilityError(f"dt * 2/a = {cfg.dt * 2.0 / a:.3g} violates the stability bound dt * 2/a < 1")
    obs = dict(default_observables(s) if observables is None else observables)
    rng = np.random.default_rng(cfg.seed)
    x = np.tile(s.x, (cfg.chains, 1))
    p = np.tile(s.p, (cfg.chains, 1))
    h = cfg.dt
    c1 = math.exp(-cfg.friction * h) if cfg.mode is Mode.CANONICAL else 1.0
    c2 = math.sqrt((1.0 - c1 * c1) * cfg.kT / a)
    n_rec = (cfg.steps - cfg.burn_in) // cfg.record_every
    series = {name: np.empty((n_rec, cfg.chains)) for name in [*obs, "kinetic"]}
    interior = slice(1, -1)
    f = _force(s, x)
    rec = 0
    chunk = 2048
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while step < cfg.steps:
            m = min(chunk, cfg.steps - step)
            noise = rng.standard_normal((m, cfg.chains, s.N - 1)) if c1 < 1.0 else None
            for i in range(m):
                p[:, interior] += 0.5 * h * f
                x[:, interior] += 0.5 * h * p[:, interior]
                if noise is not None:
                    p[:, interior] = c1 * p[:, interior] + c2 * noise[i]
                x[:, interior] += 0.5 * h * p[:, interior]
                f = _force(s, x)
                p[:, interior] += 0.5 * h * f
                k = step + i + 1 - cfg.burn_in
                if k > 0 and k % cfg.record_every == 0 and rec < n_rec:
                    for name, F in obs.items():
                        series[name][rec] = F(x)
                    series["kinetic"][rec] = 0.5 * a * np.mean(p[:, interior] ** 2, axis=1)
                    rec += 1
            if not np.all(np.abs(x) < DIVERGENCE_BOUND):
                raise InstabilityError("string dynamics diverged; check dt * 2/a < 1 and the growth of V")
            step += m
    estimates = {name: Estimate(float(v.mean()), _batch_se(v)) for name, v in series.items()}
    return ThermostatStats(series, estimates, x, p)


# ---------------------------------------------------------------- Gibbs side

def _stiffness_band(s: LatticeString, shift: float = 0.0) -> np.ndarray:
    """Upper band storage of ``K + shift I`` on interior sites, ``K = tridiag(-1, 2, -1)/a``."""
    n = s.N - 1
    ab = np.zeros((2, n))
    ab[0, 1:] = -1.0 / s.a
    ab[1, :] = 2.0 / s.a + shift
    return ab


def lattice_gibbs_covariance(s: LatticeString, kT: float) -> np.ndarray:
    """Exact interior-site covariance for quadratic ``V = c x^2``."""
    c = s.potential.quadratic
    if c is None:
        raise InvalidArgumentError("exact covariance needs a quadratic potential")
    n = s.N - 1
    Q = np.diag(np.full(n, 2.0 / s.a + s.a * c)) - np.diag(np.full(n - 1, 1.0 / s.a), 1) \
        - np.diag(np.full(n - 1, 1.0 / s.a), -1)
    return kT * np.linalg.inv(Q)


def _gaussian_draws(s: LatticeString, kT: float, count: int, rng, shift: float = 0.0) -> np.ndarray:
    """Exact draws of the pinned Gaussian string with precision ``(K + shift I) / kT``."""
    cb = linalg.cholesky_banded(_stiffness_band(s, shift))
    z = rng.standard_normal((s.N - 1, count))
    # Q = U^T U, x = sqrt(kT) U^{-1} z
    interior = linalg.solve_banded((0, 1), cb, z) * math.sqrt(kT)
    out = np.zeros((count, s.N + 1))
    out[:, 1:-1] = interior.T
    return out


def split_rhat(chains: np.ndarray) -> float:
    """Split-R-hat of a (draws, chains) array."""
    n = chains.shape[0] // 2
    if n < 2:
        return float("inf")
    parts = np.concatenate([chains[:n], chains[n: 2 * n]], axis=1)
    w = parts.var(axis=0, ddof=1).mean()
    b = n * parts.mean(axis=0).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    return float(math.sqrt(((n - 1) / n * w + b / n) / w))


def _mala(s: LatticeString, kT: float, F: Callable, draws: int, rng, step: float, chains: int = 4,
          burn_in: int = 1000) -> tuple[np.ndarray, float]:
    """Preconditioned MALA, preconditioner = covariance of the free string."""
    cb = linalg.cholesky_banded(_stiffness_band(s))
    w = s.weights[1:-1]
    K = _stiffness_band(s)

    def K_mul(y):  # K @ y on (chains, n)
        out = K[1] * y
        out[:, :-1] += K[0, 1:] * y[:, 1:]
        out[:, 1:] += K[0, 1:] * y[:, :-1]
        return out

    def C_mul(g):  # kT K^{-1} g
        return kT * linalg.cho_solve_banded((cb, False), g.T).T

    def phi(y):  # potential part of U / kT
        return 0.5 * (s.potential.V(y) @ w) / kT

    def grad_phi(y):
        return 0.5 * w * s.potential.dV(y) / kT

    def log_target(y):
        return -0.5 * np.sum(y * K_mul(y), axis=1) / kT - phi(y)

    def mean_of(y):
        return y - 0.5 * step * (y + C_mul(grad_phi(y)))

    def log_q(to, frm):  # proposal covariance step * C
        d = to - mean_of(frm)
        return -0.5 * np.sum(d * K_mul(d), axis=1) / (kT * step)

    n = s.N - 1
    y = _gaussian_draws(s, kT, chains, rng)[:, 1:-1]
    vals = np.empty((draws, chains))
    accepted = 0
    for it in range(burn_in + draws):
        z = rng.standard_normal((n, chains))
        noise = (linalg.solve_banded((0, 1), cb, z) * math.sqrt(kT * step)).T
        prop = mean_of(y) + noise
        log_alpha = log_target(prop) + log_q(y, prop) - log_target(y) - log_q(prop, y)
        acc = np.log(rng.uniform(size=chains)) < log_alpha
        y = np.where(acc[:, None], prop, y)
        if it >= burn_in:
            accepted += int(acc.sum())
            full = np.zeros((chains, s.N + 1))
            full[:, 1:-1] = y
            vals[it - burn_in] = F(full)
    return vals, accepted / (draws * chains)


@dataclass(frozen=True, eq=False)
class GibbsEstimate(Estimate):
    method: str = "exact"
    rhat: float = 1.0
    acceptance: float = 1.0


def gibbs_average(s: LatticeString, kT: float, F: Callable, draws: int = 100_000, seed: int = 0,
                  method: str = "auto", mala_step: float = 0.5) -> GibbsEstimate:
    """Average of ``F`` under the lattice Gibbs law.

    Exact banded-Cholesky sampling when the potential is declared quadratic,
    otherwise preconditioned MALA over 4 chains with a split-R-hat < 1.1 check.
    """
    if not kT > 0:
        raise InvalidArgumentError(f"kT must be positive, got {kT}")
    rng = np.random.default_rng(seed)
    c = s.potential.quadratic
    if method == "auto":
        method = "exact" if c is not None else "mala"
    if method == "exact":
        if c is None:
            raise InvalidArgumentError("exact sampling needs a quadratic potential")
        vals = np.asarray(F(_gaussian_draws(s, kT, draws, rng, shift=s.a * c)), dtype=float)
        vals = vals * np.ones(draws)
        return GibbsEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws)), "exact")
    if method != "mala":
        raise InvalidArgumentError(f"unknown method {method!r}")
    chains = 4
    vals, acc = _mala(s, kT, F, -(-draws // chains), rng, mala_step, chains)
    rhat = split_rhat(vals)
    if not rhat < 1.1:
        raise ConvergenceError(f"MALA chains did not converge: split R-hat = {rhat:.3f}")
    return GibbsEstimate(float(vals.mean()), _batch_se(vals), "mala", rhat, acc)


def lattice_partition_ratio(s: LatticeString, kT: float) -> float:
    """``Z_V / Z_0`` for a quadratic potential: ``sqrt(det K / det(K + a c I))``."""
    c = s.potential.quadratic
    if c is None:
        raise InvalidArgumentError("closed-form partition ratio needs a quadratic potential")
    ld0 = 2.0 * np.sum(np.log(linalg.cholesky_banded(_stiffness_band(s))[-1]))
    ld1 = 2.0 * np.sum(np.log(linalg.cholesky_banded(_stiffness_band(s, s.a * c))[-1]))
    return math.exp(0.5 * (ld0 - ld1))


# ---------------------------------------------------------------- bridge side

@dataclass(frozen=True, eq=False)
class BridgeEstimate:
    value: float            # E_bridge[F exp(-int V / 2kT)]
    stderr: float
    normalized: float       # value / partition_ratio
    normalized_stderr: float
    partition_ratio: float  # E_bridge[exp(-int V / 2kT)]
    ess_fraction: float
    levels: tuple = ()      # (N, value, normalized) per resolution


def _bridge_level(L, kT, potential, F, N, draws, rng):
    s = LatticeString(N, L, potential=potential)
    paths = _gaussian_draws(s, kT, draws, rng)
    logw = -0.5 * (potential.V(paths) @ s.weights) / kT
    wts = np.exp(logw)
    fv = np.asarray(F(paths), dtype=float) * np.ones(draws)
    ess = wts.sum() ** 2 / np.sum(wts**2) / draws
    z = wts.mean()
    num = fv * wts
    value = num.mean()
    se = num.std(ddof=1) / math.sqrt(draws)
    norm = value / z
    # delta method for the ratio estimator
    norm_se = np.std(wts * (fv - norm), ddof=1) / (z * math.sqrt(draws))
    return value, se, norm, norm_se, z, ess


def bridge_expectation(L: float, kT: float, potential: Potential | None, F, N: int = 256, draws: int = 100_000,
                       seed: int = 0, extrapolate: bool = True, min_ess: float = 0.01) -> BridgeEstimate:
    """Brownian-bridge average of ``F exp(-1/(2kT) int V)`` pinned at ``+-L``.

    ``F`` takes node values of a bridge with covariance ``kT G_D`` (``G_D`` the
    Dirichlet Green function of ``-d^2``) on an ``N``-interval grid.  With
    ``extrapolate`` the estimate is Richardson-combined from ``N`` and ``2N``
    assuming second-order error; ``F`` must then accept either resolution.
    """
    potential = potential or Potential.zero()
    rng = np.random.default_rng(seed)
    levels = []
    res = []
    for n in ((N, 2 * N) if extrapolate else (N,)):
        r = _bridge_level(L, kT, potential, F, n, draws, rng)
        if r[5] < min_ess:
            raise ReweightingError(f"effective sample size {r[5]:.2%} of draws is below {min_ess:.0%}")
        res.append(r)
        levels.append((n, r[0], r[2]))
    if extrapolate:
        (v1, s1, n1, ns1, z1, e1), (v2, s2, n2, ns2, z2, e2) = res
        combine = lambda a, b: (4.0 * b - a) / 3.0  # noqa: E731
        err = lambda a, b: math.hypot(a, 4.0 * b) / 3.0  # noqa: E731
        return BridgeEstimate(combine(v1, v2), err(s1, s2), combine(n1, n2), err(ns1, ns2),
                              combine(z1, z2), min(e1, e2), tuple(levels))
    v, se, nv, nse, z, ess = res[0]
    return BridgeEstimate(v, se, nv, nse, z, ess, tuple(levels))


def continuum_mid_variance(L: float, kT: float, c: float = 0.0) -> float:
    """``kT G(0, 0)`` for ``-d^2 + c`` with Dirichlet ends at ``+-L``."""
    if c == 0:
        return kT * L / 2.0
    return kT * dirichlet_green_volume_limit(math.sqrt(c), L, 0.0, 0.0)


def continuum_partition_ratio(L: float, c: float) -> float:
    """``sqrt(det(-d^2) / det(-d^2 + c))`` on ``(-L, L)``: ``sqrt(2 m L / sinh(2 m L))``."""
    m = math.sqrt(c)
    return math.sqrt(2 * m * L / math.sinh(2 * m * L))
