"""Galerkin-truncated Langevin dynamics and its equilibrium measure.

Mode coefficients ``a`` move under the Hamiltonian

    H(a) = a^T L a + Vpot(a),    Vpot(a) = int W(sum_j a_j e_j(x)) dx,

with ``L = diag(lambda)`` (or an anomalous generator matrix).  The
Euler-Maruyama scheme uses drift ``-grad H`` and noise ``sqrt(2 kT dt)``, so
the stationary law is ``exp(-H / kT)`` and a free mode has variance
``kT / (2 lambda)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import InstabilityError, InvalidArgumentError, NumericalOverflowError, UndersampledError
from .spectral_core import SpectralModel, quadrature_grid

DIVERGENCE_BOUND = 1e6
KS_THRESHOLD = 0.05


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    """Mode space, nonlinearity ``V = W'`` and quadrature grid.

    ``generator`` overrides the diagonal ``diag(eigenvalues)`` linear part,
    e.g. with :func:`anomalous_generator`.  ``lipschitz`` is the declared
    Lipschitz constant of ``V`` on the region explored (advisory).
    """

    model: SpectralModel
    V: Callable | None = None
    W: Callable | None = None
    lipschitz: float | None = None
    points: int | None = None
    generator: np.ndarray | None = None
    grid: tuple = field(init=False, repr=False)
    basis: np.ndarray = field(init=False, repr=False)
    weighted_basis: np.ndarray = field(init=False, repr=False)
    linear: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.model.domain.dimension != 1:
            raise InvalidArgumentError("Galerkin systems are one-dimensional")
        if (self.V is None) != (self.W is None):
            raise InvalidArgumentError("nonlinearity V must come with its antiderivative W")
        if self.lipschitz is not None and not math.isfinite(self.lipschitz):
            raise InvalidArgumentError("declared Lipschitz constant must be finite")
        n = self.model.size
        points = self.points or max(80, 20 * n)
        if points < 8 * n:
            raise InvalidArgumentError(f"{points} quadrature points do not resolve {n} modes")
        x, w = quadrature_grid(self.model.domain.bounds, points)
        object.__setattr__(self, "grid", (x, w))
        object.__setattr__(self, "basis", self.model.evaluate(x))
        object.__setattr__(self, "weighted_basis", (self.basis * w).T.copy())
        if self.generator is None:
            lin = np.diag(self.model.eigenvalues.astype(float))
        else:
            lin = np.asarray(self.generator, dtype=float)
            if lin.shape != (n, n) or not np.allclose(lin, lin.T):
                raise InvalidArgumentError("generator must be a symmetric n x n matrix")
        object.__setattr__(self, "linear", lin)

    @property
    def size(self) -> int:
        return self.model.size

    @property
    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.linear)[-1])


def _coeffs(sys: GalerkinSystem, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != sys.size:
        raise InvalidArgumentError(f"coefficient vector has length {a.shape[-1]}, expected {sys.size}")
    return a


def project_nonlinearity(sys: GalerkinSystem, a) -> np.ndarray:
    """``int V(sum_j a_j e_j) e_i dx`` for each mode ``i``; ``a`` may carry leading batch axes."""
    a = _coeffs(sys, a)
    if sys.V is None:
        return np.zeros_like(a)
    out = np.asarray(sys.V(a @ sys.basis), dtype=float) @ sys.weighted_basis
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("nonlinearity projection is not finite")
    return out


def potential(sys: GalerkinSystem, a) -> np.ndarray | float:
    """``Vpot(a) = int W(sum_j a_j e_j) dx``."""
    a = _coeffs(sys, a)
    if sys.W is None:
        return np.zeros(a.shape[:-1]) if a.ndim > 1 else 0.0
    _, w = sys.grid
    return np.asarray(sys.W(a @ sys.basis), dtype=float) @ w


def hamiltonian(sys: GalerkinSystem, a):
    a = _coeffs(sys, a)
    return np.einsum("...i,ij,...j->...", a, sys.linear, a) + potential(sys, a)


def gibbs_density(sys: GalerkinSystem, kT: float, a) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised ``exp(-H(a)/kT)`` and its logarithm."""
    if not kT > 0:
        raise InvalidArgumentError(f"kT must be positive, got {kT}")
    log_rho = -np.asarray(hamiltonian(sys, a)) / kT
    return np.exp(log_rho), log_rho


@dataclass(frozen=True)
class LangevinConfig:
    dt: float
    kT: float = 1.0
    steps: int = 100_000
    burn_in: int = 1_000
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        if not self.dt > 0 or not self.kT > 0:
            raise InvalidArgumentError("dt and kT must be positive")
        if not 0 <= self.burn_in < self.steps:
            raise InvalidArgumentError("need 0 <= burn_in < steps")
        if self.chains < 1:
            raise InvalidArgumentError("need at least one chain")


@dataclass(frozen=True, eq=False)
class TrajectoryStats:
    samples: np.ndarray          # (kept steps, chains, modes)
    mean: np.ndarray
    second_moment: np.ndarray
    second_moment_se: np.ndarray
    covariance: np.ndarray
    tau_int: np.ndarray          # integrated autocorrelation time in steps
    histograms: list
    dt: float
    kT: float
    seed: int

    @property
    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])


def batch_means_se(x: np.ndarray, batches: int = 20) -> float:
    """Standard error of the mean of a (steps, chains) series by batch means."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    size = x.shape[0] // batches
    if size < 1:
        raise UndersampledError("too few samples for batch means")
    means = x[: size * batches].reshape(batches, size, -1).mean(axis=1).ravel()
    return float(means.std(ddof=1) / math.sqrt(len(means)))


def autocorrelation_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    y = x - x.mean(axis=0)
    f = np.fft.rfft(y, n=2 * n, axis=0)
    acf = np.fft.irfft(f * np.conj(f), axis=0)[:n].mean(axis=1)
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    tau = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(n) >= c * tau
    m = int(np.argmax(window)) if window.any() else n - 1
    return float(max(tau[m], 1.0))


def simulate(sys: GalerkinSystem, cfg: LangevinConfig, initial=None) -> TrajectoryStats:
    """Euler-Maruyama integration of ``da = -grad H dt + sqrt(2 kT dt) xi``."""
    n = sys.size
    if cfg.dt * sys.lambda_max >= 1.0:
        raise InstabilityError(
            f"dt * lambda_max = {cfg.dt * sys.lambda_max:.3g} violates the stability bound dt * lambda_max < 1")
    a = np.zeros((cfg.chains, n)) if initial is None else np.broadcast_to(_coeffs(sys, initial), (cfg.chains, n)).copy()
    rng = np.random.default_rng(cfg.seed)
    amp = math.sqrt(2.0 * cfg.kT * cfg.dt)
    drift_lin = 2.0 * sys.linear
    V, B, WB = sys.V, sys.basis, sys.weighted_basis
    kept = cfg.steps - cfg.burn_in
    out = np.empty((kept, cfg.chains, n))
    chunk = 4096
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while step < cfg.steps:
            m = min(chunk, cfg.steps - step)
            noise = rng.standard_normal((m, cfg.chains, n))
            for i in range(m):
                drift = a @ drift_lin
                if V is not None:
                    drift += V(a @ B) @ WB
                a = a - cfg.dt * drift + amp * noise[i]
                k = step + i - cfg.burn_in
                if k >= 0:
                    out[k] = a
            if not np.all(np.abs(a) < DIVERGENCE_BOUND):  # also catches nan
                raise InstabilityError(
                    f"trajectory diverged (|a| > {DIVERGENCE_BOUND:g}); check dt * lambda_max < 1 and the growth of V")
            step += m
    return _summarise(out, cfg)


def _summarise(out: np.ndarray, cfg: LangevinConfig) -> TrajectoryStats:
    n = out.shape[-1]
    flat = out.reshape(-1, n)
    sq = out**2
    hists = []
    for i in range(n):
        edges = np.histogram_bin_edges(flat[:, i], bins="fd")
        counts, edges = np.histogram(flat[:, i], bins=edges)
        hists.append((counts, edges))
    return TrajectoryStats(
        samples=out,
        mean=flat.mean(axis=0),
        second_moment=sq.reshape(-1, n).mean(axis=0),
        second_moment_se=np.array([batch_means_se(sq[..., i]) for i in range(n)]),
        covariance=np.atleast_2d(np.cov(flat, rowvar=False)),
        tau_int=np.array([autocorrelation_time(out[..., i]) for i in range(n)]),
        histograms=hists,
        dt=cfg.dt,
        kT=cfg.kT,
        seed=cfg.seed,
    )


def euler_maruyama_stationary_variance(lam: float, kT: float, dt: float) -> float:
    """Exact stationary variance of the discretised free mode: ``kT / (2 lam (1 - lam dt))``."""
    return kT / (2.0 * lam * (1.0 - lam * dt))


_MARGINAL_GRID = {1: 4001, 2: 301, 3: 81}


def gibbs_marginals(sys: GalerkinSystem, kT: float, width: float = 8.0):
    """Per-mode marginal CDFs of the Gibbs law as ``(grid, cdf)`` pairs.

    Gaussian in closed form when ``V = 0``; otherwise tensor-grid quadrature,
    which limits the mode count to 3.
    """
    n = sys.size
    if sys.V is None:
        cov = 0.5 * kT * np.linalg.inv(sys.linear)
        out = []
        for i in range(n):
            s = math.sqrt(cov[i, i])
            g = np.linspace(-width * s, width * s, 4001)
            out.append((g, special.ndtr(g / s)))
        return out
    if n > 3:
        raise InvalidArgumentError("quadrature marginals are limited to 3 modes")
    scale = np.sqrt(0.5 * kT / np.linalg.eigvalsh(sys.linear)[0])
    axis = np.linspace(-width * scale, width * scale, _MARGINAL_GRID[n])
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    logs = np.concatenate([gibbs_density(sys, kT, mesh[s:s + 20_000])[1]
                           for s in range(0, len(mesh), 20_000)])
    rho = np.exp(logs - logs.max()).reshape((len(axis),) * n)
    out = []
    for i in range(n):
        other = tuple(k for k in range(n) if k != i)
        marg = rho
        for k in sorted(other, reverse=True):
            marg = integrate.simpson(marg, x=axis, axis=k)
        cdf = integrate.cumulative_simpson(marg, x=axis, initial=0.0)
        out.append((axis, cdf / cdf[-1]))
    return out


def ks_distance(samples: np.ndarray, grid: np.ndarray, cdf: np.ndarray) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    F = np.interp(x, grid, cdf, left=0.0, right=1.0)
    m = len(x)
    return float(max(np.max(np.arange(1, m + 1) / m - F), np.max(F - np.arange(m) / m)))


class EquilibriumVerdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    UNDERSAMPLED = "undersampled"


@dataclass(frozen=True)
class EquilibriumReport:
    ks: np.ndarray
    second_moment: np.ndarray
    expected_second_moment: np.ndarray
    moment_z: np.ndarray
    verdict: EquilibriumVerdict


def _second_moment(grid, cdf):
    pdf = np.gradient(cdf, grid)
    return float(integrate.simpson(grid**2 * pdf, x=grid))


def equilibrium_test(stats: TrajectoryStats, sys: GalerkinSystem, kT: float, reference=None,
                     min_samples: int = 10_000) -> EquilibriumReport:
    """KS distance and second-moment z-score per mode against the Gibbs marginals.

    ``reference`` replaces the Gibbs law by empirical marginals of the given
    samples (shape ``(m, modes)``).
    """
    flat = stats.flat
    n = flat.shape[1]
    if flat.shape[0] < min_samples:
        nan = np.full(n, np.nan)
        return EquilibriumReport(nan, stats.second_moment, nan, nan, EquilibriumVerdict.UNDERSAMPLED)
    if reference is None:
        marginals = gibbs_marginals(sys, kT)
        expected = np.array([_second_moment(g, c) for g, c in marginals])
    else:
        ref = np.asarray(reference, dtype=float).reshape(-1, n)
        marginals = []
        for i in range(n):
            g = np.sort(ref[:, i])
            marginals.append((g, np.arange(1, len(g) + 1) / len(g)))
        expected = (ref**2).mean(axis=0)
    ks = np.array([ks_distance(flat[:, i], *marginals[i]) for i in range(n)])
    se = np.maximum(stats.second_moment_se, 1e-300)
    z = (stats.second_moment - expected) / se
    ok = bool(np.all(ks < KS_THRESHOLD) and np.all(np.abs(z) < 3.0))
    return EquilibriumReport(ks, stats.second_moment, expected, z,
                             EquilibriumVerdict.PASS if ok else EquilibriumVerdict.FAIL)


def detailed_balance_defect(sys: GalerkinSystem, kT: float, dt: float, pairs: np.ndarray) -> np.ndarray:
    """``log[pi(a) q(a->b)] - log[pi(b) q(b->a)]`` for consecutive states ``pairs[:, 0], pairs[:, 1]``.

    ``q`` is the Euler-Maruyama one-step Gaussian kernel; the defect vanishes
    as ``dt -> 0`` for a scheme that targets ``pi``.
    """
    a, b = np.asarray(pairs[:, 0], dtype=float), np.asarray(pairs[:, 1], dtype=float)

    def log_q(x, y):
        mean = x - dt * (x @ (2.0 * sys.linear) + project_nonlinearity(sys, x))
        return -np.sum((y - mean) ** 2, axis=-1) / (4.0 * kT * dt)

    _, log_pa = gibbs_density(sys, kT, a)
    _, log_pb = gibbs_density(sys, kT, b)
    return (log_pa + log_q(a, b)) - (log_pb + log_q(b, a))


@dataclass(frozen=True, eq=False)
class AnomalousGenerator:
    matrix: np.ndarray
    trace_partial_sums: np.ndarray
    trace_class: bool


def anomalous_generator(model: SpectralModel, alpha: float, v_hat, eps: float, points: int | None = None
                        ) -> AnomalousGenerator:
    """Mode-space matrix of ``(-Laplacian)^alpha + eps + Vhat``.

    ``v_hat`` is a callable or samples on the composite Gauss-Legendre grid
    used here.  ``trace_class`` reports ``alpha > dim / 2``, the condition
    under which ``sum 1 / (lambda^alpha + eps)`` converges.
    """
    if not alpha > 0 or not eps > 0:
        raise InvalidArgumentError("alpha and eps must be positive")
    n = model.size
    points = points or max(400, 20 * n)
    x, w = quadrature_grid(model.domain.bounds, points)
    if callable(v_hat):
        v = np.asarray(v_hat(x), dtype=float) * np.ones_like(x)
    else:
        v = np.asarray(v_hat, dtype=float)
        if v.shape != x.shape:
            raise InvalidArgumentError(f"Vhat samples must match the {len(x)}-point grid")
    if not np.all(np.isfinite(v)) or not math.isfinite(float(v**2 @ w)):
        raise InvalidArgumentError("Vhat is not square integrable on the grid")
    e = model.evaluate(x)
    diag = model.eigenvalues.astype(float) ** alpha + eps
    mat = np.diag(diag) + (e * (v * w)) @ e.T
    mat = 0.5 * (mat + mat.T)
    sums = np.cumsum(1.0 / diag)
    return AnomalousGenerator(mat, sums, alpha > model.domain.dimension / 2)


def save_trajectory(path, stats: TrajectoryStats) -> tuple[Path, Path]:
    """Raw little-endian float64 samples plus a JSON sidecar describing the layout."""
    path = Path(path)
    data = np.ascontiguousarray(stats.samples, dtype="<f8")
    raw = path.with_suffix(".f64")
    data.tofile(raw)
    side = path.with_suffix(".json")
    side.write_text(json.dumps({
        "file": raw.name, "dtype": "<f8", "order": "C",
        "shape": list(data.shape), "axes": ["step", "chain", "mode"],
        "dt": stats.dt, "kT": stats.kT, "seed": stats.seed,
    }, indent=2))
    return raw, side


def load_trajectory(sidecar) -> np.ndarray:
    side = Path(sidecar)
    meta = json.loads(side.read_text())
    return np.fromfile(side.parent / meta["file"], dtype=meta["dtype"]).reshape(meta["shape"])
