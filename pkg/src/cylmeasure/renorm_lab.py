"""Numerical probes of the analytically regularized quartic model.

Everything here is finite dimensional: regulated Green matrices at a handful
of planar points, the perturbative majorant series, and the Gaussian identity
behind the effective quartic weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, InvalidArgumentError
from .spectral_core import riesz_green

SWEEP_OFFSETS = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class RegulatorConfig:
    alpha: float
    delta: float = 1e-3
    g_ren: float = 1.0
    v_sup: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0 or self.alpha == 1:
            raise InvalidArgumentError(f"alpha must be positive and != 1, got {self.alpha}")
        if not self.delta > 0:
            raise InvalidArgumentError(f"delta must be positive, got {self.delta}")
        if self.g_ren < 0 or self.v_sup < 0:
            raise InvalidArgumentError("g_ren and v_sup must be nonnegative")


def renormalized_coupling(g_ren: float, alpha: float) -> float:
    """Bare coupling ``g_ren / sqrt(1 - alpha)``; ``math.inf`` flags divergence at alpha >= 1."""
    if g_ren < 0:
        raise InvalidArgumentError(f"g_ren must be nonnegative, got {g_ren}")
    if alpha >= 1:
        return math.inf
    return g_ren / math.sqrt(1.0 - alpha)


def _as_points(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise InvalidArgumentError("need at least one point")
    return pts


def green_matrix(points, alpha: float, delta: float = 1e-3) -> np.ndarray:
    """Regulated matrix ``G_ij = riesz_green(alpha, |x_i - x_j|)``, diagonal at separation ``delta``."""
    RegulatorConfig(alpha, delta)
    pts = _as_points(points)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    off = ~np.eye(len(pts), dtype=bool)
    if np.any(dist[off] == 0):
        raise InvalidArgumentError("coincident points in green_matrix")
    dist[~off] = delta
    return riesz_green(alpha, dist)


@dataclass(frozen=True)
class DeterminantResult:
    value: float        # |det G|^{-1/2}
    log_value: float
    sign: float
    condition: float


def green_matrix_det(points, alpha: float, delta: float = 1e-3) -> DeterminantResult:
    G = green_matrix(points, alpha, delta)
    sign, logabs = np.linalg.slogdet(G)
    cond = float(np.linalg.cond(G))
    if sign == 0 or not np.isfinite(logabs) or cond * np.finfo(float).eps > 1e-2:
        raise ConditioningError(
            "Green matrix singular at working precision",
            {"alpha": alpha, "delta": delta, "condition": cond, "log_abs_det": float(logabs)},
        )
    log_value = -0.5 * float(logabs)
    return DeterminantResult(math.exp(log_value), log_value, float(sign), cond)


@dataclass(frozen=True)
class ExponentFit:
    p: float
    r2: float
    claimed: float              # N/2
    alphas: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)


def determinant_exponent_sweep(points, delta: float = 1e-3, offsets=SWEEP_OFFSETS) -> ExponentFit:
    """Fit ``p`` in ``|det G|^{-1/2} ~ |1 - alpha|^p`` over ``alpha = 1 +- offsets``."""
    pts = _as_points(points)
    alphas, logs = [], []
    for eps in offsets:
        for a in (1 - eps, 1 + eps):
            alphas.append(a)
            logs.append(green_matrix_det(pts, a, delta).log_value)
    alphas = np.array(alphas)
    x = np.log(np.abs(1 - alphas))
    y = np.array(logs)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return ExponentFit(float(slope), float(r2), len(pts) / 2, alphas, np.exp(y))


@dataclass(frozen=True)
class SeriesBound:
    partial_sums: np.ndarray
    bound: float
    ok: bool


def series_bound_check(g_ren: float, v_sup: float, n_terms: int) -> SeriesBound:
    """Partial sums of ``1 + sum_{n>=1} x^n / (n! sqrt(n))`` with ``x = g_ren v_sup``."""
    if n_terms < 1:
        raise InvalidArgumentError(f"n_terms must be >= 1, got {n_terms}")
    if g_ren < 0 or v_sup < 0:
        raise InvalidArgumentError("g_ren and v_sup must be nonnegative")
    x = g_ren * v_sup
    n = np.arange(1, n_terms + 1, dtype=float)
    if x == 0:
        terms = np.zeros_like(n)
    else:
        terms = np.exp(n * math.log(x) - np.array([math.lgamma(k + 1) for k in n]) - 0.5 * np.log(n))
    sums = 1.0 + np.cumsum(terms)
    bound = math.exp(x)
    return SeriesBound(sums, bound, bool(np.all(sums <= bound * (1 + 1e-15))))


@dataclass(frozen=True)
class FubiniResult:
    analytic: float
    monte_carlo: float
    stderr: float
    discrepancy: float          # relative
    exponent_sign: int          # sign of the computed quartic exponent 1/2 <w, G w>
    matches_displayed_sign: bool


def fubini_quartic_check(G, w, seed: int, draws: int = 10**6, chunk: int = 10**5) -> FubiniResult:
    """Monte Carlo check of ``E[exp(-<v, w>)] = exp(+<w, G w>/2)`` for ``v ~ N(0, G)``.

    The displayed effective weight carries a minus sign in front of the
    quartic term; the identity gives a plus, and the result records that.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    n = G.shape[0]
    if G.shape != (n, n) or w.shape != (n,):
        raise InvalidArgumentError("G must be n x n and w of length n")
    if n > 6:
        raise InvalidArgumentError(f"brute-force check limited to n <= 6, got {n}")
    if np.any(w < 0):
        raise InvalidArgumentError("w must be nonnegative")
    if not np.allclose(G, G.T):
        raise InvalidArgumentError("G must be symmetric")
    try:
        chol = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError("G is not positive definite") from exc
    quad = float(w @ G @ w)
    analytic = math.exp(0.5 * quad)
    rng = np.random.default_rng(seed)
    # <v, w> = <z, L^T w> with z standard normal
    u = chol.T @ w
    total = total2 = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        vals = np.exp(-(rng.standard_normal((m, n)) @ u))
        total += float(vals.sum())
        total2 += float((vals**2).sum())
        done += m
    mean = total / draws
    var = max(total2 / draws - mean**2, 0.0) * draws / max(draws - 1, 1)
    se = math.sqrt(var / draws)
    sign = int(np.sign(quad))
    return FubiniResult(analytic, mean, se, abs(mean - analytic) / analytic, sign, sign <= 0)
