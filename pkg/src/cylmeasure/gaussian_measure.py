"""Truncated Gaussian cylindrical measures and their support diagnostics.

A measure is described by a per-mode variance ``v(lambda_k)`` on top of a
:class:`~cylmeasure.spectral_core.SpectralModel`; samples are Karhunen-Loeve
sums ``sum_k c_k e_k(x)`` with independent ``c_k ~ N(0, v(lambda_k))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalOverflowError
from .spectral_core import SpectralModel


class VarianceKind(str, enum.Enum):
    POWER_LAW = "power_law"      # 1 / (lambda^alpha + m2)
    EXPONENTIAL = "exponential"  # exp(-alpha lambda)
    WHITE = "white"              # gamma


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    model: SpectralModel
    kind: VarianceKind
    truncation: int
    alpha: float = 1.0
    m2: float = 0.0
    gamma: float = 1.0
    variances: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", VarianceKind(self.kind))
        if int(self.truncation) != self.truncation or not 0 <= self.truncation <= self.model.size:
            raise InvalidArgumentError(
                f"truncation must be an integer in [0, {self.model.size}], got {self.truncation}"
            )
        if self.kind is not VarianceKind.WHITE and not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        v = self.variance(self.model.eigenvalues[: int(self.truncation)])
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise InvalidArgumentError("variance must be positive and finite on every retained mode")
        v.setflags(write=False)
        object.__setattr__(self, "variances", v)

    def variance(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind is VarianceKind.POWER_LAW:
                return 1.0 / (lam**self.alpha + self.m2)
            if self.kind is VarianceKind.EXPONENTIAL:
                return np.exp(-self.alpha * lam)
        return np.full(lam.shape, float(self.gamma))

    @classmethod
    def power_law(cls, model, truncation, alpha=1.0, m2=0.0):
        return cls(model, VarianceKind.POWER_LAW, truncation, alpha=alpha, m2=m2)

    @classmethod
    def exponential(cls, model, truncation, alpha=1.0):
        return cls(model, VarianceKind.EXPONENTIAL, truncation, alpha=alpha)

    @classmethod
    def white(cls, model, truncation, gamma=1.0):
        if not gamma > 0:
            raise InvalidArgumentError(f"white-noise strength must be positive, got {gamma}")
        return cls(model, VarianceKind.WHITE, truncation, gamma=gamma)


@dataclass(frozen=True, eq=False)
class FieldSample:
    coefficients: np.ndarray
    model: SpectralModel = field(repr=False)

    def __call__(self, x) -> np.ndarray:
        n = len(self.coefficients)
        x = np.asarray(x, dtype=float)
        if n == 0:
            return np.zeros(np.shape(x)[:1] if self.model.domain.dimension > 1 else np.shape(x))
        return self.coefficients @ self.model.evaluate(x, n)


def sample_coefficients(spec: MeasureSpec, seed: int, count: int) -> np.ndarray:
    """KL coefficient draws, shape ``(count, N)``; deterministic in ``seed``."""
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, spec.truncation)) * np.sqrt(spec.variances)


def sample_kl(spec: MeasureSpec, seed: int, count: int) -> list[FieldSample]:
    coeffs = sample_coefficients(spec, seed, count)
    return [FieldSample(c, spec.model) for c in coeffs]


def characteristic_functional(spec: MeasureSpec, j) -> float:
    """``exp(-1/2 sum_k v(lambda_k) j_k^2)`` for a source given in mode coordinates."""
    j = np.asarray(j, dtype=float)
    if j.ndim != 1 or len(j) > spec.truncation:
        raise InvalidArgumentError(f"source must have at most {spec.truncation} mode coefficients")
    return math.exp(-0.5 * float(np.sum(spec.variances[: len(j)] * j**2)))


def empirical_characteristic_functional(coefficients: np.ndarray, j) -> tuple[float, float]:
    """Monte Carlo mean of ``cos <j, c>`` and its standard error."""
    j = np.asarray(j, dtype=float)
    phase = coefficients[:, : len(j)] @ j
    c = np.cos(phase)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(len(c)))


# ---------------------------------------------------------------------------
# support classification


class SupportTag(str, enum.Enum):
    HILBERT_L2 = "hilbert_L2"
    WEIGHTED_SEQUENCE = "weighted_sequence"
    TEMPERED_DISTRIBUTION = "tempered_distribution"
    SMOOTH_FUNCTION = "smooth_function"


@dataclass(frozen=True)
class SupportLabel:
    tag: SupportTag
    p: int | None = None
    evidence: dict = field(default_factory=dict, compare=False)

    def __str__(self):
        return f"{self.tag.value}({self.p})" if self.p is not None else self.tag.value


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


_BOUNDED_SLOPE = 0.05
_R2_POLY = 0.99


def support_diagnostic(
    variances: Sequence[float],
    growth: Callable[[np.ndarray], np.ndarray] | None = None,
    eigenvalues: Sequence[float] | None = None,
) -> SupportLabel:
    """Classify where a diagonal Gaussian measure lives from its variance sequence.

    Rules, applied in order:

    1. ``log v_k`` linear in ``lambda_k`` with negative slope (R^2 > 0.99),
       i.e. decay faster than any power -> ``smooth_function``. Without
       ``eigenvalues`` the index ``k`` plays the role of ``lambda_k``.
    2. Partial sums ``S_N`` flat on the tail (log-log slope below 0.05) ->
       ``hilbert_L2``.
    3. ``S_N ~ N^p`` with ``round(p) >= 2`` (R^2 > 0.99, slope stable between the
       two halves of the tail) -> ``weighted_sequence(round(p))``.
    4. Anything else (white-noise-like linear growth, slowly decaying
       variances, super-polynomial growth) -> ``tempered_distribution``.

    ``growth`` is an optional comparison function; ``max S_N / growth(N)``
    is reported as evidence but does not enter the label.
    """
    v = np.asarray(variances, dtype=float)
    if v.ndim != 1 or len(v) == 0:
        raise InvalidArgumentError("variance sequence must be a non-empty 1-D sequence")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise InvalidArgumentError("variances must be positive and finite")
    n = len(v)
    k = np.arange(1, n + 1, dtype=float)
    partial = np.cumsum(v)
    evidence: dict = {"N": n, "S_N": float(partial[-1])}
    if growth is not None:
        phi = np.asarray(growth(k), dtype=float)
        evidence["max_S_over_phi"] = float(np.max(partial / phi))

    lam = k if eigenvalues is None else np.asarray(eigenvalues, dtype=float)[:n]
    if n >= 4:
        c, _, r2 = _linfit(lam, np.log(v))
        if c < 0 and r2 > _R2_POLY and np.all(np.diff(v) < 0):
            evidence.update(decay_rate=-c, r2=r2)
            return SupportLabel(SupportTag.SMOOTH_FUNCTION, None, evidence)

    # tail: geometric sample of indices in [N/10, N]
    lo = max(1, n // 10)
    idx = np.unique(np.geomspace(lo, n, num=min(64, n - lo + 1)).astype(int)) - 1
    if len(idx) < 3:
        idx = np.arange(n)
    lx, ly = np.log(k[idx]), np.log(partial[idx])
    slope, _, r2 = _linfit(lx, ly)
    evidence.update(tail_slope=slope, r2=r2)
    if slope < _BOUNDED_SLOPE:
        return SupportLabel(SupportTag.HILBERT_L2, None, evidence)
    half = len(idx) // 2
    s1 = _linfit(lx[: half + 1], ly[: half + 1])[0]
    s2 = _linfit(lx[half:], ly[half:])[0]
    stable = abs(s2 - s1) < 0.1 * max(abs(slope), 1.0)
    if r2 > _R2_POLY and stable and round(slope) >= 2:
        return SupportLabel(SupportTag.WEIGHTED_SEQUENCE, int(round(slope)), evidence)
    return SupportLabel(SupportTag.TEMPERED_DISTRIBUTION, None, evidence)


# ---------------------------------------------------------------------------
# Kakutani dichotomy


class Verdict(str, enum.Enum):
    EQUIVALENT = "equivalent"
    SINGULAR = "singular"
    UNDECIDED = "undecided_at_N"


@dataclass(frozen=True)
class KakutaniResult:
    affinity: float
    verdict: Verdict
    log_affinity: float
    hellinger_series: float


def _as_sequence(seq, N: int) -> np.ndarray:
    if callable(seq):
        return np.asarray(seq(np.arange(1, N + 1)), dtype=float) * np.ones(N)
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 0:
        return np.full(N, float(arr))
    if len(arr) < N:
        raise InvalidArgumentError(f"sequence has {len(arr)} entries, truncation needs {N}")
    return arr[:N]


def hellinger_affinities(g1, g2) -> np.ndarray:
    """Per-mode affinity ``(2 sqrt(g1 g2) / (g1 + g2))^{1/2}`` of N(0, g1) and N(0, g2)."""
    g1, g2 = np.asarray(g1, dtype=float), np.asarray(g2, dtype=float)
    h = np.sqrt(2.0 * np.sqrt(g1 * g2) / (g1 + g2))
    return np.where(g1 == g2, 1.0, h)


def kakutani_affinity(gamma1, gamma2, N: int) -> KakutaniResult:
    """Hellinger affinity of two centred product Gaussian measures truncated at ``N``.

    The verdict looks at ``d_k = 1 - h_k`` on the second half of the
    truncation: identically zero -> equivalent (the measures differ in
    finitely many modes); a positive constant -> singular; a clean power law
    ``k^{-s}`` -> decided by the p-series test; otherwise undecided.
    """
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    g1, g2 = _as_sequence(gamma1, N), _as_sequence(gamma2, N)
    if np.any(~(g1 > 0)) or np.any(~(g2 > 0)):
        raise InvalidArgumentError("variance sequences must be positive")
    h = hellinger_affinities(g1, g2)
    log_aff = float(np.sum(np.log(h)))
    d = 1.0 - h
    series = float(np.sum(d))
    tail = d[N // 2:]
    verdict = Verdict.UNDECIDED
    if np.all(tail == 0):
        verdict = Verdict.EQUIVALENT
    elif np.all(tail > 0):
        if tail.max() - tail.min() <= 1e-12 * tail.max():
            verdict = Verdict.SINGULAR
        elif len(tail) >= 8:
            kk = np.arange(N // 2 + 1, N + 1, dtype=float)
            slope, _, r2 = _linfit(np.log(kk), np.log(tail))
            if r2 > 0.999 and abs(slope + 1.0) > 0.1:
                verdict = Verdict.EQUIVALENT if slope < -1.0 else Verdict.SINGULAR
    return KakutaniResult(math.exp(log_aff), verdict, log_aff, series)


# ---------------------------------------------------------------------------
# mass and membership of weighted l2 sets


@dataclass(frozen=True)
class PowerLaw:
    """The sequence ``coefficient * k^exponent`` for ``k = 1, 2, ...``."""

    exponent: float
    coefficient: float = 1.0

    def __call__(self, k):
        return self.coefficient * np.asarray(k, dtype=float) ** self.exponent

    def __mul__(self, other: "PowerLaw") -> "PowerLaw":
        return PowerLaw(self.exponent + other.exponent, self.coefficient * other.coefficient)


class Membership(str, enum.Enum):
    MEMBER = "member"
    NON_MEMBER = "non_member"
    UNDECIDED = "undecided"


def series_converges(seq) -> bool | None:
    """Exact p-series test for a :class:`PowerLaw`; ``None`` for anything else."""
    if not isinstance(seq, PowerLaw):
        return None
    if seq.coefficient == 0:
        return True
    return seq.exponent < -1.0


@dataclass(frozen=True, eq=False)
class SupportSet:
    """The set ``E = {x : sum alpha_k^2 x_k^2 < inf}`` under a diagonal Gaussian measure."""

    sigma: object
    alpha: object
    mass: float
    log_mass: float
    weight_series_converges: bool | None

    def membership(self, point) -> Membership:
        if not (isinstance(point, PowerLaw) and isinstance(self.alpha, PowerLaw)):
            return Membership.UNDECIDED
        converges = series_converges(self.alpha * self.alpha * point * point)
        return Membership.MEMBER if converges else Membership.NON_MEMBER


def support_set_analysis(sigma, alpha, eps: float, N: int) -> SupportSet:
    """Truncated mass ``prod_{k<=N} (1 + 2 eps alpha_k^2 sigma_k^2)^{-1/2}`` of ``E_alpha``.

    ``sigma`` and ``alpha`` may be :class:`PowerLaw` objects, callables of
    ``k`` or explicit arrays. Membership verdicts are only issued for power
    laws.
    """
    if not eps > 0:
        raise InvalidArgumentError(f"regulator eps must be positive, got {eps}")
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    s, a = _as_sequence(sigma, N), _as_sequence(alpha, N)
    if np.any(~(s > 0)) or np.any(~(a > 0)):
        raise InvalidArgumentError("sigma and alpha must be positive")
    log_mass = -0.5 * float(np.sum(np.log1p(2.0 * eps * a**2 * s**2)))
    conv = None
    if isinstance(sigma, PowerLaw) and isinstance(alpha, PowerLaw):
        conv = series_converges(alpha * alpha * sigma * sigma)
    return SupportSet(sigma, alpha, math.exp(log_mass), log_mass, conv)


# ---------------------------------------------------------------------------
# path regularity


@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    stderr: float
    defined: bool = True
    log_h: np.ndarray | None = field(default=None, compare=False, repr=False)
    log_increment: np.ndarray | None = field(default=None, compare=False, repr=False)


DYADIC_LEVELS = tuple(range(3, 10))


def holder_exponent_estimate(
    spec: MeasureSpec, samples: int, seed: int, batches: int = 10
) -> HolderEstimate:
    """Regression estimate of the Holder exponent of sampled paths.

    Mean absolute increments ``E|f(x+h) - f(x)|`` at ``h = 2^-3 .. 2^-9``
    (in units of the domain length) are regressed on ``h`` in log-log
    coordinates. The standard error is the spread of the slope over
    ``batches`` disjoint groups of samples.
    """
    if spec.model.domain.dimension != 1:
        raise InvalidArgumentError("holder estimation needs a one-dimensional domain")
    if samples < 100:
        raise InvalidArgumentError(f"need at least 100 samples, got {samples}")
    if spec.truncation == 0:
        return HolderEstimate(math.nan, math.nan, defined=False)
    a, b = spec.model.domain.bounds
    length = b - a
    finest = 2 ** (max(DYADIC_LEVELS) + 1)
    x = np.linspace(a, b, finest + 1)
    basis = spec.model.evaluate(x, spec.truncation)
    coeffs = sample_coefficients(spec, seed, samples)
    paths = coeffs @ basis
    lags = [finest >> level for level in DYADIC_LEVELS]
    incr = np.array([np.mean(np.abs(paths[:, lag:] - paths[:, :-lag]), axis=1) for lag in lags])
    if not np.all(incr.mean(axis=1) > 0):
        return HolderEstimate(math.nan, math.nan, defined=False)
    log_h = np.log(np.array(lags) / finest)
    log_m = np.log(incr.mean(axis=1))
    slope = _linfit(log_h, log_m)[0]
    groups = np.array_split(np.arange(samples), batches)
    slopes = [_linfit(log_h, np.log(incr[:, g].mean(axis=1)))[0] for g in groups]
    stderr = float(np.std(slopes, ddof=1) / math.sqrt(batches))
    return HolderEstimate(slope, stderr, True, log_h + math.log(length), log_m)


# ---------------------------------------------------------------------------
# bounded interactions


def default_grid(model: SpectralModel, points: int = 257):
    """Trapezoid nodes and weights on a one-dimensional domain."""
    a, b = model.domain.bounds
    x = np.linspace(a, b, points)
    w = np.full(points, (b - a) / (points - 1))
    w[[0, -1]] *= 0.5
    return x, w


def _interaction_exponent(values, F, gamma, g, w):
    fv = np.asarray(F(values), dtype=float)
    if np.any(fv < -gamma - 1e-12 * max(1.0, abs(gamma))):
        raise InvalidArgumentError(f"F violates its declared lower bound -{gamma}")
    q = fv @ w
    if not np.all(np.isfinite(q)):
        raise NumericalOverflowError("interaction integral is not finite")
    return -g * q


def interaction_weight(sample: FieldSample, F, gamma: float, g: float, grid=None) -> float:
    """``exp(-g * int F(phi(x)) dx)`` by quadrature on ``grid = (nodes, weights)``.

    ``F`` must satisfy ``F >= -gamma``; the result is then at most
    ``exp(g * gamma * vol)``, which is checked on every call.
    """
    if g < 0:
        raise InvalidArgumentError(f"coupling must be nonnegative, got {g}")
    x, w = grid if grid is not None else default_grid(sample.model)
    expo = _interaction_exponent(sample(x), F, gamma, g, w)
    bound = g * gamma * float(np.sum(w))
    if expo > bound + 1e-12 * max(1.0, abs(bound)):
        raise NumericalOverflowError("interaction weight exceeds its a-priori bound")
    try:
        return math.exp(expo)
    except OverflowError as err:
        raise NumericalOverflowError("interaction weight overflowed") from err


def partition_estimate(
    spec: MeasureSpec, F, gamma: float, g: float, count: int, seed: int, grid=None
) -> tuple[float, float]:
    """Monte Carlo mean of :func:`interaction_weight` over KL samples, with standard error."""
    if g < 0:
        raise InvalidArgumentError(f"coupling must be nonnegative, got {g}")
    x, w = grid if grid is not None else default_grid(spec.model)
    paths = sample_coefficients(spec, seed, count) @ spec.model.evaluate(x, spec.truncation)
    expo = _interaction_exponent(paths, F, gamma, g, w)
    weights = np.exp(expo)
    if not np.all(np.isfinite(weights)):
        raise NumericalOverflowError("interaction weight overflowed")
    return float(weights.mean()), float(weights.std(ddof=1) / math.sqrt(count))
