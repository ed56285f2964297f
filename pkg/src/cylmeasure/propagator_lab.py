"""Per-mode field propagators with source, and an exact lattice oracle.

One mode of the field evolves under the Euclidean action

    S[c] = 1/2 int_0^T (c'^2 + lambda^2 c^2) dt - int_0^T j c dt

with ``c(0) = phi0`` and ``c(T) = phiT``.  The kernel ``K = int Dc exp(-S)``
is normalised so that the free kernel (lambda -> 0, j = 0, zero boundary
data) equals ``sqrt(1/T)``.  The source couples through ``exp(+int j c)``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, linalg

from .errors import DomainError, InvalidArgumentError


class Variant(str, enum.Enum):
    HYPERBOLIC = "hyperbolic"
    TRIGONOMETRIC = "trigonometric"


@dataclass(frozen=True, eq=False)
class ModeChannel:
    lam: float
    T: float
    phi0: float = 0.0
    phiT: float = 0.0
    j: Callable | np.ndarray | float | None = None
    variant: Variant = Variant.HYPERBOLIC

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.T > 0:
            raise InvalidArgumentError(f"T must be positive, got {self.T}")
        if not self.lam > 0:
            raise InvalidArgumentError(f"lambda must be positive, got {self.lam}")
        if self.variant is Variant.TRIGONOMETRIC and math.sin(self.lam * self.T) <= 0:
            raise DomainError(f"sin(lambda T) = {math.sin(self.lam * self.T):.3g} <= 0")
        if isinstance(self.j, np.ndarray) and (self.j.ndim != 1 or len(self.j) < 3):
            raise InvalidArgumentError("source samples must be a 1-D array of at least 3 points")

    def source(self, t: np.ndarray) -> np.ndarray:
        """Source evaluated on ``t``; sample arrays live on a uniform grid of [0, T]."""
        t = np.asarray(t, dtype=float)
        if self.j is None:
            return np.zeros_like(t)
        if callable(self.j):
            return np.asarray(self.j(t), dtype=float) * np.ones_like(t)
        if np.ndim(self.j) == 0:
            return np.full_like(t, float(self.j))
        grid = np.linspace(0.0, self.T, len(self.j))
        if len(grid) == len(t) and np.allclose(grid, t):
            return np.asarray(self.j, dtype=float)
        return np.interp(t, grid, self.j)

    def source_grid(self, minimum: int = 2049) -> np.ndarray:
        n = len(self.j) if isinstance(self.j, np.ndarray) else minimum
        return np.linspace(0.0, self.T, n)

    def reflected(self) -> "ModeChannel":
        """Swap the ends: ``(phi0, j(t)) <-> (phiT, j(T - t))``."""
        if callable(self.j):
            f, T = self.j, self.T
            j = lambda t: f(T - np.asarray(t))  # noqa: E731
        elif self.j is None or np.ndim(self.j) == 0:
            j = self.j
        else:
            j = np.asarray(self.j)[::-1].copy()
        return ModeChannel(self.lam, self.T, self.phiT, self.phi0, j, self.variant)


def _trig(variant: Variant):
    if variant is Variant.HYPERBOLIC:
        return np.sinh, np.cosh
    return np.sin, np.cos


def mode_propagator_closed_form(ch: ModeChannel) -> tuple[float, float]:
    """(log |K|, sign) of the closed-form kernel.

    The trigonometric variant is the sin/cos form obtained by ``lambda -> i
    lambda``; it is the kernel of the inverted oscillator and is only real for
    ``sin(lambda T) > 0``.
    """
    s, c = _trig(ch.variant)
    lam, T = ch.lam, ch.T
    sT, cT = float(s(lam * T)), float(c(lam * T))
    if sT <= 0:
        raise DomainError(f"sin(lambda T) = {sT:.3g} <= 0")
    log_k = 0.5 * math.log(lam / sT)
    log_k -= lam / (2.0 * sT) * ((ch.phi0**2 + ch.phiT**2) * cT - 2.0 * ch.phi0 * ch.phiT)
    if ch.j is not None:
        t = ch.source_grid()
        j = ch.source(t)
        fwd = j * s(lam * t)
        bwd = j * s(lam * (T - t))
        inner = integrate.cumulative_simpson(fwd, x=t, initial=0.0)
        log_k += ch.phiT / sT * integrate.simpson(fwd, x=t)
        log_k += ch.phi0 / sT * integrate.simpson(bwd, x=t)
        log_k += integrate.simpson(bwd * inner, x=t) / (lam * sT)
    return float(log_k), 1.0


def _lattice_log_integral(lam2, T, phi0, phiT, j, M):
    """log of int prod dc_i exp(-S_lattice) over the M-1 interior points."""
    dt = T / M
    w = np.full(M + 1, dt)
    w[[0, -1]] *= 0.5
    n = M - 1
    diag = np.full(n, 2.0 / dt) + lam2 * w[1:-1]
    off = np.full(n - 1, -1.0 / dt)
    b = j[1:-1] * w[1:-1]
    b[0] += phi0 / dt
    b[-1] += phiT / dt
    const = (phi0**2 + phiT**2) / (2.0 * dt) + 0.5 * lam2 * (w[0] * phi0**2 + w[-1] * phiT**2)
    const -= w[0] * j[0] * phi0 + w[-1] * j[-1] * phiT
    if n == 1:
        logdet = math.log(diag[0])
        sol = b / diag
    else:
        # Cholesky of the symmetric positive tridiagonal matrix
        ab = np.vstack([np.concatenate([[0.0], off]), diag])
        cb = linalg.cholesky_banded(ab)
        logdet = 2.0 * float(np.sum(np.log(cb[-1])))
        sol = linalg.cho_solve_banded((cb, False), b)
    return 0.5 * n * math.log(2 * math.pi) - 0.5 * logdet + 0.5 * float(b @ sol) - const


def lattice_propagator_oracle(ch: ModeChannel, slices: int) -> float:
    """Exact log value of the M-slice Gaussian integral, free-normalised to ``sqrt(1/T)``.

    Only the hyperbolic (Euclidean) problem has a convergent lattice integral.
    """
    M = int(slices)
    if M < 2:
        raise InvalidArgumentError(f"need at least 2 slices, got {slices}")
    if M < 32:
        warnings.warn(f"{M} slices: lattice error may exceed 1e-3", RuntimeWarning, stacklevel=2)
    t = np.linspace(0.0, ch.T, M + 1)
    full = _lattice_log_integral(ch.lam**2, ch.T, ch.phi0, ch.phiT, ch.source(t), M)
    free = _lattice_log_integral(0.0, ch.T, 0.0, 0.0, np.zeros(M + 1), M)
    return full - free - 0.5 * math.log(ch.T)


@dataclass(frozen=True)
class ClassicalSolution:
    t: np.ndarray
    sigma: np.ndarray
    residual: float


def classical_field_bvp(lam: float, T: float, j, phi0: float, phiT: float, points: int = 257) -> ClassicalSolution:
    """Solve ``(-d^2/dt^2 + lambda^2) sigma = j`` with Dirichlet data by central differences."""
    if points < 16:
        raise InvalidArgumentError(f"need at least 16 grid points, got {points}")
    ch = ModeChannel(lam, T, phi0, phiT, j)
    t = np.linspace(0.0, T, points)
    h = t[1] - t[0]
    f = ch.source(t)
    n = points - 2
    rhs = f[1:-1].copy()
    rhs[0] += phi0 / h**2
    rhs[-1] += phiT / h**2
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0 / h**2
    ab[1, :] = 2.0 / h**2 + lam**2
    ab[2, :-1] = -1.0 / h**2
    interior = linalg.solve_banded((1, 1), ab, rhs)
    sigma = np.concatenate([[phi0], interior, [phiT]])
    lhs = -(sigma[2:] - 2 * sigma[1:-1] + sigma[:-2]) / h**2 + lam**2 * sigma[1:-1]
    scale = max(1.0, float(np.max(np.abs(f[1:-1]))))
    residual = float(np.max(np.abs(lhs - f[1:-1]))) / scale
    return ClassicalSolution(t, sigma, residual)


def classical_action(lam: float, sol: ClassicalSolution, j) -> float:
    """``1/2 int (sigma'^2 + lambda^2 sigma^2) - int j sigma`` on the solution grid."""
    ch = ModeChannel(lam, float(sol.t[-1]), j=j)
    ds = np.gradient(sol.sigma, sol.t, edge_order=2)
    f = ch.source(sol.t)
    return float(integrate.simpson(0.5 * (ds**2 + lam**2 * sol.sigma**2) - f * sol.sigma, x=sol.t))


def decomposition_check(ch: ModeChannel, slices: int = 512, points: int = 2049) -> tuple[float, float]:
    """(lattice log K, fluctuation log K0 - classical action); equal up to discretisation error."""
    full = lattice_propagator_oracle(ch, slices)
    bare = lattice_propagator_oracle(ModeChannel(ch.lam, ch.T), slices)
    sol = classical_field_bvp(ch.lam, ch.T, ch.j, ch.phi0, ch.phiT, points)
    return full, bare - classical_action(ch.lam, sol, ch.j)


def kernel(lam: float, T: float, phi0: float, phiT: float) -> float:
    """Source-free hyperbolic kernel value."""
    return math.exp(mode_propagator_closed_form(ModeChannel(lam, T, phi0, phiT))[0])


def schrodinger_residual(lam: float, T: float, phi0: float, phiT: float, h: float) -> float:
    """Central-difference residual of ``dK/dT - 1/2 d^2K/dphiT^2 + 1/2 lambda^2 phiT^2 K``."""
    dT = (kernel(lam, T + h, phi0, phiT) - kernel(lam, T - h, phi0, phiT)) / (2 * h)
    d2 = (kernel(lam, T, phi0, phiT + h) - 2 * kernel(lam, T, phi0, phiT)
          + kernel(lam, T, phi0, phiT - h)) / h**2
    return dT - 0.5 * d2 + 0.5 * lam**2 * phiT**2 * kernel(lam, T, phi0, phiT)


def kernel_width_squared(lam: float, T: float) -> float:
    """Variance in ``phiT`` of the source-free hyperbolic kernel: ``tanh(lambda T) / lambda``."""
    return math.tanh(lam * T) / lam


@dataclass(frozen=True)
class ProductResult:
    log_value: float
    terms: np.ndarray
    converged: bool


def multi_mode_log_product(channels, tol: float = 1e-8) -> ProductResult:
    """Sum of per-mode log kernels, each relative to its free kernel.

    The finite product is always defined; the sum is flagged as not converged
    (with a RuntimeWarning) when the last half of the terms is not negligible.
    """
    terms = []
    for ch in channels:
        terms.append(mode_propagator_closed_form(ch)[0] + 0.5 * math.log(ch.T))
    terms = np.array(terms)
    if len(terms) == 0:
        return ProductResult(0.0, terms, True)
    tail = float(np.sum(np.abs(terms[len(terms) // 2:])))
    total = float(np.sum(terms))
    converged = tail <= tol * max(1.0, abs(total))
    if not converged:
        warnings.warn("mode product does not converge: log-factors are not summable",
                      RuntimeWarning, stacklevel=2)
    return ProductResult(total, terms, converged)
