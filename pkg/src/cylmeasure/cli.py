"""Command-line runner: named, seeded experiments with JSON reports and CSV tables.

    cylmeasure run --config exp.json [--set key=value ...] --out DIR
    cylmeasure list [--json]

The output directory defaults to ``$CYLMEASURE_OUT``.  Exit status is 0 when
every verdict passes, 2 when a scientific verdict fails (or a module reports
a numerical failure) and 1 for usage or validation errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import CylMeasureError

SCHEMA_VERSION = "1.0"
OUT_ENV = "CYLMEASURE_OUT"
REQUIRED = object()

EXIT_PASS, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- registry types

@dataclass(frozen=True)
class Param:
    name: str
    kind: str                      # number | integer | string | boolean | array
    default: Any = REQUIRED
    description: str = ""
    minimum: float | None = None
    exclusive_minimum: float | None = None
    maximum: float | None = None
    enum: tuple | None = None
    items: str | None = None       # element kind for arrays
    nullable: bool = False

    def schema(self) -> dict:
        types = {"number": "number", "integer": "integer", "string": "string",
                 "boolean": "boolean", "array": "array"}
        s: dict = {"type": [types[self.kind], "null"] if self.nullable else types[self.kind]}
        if self.description:
            s["description"] = self.description
        if self.default is not REQUIRED:
            s["default"] = _jsonable(self.default)
        for key, val in (("minimum", self.minimum), ("exclusiveMinimum", self.exclusive_minimum),
                         ("maximum", self.maximum)):
            if val is not None:
                s[key] = val
        if self.enum is not None:
            s["enum"] = list(self.enum)
        if self.items is not None:
            s["items"] = {"type": self.items} if self.items != "point" else {
                "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
        return s

    def validate(self, value):
        if value is None:
            if self.nullable:
                return None
            raise UsageError(f"parameter {self.name!r} may not be null")
        if self.kind == "number":
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif self.kind == "integer":
            ok = isinstance(value, int) and not isinstance(value, bool)
            if isinstance(value, float) and value.is_integer():
                value, ok = int(value), True
        elif self.kind == "string":
            ok = isinstance(value, str)
        elif self.kind == "boolean":
            ok = isinstance(value, bool)
        else:
            ok = isinstance(value, list)
        if not ok:
            raise UsageError(f"parameter {self.name!r} must be of type {self.kind}, got {value!r}")
        if self.kind in ("number", "integer"):
            if not math.isfinite(value):
                raise UsageError(f"parameter {self.name!r} must be finite")
            if self.minimum is not None and value < self.minimum:
                raise UsageError(f"parameter {self.name!r} must be >= {self.minimum}, got {value}")
            if self.exclusive_minimum is not None and value <= self.exclusive_minimum:
                raise UsageError(f"parameter {self.name!r} must be > {self.exclusive_minimum}, got {value}")
            if self.maximum is not None and value > self.maximum:
                raise UsageError(f"parameter {self.name!r} must be <= {self.maximum}, got {value}")
        if self.enum is not None and value not in self.enum:
            raise UsageError(f"parameter {self.name!r} must be one of {list(self.enum)}, got {value!r}")
        if self.kind == "array":
            if not value:
                raise UsageError(f"parameter {self.name!r} must be a non-empty list")
            for v in value:
                if self.items == "number" and (isinstance(v, bool) or not isinstance(v, (int, float))
                                               or not math.isfinite(v)):
                    raise UsageError(f"parameter {self.name!r} must hold finite numbers")
                if self.items == "point" and (not isinstance(v, list) or len(v) != 2 or any(
                        isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)):
                    raise UsageError(f"parameter {self.name!r} must hold [x, y] pairs")
        return value


@dataclass
class Outcome:
    results: dict = field(default_factory=dict)    # name -> (value, uncertainty | "exact")
    verdicts: dict = field(default_factory=dict)   # name -> bool
    tables: dict = field(default_factory=dict)     # name -> (header, rows)
    notes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    equations: tuple
    params: tuple
    runner: Callable
    check: Callable | None = None

    def resolve(self, given: dict) -> dict:
        known = {p.name for p in self.params}
        unknown = sorted(set(given) - known)
        if unknown:
            raise UsageError(f"unknown parameter(s) for {self.name!r}: {', '.join(unknown)}")
        out = {}
        for p in self.params:
            if p.name in given:
                out[p.name] = p.validate(given[p.name])
            elif p.default is REQUIRED:
                raise UsageError(f"missing required parameter {p.name!r} for {self.name!r}")
            else:
                out[p.name] = p.default
        if self.check is not None:
            try:
                self.check(out)
            except (CylMeasureError, ValueError) as exc:
                raise UsageError(f"invalid configuration for {self.name!r}: {exc}") from exc
        return out

    def schema(self) -> dict:
        return {
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "title": f"{self.name} experiment configuration",
            "type": "object",
            "properties": {
                "experiment": {"const": self.name},
                "seed": {"type": "integer", "minimum": 0, "default": 0},
                "parameters": {
                    "type": "object",
                    "properties": {p.name: p.schema() for p in self.params},
                    "required": [p.name for p in self.params if p.default is REQUIRED],
                    "additionalProperties": False,
                },
            },
            "required": ["experiment"],
            "additionalProperties": False,
        }


REGISTRY: dict[str, Experiment] = {}


def register(name, summary, equations, params, check=None):
    def wrap(fn):
        REGISTRY[name] = Experiment(name, summary, tuple(equations), tuple(params), fn, check)
        return fn
    return wrap


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


# ---------------------------------------------------------------- experiments

@register(
    "trace", "Momentum-space trace of a fractional resolvent power, with divergence flags",
    ["Tr[((-Lap)^alpha + m^2)^-j] = S_nu int_0^inf k^(nu-1) (k^(2 alpha) + m^2)^-j dk",
     "finite iff 2 alpha j > nu and m^2 > 0"],
    [Param("nu", "integer", 1, "spatial dimension", minimum=1),
     Param("alpha", "number", 1.0, "fractional power", exclusive_minimum=0),
     Param("m2", "number", 1.0, "mass squared", minimum=0),
     Param("j", "integer", 1, "resolvent power", minimum=1)],
)
def _run_trace(p, seed):
    from .spectral_core import momentum_trace

    res = momentum_trace(p["nu"], p["alpha"], p["m2"], p["j"])
    out = Outcome()
    out.results["value"] = (res.value, "exact" if res.divergent else abs(res.value) * 1e-12)
    out.results["divergent"] = (res.divergent, "exact")
    out.results["reason"] = (res.reason or "", "exact")
    rows, ok = [], True
    for nu in (1, 2, 3):
        for alpha in (0.6, 1.0, 1.6, 2.4):
            for j in (1, 2):
                r = momentum_trace(nu, alpha, 1.0, j)
                expected = not (2 * alpha * j > nu)
                ok &= r.divergent == expected
                rows.append([nu, alpha, j, r.divergent, r.value])
    out.tables["divergence_grid"] = (["nu", "alpha", "j", "divergent", "value"], rows)
    out.verdicts["divergence_flags_match_2alphaj_gt_nu"] = bool(ok)
    return out


@register(
    "sample", "Karhunen-Loeve sampling checked through the characteristic functional",
    ["phi = sum_k c_k e_k, c_k ~ N(0, v(lambda_k))",
     "E exp(i <j, phi>) = exp(-1/2 sum_k v(lambda_k) j_k^2)"],
    [Param("modes", "integer", 12, "number of KL modes", minimum=1),
     Param("L", "number", math.pi / 2, "half-length of the interval", exclusive_minimum=0),
     Param("alpha", "number", 1.0, "variance exponent", exclusive_minimum=0),
     Param("m2", "number", 0.5, "variance mass term", minimum=0),
     Param("count", "integer", 100_000, "number of KL samples", minimum=100),
     Param("sources", "integer", 5, "number of random sparse sources", minimum=1)],
)
def _run_sample(p, seed):
    from .gaussian_measure import MeasureSpec, characteristic_functional, empirical_characteristic_functional, \
        sample_coefficients
    from .spectral_core import build_interval_dirichlet

    model = build_interval_dirichlet(p["L"], p["modes"])
    spec = MeasureSpec.power_law(model, p["modes"], p["alpha"], p["m2"])
    coeffs = sample_coefficients(spec, seed, p["count"])
    rng = np.random.default_rng([seed, 1])
    out, rows, ok = Outcome(), [], True
    n = p["modes"]
    for s in range(p["sources"]):
        j = np.zeros(n)
        idx = rng.choice(n, size=int(rng.integers(1, min(n, 5) + 1)), replace=False)
        j[idx] = rng.normal(0, 2, size=len(idx))
        exact = characteristic_functional(spec, j)
        mean, se = empirical_characteristic_functional(coeffs, j)
        z = (mean - exact) / se if se > 0 else 0.0
        ok &= abs(z) < 4
        out.results[f"source_{s}_empirical"] = (mean, se)
        out.results[f"source_{s}_exact"] = (exact, "exact")
        rows.append([s, " ".join(f"{k}:{j[k]!r}" for k in sorted(idx)), exact, mean, se, z])
    out.tables["characteristic"] = (["source", "j", "exact", "empirical", "stderr", "z"], rows)
    out.verdicts["within_4_stderr"] = bool(ok)
    return out


@register(
    "support", "Support classification of canonical variance sequences",
    ["sum_k v_k < inf => L^2 support",
     "sum_k v_k / phi(k) < inf => weighted-sequence support"],
    [Param("N", "integer", 1000, "number of terms", minimum=20),
     Param("gamma", "number", 1.0, "constant (white-noise) variance", exclusive_minimum=0)],
)
def _run_support(p, seed):
    from .gaussian_measure import support_diagnostic

    k = np.arange(1, p["N"] + 1, dtype=float)
    cases = {"inverse_square": (1 / k**2, "hilbert_L2"),
             "constant": (np.full(p["N"], p["gamma"]), "tempered_distribution"),
             "cubic": (k**3, "weighted_sequence(4)")}
    out, rows = Outcome(), []
    for name, (seq, expected) in cases.items():
        label = support_diagnostic(seq)
        out.results[name] = (str(label), "exact")
        out.verdicts[f"{name}_is_{expected}"] = str(label) == expected
        rows.append([name, str(label), label.evidence.get("S_N", float("nan")),
                     label.evidence.get("tail_slope", float("nan"))])
    out.tables["labels"] = (["sequence", "label", "S_N", "tail_slope"], rows)
    return out


@register(
    "kakutani", "Hellinger affinity of two white-noise product measures",
    ["h_k = (2 sqrt(g1 g2) / (g1 + g2))^(1/2)",
     "affinity = prod_k h_k; equivalent iff sum_k (1 - h_k) < inf"],
    [Param("g1", "number", 1.0, "first strength", exclusive_minimum=0),
     Param("g2", "number", 2.0, "second strength", exclusive_minimum=0),
     Param("N", "integer", 100, "number of modes", minimum=1)],
)
def _run_kakutani(p, seed):
    from .gaussian_measure import Verdict, hellinger_affinities, kakutani_affinity

    res = kakutani_affinity(p["g1"], p["g2"], p["N"])
    h = float(hellinger_affinities(p["g1"], p["g2"]))
    direct = 1.0
    rows = []
    for k in range(1, p["N"] + 1):
        direct *= h
        rows.append([k, h, direct])
    out = Outcome()
    out.results["affinity"] = (res.affinity, "exact")
    out.results["direct_product"] = (direct, "exact")
    out.results["verdict"] = (res.verdict.value, "exact")
    if p["g1"] == p["g2"]:
        out.verdicts["affinity_exactly_one"] = res.affinity == 1.0
        out.verdicts["equivalent"] = res.verdict is Verdict.EQUIVALENT
    else:
        out.verdicts["matches_direct_product"] = abs(res.affinity - direct) <= 1e-10 * direct
        out.verdicts["singular"] = res.verdict is Verdict.SINGULAR
    out.tables["partial_products"] = (["k", "h_k", "product"], rows)
    return out


@register(
    "appendixB", "Truncated mass and membership for weighted-sequence support sets",
    ["mu(E_eps) = prod_k (1 + 2 eps alpha_k^2 sigma_k^2)^(-1/2)",
     "x in E_alpha iff sum_k alpha_k^2 x_k^2 < inf"],
    [Param("sigma", "number", 0.8, "exponent s: variances k^-s, alpha_k = k^(s-1)", exclusive_minimum=0.5,
           maximum=1.0),
     Param("eps", "number", 1e-3, "regulator", exclusive_minimum=0),
     Param("N", "integer", 100_000, "number of modes", minimum=1)],
)
def _run_appendix(p, seed):
    from .gaussian_measure import Membership, PowerLaw, support_set_analysis

    s = p["sigma"]
    sig, alpha, beta = PowerLaw(-s), PowerLaw(s - 1), PowerLaw(s - 1.5)
    point = PowerLaw((-2 * (s - 1) - 1) / 2)
    ea = support_set_analysis(sig, alpha, p["eps"], p["N"])
    eb = support_set_analysis(sig, beta, p["eps"], p["N"])
    out = Outcome()
    out.results["mass"] = (ea.mass, "exact")
    out.results["log_mass"] = (ea.log_mass, "exact")
    out.results["point_in_E_beta"] = (eb.membership(point).value, "exact")
    out.results["point_in_E_alpha"] = (ea.membership(point).value, "exact")
    out.verdicts["mass_above_0.99"] = ea.mass >= 0.99
    out.verdicts["point_in_E_beta"] = eb.membership(point) is Membership.MEMBER
    out.verdicts["point_not_in_E_alpha"] = ea.membership(point) is Membership.NON_MEMBER
    return out


@register(
    "holder", "Holder exponent of sampled paths by dyadic increment regression",
    ["E|phi(x + h) - phi(x)| ~ h^gamma", "Brownian bridge: gamma = 1/2; exponentially damped: smooth"],
    [Param("measure", "string", "bridge", "variance family", enum=("bridge", "fishnet", "white")),
     Param("samples", "integer", 500, "number of sampled paths", minimum=100),
     Param("modes", "integer", None, "KL truncation (default 2048, or 12 for fishnet)", minimum=1,
           nullable=True),
     Param("L", "number", 1.0, "half-length", exclusive_minimum=0)],
)
def _run_holder(p, seed):
    from .gaussian_measure import MeasureSpec, holder_exponent_estimate
    from .spectral_core import build_interval_dirichlet

    modes = p["modes"] or (12 if p["measure"] == "fishnet" else 2048)
    model = build_interval_dirichlet(p["L"], modes)
    spec = {"bridge": lambda: MeasureSpec.power_law(model, modes, 1.0, 0.0),
            "fishnet": lambda: MeasureSpec.exponential(model, modes, 1.0),
            "white": lambda: MeasureSpec.white(model, modes, 1.0)}[p["measure"]]()
    est = holder_exponent_estimate(spec, p["samples"], seed)
    out = Outcome()
    out.results["exponent"] = (est.exponent, est.stderr)
    if p["measure"] == "bridge":
        out.verdicts["exponent_within_0.1_of_half"] = abs(est.exponent - 0.5) < 0.1
    elif p["measure"] == "fishnet":
        out.verdicts["exponent_above_0.95"] = est.exponent > 0.95
    out.tables["increments"] = (["log_h", "log_mean_increment"],
                                [[a, b] for a, b in zip(est.log_h, est.log_increment)])
    return out


def _check_points(p):
    from .renorm_lab import RegulatorConfig

    pts = np.asarray(p["points"], dtype=float)
    for i in range(len(pts)):
        for k in range(i):
            if np.all(pts[i] == pts[k]):
                raise ValueError("coincident points")
    for d in p["deltas"]:
        RegulatorConfig(0.5, d)


@register(
    "renorm_det", "Regulated Green-matrix determinant as the power tends to 1",
    ["G_ij = |x_i - x_j|^(2(1-alpha)) Gamma(1-alpha) / Gamma(alpha)",
     "det^(-1/2)[G] ~ (1 - alpha)^p, claimed p = N/2"],
    [Param("points", "array", [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], "planar points", items="point"),
     Param("deltas", "array", [1e-2, 1e-3, 1e-4], "diagonal regulators", items="number")],
    check=_check_points,
)
def _run_renorm(p, seed):
    from .renorm_lab import determinant_exponent_sweep

    out, rows, ps = Outcome(), [], []
    for d in p["deltas"]:
        fit = determinant_exponent_sweep(p["points"], d)
        ps.append(fit.p)
        out.results[f"p_delta_{d!r}"] = (fit.p, "exact")
        out.results[f"r2_delta_{d!r}"] = (fit.r2, "exact")
        out.verdicts[f"r2_above_0.99_delta_{d!r}"] = fit.r2 > 0.99
        for a, v in zip(fit.alphas, fit.values):
            rows.append([d, a, v, fit.p])
    out.results["claimed_p"] = (len(p["points"]) / 2, "exact")
    out.results["p_spread"] = (max(ps) - min(ps), "exact")
    out.verdicts["p_reproducible_within_0.05"] = max(ps) - min(ps) <= 0.05
    out.tables["sweep"] = (["delta", "alpha", "abs_det_inv_sqrt", "fitted_p"], rows)
    return out


@register(
    "series_bound", "Perturbative majorant series against its exponential bound",
    ["sum_n (g V)^n / (n! sqrt(n)) <= exp(g V)"],
    [Param("g_max", "number", 3.0, minimum=0), Param("v_max", "number", 3.0, minimum=0),
     Param("grid", "integer", 7, minimum=2), Param("n_terms", "integer", 30, minimum=1)],
)
def _run_series(p, seed):
    from .renorm_lab import series_bound_check

    out, rows, ok = Outcome(), [], True
    for g in np.linspace(0, p["g_max"], p["grid"]):
        for v in np.linspace(0, p["v_max"], p["grid"]):
            for n in range(1, p["n_terms"] + 1):
                r = series_bound_check(float(g), float(v), n)
                ok &= r.ok and bool(np.all(np.diff(r.partial_sums) >= 0))
            rows.append([float(g), float(v), p["n_terms"], float(r.partial_sums[-1]), r.bound])
    out.verdicts["bounded_and_monotone"] = bool(ok)
    out.tables["partial_sums"] = (["g", "V", "n_terms", "partial_sum", "bound"], rows)
    return out


@register(
    "fubini", "Finite-dimensional Gaussian identity behind the effective quartic weight",
    ["E_v[exp(-<v, w>)] = exp(+1/2 <w, G w>), v ~ N(0, G)"],
    [Param("w", "array", [1.0, 0.5, 0.25], "nonnegative source vector", items="number"),
     Param("draws", "integer", 1_000_000, minimum=100)],
    check=lambda p: _require(len(p["w"]) <= 6 and min(p["w"]) >= 0, "w must be nonnegative with at most 6 entries"),
)
def _run_fubini(p, seed):
    from .renorm_lab import fubini_quartic_check

    n = len(p["w"])
    a = np.random.default_rng([seed, 2]).normal(size=(n, n))
    G = a @ a.T / n + 0.5 * np.eye(n)
    res = fubini_quartic_check(G, p["w"], seed, p["draws"])
    out = Outcome()
    out.results["analytic"] = (res.analytic, "exact")
    out.results["monte_carlo"] = (res.monte_carlo, res.stderr)
    out.results["relative_discrepancy"] = (res.discrepancy, res.stderr / res.analytic)
    out.results["quartic_exponent_sign"] = (res.exponent_sign, "exact")
    out.results["matches_displayed_sign"] = (res.matches_displayed_sign, "exact")
    out.verdicts["within_1_percent"] = res.discrepancy < 0.01
    out.tables["kernel"] = ([f"G_{i}" for i in range(n)], G.tolist())
    return out


@register(
    "propagator", "Per-mode propagator closed form against the exact lattice Gaussian integral",
    ["K = sqrt(lambda / sinh(lambda T)) exp{-lambda/(2 sinh) [(phi0^2 + phiT^2) cosh - 2 phi0 phiT] + source terms}",
     "sigma = sigma_cl + sigma_q, K = K_0 exp(-S[sigma_cl])"],
    [Param("lams", "array", [0.5, 1.0, 2.0], items="number"),
     Param("Ts", "array", [0.5, 1.0, 2.0], items="number"),
     Param("slices", "integer", 512, minimum=2),
     Param("source_amplitude", "number", 0.7), Param("source_offset", "number", 0.3),
     Param("source_frequency", "number", 2.0)],
    check=lambda p: _require(min(p["lams"]) > 0 and min(p["Ts"]) > 0, "frequencies and horizons must be positive"),
)
def _run_propagator(p, seed):
    from .propagator_lab import ModeChannel, decomposition_check, lattice_propagator_oracle, \
        mode_propagator_closed_form

    A, c, w = p["source_amplitude"], p["source_offset"], p["source_frequency"]
    rng = np.random.default_rng(seed)
    out, rows = Outcome(), []
    worst_cf = worst_dec = 0.0
    for lam in p["lams"]:
        for T in p["Ts"]:
            a, b = rng.normal(size=2)
            ch = ModeChannel(lam, T, float(a), float(b), lambda t: A * np.cos(w * t) + c)
            cf = mode_propagator_closed_form(ch)[0]
            lat = lattice_propagator_oracle(ch, p["slices"])
            full, split = decomposition_check(ch, p["slices"])
            r1, r2 = math.expm1(lat - cf), math.expm1(full - split)
            worst_cf, worst_dec = max(worst_cf, abs(r1)), max(worst_dec, abs(r2))
            rows.append([lam, T, float(a), float(b), cf, lat, r1, r2])
    out.results["max_closed_vs_lattice"] = (worst_cf, "exact")
    out.results["max_decomposition_defect"] = (worst_dec, "exact")
    out.verdicts["closed_form_within_1e-3"] = worst_cf < 1e-3
    out.verdicts["decomposition_within_1e-3"] = worst_dec < 1e-3
    out.tables["channels"] = (["lambda", "T", "phi0", "phiT", "log_closed", "log_lattice",
                               "ratio_minus_1", "decomposition_minus_1"], rows)
    return out


@register(
    "langevin", "Galerkin Langevin dynamics against its Gibbs law",
    ["da_i = -(2 lambda_i a_i + int V(sum a_j e_j) e_i) dt + sqrt(2 kT dt) xi",
     "rho(a) ~ exp(-(sum lambda_i a_i^2 + int W(sum a_j e_j)) / kT)"],
    [Param("L", "number", 1.0, exclusive_minimum=0),
     Param("kT", "number", 1.0, exclusive_minimum=0),
     Param("dt", "number", 5e-3, exclusive_minimum=0),
     Param("steps", "integer", 1_000_000, minimum=10),
     Param("burn_in", "integer", 10_000, minimum=0),
     Param("coupling", "number", 1.0, "g in V(u) = g u^3", minimum=0),
     Param("ou_lambda", "number", 1.0, exclusive_minimum=0)],
    check=lambda p: _langevin_check(p),
)
def _run_langevin(p, seed):
    from .langevin_sim import GalerkinSystem, LangevinConfig, equilibrium_test, gibbs_marginals, simulate
    from .spectral_core import build_interval_dirichlet

    g = p["coupling"]
    model = build_interval_dirichlet(p["L"], 1)
    quartic = GalerkinSystem(model, V=lambda u: g * u**3, W=lambda u: g * u**4 / 4)
    cfg = LangevinConfig(p["dt"], p["kT"], p["steps"], p["burn_in"], seed)
    stats = simulate(quartic, cfg)
    report = equilibrium_test(stats, quartic, p["kT"])
    ou = GalerkinSystem(model, generator=np.array([[p["ou_lambda"]]]))
    ou_cfg = LangevinConfig(p["dt"], p["kT"], p["steps"], p["burn_in"], seed + 1)
    ou_stats = simulate(ou, ou_cfg)
    target = p["kT"] / (2 * p["ou_lambda"])
    out = Outcome()
    out.results["quartic_ks"] = (float(report.ks[0]), "exact")
    out.results["quartic_second_moment"] = (float(stats.second_moment[0]), float(stats.second_moment_se[0]))
    out.results["quartic_gibbs_second_moment"] = (float(report.expected_second_moment[0]), "exact")
    out.results["ou_variance"] = (float(ou_stats.second_moment[0]), float(ou_stats.second_moment_se[0]))
    out.results["ou_target"] = (target, "exact")
    out.results["tau_int"] = (float(stats.tau_int[0]), "exact")
    out.verdicts["quartic_ks_below_0.05"] = bool(report.ks[0] < 0.05)
    out.verdicts["ou_variance_within_3_stderr"] = bool(
        abs(ou_stats.second_moment[0] - target) < 3 * ou_stats.second_moment_se[0])
    counts, edges = stats.histograms[0]
    grid, cdf = gibbs_marginals(quartic, p["kT"])[0]
    probs = np.diff(np.interp(edges, grid, cdf))
    total = counts.sum()
    out.tables["histogram"] = (["left", "right", "count", "empirical_prob", "gibbs_prob"],
                               [[edges[i], edges[i + 1], int(counts[i]), counts[i] / total, probs[i]]
                                for i in range(len(counts))])
    return out


def _langevin_check(p):
    from .langevin_sim import LangevinConfig

    LangevinConfig(p["dt"], p["kT"], p["steps"], p["burn_in"])
    lam = max((math.pi / (2 * p["L"])) ** 2, p["ou_lambda"])
    if p["dt"] * lam >= 1:
        raise ValueError(f"dt * lambda_max = {p['dt'] * lam:.3g} violates dt * lambda_max < 1")


def _potential(name):
    from .ergodic_wave import Potential

    return Potential.zero() if name == "zero" else Potential.harmonic()


def _ergodic_check(p):
    from .ergodic_wave import ThermostatConfig

    ThermostatConfig(p["dt"], p["kT"], p["friction"], p["steps"], p["burn_in"], 0, p["chains"], p["record_every"])
    a = 2 * p["L"] / p["N"]
    if p["dt"] * 2 / a >= 1:
        raise ValueError(f"dt * 2/a = {p['dt'] * 2 / a:.3g} violates dt * 2/a < 1")


@register(
    "ergodic", "Time average, lattice Gibbs average and bridge expectation of x(0)^2 on a string",
    ["lim (1/T) int_0^T F(x(t)) dt = int F dmu_eq",
     "dmu_eq ~ exp(-(1/2kT) sum a [((x_{l+1} - x_l)/a)^2 + V(x_l)])",
     "int F dmu_eq -> E_bridge[F exp(-(1/2kT) int V(x(s)) ds)]"],
    [Param("N", "integer", 256, minimum=4), Param("L", "number", 1.0, exclusive_minimum=0),
     Param("kT", "number", 1.0, exclusive_minimum=0),
     Param("potential", "string", "zero", enum=("zero", "harmonic")),
     Param("dt", "number", 0.0035, exclusive_minimum=0), Param("friction", "number", 3.0, exclusive_minimum=0),
     Param("steps", "integer", 30_000, minimum=10), Param("burn_in", "integer", 2_000, minimum=0),
     Param("chains", "integer", 200, minimum=1), Param("record_every", "integer", 10, minimum=1),
     Param("gibbs_draws", "integer", 100_000, minimum=100), Param("bridge_draws", "integer", 100_000, minimum=100)],
    check=_ergodic_check,
)
def _run_ergodic(p, seed):
    from .ergodic_wave import (LatticeString, ThermostatConfig, bridge_expectation, continuum_mid_variance,
                               gibbs_average, thermostat_simulate, x_mid)

    pot = _potential(p["potential"])
    s = LatticeString(p["N"], p["L"], potential=pot)
    mid = x_mid(s)

    def f(x):
        return mid(x) ** 2

    cfg = ThermostatConfig(p["dt"], p["kT"], p["friction"], p["steps"], p["burn_in"], seed, p["chains"],
                           p["record_every"])
    t = thermostat_simulate(s, cfg, {"x_mid2": f}).estimates["x_mid2"]
    g = gibbs_average(s, p["kT"], f, p["gibbs_draws"], seed + 1)
    b = bridge_expectation(p["L"], p["kT"], pot, lambda x: x[:, x.shape[1] // 2] ** 2, p["N"],
                           p["bridge_draws"], seed + 2)
    c = 0.0 if p["potential"] == "zero" else 1.0
    exact = continuum_mid_variance(p["L"], p["kT"], c)
    out = Outcome()
    out.results["time_average"] = (t.value, t.stderr)
    out.results["gibbs_average"] = (g.value, g.stderr)
    out.results["bridge_expectation"] = (b.normalized, b.normalized_stderr)
    out.results["continuum_exact"] = (exact, "exact")
    if p["potential"] == "zero":
        vals = {"time": t.value, "gibbs": g.value, "bridge": b.normalized, "exact": exact}
        names = list(vals)
        for i in range(len(names)):
            for k in range(i + 1, len(names)):
                x, y = vals[names[i]], vals[names[k]]
                out.verdicts[f"{names[i]}_vs_{names[k]}_within_3pct"] = abs(x - y) <= 0.03 * max(abs(x), abs(y))
    else:
        out.verdicts["time_vs_gibbs_within_3_combined_stderr"] = abs(t.value - g.value) < 3 * math.hypot(
            t.stderr, g.stderr)
    out.tables["estimates"] = (["method", "value", "stderr"], [
        ["time_average", t.value, t.stderr], ["gibbs_average", g.value, g.stderr],
        ["bridge_expectation", b.normalized, b.normalized_stderr], ["continuum_exact", exact, 0.0]])
    return out


@register(
    "bridge", "Brownian-bridge expectations with potential reweighting",
    ["E_bridge[F(x) exp(-(1/2kT) int V(x(s)) ds)]", "E_bridge[x(0)^2] = kT L / 2"],
    [Param("L", "number", 1.0, exclusive_minimum=0), Param("kT", "number", 1.0, exclusive_minimum=0),
     Param("potential", "string", "zero", enum=("zero", "harmonic")),
     Param("observable", "string", "x_mid2", enum=("x_mid2", "cos_x_mid", "one")),
     Param("t", "number", 1.0, "frequency for cos_x_mid"),
     Param("N", "integer", 256, minimum=4), Param("draws", "integer", 100_000, minimum=100),
     Param("extrapolate", "boolean", True)],
)
def _run_bridge(p, seed):
    from .ergodic_wave import bridge_expectation, continuum_mid_variance, continuum_partition_ratio

    t = p["t"]
    F = {"x_mid2": lambda x: x[:, x.shape[1] // 2] ** 2,
         "cos_x_mid": lambda x: np.cos(t * x[:, x.shape[1] // 2]),
         "one": lambda x: np.ones(len(x))}[p["observable"]]
    pot = _potential(p["potential"])
    b = bridge_expectation(p["L"], p["kT"], pot, F, p["N"], p["draws"], seed, p["extrapolate"])
    out = Outcome()
    out.results["value"] = (b.value, b.stderr)
    out.results["normalized"] = (b.normalized, b.normalized_stderr)
    out.results["partition_ratio"] = (b.partition_ratio, "exact" if p["potential"] == "zero" else b.stderr)
    out.results["ess_fraction"] = (b.ess_fraction, "exact")
    c = 0.0 if p["potential"] == "zero" else 1.0
    var = continuum_mid_variance(p["L"], p["kT"], c)
    ref = {"x_mid2": var, "cos_x_mid": math.exp(-t * t * var / 2), "one": 1.0}[p["observable"]]
    out.results["continuum_reference"] = (ref, "exact")
    se = max(b.normalized_stderr, 1e-300)
    out.verdicts["normalized_within_3_stderr_of_continuum"] = abs(b.normalized - ref) < 3 * se or b.normalized == ref
    if p["potential"] == "harmonic":
        zref = continuum_partition_ratio(p["L"], 1.0)
        out.results["continuum_partition_ratio"] = (zref, "exact")
        if p["observable"] == "one":
            out.verdicts["partition_within_3_stderr"] = abs(b.value - zref) < 3 * b.stderr
    out.tables["levels"] = (["N", "value", "normalized"], [list(lv) for lv in b.levels])
    return out


# ---------------------------------------------------------------- running & output

def _jsonable(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None


def run_experiment(config: ExperimentConfig) -> tuple[dict, dict]:
    """Validate, run and assemble the report; returns ``(report, tables)``."""
    exp = REGISTRY.get(config.experiment)
    if exp is None:
        raise UsageError(f"unknown experiment {config.experiment!r}; registered: {', '.join(REGISTRY)}")
    if isinstance(config.seed, bool) or not isinstance(config.seed, int) or config.seed < 0:
        raise UsageError(f"seed must be a nonnegative integer, got {config.seed!r}")
    params = exp.resolve(dict(config.parameters))
    start = time.perf_counter()
    outcome = exp.runner(params, config.seed)
    wall = time.perf_counter() - start
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": exp.name,
        "equations": list(exp.equations),
        "parameters": _jsonable(params),
        "seed": config.seed,
        "results": {k: {"value": _jsonable(v), "uncertainty": _jsonable(u)} for k, (v, u) in outcome.results.items()},
        "verdicts": {k: bool(v) for k, v in outcome.verdicts.items()},
        "passed": all(outcome.verdicts.values()),
        "tables": [f"{exp.name}_{name}.csv" for name in outcome.tables],
        "provenance": {"seed": config.seed, "version": __version__, "wall_time_s": wall},
    }
    return report, outcome.tables


def write_outputs(report: dict, tables: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, allow_nan=False) + "\n")
    for name, (header, rows) in tables.items():
        with open(out_dir / f"{report['experiment']}_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])


def registry_document() -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiments": [
            {"name": e.name, "summary": e.summary, "equations": list(e.equations), "config_schema": e.schema()}
            for e in REGISTRY.values()
        ],
    }


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(args) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    unknown = set(data) - {"experiment", "parameters", "seed"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    params = dict(data.get("parameters") or {})
    experiment, seed = data.get("experiment"), data.get("seed", 0)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key == "experiment":
            experiment = value
        elif key == "seed":
            seed = _parse_value(value)
        else:
            params[key] = _parse_value(value)
    if experiment is None:
        raise UsageError("no experiment named (config 'experiment' key or --set experiment=NAME)")
    return ExperimentConfig(experiment, params, seed)


def _print_list(as_json: bool) -> None:
    if as_json:
        print(json.dumps(registry_document(), indent=2))
        return
    for e in REGISTRY.values():
        print(f"{e.name}: {e.summary}")
        for eq in e.equations:
            print(f"    eq: {eq}")
        for prm in e.params:
            default = "required" if prm.default is REQUIRED else f"default {prm.default!r}"
            print(f"    {prm.name} ({prm.kind}, {default}){' - ' + prm.description if prm.description else ''}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cylmeasure", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a parameter (JSON value)")
    run.add_argument("--out", help=f"output directory (default ${OUT_ENV})")
    lst = sub.add_parser("list", help="list registered experiments")
    lst.add_argument("--json", action="store_true", help="emit JSON schemas")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    if args.command == "list":
        _print_list(args.json)
        return EXIT_PASS
    try:
        config = _load_config(args)
        out = args.out or os.environ.get(OUT_ENV)
        if not out:
            raise UsageError(f"no output directory: pass --out or set ${OUT_ENV}")
        report, tables = run_experiment(config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CylMeasureError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_outputs(report, tables, Path(out))
    status = "PASS" if report["passed"] else "FAIL"
    print(f"{report['experiment']}: {status} -> {Path(out) / 'report.json'}")
    return EXIT_PASS if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
