"""Scalar phase-transition computations.

On the binary ray ``X = a u u^T`` (``u = e_1 - e_2``) and on the symmetric ray
``X = a (I - 11^T/d)`` the state evolution collapses to ``a_{t+1} = phi(a_t) / kappa``
and exact recovery holds iff ``kappa > sup_a phi(a) / a``. Suprema are taken in
the variable ``x = 1 / sqrt(a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from .model import validate_pi
from .numerics import (
    ExpectationEngine,
    SupResult,
    SupSearchConfig,
    gauss_engine,
    gaussian_expect,
    mc_engine,
    sup_search,
)
from .se import random_laplacian, se_map_f

QUAD_NODES = 201
SYM_SAMPLES = 200_000
SYM_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class ThresholdResult:
    kappa_star: float
    x_star: float
    std_err: float = 0.0
    at_boundary: bool = False
    n_evals: int = 0
    cross_check: float | None = None
    witness: np.ndarray | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {
            "kappa_star": self.kappa_star,
            "x_star": self.x_star,
            "std_err": self.std_err,
            "boundary_flag": self.at_boundary,
        }
        if self.cross_check is not None:
            out["cross_check"] = self.cross_check
        if self.witness is not None:
            out["witness"] = np.asarray(self.witness).tolist()
        return out


def _quad(engine: ExpectationEngine | None) -> ExpectationEngine:
    return engine if engine is not None else gauss_engine(1, QUAD_NODES)


def _g1(engine: ExpectationEngine) -> np.ndarray:
    pts, _ = engine.with_dim(1).nodes()
    return pts[:, 0]


def _mean(values, engine: ExpectationEngine) -> float:
    _, w = engine.with_dim(1).nodes()
    return float(w @ values)


# ---------------------------------------------------------------------------
# Binary and matching cases


def phi_binary(a: float, p: float, engine: ExpectationEngine | None = None) -> float:
    """``E[p(1-p) / (1 - p + p exp(g/sqrt(a) + 1/(2a)))]``, the binary-ray coefficient of ``f``."""
    if a <= 0:
        return 0.0
    eng = _quad(engine)
    g = _g1(eng)
    u = g / math.sqrt(a) + 0.5 / a + math.log(p / (1.0 - p))
    return p * _mean(expit(-u), eng)


def _pair_sup_integrand(x: float, pr: float, ps: float, g: np.ndarray) -> np.ndarray:
    """``pr ps x^2 exp(-x^2/8) / (pr e^{gx/2} + ps e^{-gx/2})`` evaluated stably."""
    y = 0.5 * g * x
    log_den = np.logaddexp(math.log(pr) + y, math.log(ps) - y)
    return pr * ps * x * x * np.exp(-0.125 * x * x - log_den)


def _pair_raw_integrand(x: float, pr: float, ps: float, g: np.ndarray) -> np.ndarray:
    """``x^2 phi(1/x^2)`` before the change of variables."""
    u = g * x + 0.5 * x * x + math.log(pr / ps)
    return x * x * pr * expit(-u)


def _pair_threshold(pr: float, ps: float, engine, sup_cfg: SupSearchConfig) -> ThresholdResult:
    eng = _quad(engine)
    g = _g1(eng)
    res: SupResult = sup_search(lambda x: _mean(_pair_sup_integrand(x, pr, ps, g), eng), sup_cfg)
    raw = sup_search(lambda x: _mean(_pair_raw_integrand(x, pr, ps, g), eng), sup_cfg)
    return ThresholdResult(res.value, res.x_star, 0.0, res.at_boundary, res.n_evals, raw.value)


def kappa_binary(p: float, engine: ExpectationEngine | None = None,
                 sup_cfg: SupSearchConfig = SupSearchConfig()) -> ThresholdResult:
    """Binary threshold ``sup_x E[p(1-p) x^2 e^{-x^2/8} / (p e^{gx/2} + (1-p) e^{-gx/2})]``.

    ``cross_check`` holds the same supremum computed without the change of variables.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return _pair_threshold(p, 1.0 - p, engine, sup_cfg)


def kappa_matching(pi, r: int, s: int, engine: ExpectationEngine | None = None,
                   sup_cfg: SupSearchConfig = SupSearchConfig()) -> ThresholdResult:
    """Threshold at which the edge ``(r, s)`` of a matching start dies out (0-based indices)."""
    pi = validate_pi(pi)
    if r == s:
        raise ValueError("r and s must differ")
    r, s = min(r, s), max(r, s)
    if pi[r] <= 0 or pi[s] <= 0:
        raise ValueError("both categories of the pair need positive mass")
    return _pair_threshold(float(pi[r]), float(pi[s]), engine, sup_cfg)


# ---------------------------------------------------------------------------
# Symmetric case


def phi_sym(a: float, d: int, engine: ExpectationEngine | None = None) -> float:
    """``E[e^{g_2/sqrt a} / (e^{g_1/sqrt a + 1/a} + sum_{r>=2} e^{g_r/sqrt a})]`` by Monte Carlo."""
    if d < 2:
        raise ValueError("d must be at least 2")
    if a <= 0:
        return 0.0
    eng = (engine or mc_engine(d, 100_000)).with_dim(d)
    x = 1.0 / math.sqrt(a)
    return float(gaussian_expect(lambda g: _sym_ratio(x, g), eng).mean)


def _sym_ratio(x: float, g: np.ndarray) -> np.ndarray:
    logits = g * x
    logits[:, 0] += x * x
    return np.exp(logits[:, 1] - logsumexp(logits, axis=1))


def _sym_bounded(x: float, g: np.ndarray) -> np.ndarray:
    """``x^2 e^{g_2 x} / (e^{g_1 x + x^2} + sum_{r>=2} e^{g_r x})``; lies in ``[0, x^2]``."""
    return x * x * _sym_ratio(x, g)


def _sym_shifted(x: float, g: np.ndarray) -> np.ndarray:
    """The same quantity after ``g_1 + x -> g_1``; unbounded in ``g``."""
    gx = g * x
    return x * x * np.exp(-0.5 * x * x + gx[:, 0] + gx[:, 1] - logsumexp(gx, axis=1))


def kappa_sym(d: int, n_samples: int = SYM_SAMPLES, seeds=SYM_SEEDS,
              sup_cfg: SupSearchConfig = SupSearchConfig(), form: str = "bounded") -> ThresholdResult:
    """Symmetric-prior threshold by Monte Carlo with common random numbers across ``x``.

    The replicate seeds are pooled into one sample before taking the supremum.
    ``form="shifted"`` uses the change-of-variables integrand instead; it has the
    same mean but a much larger variance.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    integrand = {"bounded": _sym_bounded, "shifted": _sym_shifted}[form]
    engines = [mc_engine(d, n_samples, seed) for seed in seeds]
    pools = [e.nodes()[0] for e in engines]

    def pooled(x: float) -> float:
        return float(np.mean([integrand(x, g).mean() for g in pools]))

    res = sup_search(pooled, sup_cfg)
    # pair means (antithetic) across all replicates give the standard error at x*
    units = []
    for g in pools:
        v = integrand(res.x_star, g)
        half = v.shape[0] // 2
        units.append(0.5 * (v[:half] + v[half:]))
    units = np.concatenate(units)
    se = float(units.std(ddof=1) / math.sqrt(units.size))
    return ThresholdResult(res.value, res.x_star, se, res.at_boundary, res.n_evals)


def sym_asymptotic_ratio(d: int, **kwargs) -> float:
    """``kappa_sym(d) * d / log d``; bracketed by constants near 1 and 2 for large ``d``."""
    if d < 3:
        raise ValueError("d must be at least 3")
    return kappa_sym(d, **kwargs).kappa_star * d / math.log(d)


# ---------------------------------------------------------------------------
# Scalar state evolution


@dataclass(frozen=True)
class ScalarMap:
    """A one-dimensional reduction ``X = a B`` of state evolution.

    ``trace`` is ``tr(B)`` (so ``MSE = kappa * trace * a``) and ``prior`` is the
    value of ``a`` for which ``a B = D - pi pi^T``.
    """

    phi: Callable[[float], float]
    trace: float
    prior: float

    @classmethod
    def binary(cls, p: float, engine: ExpectationEngine | None = None) -> "ScalarMap":
        eng = _quad(engine)
        return cls(lambda a: phi_binary(a, p, eng), 2.0, p * (1.0 - p))

    @classmethod
    def symmetric(cls, d: int, engine: ExpectationEngine | None = None) -> "ScalarMap":
        eng = (engine or mc_engine(d, 100_000)).with_dim(d)
        return cls(lambda a: phi_sym(a, d, eng), float(d - 1), 1.0 / d)


@dataclass
class ScalarSEResult:
    a_star: float
    trajectory: np.ndarray
    mse: np.ndarray
    mse_limit: float
    converged: bool


def scalar_se(spec, kappa: float, a0: float | None = None, max_iter: int = 10_000,
              tol: float = 1e-12) -> ScalarSEResult:
    """Iterate ``a_{t+1} = phi(a_t) / kappa``.

    ``spec`` is either ``p`` (binary) or a ``ScalarMap``. The default start is
    the non-informative point. The limiting MSE is ``kappa * tr(B) * a*``.
    """
    smap = spec if isinstance(spec, ScalarMap) else ScalarMap.binary(float(spec))
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    a = smap.prior / kappa if a0 is None else float(a0)
    if a < 0:
        raise ValueError("a0 must be non-negative")
    traj = [a]
    converged = False
    for _ in range(max_iter):
        a_new = smap.phi(a) / kappa
        traj.append(a_new)
        if abs(a_new - a) <= tol * max(1.0, a):
            converged = True
            a = a_new
            break
        a = a_new
    traj = np.array(traj)
    return ScalarSEResult(a, traj, kappa * smap.trace * traj, kappa * smap.trace * a, converged)


def scalar_fixed_points(spec, kappa: float, a_min: float = 1e-4, a_max: float | None = None,
                        grid_points: int = 400) -> list[float]:
    """Positive roots of ``phi(a)/kappa - a``, bracketed on a log grid and refined by Brent's method."""
    smap = spec if isinstance(spec, ScalarMap) else ScalarMap.binary(float(spec))
    a_max = a_max if a_max is not None else 2.0 * smap.prior / kappa
    grid = np.geomspace(a_min, a_max, grid_points)

    def gap(a):
        return smap.phi(a) / kappa - a

    vals = np.array([gap(a) for a in grid])
    roots = []
    for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        roots.append(float(brentq(gap, grid[k], grid[k + 1], xtol=1e-14, rtol=1e-12)))
    return roots


# ---------------------------------------------------------------------------
# General case


def _ray_sup(direction: np.ndarray, pi, engine: ExpectationEngine, sup_cfg: SupSearchConfig) -> SupResult:
    """``sup_x lambda_max(f(X / x^2)) x^2`` along the ray through a unit-norm ``X``."""

    def ratio(x: float) -> float:
        fx = se_map_f(direction / (x * x), pi, engine, check=False).x
        return float(np.linalg.eigvalsh(fx)[-1]) * x * x

    return sup_search(ratio, sup_cfg)


def kappa_general_lower_bound(pi, n_random: int = 200, engine: ExpectationEngine | None = None,
                              seed: int = 0, sup_cfg: SupSearchConfig = SupSearchConfig(grid_points=40),
                              coarse_points: int = 12) -> ThresholdResult:
    """Lower bound on ``sup_{X} lambda_max(f(X)) / lambda_max(X)`` over the Laplacian cone.

    Deterministic rays (the non-informative direction, the symmetric direction
    and every single edge) get a full supremum search; random Laplacians at
    random density are scanned on a coarse grid of scales. The value is the
    largest ratio seen, so it can only underestimate the supremum, up to the
    Monte Carlo error of the individual evaluations.
    """
    pi = validate_pi(pi)
    d = len(pi)
    if n_random < 1:
        raise ValueError("n_random must be at least 1")
    if engine is None:
        engine = gauss_engine(1, QUAD_NODES) if d == 2 else mc_engine(d, 20_000, seed)
    rays = [np.diag(pi) - np.outer(pi, pi), np.eye(d) - np.ones((d, d)) / d]
    for r in range(d):
        for s in range(r + 1, d):
            e = np.zeros((d, d))
            e[[r, s], [r, s]] = 1.0
            e[r, s] = e[s, r] = -1.0
            rays.append(e)
    best = ThresholdResult(0.0, math.nan)
    n_evals = 0
    for ray in rays:
        unit = ray / np.linalg.eigvalsh(ray)[-1]
        res = _ray_sup(unit, pi, engine, sup_cfg)
        n_evals += res.n_evals
        if res.value > best.kappa_star:
            best = ThresholdResult(res.value, res.x_star, 0.0, res.at_boundary, 0, None, unit)
    if d > 2:
        rng = np.random.default_rng(seed)
        xs = SupSearchConfig(sup_cfg.x_min, sup_cfg.x_max, coarse_points).grid()
        for _ in range(n_random):
            lap = random_laplacian(d, rng, density=rng.uniform(0.3, 1.0))
            top = np.linalg.eigvalsh(lap)[-1]
            if top <= 0:
                continue
            unit = lap / top
            for x in xs:
                fx = se_map_f(unit / (x * x), pi, engine, check=False).x
                val = float(np.linalg.eigvalsh(fx)[-1]) * x * x
                n_evals += 1
                if val > best.kappa_star:
                    best = ThresholdResult(val, float(x), 0.0, False, 0, None, unit)
    return ThresholdResult(best.kappa_star, best.x_star, best.std_err, best.at_boundary, n_evals, None, best.witness)
