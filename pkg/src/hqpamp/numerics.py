"""Shared numerical kernels.

PSD spectral helpers with an explicit null-space convention, seeded Gaussian
expectations (Monte Carlo or Gauss-Hermite), and a scalar supremum search on a
log grid followed by golden-section refinement.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

DEFAULT_NULL_TOL = 1e-10
_SYM_TOL = 1e-10


class NumericsError(ValueError):
    """Raised when an input violates a kernel's numerical contract."""


@dataclass(frozen=True)
class SpectralPsd:
    """Eigendecomposition of a symmetric PSD matrix.

    Eigenvalues are sorted in descending order. Anything below
    ``null_tol * lambda_max`` has been set to exactly zero.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    null_tol: float = DEFAULT_NULL_TOL

    @classmethod
    def from_matrix(cls, x, null_tol: float = DEFAULT_NULL_TOL, check: bool = True) -> "SpectralPsd":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise NumericsError(f"expected a square matrix, got shape {x.shape}")
        scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
        asym = float(np.max(np.abs(x - x.T))) if x.size else 0.0
        if check and asym > _SYM_TOL * scale:
            raise NumericsError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        lam, vec = np.linalg.eigh(0.5 * (x + x.T))
        lam, vec = lam[::-1], vec[:, ::-1]
        lam_max = float(lam[0]) if lam.size else 0.0
        if check and lam.size and lam[-1] < -_SYM_TOL * max(1.0, abs(lam_max)):
            raise NumericsError(f"matrix is indefinite (lambda_min = {lam[-1]:.3e})")
        cutoff = null_tol * max(lam_max, 0.0)
        lam = np.where(lam > cutoff, lam, 0.0)
        if lam_max <= 0.0:
            lam = np.zeros_like(lam)
        return cls(lam, vec, null_tol)

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues))

    @property
    def range_basis(self) -> np.ndarray:
        return self.eigenvectors[:, : self.rank]

    @property
    def null_basis(self) -> np.ndarray:
        return self.eigenvectors[:, self.rank :]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    def _apply_power(self, power: float) -> np.ndarray:
        k = self.rank
        v = self.eigenvectors[:, :k]
        return (v * self.eigenvalues[:k] ** power) @ v.T

    def sqrt(self) -> np.ndarray:
        return self._apply_power(0.5)

    def pinv(self) -> np.ndarray:
        return self._apply_power(-1.0)

    def pinv_sqrt(self) -> np.ndarray:
        return self._apply_power(-0.5)

    def null_fraction(self, v: np.ndarray) -> float:
        """Norm of the null-space component of ``v`` relative to ``||v||``."""
        v = np.asarray(v, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return 0.0
        return float(np.linalg.norm(self.null_basis.T @ v)) / nv


def psd_pinv_sqrt_apply(x, v, null_tol: float = DEFAULT_NULL_TOL) -> tuple[np.ndarray, bool]:
    """Apply ``X^{-1/2}`` to ``v`` on the range of ``X``.

    Returns ``(w, in_range)``. ``in_range`` is False when ``v`` has a null-space
    component larger than ``null_tol * ||v||``; callers read that as an infinite
    effective resistance.
    """
    spec = SpectralPsd.from_matrix(x, null_tol=null_tol)
    v = np.asarray(v, dtype=float)
    w = spec.pinv_sqrt() @ v
    # eigenvector round-off is ~1e-15; do not let it masquerade as a null component
    in_range = spec.null_fraction(v) <= max(null_tol, 1e-12)
    return w, bool(in_range)


# ---------------------------------------------------------------------------
# Gaussian expectations


@dataclass(frozen=True)
class ExpectationEngine:
    """Configuration for ``E_g[.]`` with ``g ~ N(0, I_dim)``.

    Identical configurations produce bit-identical node sets, which is what the
    common-random-numbers comparisons rely on.
    """

    dim: int
    method: str = "monte-carlo"
    n_samples: int = 20_000
    n_nodes: int = 61
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.method not in ("monte-carlo", "gauss-hermite"):
            raise NumericsError(f"unknown method {self.method!r}")
        if self.dim < 0:
            raise NumericsError("dim must be non-negative")
        if self.method == "gauss-hermite" and self.dim > 2:
            raise NumericsError("gauss-hermite is limited to dim <= 2")
        if self.method == "monte-carlo" and self.n_samples < 2:
            raise NumericsError("n_samples must be at least 2")

    def with_dim(self, dim: int) -> "ExpectationEngine":
        return self if dim == self.dim else replace(self, dim=dim)

    def with_samples(self, n_samples: int) -> "ExpectationEngine":
        return replace(self, n_samples=n_samples)

    @property
    def is_quadrature(self) -> bool:
        return self.method == "gauss-hermite"

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(points, weights)``; points has shape ``(N, dim)``."""
        return _engine_nodes(self)


def gauss_engine(dim: int, n_nodes: int = 61) -> ExpectationEngine:
    return ExpectationEngine(dim=dim, method="gauss-hermite", n_nodes=n_nodes)


def mc_engine(dim: int, n_samples: int = 20_000, seed: int = 0, antithetic: bool = True) -> ExpectationEngine:
    return ExpectationEngine(dim=dim, method="monte-carlo", n_samples=n_samples, seed=seed, antithetic=antithetic)


@functools.lru_cache(maxsize=64)
def _engine_nodes(engine: ExpectationEngine) -> tuple[np.ndarray, np.ndarray]:
    dim = engine.dim
    if engine.method == "gauss-hermite":
        t, w = np.polynomial.hermite_e.hermegauss(engine.n_nodes)
        w = w / math.sqrt(2.0 * math.pi)
        if dim == 0:
            pts, wts = np.zeros((1, 0)), np.ones(1)
        elif dim == 1:
            pts, wts = t[:, None], w
        else:
            g1, g2 = np.meshgrid(t, t, indexing="ij")
            pts = np.column_stack([g1.ravel(), g2.ravel()])
            wts = np.outer(w, w).ravel()
    else:
        rng = np.random.default_rng(engine.seed)
        if engine.antithetic:
            half = (engine.n_samples + 1) // 2
            base = rng.standard_normal((half, dim))
            # stacked [g; -g] so that row k and row k + half form a pair
            pts = np.concatenate([base, -base], axis=0)
        else:
            pts = rng.standard_normal((engine.n_samples, dim))
        wts = np.full(pts.shape[0], 1.0 / pts.shape[0])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


class Expectation(NamedTuple):
    mean: np.ndarray
    std_err: np.ndarray


def reduce_samples(values, engine: ExpectationEngine) -> Expectation:
    """Average per-node ``values`` (leading axis = nodes) under ``engine``.

    Monte Carlo standard errors use antithetic pair means when pairing is on;
    quadrature reports a zero standard error.
    """
    values = np.asarray(values, dtype=float)
    _, wts = engine.nodes()
    if values.shape[0] != wts.shape[0]:
        raise NumericsError(f"got {values.shape[0]} values for {wts.shape[0]} nodes")
    bad = ~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        pts, _ = engine.nodes()
        raise NumericsError(f"non-finite integrand at node {k}, g = {pts[k].tolist()}")
    mean = np.tensordot(wts, values, axes=1)
    if engine.method == "gauss-hermite":
        return Expectation(mean, np.zeros_like(mean))
    if engine.antithetic:
        half = values.shape[0] // 2
        units = 0.5 * (values[:half] + values[half:])
        # averaging pair means first makes odd integrands vanish exactly
        mean = units.mean(axis=0)
    else:
        units = values
    k = units.shape[0]
    std_err = units.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    return Expectation(mean, std_err)


def gaussian_expect(integrand: Callable[[np.ndarray], np.ndarray], engine: ExpectationEngine) -> Expectation:
    """Estimate ``E[integrand(g)]`` for ``g ~ N(0, I_dim)``.

    ``integrand`` is vectorised: it receives all nodes as an ``(N, dim)`` array
    and returns an array whose leading axis has length ``N``.
    """
    pts, _ = engine.nodes()
    values = np.asarray(integrand(pts), dtype=float)
    return reduce_samples(values, engine)


# ---------------------------------------------------------------------------
# Supremum search


@dataclass(frozen=True)
class SupSearchConfig:
    x_min: float = 1e-3
    x_max: float = 20.0
    grid_points: int = 60
    refine_iters: int = 80
    refine_tol: float = 1e-7

    def __post_init__(self):
        if not (0 < self.x_min < self.x_max):
            raise NumericsError("need 0 < x_min < x_max")
        if self.grid_points < 3:
            raise NumericsError("grid_points must be >= 3")

    def grid(self) -> np.ndarray:
        return np.geomspace(self.x_min, self.x_max, self.grid_points)


class SupResult(NamedTuple):
    x_star: float
    value: float
    at_boundary: bool
    n_evals: int


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def sup_search(phi: Callable[[float], float], cfg: SupSearchConfig = SupSearchConfig()) -> SupResult:
    """Maximise ``phi`` over ``[x_min, x_max]``: log grid, then golden section.

    The refinement runs in ``log x`` on the two grid cells around the best grid
    node. A maximum found at either end of the grid is flagged and warned about.
    """
    grid = cfg.grid()
    vals = np.array([float(phi(x)) for x in grid])
    if not np.all(np.isfinite(vals)):
        raise NumericsError("phi is not finite on the search grid")
    k = int(np.argmax(vals))
    at_boundary = k == 0 or k == len(grid) - 1
    if at_boundary:
        warnings.warn(
            f"supremum attained at the search boundary x = {grid[k]:.4g}; window may be too small",
            RuntimeWarning,
            stacklevel=2,
        )
    best_x, best_v = float(grid[k]), float(vals[k])
    n_evals = len(grid)

    lo = math.log(grid[max(k - 1, 0)])
    hi = math.log(grid[min(k + 1, len(grid) - 1)])
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = float(phi(math.exp(c))), float(phi(math.exp(d)))
    n_evals += 2
    for _ in range(cfg.refine_iters):
        if math.exp(hi) - math.exp(lo) < cfg.refine_tol:
            break
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = float(phi(math.exp(c)))
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = float(phi(math.exp(d)))
        n_evals += 1
    for x, v in ((math.exp(c), fc), (math.exp(d), fd)):
        if v > best_v:
            best_x, best_v = x, v
    return SupResult(best_x, best_v, at_boundary, n_evals)


# ---------------------------------------------------------------------------
# Batched operations restricted to span(1)^perp


@functools.lru_cache(maxsize=32)
def complement_basis(d: int) -> np.ndarray:
    """Orthonormal ``d x (d-1)`` basis of the orthogonal complement of ``1``."""
    if d < 2:
        return np.zeros((d, 0))
    from scipy.linalg import helmert

    u = helmert(d).T.copy()
    u.setflags(write=False)
    return u


def batched_pinv_perp(mats, tol: float = DEFAULT_NULL_TOL, psd_tol: float = 1e-8):
    """Pseudo-inverse of a stack of symmetric matrices, taken on ``span(1)^perp``.

    Returns ``(pinv, bad)`` where ``bad`` indexes matrices whose restriction has
    an eigenvalue below ``-psd_tol * lambda_max`` (numerically indefinite).
    Matrices whose restriction vanishes get a zero pseudo-inverse.
    """
    mats = np.asarray(mats, dtype=float)
    d = mats.shape[-1]
    u = complement_basis(d)
    if d < 2 or mats.shape[0] == 0:
        return np.zeros_like(mats), np.zeros(0, dtype=np.int64)
    small = np.einsum("ik,...ij,jl->...kl", u, mats, u)
    small = 0.5 * (small + np.swapaxes(small, -1, -2))
    lam, vec = np.linalg.eigh(small)
    lam_max = lam[..., -1:]
    bad = np.flatnonzero((lam[..., 0] < -psd_tol * np.abs(lam_max[..., 0])).reshape(-1))
    keep = (lam > tol * lam_max) & (lam_max > 0)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    small_inv = np.einsum("...ik,...k,...jk->...ij", vec, inv, vec)
    return np.einsum("ik,...kl,jl->...ij", u, small_inv, u), bad
