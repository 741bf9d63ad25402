"""State evolution on the cone of weighted-graph Laplacians.

The central object is the map

    f(X) = sum_r pi_r E[(e_r - eta_r(X)) (e_r - eta_r(X))^T],

where ``eta_r(X)`` is the posterior mean of a one-hot label observed through
``e_r + X^{1/2} g``. Its ``s``-th coordinate is proportional to
``pi_s exp(zeta_s - zeta_r - R_rs / 2)`` with ``zeta = X^{+1/2} g`` and ``R``
the effective-resistance matrix of the graph with conductances ``-X_rs``.
Categories in different connected components never mix, which makes the
off-block entries of ``f(X)`` exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components as _cc

from .model import validate_pi
from .numerics import (
    DEFAULT_NULL_TOL,
    ExpectationEngine,
    complement_basis,
    psd_pinv_sqrt_apply,
    reduce_samples,
)

# membership tolerances for the cone (relative to max |x|)
PSD_TOL = 1e-10
ROWSUM_TOL = 1e-10
OFFDIAG_TOL = 1e-12
# absolute slack added to every 3 * std_err comparison; quadrature reports std_err = 0
ABS_FLOOR = 1e-9


class SEError(ValueError):
    pass


# ---------------------------------------------------------------------------
# The set of Laplacians


def laplacian_from_weights(w) -> np.ndarray:
    """Laplacian ``Diag(W 1) - W`` of a symmetric non-negative weight matrix."""
    w = np.asarray(w, dtype=float)
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    return np.diag(w.sum(axis=1)) - w


def check_laplacian(x, psd_tol: float = PSD_TOL) -> np.ndarray:
    """Return ``x`` as a float array, raising ``SEError`` unless it lies in the cone."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise SEError(f"expected a square matrix, got shape {x.shape}")
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    if np.max(np.abs(x - x.T), initial=0.0) > PSD_TOL * scale:
        raise SEError("matrix is not symmetric")
    if np.max(np.abs(x.sum(axis=1)), initial=0.0) > ROWSUM_TOL * scale:
        raise SEError("rows do not sum to zero")
    off = x - np.diag(np.diag(x))
    if np.max(off, initial=0.0) > OFFDIAG_TOL * scale:
        raise SEError("positive off-diagonal entry")
    lam_min = float(np.linalg.eigvalsh(0.5 * (x + x.T))[0]) if x.size else 0.0
    if lam_min < -psd_tol * scale:
        raise SEError(f"matrix is not PSD (lambda_min = {lam_min:.3e})")
    return x


@dataclass(frozen=True)
class Partition:
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        flat = [i for b in blocks for i in b]
        if any(len(b) == 0 for b in blocks) or sorted(flat) != list(range(len(flat))):
            raise SEError(f"blocks do not partition 0..d-1: {self.blocks}")
        object.__setattr__(self, "blocks", tuple(sorted(blocks)))

    @property
    def d(self) -> int:
        return sum(len(b) for b in self.blocks)

    def projectors(self) -> list[np.ndarray]:
        out = []
        for b in self.blocks:
            p = np.zeros((self.d, self.d))
            p[list(b), list(b)] = 1.0
            out.append(p)
        return out

    def labels(self) -> np.ndarray:
        lab = np.empty(self.d, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            lab[list(b)] = k
        return lab


def connected_components(x, weight_tol: float = 0.0) -> Partition:
    """Components of the graph with an edge ``(r, s)`` whenever ``-x_rs > weight_tol``."""
    x = np.asarray(x, dtype=float)
    adj = -x > weight_tol
    np.fill_diagonal(adj, False)
    k, labels = _cc(adj, directed=False)
    return Partition(tuple(tuple(np.flatnonzero(labels == j)) for j in range(k)))


def effective_resistance(x, r: int, s: int, null_tol: float = DEFAULT_NULL_TOL) -> float:
    """``||X^{+1/2}(e_r - e_s)||^2``, or ``inf`` when ``r`` and ``s`` are disconnected."""
    if r == s:
        return 0.0
    v = np.zeros(np.shape(x)[0])
    v[r], v[s] = 1.0, -1.0
    w, in_range = psd_pinv_sqrt_apply(x, v, null_tol)
    return float(w @ w) if in_range else math.inf


def limit_matrix(partition: Partition, pi) -> np.ndarray:
    """``D - sum_k P_k pi pi^T P_k / (1^T P_k pi)``."""
    pi = validate_pi(pi, partition.d)
    out = np.diag(pi)
    for b in partition.blocks:
        idx = list(b)
        mass = pi[idx].sum()
        if mass <= 0.0:
            raise SEError(f"block {b} has zero prior mass")
        if len(idx) == 1:
            out[idx[0], idx[0]] = 0.0
        else:
            out[np.ix_(idx, idx)] -= np.outer(pi[idx], pi[idx]) / mass
    return out


# ---------------------------------------------------------------------------
# The map f


class MapEstimate(NamedTuple):
    x: np.ndarray
    std_err: np.ndarray


@dataclass(frozen=True)
class _BlockGeometry:
    idx: np.ndarray
    half_pinv: np.ndarray  # X_B^{+1/2}, symmetric
    range_map: np.ndarray  # V_B diag(lambda^{-1/2}), for quadrature nodes
    resist: np.ndarray


def _geometry(x, null_tol: float) -> tuple[Partition, list[_BlockGeometry]]:
    # Edges at or below null_tol * max|x| count as absent. Each remaining block
    # is connected, so its Laplacian is positive definite on the complement of
    # the block's all-ones vector and is inverted there without any cutoff.
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    part = connected_components(x, weight_tol=null_tol * scale)
    geo = []
    for b in part.blocks:
        if len(b) < 2:
            continue
        idx = np.array(b)
        u = complement_basis(len(b))
        lam, w = np.linalg.eigh(u.T @ x[np.ix_(idx, idx)] @ u)
        if lam[0] <= 0.0:
            raise SEError(f"block {b} is connected but its Laplacian is singular")
        v = u @ w
        inv_sqrt = lam**-0.5
        pinv = (v * inv_sqrt**2) @ v.T
        diag = np.diag(pinv)
        resist = np.maximum(diag[:, None] + diag[None, :] - 2.0 * pinv, 0.0)
        geo.append(_BlockGeometry(idx, (v * inv_sqrt) @ v.T, v * inv_sqrt, resist))
    return part, geo


def _rank_of(geo: list[_BlockGeometry]) -> int:
    return sum(g.range_map.shape[1] for g in geo)


def _block_zetas(geo, engine: ExpectationEngine, d: int):
    """Per-block ``zeta`` samples plus the engine whose nodes produced them."""
    if engine.is_quadrature:
        eng = engine.with_dim(_rank_of(geo))
        pts, _ = eng.nodes()
        out, col = [], 0
        for g in geo:
            k = g.range_map.shape[1]
            out.append(pts[:, col : col + k] @ g.range_map.T)
            col += k
        return out, eng
    # Monte Carlo draws one d-dimensional g and applies the symmetric root, so
    # that two matrices evaluated with the same engine share their noise.
    eng = engine.with_dim(d)
    pts, _ = eng.nodes()
    return [pts[:, g.idx] @ g.half_pinv for g in geo], eng


def _eta_block(zeta, resist, log_pi):
    """``eta[n, r, s]`` inside one block for every true category ``r``."""
    logits = zeta[:, None, :] - zeta[:, :, None] - 0.5 * resist[None] + log_pi[None, None, :]
    logits -= logits.max(axis=2, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=2, keepdims=True)


def _posterior_samples(x, pi, engine: ExpectationEngine, null_tol: float):
    """Per-node ``eta`` arrays, one ``(N, b, b)`` entry per connected block."""
    part, geo = _geometry(x, null_tol)
    zetas, eng = _block_zetas(geo, engine, len(pi))
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    etas = [_eta_block(z, g.resist, log_pi[g.idx]) for z, g in zip(zetas, geo)]
    return geo, etas, eng


def f_samples(x, pi, engine: ExpectationEngine, null_tol: float = DEFAULT_NULL_TOL):
    """Per-node values of ``sum_r pi_r (e_r - eta_r)(e_r - eta_r)^T``.

    Returns ``(values, engine)`` with ``values`` of shape ``(N, d, d)``; the
    returned engine is the one whose nodes were used (its ``dim`` may differ
    from the input engine).
    """
    pi = np.asarray(pi, dtype=float)
    d = len(pi)
    geo, etas, eng = _posterior_samples(x, pi, engine, null_tol)
    n_nodes = eng.nodes()[0].shape[0]
    out = np.zeros((n_nodes, d, d))
    for g, eta in zip(geo, etas):
        b = len(g.idx)
        diff = np.eye(b)[None] - eta  # diff[n, r, :] = e_r - eta_r
        block = np.swapaxes(diff * pi[g.idx][None, :, None], 1, 2) @ diff
        out[:, g.idx[:, None], g.idx[None, :]] = block
    return out, eng


def project_to_cone(mean, std_err, floor: float = ABS_FLOOR) -> np.ndarray:
    """Symmetrize, clip noise-level positive off-diagonals, and restore zero row sums."""
    x = 0.5 * (mean + mean.T)
    se = 0.5 * (std_err + std_err.T)
    off = ~np.eye(x.shape[0], dtype=bool)
    pos = off & (x > 0.0)
    if np.any(x[pos] > 3.0 * se[pos] + floor):
        worst = float(np.max(x[pos] - 3.0 * se[pos]))
        raise SEError(f"f(X) has a positive off-diagonal {worst:.3e} beyond 3 std_err")
    x[pos] = 0.0
    np.fill_diagonal(x, 0.0)
    np.fill_diagonal(x, -x.sum(axis=1))
    return x


def se_map_f(x, pi, engine: ExpectationEngine, null_tol: float = DEFAULT_NULL_TOL, check: bool = True) -> MapEstimate:
    """Estimate ``f(X)`` and project the estimate back onto the cone."""
    if check:
        x = check_laplacian(x)
    pi = validate_pi(pi, np.shape(x)[0])
    vals, eng = f_samples(x, pi, engine, null_tol)
    est = reduce_samples(vals, eng)
    return MapEstimate(project_to_cone(est.mean, est.std_err), est.std_err)


# ---------------------------------------------------------------------------
# Iteration


@dataclass(frozen=True)
class SEConfig:
    kappa: float
    pi: tuple
    engine: ExpectationEngine
    max_iter: int = 500
    fp_tol: float = 1e-7
    null_tol: float = DEFAULT_NULL_TOL
    verify: bool = True

    def __post_init__(self):
        if not self.kappa > 0:
            raise SEError("kappa must be positive")
        object.__setattr__(self, "pi", tuple(float(p) for p in validate_pi(self.pi)))

    @property
    def pi_array(self) -> np.ndarray:
        return np.array(self.pi)


@dataclass
class SEStep:
    t: int
    x: np.ndarray
    mse: float
    std_err: np.ndarray


@dataclass
class SETrajectory:
    kappa: float
    steps: list = field(default_factory=list)
    converged: bool = False
    residual: float = math.nan

    @property
    def fixed_point(self) -> np.ndarray:
        return self.steps[-1].x

    @property
    def mse(self) -> np.ndarray:
        return np.array([s.mse for s in self.steps])

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "trajectory": [{"t": s.t, "X": s.x.ravel().tolist(), "mse": s.mse} for s in self.steps],
            "fixed_point": {
                "X_star": self.fixed_point.ravel().tolist(),
                "residual": self.residual,
                "converged": self.converged,
            },
        }


def noninformative_start(pi, kappa: float) -> np.ndarray:
    """``kappa^{-1} (D - pi pi^T)``, the state of estimates equal to the prior."""
    pi = validate_pi(pi)
    return (np.diag(pi) - np.outer(pi, pi)) / kappa


def se_iterate(x0, cfg: SEConfig) -> SETrajectory:
    """Run ``X_{t+1} = f(X_t) / kappa`` until the Frobenius change is below tolerance.

    The stopping rule is relative (``fp_tol``) with a floor of three standard
    errors of the estimate. Under Monte Carlo the final point is re-checked
    with a sample four times larger and the residual of that check is stored.
    """
    pi = cfg.pi_array
    x = check_laplacian(x0)
    traj = SETrajectory(cfg.kappa)
    traj.steps.append(SEStep(0, x.copy(), cfg.kappa * float(np.trace(x)), np.zeros_like(x)))
    noise = 0.0
    for t in range(1, cfg.max_iter + 1):
        est = se_map_f(x, pi, cfg.engine, cfg.null_tol, check=False)
        x_new = est.x / cfg.kappa
        se = est.std_err / cfg.kappa
        traj.steps.append(SEStep(t, x_new, cfg.kappa * float(np.trace(x_new)), se))
        change = float(np.linalg.norm(x_new - x))
        noise = 3.0 * float(np.linalg.norm(se))
        x = x_new
        if change <= max(cfg.fp_tol * float(np.linalg.norm(x_new)), noise):
            traj.converged = True
            break
    traj.residual = change if cfg.max_iter > 0 else 0.0
    if cfg.verify and not cfg.engine.is_quadrature and traj.converged:
        big = cfg.engine.with_samples(4 * cfg.engine.n_samples)
        est = se_map_f(x, pi, big, cfg.null_tol, check=False)
        traj.residual = float(np.linalg.norm(x - est.x / cfg.kappa))
        bound = max(cfg.fp_tol * float(np.linalg.norm(x)), 3.0 * float(np.linalg.norm(est.std_err)) / cfg.kappa, noise)
        traj.converged = traj.residual <= bound + ABS_FLOOR
    return traj


# ---------------------------------------------------------------------------
# Order parameters and the consistency checks


@dataclass(frozen=True)
class OrderParams:
    m_mat: np.ndarray
    q_mat: np.ndarray
    r_mat: np.ndarray
    d_mat: np.ndarray


def order_params_from_x(x, pi, kappa: float, tol: float = 1e-8) -> OrderParams:
    """Order parameters implied by ``X`` on the Nishimori line: ``M = Q = D - kappa X``."""
    x = check_laplacian(x)
    pi = validate_pi(pi, x.shape[0])
    dm = np.diag(pi)
    m = dm - kappa * x
    lam_min = float(np.linalg.eigvalsh(m)[0])
    if lam_min < -tol:
        raise SEError(f"D - kappa X is not PSD (lambda_min = {lam_min:.3e}); X is outside the Nishimori region")
    return OrderParams(m, m.copy(), kappa * x, dm)


def overlap_samples(x, pi, engine: ExpectationEngine, null_tol: float = DEFAULT_NULL_TOL):
    """Per-node ``M`` and ``Q`` integrands at state ``X``.

    ``M = sum_r pi_r E[eta_r] e_r^T`` and ``Q = sum_r pi_r E[eta_r eta_r^T]``;
    singleton blocks contribute ``eta_r = e_r``.
    """
    pi = np.asarray(pi, dtype=float)
    d = len(pi)
    geo, etas, eng = _posterior_samples(x, pi, engine, null_tol)
    n_nodes = eng.nodes()[0].shape[0]
    m = np.zeros((n_nodes, d, d))
    q = np.zeros((n_nodes, d, d))
    covered = np.zeros(d, dtype=bool)
    for g, eta in zip(geo, etas):
        ix = g.idx
        covered[ix] = True
        m[:, ix[:, None], ix[None, :]] = np.swapaxes(eta * pi[ix][None, :, None], 1, 2)
        q[:, ix[:, None], ix[None, :]] = np.swapaxes(eta * pi[ix][None, :, None], 1, 2) @ eta
    for r in np.flatnonzero(~covered):
        m[:, r, r] = pi[r]
        q[:, r, r] = pi[r]
    return m, q, eng


@dataclass
class NishimoriReport:
    row_residual: np.ndarray  # per step, ||M 1 - pi||_inf
    asymmetry: np.ndarray  # per step, ||M - M^T||_inf
    mq_gap: np.ndarray  # per step, ||M - Q||_inf
    passed: np.ndarray  # per step

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passed))


def check_nishimori(traj: SETrajectory, pi, engine: ExpectationEngine, null_tol: float = DEFAULT_NULL_TOL,
                    floor: float = ABS_FLOOR) -> NishimoriReport:
    """Check ``M 1 = pi``, ``M = M^T`` and ``M = Q`` at every recorded state.

    Each residual entry is compared with three standard errors of that same
    entry (plus ``floor``), computed from the per-node integrands.
    """
    pi = validate_pi(pi)
    rows, asym, gaps, passed = [], [], [], []
    for step in traj.steps:
        m_s, q_s, eng = overlap_samples(step.x, pi, engine, null_tol)
        row = reduce_samples(m_s.sum(axis=2) - pi[None, :], eng)
        skew = reduce_samples(m_s - np.swapaxes(m_s, 1, 2), eng)
        gap = reduce_samples(m_s - q_s, eng)
        ok = all(
            np.all(np.abs(e.mean) <= 3.0 * e.std_err + floor) for e in (row, skew, gap)
        )
        rows.append(float(np.max(np.abs(row.mean))))
        asym.append(float(np.max(np.abs(skew.mean))))
        gaps.append(float(np.max(np.abs(gap.mean))))
        passed.append(ok)
    return NishimoriReport(np.array(rows), np.array(asym), np.array(gaps), np.array(passed))


@dataclass(frozen=True)
class MonotoneReport:
    lambda_min: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.lambda_min >= -self.tolerance


def check_monotone_pair(x, y, pi, engine: ExpectationEngine, null_tol: float = DEFAULT_NULL_TOL,
                        floor: float = ABS_FLOOR) -> MonotoneReport:
    """Evaluate ``lambda_min(f(y) - f(x))`` under common random numbers.

    The tolerance is three times the Frobenius norm of the entrywise standard
    error of the paired difference.
    """
    x, y = check_laplacian(x), check_laplacian(y)
    scale = max(1.0, float(np.max(np.abs(y))))
    if float(np.linalg.eigvalsh(y - x)[0]) < -1e-10 * scale:
        raise SEError("precondition x <= y (PSD order) is violated")
    fx, ex = f_samples(x, pi, engine, null_tol)
    fy, ey = f_samples(y, pi, engine, null_tol)
    if fx.shape == fy.shape:
        diff = reduce_samples(fy - fx, ex)
        mean, se = diff.mean, diff.std_err
    else:
        # quadrature grids of different rank cannot be paired node by node
        a, b = reduce_samples(fx, ex), reduce_samples(fy, ey)
        mean, se = b.mean - a.mean, np.hypot(a.std_err, b.std_err)
    mean = 0.5 * (mean + mean.T)
    lam = float(np.linalg.eigvalsh(mean)[0])
    return MonotoneReport(lam, 3.0 * float(np.linalg.norm(se)) + floor)


def random_laplacian(d: int, rng: np.random.Generator, density: float = 1.0, scale: float = 1.0) -> np.ndarray:
    """Laplacian with i.i.d. exponential weights, each edge kept with probability ``density``."""
    w = rng.exponential(scale, size=(d, d))
    w = np.triu(w * (rng.random((d, d)) < density), 1)
    return laplacian_from_weights(w + w.T)


def check_monotone_trajectory(traj: SETrajectory, cfg: SEConfig, floor: float = ABS_FLOOR) -> list[MonotoneReport]:
    """``lambda_min(X_t - X_{t+1})`` for every recorded step.

    For ``t >= 1`` the difference is ``(f(X_{t-1}) - f(X_t)) / kappa``, evaluated
    with common random numbers so its standard error comes from the paired
    per-node differences. The first step compares ``X_0`` with ``X_1`` directly.
    """
    pi = cfg.pi_array
    reports = []
    xs = [s.x for s in traj.steps]
    for t in range(len(xs) - 1):
        if t == 0:
            mean = xs[0] - xs[1]
            se = traj.steps[1].std_err
        else:
            fa, ea = f_samples(xs[t - 1], pi, cfg.engine, cfg.null_tol)
            fb, eb = f_samples(xs[t], pi, cfg.engine, cfg.null_tol)
            if fa.shape == fb.shape:
                diff = reduce_samples((fa - fb) / cfg.kappa, ea)
                mean, se = diff.mean, diff.std_err
            else:
                mean = xs[t] - xs[t + 1]
                se = np.hypot(traj.steps[t].std_err, traj.steps[t + 1].std_err)
        mean = 0.5 * (mean + mean.T)
        reports.append(MonotoneReport(float(np.linalg.eigvalsh(mean)[0]), 3.0 * float(np.linalg.norm(se)) + floor))
    return reports
