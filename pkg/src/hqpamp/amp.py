"""AMP decoder and the Relaxed Belief Propagation reference decoder.

Every inverse of a check-node variance ``V`` or a variable-node variance
``Sigma`` is a pseudo-inverse on ``span(1)^perp``: these matrices annihilate
the all-ones vector by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import CenteredData, ErrorReport, HQPInstance, center_data, error_metrics, hard_decisions
from .numerics import DEFAULT_NULL_TOL, batched_pinv_perp, complement_basis

RBP_SIZE_LIMIT = 10**7


class AmpError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None, node: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.node = node


@dataclass(frozen=True)
class AmpConfig:
    max_iter: int = 200
    conv_tol: float = 1e-8
    damping: float = 0.0
    pinv_tol: float = DEFAULT_NULL_TOL
    track_mse: bool = False
    centering: str = "nominal"
    # previous-step check variance used by the first memory term; the default 1.0 means V^{-1} = I
    warm_v: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


# ---------------------------------------------------------------------------
# Thresholding


def eta_batch(z, sigma, pi, null_tol: float = DEFAULT_NULL_TOL, strict: bool = True, perp: bool = False):
    """Posterior mean of a one-hot vector seen through Gaussian noise, row by row.

    ``z`` is ``(N, d)`` and ``sigma`` is ``(N, d, d)``. Category ``r`` gets weight
    ``pi_r exp(-(z - e_r)^T Sigma^+ (z - e_r) / 2)``, or exactly zero when
    ``z - e_r`` leaves the range of ``Sigma``. Returns ``(eta, dead)`` where
    ``dead`` flags rows in which every category was excluded; with
    ``strict=True`` such rows raise instead.

    ``perp=True`` evaluates everything in coordinates of ``span(1)^perp``. The
    decoders use it: there ``1^T (z - e_r) = 0`` holds exactly in theory, and
    once ``Sigma`` is tiny the rounding residue along ``1`` would otherwise be
    read as a null-space component and wrongly exclude the true category.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    sigma = np.asarray(sigma, dtype=float).reshape(z.shape[0], z.shape[1], z.shape[1])
    pi = np.asarray(pi, dtype=float)
    n, d = z.shape
    diffs = z[:, None, :] - np.eye(d)[None, :, :]
    if perp:
        u = complement_basis(d)
        diffs = diffs @ u
        sigma = np.einsum("ik,nij,jl->nkl", u, sigma, u)
    lam, vec = np.linalg.eigh(0.5 * (sigma + np.swapaxes(sigma, 1, 2)))
    lam_max = lam[:, -1:]
    keep = (lam > null_tol * lam_max) & (lam_max > 0)
    coords = np.einsum("nrk,nkj->nrj", diffs, vec)
    c2 = coords**2
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    quad = np.einsum("nrj,nj->nr", c2, inv)
    null2 = np.einsum("nrj,nj->nr", c2, (~keep).astype(float))
    total2 = c2.sum(axis=2)
    tol = max(null_tol, 1e-12)
    # vertices sit at unit scale, so residues far below 1 are rounding, not geometry
    excluded = null2 > (tol * tol) * np.maximum(total2, 1.0)
    with np.errstate(divide="ignore"):
        logw = np.log(pi)[None, :] - 0.5 * quad
    logw = np.where(excluded, -np.inf, logw)
    top = logw.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if strict and dead.any():
        raise AmpError(f"every category excluded for row {int(np.flatnonzero(dead)[0])}",
                       node=int(np.flatnonzero(dead)[0]))
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.exp(logw - top)
    s = w.sum(axis=1, keepdims=True)
    out = np.where(dead[:, None], 0.0, w / np.where(s > 0, s, 1.0))
    return out, dead


def eta(z, sigma, pi, null_tol: float = DEFAULT_NULL_TOL) -> np.ndarray:
    """Single-vector thresholding function; see :func:`eta_batch`."""
    z = np.asarray(z, dtype=float)
    out, _ = eta_batch(z[None, :], np.asarray(sigma, dtype=float)[None], pi, null_tol)
    return out[0]


def posterior_cov(x_hat) -> np.ndarray:
    """``Diag(x) - x x^T`` for every row."""
    x_hat = np.asarray(x_hat)
    d = x_hat.shape[-1]
    return x_hat[..., :, None] * np.eye(d) - x_hat[..., :, None] * x_hat[..., None, :]


# ---------------------------------------------------------------------------
# AMP


@dataclass
class AmpState:
    x_hat: np.ndarray
    b: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    z: np.ndarray | None = None
    sigma: np.ndarray | None = None
    t: int = 0

    def check_invariants(self, tol: float = 1e-10) -> None:
        ones = np.ones(self.x_hat.shape[1])
        assert np.all(self.x_hat >= -tol)
        assert np.allclose(self.x_hat.sum(axis=1), 1.0, atol=tol)
        assert np.allclose(self.b @ ones, 0.0, atol=tol)
        if self.t > 0:
            assert np.allclose(self.v @ ones, 0.0, atol=tol * max(1.0, float(np.abs(self.v).max(initial=0))))
        if self.z is not None:
            assert np.allclose(self.z.sum(axis=1), 1.0, atol=1e-8)


def amp_init(data: CenteredData, pi, cfg: AmpConfig = AmpConfig()) -> AmpState:
    """Non-informative start: ``x_hat = pi``, ``omega^{-1} = 0``, ``V^{-1} = warm_v * I``."""
    pi = np.asarray(pi, dtype=float)
    m, n = data.a_bar.shape
    d = pi.shape[0]
    x_hat = np.tile(pi, (n, 1))
    return AmpState(
        x_hat=x_hat,
        b=posterior_cov(x_hat),
        omega=np.zeros((m, d)),
        v=np.tile(cfg.warm_v * np.eye(d), (m, 1, 1)),
    )


def amp_step(state: AmpState, data: CenteredData, pi, cfg: AmpConfig = AmpConfig(), a_sq=None) -> AmpState:
    """One synchronous sweep: all check nodes, then all variable nodes, then eta."""
    pi = np.asarray(pi, dtype=float)
    a_bar, h_bar = data.a_bar, data.h_bar
    m, n = a_bar.shape
    d = pi.shape[0]
    if a_sq is None:
        a_sq = a_bar**2

    v_new = (a_sq @ state.b.reshape(n, d * d)).reshape(m, d, d)
    v_prev_pinv, _ = batched_pinv_perp(state.v, cfg.pinv_tol)
    memory = np.einsum("aij,ajk,ak->ai", v_new, v_prev_pinv, h_bar - state.omega)
    omega = a_bar @ state.x_hat - memory

    v_pinv, bad = batched_pinv_perp(v_new, cfg.pinv_tol)
    if bad.size:
        raise AmpError(f"check variance V_{int(bad[0])} is indefinite at iteration {state.t}",
                       iteration=state.t, node=int(bad[0]))
    y = np.einsum("aij,aj->ai", v_pinv, h_bar - omega)
    precision = (a_sq.T @ v_pinv.reshape(m, d * d)).reshape(n, d, d)
    sigma, _ = batched_pinv_perp(precision, cfg.pinv_tol)
    z = state.x_hat + np.einsum("nij,nj->ni", sigma, a_bar.T @ y)

    x_new, dead = eta_batch(z, sigma, pi, cfg.pinv_tol, strict=False, perp=True)
    # nodes with no usable precision keep their current estimate
    x_new[dead] = state.x_hat[dead]
    if cfg.damping > 0.0:
        x_new = (1.0 - cfg.damping) * x_new + cfg.damping * state.x_hat
    return AmpState(x_hat=x_new, b=posterior_cov(x_new), omega=omega, v=v_new, z=z, sigma=sigma, t=state.t + 1)


@dataclass
class AmpResult:
    marginals: np.ndarray
    hard_decisions: np.ndarray
    report: ErrorReport
    iterations: int
    converged: bool
    state: AmpState = field(repr=False, default=None)


def amp_decode(inst: HQPInstance, cfg: AmpConfig = AmpConfig(), data: CenteredData | None = None) -> AmpResult:
    """Run AMP until the largest change in ``x_hat`` drops below ``conv_tol``.

    Running out of iterations is reported through ``converged``, not raised.
    With ``track_mse`` the report carries MSE_t for t = 0, 1, ... (t = 0 is the
    non-informative start).
    """
    if data is None:
        data = center_data(inst, cfg.centering)
    a_sq = data.a_bar**2
    state = amp_init(data, inst.pi, cfg)
    mse_track = [error_metrics(state.x_hat, inst).mse] if cfg.track_mse else []
    converged = False
    for _ in range(cfg.max_iter):
        try:
            new = amp_step(state, data, inst.pi, cfg, a_sq)
        except AmpError as exc:
            if exc.iteration is None:
                exc.iteration = state.t
            raise
        change = float(np.max(np.abs(new.x_hat - state.x_hat), initial=0.0))
        state = new
        if cfg.track_mse:
            mse_track.append(error_metrics(state.x_hat, inst).mse)
        if change < cfg.conv_tol:
            converged = True
            break
    report = error_metrics(state.x_hat, inst)
    report.per_iteration_mse = mse_track
    return AmpResult(state.x_hat, hard_decisions(state.x_hat), report, state.t, converged, state)


# ---------------------------------------------------------------------------
# Relaxed BP


@dataclass
class RbpState:
    """Edge messages indexed ``[a, i]``."""

    messages: np.ndarray
    b: np.ndarray | None = None
    omega: np.ndarray | None = None
    v: np.ndarray | None = None
    z: np.ndarray | None = None
    sigma: np.ndarray | None = None
    t: int = 0


def _rbp_sweep(msgs, data: CenteredData, pi, cfg: AmpConfig):
    a_bar, h_bar = data.a_bar, data.h_bar
    m, n = a_bar.shape
    d = pi.shape[0]
    a_sq = a_bar**2
    centre = np.full(d, 1.0 / d)

    b = posterior_cov(msgs)
    omega_tot = np.einsum("ai,aid->ad", a_bar, msgs)
    omega = omega_tot[:, None, :] - a_bar[:, :, None] * msgs
    v_tot = np.einsum("ai,aijk->ajk", a_sq, b)
    v = v_tot[:, None] - a_sq[:, :, None, None] * b
    v_pinv, bad = batched_pinv_perp(v.reshape(m * n, d, d), cfg.pinv_tol)
    if bad.size:
        raise AmpError("edge variance is indefinite", node=int(bad[0]))
    v_pinv = v_pinv.reshape(m, n, d, d)

    prec_terms = a_sq[:, :, None, None] * v_pinv
    lin_terms = a_bar[:, :, None] * np.einsum("aijk,aik->aij", v_pinv, h_bar[:, None, :] - omega)
    prec_tot = prec_terms.sum(axis=0)
    lin_tot = lin_terms.sum(axis=0)

    sigma, _ = batched_pinv_perp((prec_tot[None] - prec_terms).reshape(m * n, d, d), cfg.pinv_tol)
    # Sigma lives on span(1)^perp; shifting by 1/d picks the representative with 1^T z = 1
    z = np.einsum("eij,ej->ei", sigma, (lin_tot[None] - lin_terms).reshape(m * n, d)) + centre
    new, dead = eta_batch(z, sigma, pi, cfg.pinv_tol, strict=False, perp=True)
    flat = msgs.reshape(m * n, d)
    new[dead] = flat[dead]
    new = new.reshape(m, n, d)

    node_sigma, _ = batched_pinv_perp(prec_tot, cfg.pinv_tol)
    node_z = np.einsum("nij,nj->ni", node_sigma, lin_tot) + centre
    return new, (b, omega, v, z.reshape(m, n, d), sigma.reshape(m, n, d, d)), node_z, node_sigma


def rbp_decode(inst: HQPInstance, cfg: AmpConfig = AmpConfig(), data: CenteredData | None = None,
               return_state: bool = False):
    """Iterate relaxed belief propagation on the dense factor graph.

    Node marginals combine all incoming check messages. Memory is
    ``O(d^2 n m)``, so ``n * m`` is capped at ``RBP_SIZE_LIMIT``.
    """
    if inst.n * inst.m > RBP_SIZE_LIMIT:
        raise ValueError(f"n*m = {inst.n * inst.m} exceeds the RBP size guard {RBP_SIZE_LIMIT}")
    if data is None:
        data = center_data(inst, cfg.centering)
    pi = inst.pi
    m, n, d = inst.m, inst.n, inst.d
    if m == 0:
        marg = np.tile(pi, (n, 1))
        return (marg, RbpState(np.zeros((0, n, d)))) if return_state else marg

    msgs = np.broadcast_to(pi, (m, n, d)).copy()
    node = np.tile(pi, (n, 1))
    extras = None
    t = 0
    for t in range(1, cfg.max_iter + 1):
        new, extras, node_z, node_sigma = _rbp_sweep(msgs, data, pi, cfg)
        if cfg.damping > 0.0:
            new = (1.0 - cfg.damping) * new + cfg.damping * msgs
        node_new, dead = eta_batch(node_z, node_sigma, pi, cfg.pinv_tol, strict=False, perp=True)
        node_new[dead] = node[dead]
        change = float(np.max(np.abs(new - msgs)))
        msgs, node = new, node_new
        if change < cfg.conv_tol:
            break
    if return_state:
        b, omega, v, z, sigma = extras
        return node, RbpState(msgs, b, omega, v, z, sigma, t)
    return node


__all__ = [
    "AmpConfig",
    "AmpError",
    "AmpResult",
    "AmpState",
    "RbpState",
    "amp_decode",
    "amp_init",
    "amp_step",
    "eta",
    "eta_batch",
    "posterior_cov",
    "rbp_decode",
]
