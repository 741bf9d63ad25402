"""Parameter sweeps behind the command-line tables.

Per-cell instance seeds come from a splitmix64 chain so any cell can be
re-run on its own::

    h = splitmix64(master)
    for i in (p_index, kappa_index, replicate):
        h = splitmix64(h ^ i)
    seed = h & (2**63 - 1)
"""

from __future__ import annotations

import csv
import io
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .amp import AmpConfig, amp_decode
from .model import generate_instance, m_from_kappa, validate_pi
from .numerics import gauss_engine, mc_engine
from .se import SEConfig, laplacian_from_weights, se_iterate
from .thresholds import ScalarMap, kappa_matching, kappa_sym, scalar_se

MASK64 = (1 << 64) - 1
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
SPLITMIX_M1 = 0xBF58476D1CE4E5B9
SPLITMIX_M2 = 0x94D049BB133111EB

CSV_HEADER = ("p", "kappa", "seed", "mse_amp", "mse_se", "iters_amp", "converged", "error")


class ConfigError(ValueError):
    pass


def splitmix64(x: int) -> int:
    z = (x + SPLITMIX_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * SPLITMIX_M1) & MASK64
    z = ((z ^ (z >> 27)) * SPLITMIX_M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    h = splitmix64(master & MASK64)
    for i in indices:
        h = splitmix64(h ^ (i & MASK64))
    return h & ((1 << 63) - 1)


def fmt(x) -> str:
    """Locale-independent number formatting used in every table."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


# ---------------------------------------------------------------------------
# Phase diagram


@dataclass(frozen=True)
class SweepConfig:
    kappa_grid: tuple
    p_grid: tuple = ()
    d: int = 2
    pi_mode: str = "binary-p-grid"
    pi: tuple = ()
    n: int = 2000
    alpha: float = 0.5
    seeds_per_cell: int = 1
    master_seed: int = 0
    composition: str = "exact"
    amp_max_iter: int = 200
    amp_tol: float = 1e-8
    se_samples: int = 20_000
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kappa_grid", tuple(float(k) for k in self.kappa_grid))
        object.__setattr__(self, "p_grid", tuple(float(p) for p in self.p_grid))
        object.__setattr__(self, "pi", tuple(float(p) for p in self.pi))
        _check_grid("kappa_grid", self.kappa_grid)
        if any(k <= 0 for k in self.kappa_grid):
            raise ConfigError("kappa values must be positive")
        if self.pi_mode == "binary-p-grid":
            _check_grid("p_grid", self.p_grid)
            if any(not 0 < p < 1 for p in self.p_grid) or self.d != 2:
                raise ConfigError("binary-p-grid needs d = 2 and p values in (0, 1)")
        elif self.pi_mode == "explicit":
            try:
                validate_pi(self.pi, self.d)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        elif self.pi_mode != "uniform":
            raise ConfigError(f"unknown pi mode {self.pi_mode!r}")
        if self.seeds_per_cell < 1:
            raise ConfigError("seeds_per_cell must be at least 1")
        if self.n < 1 or self.d < 2:
            raise ConfigError("need n >= 1 and d >= 2")

    def cells(self):
        """``(p_index, p, pi)`` for every row of the grid."""
        if self.pi_mode == "binary-p-grid":
            return [(i, p, (p, 1.0 - p)) for i, p in enumerate(self.p_grid)]
        if self.pi_mode == "uniform":
            return [(0, math.nan, tuple([1.0 / self.d] * self.d))]
        return [(0, math.nan, self.pi)]


def _check_grid(name, grid):
    if len(grid) == 0:
        raise ConfigError(f"{name} is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{name} must be strictly increasing")


@dataclass
class SweepRecord:
    p: float
    kappa: float
    seed: int | None
    mse_amp: float | None
    mse_se: float | None
    iters_amp: int | None
    converged: bool | None
    error: str = ""

    def row(self) -> list[str]:
        return [fmt(self.p), fmt(self.kappa), fmt(self.seed), fmt(self.mse_amp), fmt(self.mse_se),
                fmt(self.iters_amp), fmt(self.converged), self.error]


def se_prediction(pi, kappa: float, se_samples: int = 20_000, seed: int = 0) -> tuple[float, bool]:
    """Limiting MSE predicted by state evolution from the non-informative start.

    Uses the scalar reduction for ``d = 2`` and for a uniform prior, the full
    matrix iteration otherwise.
    """
    pi = validate_pi(pi)
    d = len(pi)
    if d == 2:
        res = scalar_se(float(pi[0]), kappa)
        return res.mse_limit, res.converged
    if np.allclose(pi, 1.0 / d, atol=1e-12):
        res = scalar_se(ScalarMap.symmetric(d, mc_engine(d, se_samples, seed)), kappa)
        return res.mse_limit, res.converged
    x0 = (np.diag(pi) - np.outer(pi, pi)) / kappa
    traj = se_iterate(x0, SEConfig(kappa, tuple(pi), mc_engine(d, se_samples, seed)))
    return traj.steps[-1].mse, traj.converged


def _run_cell(job):
    cfg, pi_idx, p, pi, k_idx, kappa = job
    records = []
    try:
        mse_se, se_ok = se_prediction(pi, kappa, cfg.se_samples, cfg.master_seed)
        records.append(SweepRecord(p, kappa, None, None, mse_se, None, se_ok))
    except Exception as exc:  # recorded in-row; the sweep keeps going
        mse_se = None
        records.append(SweepRecord(p, kappa, None, None, None, None, None, f"se: {exc}"))
    amp_cfg = AmpConfig(max_iter=cfg.amp_max_iter, conv_tol=cfg.amp_tol)
    m = m_from_kappa(kappa, cfg.n)
    for rep in range(cfg.seeds_per_cell):
        seed = derive_seed(cfg.master_seed, pi_idx, k_idx, rep)
        try:
            inst = generate_instance(cfg.n, len(pi), cfg.alpha, pi, m, seed=seed, composition=cfg.composition)
            res = amp_decode(inst, amp_cfg)
            records.append(SweepRecord(p, kappa, seed, res.report.mse, mse_se, res.iterations, res.converged))
        except Exception as exc:
            records.append(SweepRecord(p, kappa, seed, None, mse_se, None, None, f"amp: {exc}"))
    return records


def run_phase_diagram(cfg: SweepConfig) -> list[SweepRecord]:
    """One SE row and ``seeds_per_cell`` AMP rows per grid cell, in grid order."""
    jobs = [(cfg, i, p, pi, j, k) for i, p, pi in cfg.cells() for j, k in enumerate(cfg.kappa_grid)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_cell, jobs))
    else:
        chunks = [_run_cell(job) for job in jobs]
    return [r for chunk in chunks for r in chunk]


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Symmetric threshold table


def threshold_table(d_list, n_samples: int | None = None) -> tuple[str, float]:
    """CSV ``d,kappa_sym,std_err`` and the elapsed wall time in seconds."""
    seen, ds = set(), []
    for d in d_list:
        d = int(d)
        if d < 2:
            raise ConfigError("every d must be at least 2")
        if d in seen:
            warnings.warn(f"duplicate d = {d} dropped", UserWarning, stacklevel=2)
            continue
        seen.add(d)
        ds.append(d)
    kwargs = {} if n_samples is None else {"n_samples": n_samples}
    start = time.perf_counter()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("d", "kappa_sym", "std_err"))
    for d in ds:
        res = kappa_sym(d, **kwargs)
        w.writerow((d, fmt(res.kappa_star), fmt(res.std_err)))
    return buf.getvalue(), time.perf_counter() - start


# ---------------------------------------------------------------------------
# Matching start


def parse_matching(text: str, d: int) -> list[tuple[int, int]]:
    """Parse ``"1:2,3:4"`` (1-based) into 0-based disjoint pairs."""
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            r, s = (int(v) - 1 for v in chunk.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad pair {chunk!r}; expected r:s") from exc
        pairs.append((min(r, s), max(r, s)))
    return validate_matching(pairs, d)


def validate_matching(pairs, d: int) -> list[tuple[int, int]]:
    used = set()
    out = []
    for r, s in pairs:
        r, s = int(r), int(s)
        if r == s or not (0 <= r < d and 0 <= s < d):
            raise ConfigError(f"invalid pair ({r + 1}, {s + 1}) for d = {d}")
        if r in used or s in used:
            raise ConfigError("matching pairs overlap")
        used.update((r, s))
        out.append((min(r, s), max(r, s)))
    if not out:
        raise ConfigError("matching is empty")
    return out


def _one_based(pair) -> list[int]:
    return [pair[0] + 1, pair[1] + 1]


def matching_laplacian(pairs, d: int, weight: float = 1.0) -> np.ndarray:
    w = np.zeros((d, d))
    for r, s in pairs:
        w[r, s] = w[s, r] = weight
    return laplacian_from_weights(w)


@dataclass
class MatchingOutcome:
    kappa: float
    surviving: list
    predicted: list
    agree: bool
    converged: bool
    x_star: list = field(default_factory=list)


def matching_demo(pi, pairs, kappa_list, fp_tol: float = 1e-7, max_iter: int = 2000, samples: int = 20_000,
                  seed: int = 0) -> dict:
    """Run SE from a matching start and compare surviving edges with the per-pair thresholds.

    ``pairs`` are 0-based; pairs in the returned document are 1-based.
    """
    pi = validate_pi(pi)
    d = len(pi)
    pairs = validate_matching(pairs, d)
    thresholds = {pair: kappa_matching(pi, *pair).kappa_star for pair in pairs}
    x0 = matching_laplacian(pairs, d)
    # a matching has rank equal to its number of edges and the rank never grows
    engine = gauss_engine(len(pairs)) if len(pairs) <= 2 else mc_engine(d, samples, seed)
    outcomes = []
    for kappa in kappa_list:
        traj = se_iterate(x0, SEConfig(float(kappa), tuple(pi), engine, max_iter=max_iter, fp_tol=fp_tol))
        xs = traj.fixed_point
        surviving = [_one_based(p) for p in pairs if -xs[p] > 10 * fp_tol]
        predicted = [_one_based(p) for p in pairs if kappa < thresholds[p]]
        outcomes.append(MatchingOutcome(float(kappa), surviving, predicted, surviving == predicted, traj.converged,
                                        xs.ravel().tolist()))
    return {
        "pi": pi.tolist(),
        "pairs": [_one_based(p) for p in pairs],
        "thresholds": [{"pair": _one_based(p), "kappa_star": thresholds[p]} for p in pairs],
        "runs": [asdict(o) for o in outcomes],
    }
