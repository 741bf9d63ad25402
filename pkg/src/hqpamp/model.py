"""Histogram Query Problem instances, centering, errors, and a tiny-instance oracle.

Categories are 0-based throughout: ``planted[i] = r`` means individual ``i``
belongs to category ``r`` and ``x*_i = e_r``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PI_TOL = 1e-9
MAX_ENUMERATION = 2**24


class InstanceError(ValueError):
    pass


def validate_pi(pi, d: int | None = None, tol: float = PI_TOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=float).ravel()
    if d is not None and pi.shape[0] != d:
        raise InstanceError(f"pi has {pi.shape[0]} entries, expected d = {d}")
    if np.any(pi < -tol) or abs(pi.sum() - 1.0) > tol:
        raise InstanceError(f"pi is not on the simplex: {pi.tolist()}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def m_from_kappa(kappa: float, n: int) -> int:
    """Number of pools for a measurement ratio ``kappa = m / n``."""
    return int(round(kappa * n))


@dataclass(frozen=True)
class HQPInstance:
    n: int
    d: int
    alpha: float
    pi: np.ndarray
    planted: np.ndarray
    pools: np.ndarray
    histograms: np.ndarray
    seed: int = 0

    @property
    def m(self) -> int:
        return int(self.pools.shape[0])

    @property
    def kappa(self) -> float:
        return self.m / self.n

    @property
    def onehot(self) -> np.ndarray:
        x = np.zeros((self.n, self.d))
        x[np.arange(self.n), self.planted] = 1.0
        return x

    @property
    def pool_sizes(self) -> np.ndarray:
        return self.pools.sum(axis=1)

    @property
    def empirical_pi(self) -> np.ndarray:
        return np.bincount(self.planted, minlength=self.d) / self.n

    def check(self) -> None:
        """Raise if the stored histograms are not the exact pooled counts."""
        if self.pools.shape != (self.m, self.n):
            raise InstanceError("pool matrix has the wrong shape")
        if self.histograms.shape != (self.m, self.d):
            raise InstanceError("histogram matrix has the wrong shape")
        if self.planted.min(initial=0) < 0 or self.planted.max(initial=0) >= self.d:
            raise InstanceError("planted labels out of range")
        expect = pooled_histograms(self.pools, self.planted, self.d)
        if not np.array_equal(expect, self.histograms):
            raise InstanceError("histograms do not match pools and planted labels")

    def relabel(self, perm) -> "HQPInstance":
        """Instance with category ``r`` renamed to ``perm[r]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return HQPInstance(
            n=self.n,
            d=self.d,
            alpha=self.alpha,
            pi=self.pi[inv],
            planted=perm[self.planted],
            pools=self.pools,
            histograms=self.histograms[:, inv],
            seed=self.seed,
        )


def pooled_histograms(pools, planted, d: int) -> np.ndarray:
    """``h_a = sum_i A_ai x*_i`` in integer arithmetic."""
    pools = np.asarray(pools, dtype=np.int64)
    onehot = np.zeros((len(planted), d), dtype=np.int64)
    onehot[np.arange(len(planted)), planted] = 1
    return pools @ onehot


def exact_counts(n: int, pi: np.ndarray) -> np.ndarray:
    """Round ``n * pi`` to integers summing to ``n`` (largest remainder, low index wins ties)."""
    raw = n * pi
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        rem = raw - counts
        order = np.lexsort((np.arange(len(pi)), -rem))
        counts[order[:short]] += 1
    return counts


def generate_instance(
    n: int,
    d: int,
    alpha: float,
    pi,
    m: int,
    seed: int = 0,
    composition: str = "iid",
) -> HQPInstance:
    """Draw a planted labelling and ``m`` Bernoulli(alpha) pools, then count.

    ``composition="iid"`` draws labels independently from ``pi``;
    ``composition="exact"`` uses the rounded counts ``n * pi`` in shuffled order.
    """
    if n < 1 or d < 1 or m < 0:
        raise InstanceError("need n >= 1, d >= 1, m >= 0")
    if not (0.0 < alpha <= 1.0):
        raise InstanceError("alpha must lie in (0, 1]")
    pi = validate_pi(pi, d)
    rng = np.random.default_rng(seed)
    if composition == "iid":
        planted = rng.choice(d, size=n, p=pi)
    elif composition == "exact":
        planted = np.repeat(np.arange(d), exact_counts(n, pi))
        rng.shuffle(planted)
    else:
        raise InstanceError(f"unknown composition {composition!r}")
    pools = (rng.random((m, n)) < alpha).astype(np.int8)
    hist = pooled_histograms(pools, planted, d)
    return HQPInstance(n, d, float(alpha), pi, planted.astype(np.int64), pools, hist, int(seed))


@dataclass(frozen=True)
class CenteredData:
    a_bar: np.ndarray
    h_bar: np.ndarray

    def residual_sums(self, v) -> np.ndarray:
        """``1^T (h_bar_a - sum_i a_bar_ai v_i)`` for every pool; zero for simplex rows ``v``."""
        return (self.h_bar - self.a_bar @ np.asarray(v, dtype=float)).sum(axis=1)


def center_data(inst: HQPInstance, centering: str = "nominal") -> CenteredData:
    """``A_bar = (A - alpha) / sqrt(n)`` and ``h_bar = (h - alpha n pi) / sqrt(n)``.

    ``centering="empirical"`` substitutes the planted proportions for ``pi``.
    """
    if centering == "nominal":
        pi = inst.pi
    elif centering == "empirical":
        pi = inst.empirical_pi
    else:
        raise InstanceError(f"unknown centering {centering!r}")
    rt = math.sqrt(inst.n)
    a_bar = (inst.pools.astype(float) - inst.alpha) / rt
    h_bar = (inst.histograms.astype(float) - inst.alpha * inst.n * pi[None, :]) / rt
    return CenteredData(a_bar, h_bar)


@dataclass
class ErrorReport:
    mse: float
    zero_one: float
    per_iteration_mse: list = field(default_factory=list)


def error_metrics(estimates, inst: HQPInstance, tol: float = 1e-8) -> ErrorReport:
    est = np.asarray(estimates, dtype=float)
    if est.shape != (inst.n, inst.d):
        raise InstanceError(f"estimates have shape {est.shape}, expected {(inst.n, inst.d)}")
    if np.any(est < -tol) or np.any(np.abs(est.sum(axis=1) - 1.0) > tol):
        raise InstanceError("estimate rows must lie on the simplex")
    x = inst.onehot
    mse = float(np.mean(np.sum((est - x) ** 2, axis=1)))
    zero_one = float(1.0 - np.mean(np.sum(est * x, axis=1)))
    return ErrorReport(mse, zero_one)


def hard_decisions(marginals) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(np.asarray(marginals), axis=1)


def exhaustive_posterior(inst: HQPInstance, chunk: int = 1 << 16) -> np.ndarray:
    """Exact posterior marginals by enumerating all ``d**n`` labellings.

    The prior is ``prod_i pi[tau(i)]``; a labelling is kept iff it reproduces
    every observed histogram exactly.
    """
    n, d = inst.n, inst.d
    total = d**n
    if total > MAX_ENUMERATION:
        raise InstanceError(f"d**n = {total} exceeds the enumeration limit {MAX_ENUMERATION}")
    pools = inst.pools.astype(np.int64)
    hist = inst.histograms.astype(np.int64)
    powers = d ** np.arange(n, dtype=np.int64)
    marg = np.zeros((n, d))
    z = 0.0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        labels = (idx[:, None] // powers[None, :]) % d
        ok = np.ones(len(idx), dtype=bool)
        for r in range(d):
            counts = (labels == r).astype(np.int64) @ pools.T
            ok &= np.all(counts == hist[:, r][None, :], axis=1)
        if not ok.any():
            continue
        labels = labels[ok]
        w = np.prod(inst.pi[labels], axis=1)
        z += w.sum()
        for r in range(d):
            marg[:, r] += w @ (labels == r)
    if z <= 0.0:
        raise InstanceError("no labelling has positive posterior mass (inconsistent histograms)")
    return marg / z


# ---------------------------------------------------------------------------
# Serialization


def instance_to_dict(inst: HQPInstance) -> dict:
    bits = "".join("1" if b else "0" for b in inst.pools.ravel())
    return {
        "n": inst.n,
        "d": inst.d,
        "alpha": inst.alpha,
        "pi": [float(p) for p in inst.pi],
        "seed": inst.seed,
        "planted": [int(t) for t in inst.planted],
        "pools": bits,
        "histograms": inst.histograms.astype(int).tolist(),
    }


def instance_from_dict(doc: dict) -> HQPInstance:
    n, d = int(doc["n"]), int(doc["d"])
    hist = np.asarray(doc["histograms"], dtype=np.int64).reshape(-1, d)
    m = hist.shape[0]
    bits = doc["pools"]
    if len(bits) != m * n:
        raise InstanceError(f"pool bitstring has length {len(bits)}, expected {m * n}")
    pools = (np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")).astype(np.int8).reshape(m, n)
    inst = HQPInstance(
        n=n,
        d=d,
        alpha=float(doc["alpha"]),
        pi=validate_pi(doc["pi"], d),
        planted=np.asarray(doc["planted"], dtype=np.int64),
        pools=pools,
        histograms=hist,
        seed=int(doc.get("seed", 0)),
    )
    inst.check()
    return inst


def save_instance(inst: HQPInstance, path) -> None:
    """Write JSON, or the binary ``.npz`` variant when the suffix is ``.npz``."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez_compressed(
            path,
            n=inst.n,
            d=inst.d,
            alpha=inst.alpha,
            pi=inst.pi,
            seed=inst.seed,
            planted=inst.planted,
            pools=np.packbits(inst.pools.astype(bool), axis=None),
            histograms=inst.histograms,
        )
    else:
        path.write_text(json.dumps(instance_to_dict(inst)))


def load_instance(path) -> HQPInstance:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            n, d = int(z["n"]), int(z["d"])
            hist = z["histograms"].astype(np.int64)
            m = hist.shape[0]
            pools = np.unpackbits(z["pools"], count=m * n).astype(np.int8).reshape(m, n)
            inst = HQPInstance(n, d, float(z["alpha"]), z["pi"].astype(float), z["planted"].astype(np.int64),
                               pools, hist, int(z["seed"]))
        inst.check()
        return inst
    return instance_from_dict(json.loads(path.read_text()))
