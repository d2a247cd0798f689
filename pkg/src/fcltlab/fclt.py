"""Time-changed partial-sum processes and Monte Carlo checks of their limit.

The row ``xi_1, ..., xi_n`` is turned into the step process

    W_n(t) = S_{v(t)} / sigma_n,   v(t) = min{k : sigma_k^2 >= t sigma_n^2},

with ``sigma_k^2 = Var(S_k)`` taken from the exact oracle.  Over a block
partition, the block process replaces ``S_{v(t)}`` by the sum up to the end
of the first block whose cumulative variance reaches ``t sigma_n^2``.

Replications are drawn in chunks from per-replication substreams, so every
estimate below is independent of the chunk size and the worker count.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._numerics import PreconditionError, jackknife_se
from .models import ExactOracle, iter_row_chunks, substream

MIN_REPS = 1000
KS_CRITICAL_1PCT = 1.63
DEFAULT_GRID = np.linspace(0.0, 1.0, 21)
CHUNK = 500


def _grid(grid) -> np.ndarray:
    g = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64).ravel()
    if g.size == 0 or np.any(g < 0) or np.any(g > 1) or np.any(np.diff(g) < 0):
        raise ValueError("grid must be a non-empty sorted subset of [0, 1]")
    return g.copy()


def model_id(model) -> str:
    """Short content hash of the model description."""
    blob = json.dumps(model.to_dict(), sort_keys=True).encode()
    return f"{model.kind}-{hashlib.sha256(blob).hexdigest()[:12]}"


def _csv_writer(header):
    buf = io.StringIO()
    if header:
        buf.write(header.rstrip("\n") + "\n")
    return buf, csv.writer(buf, lineterminator="\n")


# ---------------------------------------------------------------------------
# time change


@dataclass
class TimeChangeTable:
    grid: np.ndarray
    v: np.ndarray  # 1-based indices
    sigma_profile: np.ndarray

    @property
    def sigma_sq(self) -> float:
        return float(self.sigma_profile[-1])

    def index(self, t: float) -> int:
        """``v(t)`` at an arbitrary ``t`` in ``[0, 1]``."""
        return int(first_crossing(self.sigma_profile, t * self.sigma_sq))

    def to_csv(self, header: str | None = None) -> str:
        buf, w = _csv_writer(header)
        w.writerow(["t", "v", "sigma_v_sq"])
        for t, k in zip(self.grid, self.v):
            w.writerow([repr(float(t)), int(k), repr(float(self.sigma_profile[k - 1]))])
        return buf.getvalue()


def first_crossing(profile: np.ndarray, level) -> np.ndarray:
    """``min{k : profile[k-1] >= level}`` (1-based), vectorised over ``level``.

    ``profile`` may be non-monotone; the first crossing coincides with the
    first crossing of its running maximum.
    """
    record = np.maximum.accumulate(np.asarray(profile, dtype=np.float64))
    idx = np.searchsorted(record, level, side="left") + 1
    if np.any(idx > record.size):
        raise ValueError("level exceeds the terminal variance")
    return idx


def time_change(oracle, n: int | None = None, grid=None) -> TimeChangeTable:
    """Exact ``v(t)`` on ``grid`` from the variance profile of ``oracle``."""
    if n is not None and n != oracle.n:
        raise ValueError(f"oracle row has length {oracle.n}, not {n}")
    g = _grid(grid)
    profile = oracle.sigma_profile()
    total = float(profile[-1])
    if not total > 0:
        raise PreconditionError("sigma_n^2 must be positive")
    level = g * total
    level[g == 1.0] = total  # guard the terminal point against rounding
    return TimeChangeTable(g, first_crossing(profile, level), profile)


# ---------------------------------------------------------------------------
# path ensembles


@dataclass
class PathEnsemble:
    grid: np.ndarray
    paths: np.ndarray  # (reps, len(grid))
    seed: int
    model_id: str
    n: int
    v: np.ndarray | None = None

    @property
    def reps(self) -> int:
        return self.paths.shape[0]

    def to_csv(self, header: str | None = None) -> str:
        buf, w = _csv_writer(header)
        w.writerow(["rep"] + [repr(float(t)) for t in self.grid])
        for r, row in enumerate(self.paths):
            w.writerow([r] + [repr(float(x)) for x in row])
        return buf.getvalue()


def build_paths(model, grid=None, reps: int = 1000, seed: int = 0, workers: int = 1,
                oracle=None, chunk: int = CHUNK) -> PathEnsemble:
    """Sample ``reps`` paths of ``W_n`` on ``grid``."""
    oracle = oracle or ExactOracle(model)
    table = time_change(oracle, grid=grid)
    sigma = math.sqrt(table.sigma_sq)
    cols = table.v - 1
    out = np.empty((reps, table.grid.size))
    for first, rows in iter_row_chunks(model, reps, seed, chunk=chunk, workers=workers):
        S = np.cumsum(rows, axis=1)
        out[first : first + rows.shape[0]] = S[:, cols] / sigma
    return PathEnsemble(table.grid, out, int(seed), model_id(model), model.n, table.v)


def brownian_ensemble(grid=None, reps: int = 1000, seed: int = 0) -> PathEnsemble:
    """Exact Brownian motion sampled on ``grid`` (the harness calibration control)."""
    g = _grid(grid)
    dt = np.diff(np.concatenate(([0.0], g)))
    out = np.empty((reps, g.size))
    for r in range(reps):
        out[r] = np.cumsum(substream(seed, r).standard_normal(g.size) * np.sqrt(dt))
    return PathEnsemble(g, out, int(seed), "brownian", 0)


# ---------------------------------------------------------------------------
# Brownian-motion statistics


@dataclass
class BMReport:
    reps: int
    grid: np.ndarray
    ks_at_1: float
    ks_pvalue: float
    ks_critical: float
    cov_matrix: np.ndarray
    max_cov_dev: float
    increment_corr: float

    def passes(self, ks_tol: float | None = None, cov_tol: float = 0.06) -> bool:
        ks_tol = self.ks_critical if ks_tol is None else ks_tol
        return self.ks_at_1 <= ks_tol and self.max_cov_dev <= cov_tol

    def summary(self) -> dict:
        return {
            "reps": self.reps,
            "ks_at_1": self.ks_at_1,
            "ks_pvalue": self.ks_pvalue,
            "ks_critical": self.ks_critical,
            "max_cov_dev": self.max_cov_dev,
            "increment_corr": self.increment_corr,
        }

    def cov_csv(self, header: str | None = None) -> str:
        buf, w = _csv_writer(header)
        w.writerow(["s", "t", "cov", "min_st"])
        for i, s in enumerate(self.grid):
            for j, t in enumerate(self.grid):
                w.writerow([repr(float(s)), repr(float(t)), repr(float(self.cov_matrix[i, j])),
                            repr(float(min(s, t)))])
        return buf.getvalue()


def bm_statistics(ensemble: PathEnsemble) -> BMReport:
    """KS distance of ``W(1)``, covariance error against ``min(s, t)``, increment correlation."""
    reps = ensemble.reps
    if reps < MIN_REPS:
        raise PreconditionError(f"reps = {reps} < {MIN_REPS}: KS test would be underpowered")
    g = ensemble.grid
    P = ensemble.paths
    end = int(np.argmin(np.abs(g - 1.0)))
    ks = stats.kstest(P[:, end], "norm")
    C = np.cov(P, rowvar=False).reshape(g.size, g.size)
    dev = float(np.max(np.abs(C - np.minimum.outer(g, g))))
    mid = int(np.argmin(np.abs(g - g[end] / 2)))
    first = P[:, mid] - P[:, 0]
    second = P[:, end] - P[:, mid]
    if first.std() > 0 and second.std() > 0:
        corr = float(np.corrcoef(first, second)[0, 1])
    else:
        corr = math.nan
    return BMReport(reps, g, float(ks.statistic), float(ks.pvalue),
                    KS_CRITICAL_1PCT / math.sqrt(reps), C, dev, corr)


# ---------------------------------------------------------------------------
# block running maxima


def _block_layout(partition):
    iv = partition.x_intervals()
    starts = np.array([a for a, _ in iv])
    ends = np.array([b for _, b in iv])
    base = np.repeat(starts - 1, ends - starts + 1)  # S index preceding each block
    return starts, ends, base


def _running_max_blocks(S0: np.ndarray, starts, base) -> np.ndarray:
    """``max_{x_j <= m <= y_j} |S_m - S_{x_j - 1}|`` for every block; ``S0[:, 0] = 0``."""
    D = np.abs(S0[:, 1:] - S0[:, base])
    return np.maximum.reduceat(D, starts - 1, axis=1)


def _with_zero(rows: np.ndarray) -> np.ndarray:
    S0 = np.zeros((rows.shape[0], rows.shape[1] + 1))
    np.cumsum(rows, axis=1, out=S0[:, 1:])
    return S0


def block_maxima(model, partition, reps: int, seed: int, workers: int = 1,
                 chunk: int = CHUNK) -> np.ndarray:
    """Samples of ``(X*_1, ..., X*_u)``, the per-block running maxima, shape ``(reps, u)``."""
    if partition.n != model.n:
        raise ValueError("partition and model rows differ in length")
    starts, _, base = _block_layout(partition)
    out = np.empty((reps, partition.u_n))
    for first, rows in iter_row_chunks(model, reps, seed, chunk=chunk, workers=workers):
        out[first : first + rows.shape[0]] = _running_max_blocks(_with_zero(rows), starts, base)
    return out


@dataclass
class LindebergReport:
    eps_list: list
    L2: list
    L2_se: list
    L1: list
    L1_se: list
    reps: int
    n: int
    sigma: float

    def to_csv(self, header: str | None = None) -> str:
        buf, w = _csv_writer(header)
        w.writerow(["eps", "L2", "L2_se", "L1", "L1_se"])
        for row in zip(self.eps_list, self.L2, self.L2_se, self.L1, self.L1_se):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def monotone_in_eps(self) -> bool:
        order = np.argsort(self.eps_list)
        return bool(np.all(np.diff(np.asarray(self.L2)[order]) <= 0)
                    and np.all(np.diff(np.asarray(self.L1)[order]) <= 0))


def lindeberg_from_maxima(maxima: np.ndarray, sigma: float, eps_list, n: int = 0) -> LindebergReport:
    """Maximal Lindeberg sums in both the squared and the first-moment form."""
    eps_list = [float(e) for e in eps_list]
    L2, L2_se, L1, L1_se = [], [], [], []
    for e in eps_list:
        fire = maxima >= e * sigma
        sq = np.where(fire, maxima**2, 0.0).sum(axis=1) / sigma**2
        lin = np.where(fire, maxima, 0.0).sum(axis=1) / sigma
        L2.append(math.fsum(sq) / sq.size)
        L2_se.append(jackknife_se(sq))
        L1.append(math.fsum(lin) / lin.size)
        L1_se.append(jackknife_se(lin))
    return LindebergReport(eps_list, L2, L2_se, L1, L1_se, maxima.shape[0], n, sigma)


def lindeberg_max_report(model, partition, eps_list, reps: int, seed: int,
                         workers: int = 1, oracle=None) -> LindebergReport:
    """Monte Carlo maximal Lindeberg sums along the blocks of ``partition``."""
    oracle = oracle or ExactOracle(model)
    sigma = math.sqrt(oracle.sigma_profile()[-1])
    maxima = block_maxima(model, partition, reps, seed, workers)
    return lindeberg_from_maxima(maxima, sigma, eps_list, model.n)


def block_max_norms(maxima: np.ndarray, p: float):
    """``||X*_j||_p`` per block with delta-method standard errors."""
    mom = maxima**p
    mean = mom.mean(axis=0)
    se_mean = np.array([jackknife_se(c) for c in mom.T])
    norms = mean ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(mean > 0, se_mean * norms / (p * mean), 0.0)
    return norms, se


def condition_c_ratio(partition, p: float, norms) -> float:
    """``sum_j ||X*_j||_p^p / (sum_j a_j^2)^{p/2}``."""
    norms = np.asarray(norms, dtype=np.float64)
    a = partition.scales()
    if norms.shape != a.shape:
        raise ValueError("one norm per block is required")
    return math.fsum(norms**p) / math.fsum(a * a) ** (p / 2)


# ---------------------------------------------------------------------------
# pathwise closeness of the two processes


@dataclass
class ClosenessReport:
    reps: int
    sup_diff: np.ndarray  # sup_t |W_n(t) - block process(t)| per replication
    max_block: np.ndarray  # max_j X*_j / sigma_n per replication

    @property
    def fraction_holds(self) -> float:
        return float(np.mean(self.sup_diff <= self.max_block * (1 + 1e-12)))

    @property
    def fraction_holds_double(self) -> float:
        return float(np.mean(self.sup_diff <= 2 * self.max_block * (1 + 1e-12)))

    @property
    def worst_ratio(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.max_block > 0, self.sup_diff / self.max_block, 0.0)
        return float(np.max(r))

    def summary(self) -> dict:
        return {
            "reps": self.reps,
            "fraction_holds": self.fraction_holds,
            "fraction_holds_double": self.fraction_holds_double,
            "worst_ratio": self.worst_ratio,
        }


def _closeness_pairs(profile: np.ndarray, partition) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(v(t), y_{block(t)})`` over every ``t`` where either process can jump.

    Both processes are left-continuous step functions of ``t`` whose jumps sit
    at values ``sigma_k^2 / sigma_n^2``; evaluating at ``t = 0`` and at all of
    those values gives the supremum over ``[0, 1]`` exactly.
    """
    total = profile[-1]
    levels = np.unique(np.concatenate(([0.0], profile[profile <= total], [total])))
    v = first_crossing(profile, levels)
    ends = np.array([b for _, b in partition.x_intervals()])
    j = first_crossing(profile[ends - 1], levels)
    pairs = np.unique(np.stack([v, ends[j - 1]], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def path_block_closeness(model, partition, reps: int, seed: int, workers: int = 1,
                         oracle=None, chunk: int = CHUNK) -> ClosenessReport:
    """Per-replication ``sup_t |W_n - block process|`` against ``max_j X*_j / sigma_n``."""
    if partition.n != model.n:
        raise ValueError("partition and model rows differ in length")
    oracle = oracle or ExactOracle(model)
    profile = oracle.sigma_profile()
    sigma = math.sqrt(profile[-1])
    vi, yi = _closeness_pairs(profile, partition)
    starts, _, base = _block_layout(partition)
    sup = np.empty(reps)
    mx = np.empty(reps)
    for first, rows in iter_row_chunks(model, reps, seed, chunk=chunk, workers=workers):
        S0 = _with_zero(rows)
        sl = slice(first, first + rows.shape[0])
        sup[sl] = np.max(np.abs(S0[:, vi] - S0[:, yi]), axis=1) / sigma
        mx[sl] = np.max(_running_max_blocks(S0, starts, base), axis=1) / sigma
    return ClosenessReport(reps, sup, mx)


# ---------------------------------------------------------------------------
# maximal moment inequality


@dataclass
class MaximalInequalityReport:
    p: float
    m_n: int
    phi_m: float
    ranges: list
    lhs: list  # ||max_{k<=i<=l} |S_{k..i}| ||_p
    lhs_se: list
    max_xi: list  # ||max_{k<=i<=l} |xi_i| ||_p
    max_partial_l2: list  # max_{k<=i<=l} ||S_{k..i}||_2, exact
    quotients: list = field(default_factory=list)

    @property
    def fitted_const(self) -> float:
        return max(self.quotients)

    def to_csv(self, header: str | None = None) -> str:
        buf, w = _csv_writer(header)
        w.writerow(["k", "l", "lhs", "lhs_se", "max_xi_p", "max_partial_l2", "quotient"])
        for (k, l), *vals in zip(self.ranges, self.lhs, self.lhs_se, self.max_xi,
                                 self.max_partial_l2, self.quotients):
            w.writerow([k, l] + [repr(float(x)) for x in vals])
        return buf.getvalue()


def maximal_inequality_check(model, p: float, ranges, m_n: int, reps: int, seed: int,
                             eps: float = 0.1, phi_m: float | None = None,
                             workers: int = 1, oracle=None,
                             chunk: int = CHUNK) -> MaximalInequalityReport:
    """Fit ``C`` in ``||max |S_{k..i}| ||_p <= C (m_n ||max |xi_i| ||_p + max ||S_{k..i}||_2)``.

    The quotient of the left side by the bracket is reported per range, and
    ``fitted_const`` is its maximum.  ``phi_m`` is the phi-mixing coefficient
    at lag ``m_n``; it is computed from the exact profile when omitted and
    must be below ``1/2 - eps``.
    """
    from .mixing import coefficient_profile

    ranges = [(int(k), int(l)) for k, l in ranges]
    if any(not 1 <= k <= l <= model.n for k, l in ranges):
        raise ValueError("ranges must satisfy 1 <= k <= l <= n")
    if m_n < 1:
        raise ValueError("m_n must be >= 1")
    if phi_m is None:
        phi_m = coefficient_profile(model, [m_n]).phi[0] if m_n < model.n else 0.0
    if not phi_m < 0.5 - eps:
        raise PreconditionError(f"phi_n({m_n}) = {phi_m:.4g} is not below 1/2 - eps = {0.5 - eps:.4g}")
    oracle = oracle or ExactOracle(model)
    partial = [float(np.sqrt(np.max(np.maximum(oracle.running_variance(k, l), 0.0))))
               for k, l in ranges]
    lhs_s = np.empty((reps, len(ranges)))
    xi_s = np.empty((reps, len(ranges)))
    for first, rows in iter_row_chunks(model, reps, seed, chunk=chunk, workers=workers):
        sl = slice(first, first + rows.shape[0])
        for c, (k, l) in enumerate(ranges):
            seg = rows[:, k - 1 : l]
            lhs_s[sl, c] = np.max(np.abs(np.cumsum(seg, axis=1)), axis=1) ** p
            xi_s[sl, c] = np.max(np.abs(seg), axis=1) ** p
    lhs, lhs_se, max_xi, quot = [], [], [], []
    for c in range(len(ranges)):
        mom = math.fsum(lhs_s[:, c]) / reps
        norm = mom ** (1 / p)
        lhs.append(norm)
        lhs_se.append(jackknife_se(lhs_s[:, c]) * norm / (p * mom) if mom > 0 else 0.0)
        max_xi.append((math.fsum(xi_s[:, c]) / reps) ** (1 / p))
        bracket = m_n * max_xi[-1] + partial[c]
        quot.append(norm / bracket if bracket > 0 else 0.0)
    return MaximalInequalityReport(float(p), int(m_n), float(phi_m), ranges, lhs, lhs_se,
                                   max_xi, partial, quot)
