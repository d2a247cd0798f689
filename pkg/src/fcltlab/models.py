"""Triangular-array rows with exact second moments.

Two families are provided:

* :class:`MarkovArrayModel` -- ``xi_k = f_k(Y_k)`` for a finite-state,
  possibly time-inhomogeneous Markov chain ``Y``.
* :class:`MDepArrayModel` -- ``xi_k = sum_i c[k, i] eta_{k-i}`` with i.i.d.
  centred unit-variance innovations, exactly ``m0``-dependent.

Both are centred at construction and obey ``max_k ||xi_k||_2 <= 1``; a
row whose largest coordinate norm ``gamma`` exceeds 1 is divided by
``1 + gamma``.  Indices are 1-based in every public method, matching
``xi_1, ..., xi_n``.

Second moments are served by :class:`ExactOracle`.  Running variances
``Var(xi_s + ... + xi_k)`` are produced by forward recursions costing
``O(S^2)`` (Markov) or ``O(m0)`` (m-dependent) per extension, so a greedy
block scan over a row of length ``n`` is ``O(n)``.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numba
import numpy as np

MAX_STATES = 8
INNOVATIONS = ("gaussian", "rademacher", "bernoulli")


def substream(seed: int, rep: int) -> np.random.Generator:
    """Independent generator for replication ``rep`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep),))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# numba kernels for the Markov forward recursions


@numba.njit(cache=True, nogil=True)
def _markov_running_variance(P, f, mu, start, stop):
    period = P.shape[0]
    S = f.shape[1]
    out = np.empty(stop - start + 1)
    m = mu[start] * f[start]
    var = 0.0
    for x in range(S):
        var += mu[start, x] * f[start, x] ** 2
    out[0] = var
    pred = np.empty(S)
    for k in range(start + 1, stop + 1):
        Pk = P[(k - 1) % period]
        cov = 0.0
        e2 = 0.0
        for y in range(S):
            acc = 0.0
            for x in range(S):
                acc += m[x] * Pk[x, y]
            pred[y] = acc
            cov += acc * f[k, y]
            e2 += mu[k, y] * f[k, y] ** 2
        var += e2 + 2.0 * cov
        out[k - start] = var
        for y in range(S):
            m[y] = pred[y] + mu[k, y] * f[k, y]
    return out


@numba.njit(cache=True, nogil=True)
def _markov_cross_cov(P, f, mu, i0, i1, stop):
    period = P.shape[0]
    S = f.shape[1]
    m = mu[i0] * f[i0]
    pred = np.empty(S)
    for k in range(i0 + 1, i1 + 1):
        Pk = P[(k - 1) % period]
        for y in range(S):
            acc = 0.0
            for x in range(S):
                acc += m[x] * Pk[x, y]
            pred[y] = acc
        for y in range(S):
            m[y] = pred[y] + mu[k, y] * f[k, y]
    out = np.empty(stop - i1)
    for k in range(i1 + 1, stop + 1):
        Pk = P[(k - 1) % period]
        c = 0.0
        for y in range(S):
            acc = 0.0
            for x in range(S):
                acc += m[x] * Pk[x, y]
            pred[y] = acc
            c += acc * f[k, y]
        for y in range(S):
            m[y] = pred[y]
        out[k - i1 - 1] = c
    return out


@numba.njit(cache=True, nogil=True)
def _markov_sample(cum_init, cum_P, f, U):
    reps, n = U.shape
    period = cum_P.shape[0]
    S = f.shape[1]
    out = np.empty((reps, n))
    for r in range(reps):
        state = 0
        while state < S - 1 and U[r, 0] >= cum_init[state]:
            state += 1
        out[r, 0] = f[0, state]
        for k in range(1, n):
            row = cum_P[(k - 1) % period, state]
            nxt = 0
            while nxt < S - 1 and U[r, k] >= row[nxt]:
                nxt += 1
            state = nxt
            out[r, k] = f[k, state]
    return out


# ---------------------------------------------------------------------------
# models


def _check_index(n: int, *idx: int) -> None:
    for i in idx:
        if not 1 <= i <= n:
            raise IndexError(f"index {i} outside 1..{n}")


class MarkovArrayModel:
    """Row ``xi_k = f_k(Y_k)``, ``k = 1..n``, of a finite-state Markov chain.

    Parameters
    ----------
    n : int
        Row length.
    initial : (S,) array_like
        Law of ``Y_1``.
    transitions : (S, S) or (m, S, S) array_like
        Transition matrices; ``P_k = transitions[(k - 1) % m]`` moves
        ``Y_k`` to ``Y_{k+1}``.
    observables : (S,) or (r, S) array_like
        ``f_k = observables[(k - 1) % r]`` before centring.
    """

    kind = "markov"

    def __init__(self, n, initial, transitions, observables):
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        init = np.asarray(initial, dtype=np.float64)
        P = np.asarray(transitions, dtype=np.float64)
        if P.ndim == 2:
            P = P[None]
        obs = np.asarray(observables, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[None]
        S = init.size
        if init.ndim != 1 or not 1 <= S <= MAX_STATES:
            raise ValueError(f"initial must be a vector with 1..{MAX_STATES} states")
        if P.ndim != 3 or P.shape[1:] != (S, S):
            raise ValueError(f"transitions must have shape (m, {S}, {S})")
        if obs.ndim != 2 or obs.shape[1] != S:
            raise ValueError(f"observables must have shape (r, {S})")
        if np.any(init < 0) or abs(init.sum() - 1) > 1e-12:
            raise ValueError("initial distribution must be non-negative and sum to 1")
        if np.any(P < 0):
            raise ValueError("transition matrices must be non-negative")
        row_err = np.abs(P.sum(axis=2) - 1)
        if np.any(row_err > 1e-12):
            k, x = np.unravel_index(np.argmax(row_err), row_err.shape)
            raise ValueError(
                f"transition matrix {k} row {x} sums to {P[k, x].sum():.15g}, not 1"
            )

        self.n = n
        self.initial = init
        self.transitions = P
        self.raw_observables = obs
        self.state_count = S

        mu = np.empty((n, S))
        mu[0] = init
        for k in range(1, n):
            mu[k] = mu[k - 1] @ P[(k - 1) % P.shape[0]]
        f = obs[np.arange(n) % obs.shape[0]].copy()
        f -= np.sum(mu * f, axis=1, keepdims=True)
        gamma = math.sqrt(float(np.max(np.sum(mu * f * f, axis=1))))
        self.scale = 1.0
        if gamma > 1 + 1e-12:
            self.scale = 1.0 / (1.0 + gamma)
            f *= self.scale
        second = np.sum(mu * f * f, axis=1)
        if not np.any(second > 0):
            raise ValueError("degenerate model: every coordinate has zero variance")
        self.marginals = mu
        self.observables = f
        self._second = second
        self._injective = None

    def with_n(self, n: int) -> "MarkovArrayModel":
        return MarkovArrayModel(n, self.initial, self.transitions, self.raw_observables)

    def transition(self, k: int) -> np.ndarray:
        """``P_k`` (from ``Y_k`` to ``Y_{k+1}``), ``1 <= k < n``."""
        return self.transitions[(k - 1) % self.transitions.shape[0]]

    @property
    def variances(self) -> np.ndarray:
        return self._second.copy()

    @property
    def injective(self) -> bool:
        """True when each ``f_k`` separates the states ``Y_k`` can occupy.

        Then ``xi`` and ``Y`` generate the same sigma-algebras and the
        Markov property applies to ``xi`` directly.
        """
        if self._injective is None:
            vals = np.where(self.marginals > 0, self.observables, np.nan)
            vals = np.sort(vals, axis=1)
            gaps = np.diff(vals, axis=1)
            self._injective = not bool(np.any(gaps <= 1e-12))
        return self._injective

    # exact moments, 0-based internals
    def _running_variance(self, start: int, stop: int) -> np.ndarray:
        return _markov_running_variance(
            self.transitions, self.observables, self.marginals, start, stop
        )

    def _cross_cov(self, i0: int, i1: int, stop: int) -> np.ndarray:
        if stop <= i1:
            return np.empty(0)
        return _markov_cross_cov(
            self.transitions, self.observables, self.marginals, i0, i1, stop
        )

    def pair_cov(self, i: int, j: int) -> float:
        _check_index(self.n, i, j)
        if i > j:
            i, j = j, i
        if i == j:
            return float(self._second[i - 1])
        return float(self._cross_cov(i - 1, i - 1, j - 1)[-1])

    def _sample(self, reps_idx, seed: int) -> np.ndarray:
        U = np.stack([substream(seed, r).random(self.n) for r in reps_idx])
        cum_init = np.cumsum(self.initial)
        cum_P = np.cumsum(self.transitions, axis=2)
        return _markov_sample(cum_init, cum_P, self.observables, U)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "initial": self.initial.tolist(),
            "transitions": self.transitions.tolist(),
            "observables": self.raw_observables.tolist(),
        }


class MDepArrayModel:
    """Moving-average row ``xi_k = sum_{i=0..m0} c[k, i] eta_{k-i}``.

    ``coefficients`` is a single row of length ``m0 + 1`` (used for every
    ``k``) or a full ``(n, m0 + 1)`` table.  Innovations are i.i.d., centred
    and of unit variance: standard Gaussian, Rademacher, or a standardised
    Bernoulli(``bernoulli_p``).
    """

    kind = "mdep"

    def __init__(self, n, coefficients, innovation="gaussian", bernoulli_p=0.5):
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        if innovation not in INNOVATIONS:
            raise ValueError(f"innovation must be one of {INNOVATIONS}")
        if innovation == "bernoulli" and not 0 < bernoulli_p < 1:
            raise ValueError("bernoulli_p must lie in (0, 1)")
        raw = np.asarray(coefficients, dtype=np.float64)
        C = np.broadcast_to(raw, (n, raw.shape[-1])).copy() if raw.ndim == 1 else raw.copy()
        if C.ndim != 2 or C.shape[0] != n:
            raise ValueError("coefficient table must have one row per index")
        self.n = n
        self.m0 = C.shape[1] - 1
        self.innovation = innovation
        self.bernoulli_p = float(bernoulli_p)
        self.raw_coefficients = raw
        norms = np.sum(C * C, axis=1)
        gamma = math.sqrt(float(norms.max()))
        self.scale = 1.0
        if gamma > 1 + 1e-12:
            self.scale = 1.0 / (1.0 + gamma)
            C *= self.scale
        if not np.any(C != 0):
            raise ValueError("degenerate model: all coefficients vanish")
        self.coefficients = C
        # band[k, h] = Cov(xi_k, xi_{k+h}), 0-based k
        band = np.zeros((n, self.m0 + 1))
        for h in range(self.m0 + 1):
            if h < n:
                band[: n - h, h] = np.sum(C[: n - h, : self.m0 + 1 - h] * C[h:, h:], axis=1)
        self.band = band

    def with_n(self, n: int) -> "MDepArrayModel":
        if self.raw_coefficients.ndim != 1:
            raise ValueError("with_n needs a single coefficient row")
        return MDepArrayModel(n, self.raw_coefficients, self.innovation, self.bernoulli_p)

    @property
    def variances(self) -> np.ndarray:
        return self.band[:, 0].copy()

    def _running_variance(self, start: int, stop: int) -> np.ndarray:
        inc = self.band[start : stop + 1, 0].copy()
        for h in range(1, self.m0 + 1):
            # Cov(xi_{k-h}, xi_k) for k - h >= start
            if start + h > stop:
                break
            inc[h:] += 2.0 * self.band[start : stop + 1 - h, h]
        return np.cumsum(inc)

    def _cross_cov(self, i0: int, i1: int, stop: int) -> np.ndarray:
        out = np.zeros(max(stop - i1, 0))
        for h in range(1, self.m0 + 1):
            lo = max(i0, i1 + 1 - h)
            hi = min(i1, stop - h)
            if lo > hi:
                continue
            ks = np.arange(lo, hi + 1) + h
            out[ks - i1 - 1] += self.band[lo : hi + 1, h]
        return out

    def pair_cov(self, i: int, j: int) -> float:
        _check_index(self.n, i, j)
        if i > j:
            i, j = j, i
        h = j - i
        return float(self.band[i - 1, h]) if h <= self.m0 else 0.0

    def draw_innovations(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.innovation == "gaussian":
            return rng.standard_normal(size)
        if self.innovation == "rademacher":
            return 2.0 * rng.integers(0, 2, size) - 1.0
        p = self.bernoulli_p
        return ((rng.random(size) < p) - p) / math.sqrt(p * (1 - p))

    def _sample(self, reps_idx, seed: int) -> np.ndarray:
        n, m0 = self.n, self.m0
        eta = np.stack([self.draw_innovations(substream(seed, r), n + m0) for r in reps_idx])
        out = np.zeros((len(reps_idx), n))
        for i in range(m0 + 1):
            col = self.coefficients[:, i]
            nz = np.flatnonzero(col)
            if nz.size == 0:
                continue
            if nz.size == n:
                out += col * eta[:, m0 - i : m0 - i + n]
            else:
                out[:, nz] += col[nz] * eta[:, m0 - i + nz]
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "coefficients": self.raw_coefficients.tolist(),
            "innovation": self.innovation,
            "bernoulli_p": self.bernoulli_p,
        }


# ---------------------------------------------------------------------------
# common constructions


def iid_model(n: int, innovation: str = "gaussian") -> MDepArrayModel:
    """Unit-variance i.i.d. row."""
    return MDepArrayModel(n, [1.0], innovation)


def ma1_model(n: int, innovation: str = "gaussian") -> MDepArrayModel:
    """``(eta_k + eta_{k-1}) / sqrt 2``: one-dependent, unit variance."""
    c = 1.0 / math.sqrt(2.0)
    return MDepArrayModel(n, [c, c], innovation)


def two_state_chain(n: int, flip: float = 0.3) -> MarkovArrayModel:
    """Stationary symmetric two-state chain with ``f = -1/+1``.

    Lag-``k`` correlation is ``(1 - 2 flip)^k``.
    """
    P = [[1 - flip, flip], [flip, 1 - flip]]
    return MarkovArrayModel(n, [0.5, 0.5], P, [-1.0, 1.0])


def common_factor_model(n: int) -> MDepArrayModel:
    """``xi_k = eta_1`` for every ``k``: a fully correlated negative control.

    Written as an ``(n-1)``-dependent moving average whose only non-zero
    coefficient is ``c[k, k-1] = 1``.
    """
    C = np.zeros((n, n))
    C[np.arange(n), np.arange(n)] = 1.0
    return MDepArrayModel(n, C, "gaussian")


def model_from_dict(data: dict):
    """Build a model from its config mapping (see ``to_dict``)."""
    data = dict(data)
    kind = data.pop("kind", None)
    if kind == "markov":
        return MarkovArrayModel(
            data["n"], data["initial"], data["transitions"], data["observables"]
        )
    if kind == "mdep":
        return MDepArrayModel(
            data["n"],
            data["coefficients"],
            data.get("innovation", "gaussian"),
            data.get("bernoulli_p", 0.5),
        )
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# sampling


def sample_rows(model, reps: int, seed: int, workers: int = 1, first_rep: int = 0) -> np.ndarray:
    """``reps`` i.i.d. replications of the row, shape ``(reps, n)``.

    Replication ``r`` is drawn from its own substream of ``(seed, r)``, so the
    output does not depend on ``workers`` or on how replications are chunked.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    idx = np.arange(first_rep, first_rep + reps)
    workers = max(1, int(workers))
    if workers == 1 or reps < 2 * workers:
        return model._sample(idx, seed)
    chunks = np.array_split(idx, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: model._sample(c, seed), chunks))
    return np.concatenate(parts, axis=0)


def iter_row_chunks(model, reps: int, seed: int, chunk: int = 1000, workers: int = 1):
    """Yield ``(first_rep, rows)`` chunks covering ``reps`` replications."""
    for first in range(0, reps, chunk):
        count = min(chunk, reps - first)
        yield first, sample_rows(model, count, seed, workers=workers, first_rep=first)


# ---------------------------------------------------------------------------
# oracles


class ExactOracle:
    """Exact second moments of a model row (1-based indices)."""

    mode = "exact"

    def __init__(self, model):
        self.model = model
        self.n = model.n
        self._profile = None

    def pair_cov(self, i: int, j: int) -> float:
        return self.model.pair_cov(i, j)

    def running_variance(self, start: int, stop: int) -> np.ndarray:
        """``Var(xi_start + ... + xi_k)`` for ``k = start..stop``."""
        _check_index(self.n, start, stop)
        if stop < start:
            raise ValueError("stop < start")
        return self.model._running_variance(start - 1, stop - 1)

    def range_variance(self, i: int, j: int) -> float:
        if i == 1 and self._profile is not None:
            return float(self._profile[j - 1])
        return float(self.running_variance(i, j)[-1])

    def partial_sum_norm(self, i: int, j: int) -> float:
        """``|| xi_i + ... + xi_j ||_2``."""
        return math.sqrt(max(self.range_variance(i, j), 0.0))

    def sigma_profile(self) -> np.ndarray:
        """``sigma_{k,n}^2`` for ``k = 1..n`` (cached)."""
        if self._profile is None:
            self._profile = self.running_variance(1, self.n)
        return self._profile

    def cross_covariance(self, i0: int, i1: int, stop: int) -> np.ndarray:
        """``Cov(xi_i0 + ... + xi_i1, xi_k)`` for ``k = i1+1..stop``."""
        _check_index(self.n, i0, i1)
        if stop < i1:
            return np.empty(0)
        _check_index(self.n, stop)
        return self.model._cross_cov(i0 - 1, i1 - 1, stop - 1)

    def interval_gram(self, intervals) -> np.ndarray:
        """Covariance matrix of the sums over ordered, disjoint intervals.

        ``intervals`` holds inclusive 1-based ``(start, end)`` pairs; an
        empty interval (``end < start``) has a zero sum.
        """
        iv = [(int(a), int(b)) for a, b in intervals]
        k = len(iv)
        G = np.zeros((k, k))
        last = max((b for a, b in iv if b >= a), default=0)
        for p, (a, b) in enumerate(iv):
            if b < a:
                continue
            G[p, p] = self.range_variance(a, b)
            if b >= last:
                continue
            cross = self.cross_covariance(a, b, last)
            prefix = np.concatenate(([0.0], np.cumsum(cross)))
            for q in range(p + 1, k):
                c, d = iv[q]
                if d < c:
                    continue
                if c <= b:
                    raise ValueError("intervals must be disjoint and ordered")
                val = prefix[d - b] - prefix[c - 1 - b]
                G[p, q] = G[q, p] = val
        return G


class MonteCarloOracle:
    """Second moments estimated from ``reps`` sampled rows, with standard errors."""

    mode = "montecarlo"

    def __init__(self, model, reps: int, seed: int, workers: int = 1):
        self.model = model
        self.n = model.n
        self.reps = int(reps)
        self.seed = int(seed)
        self.rows = sample_rows(model, reps, seed, workers=workers)
        self.rows = self.rows - self.rows.mean(axis=0)

    def _cov_and_se(self, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
        prod = x * y
        est = prod.sum() / (self.reps - 1)
        se = prod.std(ddof=1) / math.sqrt(self.reps)
        return float(est), float(se)

    def pair_cov(self, i: int, j: int) -> float:
        return self.pair_cov_se(i, j)[0]

    def pair_cov_se(self, i: int, j: int) -> tuple[float, float]:
        _check_index(self.n, i, j)
        return self._cov_and_se(self.rows[:, i - 1], self.rows[:, j - 1])

    def range_variance(self, i: int, j: int) -> float:
        return self.range_variance_se(i, j)[0]

    def range_variance_se(self, i: int, j: int) -> tuple[float, float]:
        _check_index(self.n, i, j)
        s = self.rows[:, i - 1 : j].sum(axis=1)
        return self._cov_and_se(s, s)

    def partial_sum_norm(self, i: int, j: int) -> float:
        return math.sqrt(max(self.range_variance(i, j), 0.0))


def pair_cov(model, i: int, j: int) -> float:
    """Exact ``Cov(xi_i, xi_j)``."""
    return model.pair_cov(i, j)


def partial_sum_norm(oracle, i: int, j: int) -> float:
    """``|| xi_i + ... + xi_j ||_2`` from ``oracle``."""
    if i > j:
        raise ValueError("need i <= j")
    return oracle.partial_sum_norm(i, j)


# ---------------------------------------------------------------------------
# binary ensemble files

MAGIC = b"FCLTMAT\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQQ")


def write_matrix(path, matrix) -> None:
    """Write a ``(reps, n)`` float matrix: header then little-endian float64 rows."""
    M = np.ascontiguousarray(matrix, dtype="<f8")
    if M.ndim != 2:
        raise ValueError("matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, M.shape[0], M.shape[1]))
        fh.write(M.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, version, reps, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not an ensemble matrix file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported matrix format version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != reps * n:
        raise ValueError("truncated matrix file")
    return body.reshape(reps, n).astype(np.float64)
