"""Exact rho, phi and alpha mixing coefficients and the projective coefficient.

Pairwise coefficients are computed between two finite sigma-algebras given
by the joint law of their atoms (:class:`JointBlockDistribution`).  For
Markov rows the past/future sigma-algebras collapse to those of ``Y_s`` and
``Y_{s+k}`` (the Markov property; exact when each observable separates the
states), so every lag costs one ``S x S`` joint.  Moving-average rows are
independent beyond ``m0``; inside the dependence range a finite window of
coordinates is used and the entry is flagged as a lower bound.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np

from .models import MarkovArrayModel, MDepArrayModel

ATOM_BUDGET = 24
STRIDE_THRESHOLD = 200


class Provenance(str, Enum):
    EXACT = "Exact"
    UPPER_BOUND = "UpperBound"
    LOWER_BOUND = "LowerBound"
    APPROXIMATE = "Approximate"
    MONTE_CARLO = "MonteCarlo"


def _combine(*flags: Provenance) -> Provenance:
    kinds = set(flags) - {Provenance.EXACT}
    if not kinds:
        return Provenance.EXACT
    if len(kinds) == 1:
        return kinds.pop()
    return Provenance.APPROXIMATE


class DegenerateDistributionError(ValueError):
    pass


@dataclass(frozen=True)
class JointBlockDistribution:
    """Joint probabilities ``probs[a, b]`` of left atom ``a`` and right atom ``b``.

    Atoms of zero marginal probability are pruned on construction.
    """

    probs: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.probs, dtype=np.float64)
        if P.ndim != 2:
            raise ValueError("probs must be a matrix")
        if np.any(P < 0):
            raise ValueError("joint probabilities must be non-negative")
        if abs(P.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint probabilities sum to {P.sum():.15g}, not 1")
        P = P[P.sum(axis=1) > 0][:, P.sum(axis=0) > 0]
        object.__setattr__(self, "probs", P)

    @property
    def left_atoms(self) -> int:
        return self.probs.shape[0]

    @property
    def right_atoms(self) -> int:
        return self.probs.shape[1]

    @property
    def trivial(self) -> bool:
        return self.left_atoms < 2 or self.right_atoms < 2


def rho_exact(joint: JointBlockDistribution) -> float:
    """Maximal correlation: second singular value of ``P(a,b)/sqrt(P(a)P(b))``."""
    if joint.trivial:
        raise DegenerateDistributionError("a side has a single atom after pruning")
    P = joint.probs
    pa, pb = P.sum(axis=1), P.sum(axis=0)
    # scale by each root separately so tiny atom masses do not underflow
    M = P / np.sqrt(pa)[:, None] / np.sqrt(pb)[None, :]
    sv = np.linalg.svd(M, compute_uv=False)
    return float(min(max(sv[1], 0.0), 1.0))


def _subset_rows(P: np.ndarray) -> np.ndarray:
    """Row sums of ``P`` over every subset of left atoms (bit ``i`` = atom ``i``).

    Each subset's row is one earlier subset plus a single atom, so building
    the table costs O(1) vector additions per event.
    """
    L = P.shape[0]
    T = np.zeros((1 << L, P.shape[1]))
    for b in range(L):
        T[1 << b : 1 << (b + 1)] = T[: 1 << b] + P[b]
    return T


def _check_budget(joint: JointBlockDistribution) -> None:
    if joint.left_atoms + joint.right_atoms > ATOM_BUDGET:
        raise ValueError(
            f"{joint.left_atoms} + {joint.right_atoms} atoms exceed the budget of "
            f"{ATOM_BUDGET}; coarsen the sigma-algebras"
        )


def phi_exact(joint: JointBlockDistribution) -> float:
    """``sup |P(B|A) - P(B)|`` over left events ``A`` with ``P(A) > 0`` and right ``B``.

    For a fixed ``A`` the best ``B`` collects the right atoms where
    ``P(b|A) > P(b)``, which gives half the L1 distance between the laws.
    """
    _check_budget(joint)
    P = joint.probs
    T = _subset_rows(P)[1:]
    pA = T.sum(axis=1)
    d = T / pA[:, None] - P.sum(axis=0)
    return float(min(0.5 * np.abs(d).sum(axis=1).max(), 1.0))


def alpha_exact(joint: JointBlockDistribution) -> float:
    """``sup |P(A & B) - P(A) P(B)|`` over left ``A`` and right ``B``."""
    _check_budget(joint)
    P = joint.probs
    T = _subset_rows(P)
    e = T - T.sum(axis=1)[:, None] * P.sum(axis=0)
    return float(min(0.5 * np.abs(e).sum(axis=1).max(), 0.25))


# ---------------------------------------------------------------------------
# joints for concrete models


def state_joint(model: MarkovArrayModel, s: int, k: int) -> np.ndarray:
    """Joint law of ``(Y_s, Y_{s+k})``, 1-based ``s``."""
    Q = np.eye(model.state_count)
    for t in range(s, s + k):
        Q = Q @ model.transition(t)
    return model.marginals[s - 1][:, None] * Q


def markov_window_joint(model: MarkovArrayModel, past, future) -> np.ndarray:
    """Joint law of the xi-values on two index windows, by path enumeration.

    ``past = (a, s)`` and ``future = (t, b)`` are inclusive 1-based windows
    with ``s < t``.  Rows/columns are the distinct xi-tuples (atoms of the
    generated sigma-algebras).
    """
    (a, s), (t, b) = past, future
    S = model.state_count
    f = np.round(model.observables, 12)
    left_paths = list(itertools.product(range(S), repeat=s - a + 1))
    right_paths = list(itertools.product(range(S), repeat=b - t + 1))

    def path_prob(start_dist, path, first):
        p = start_dist[path[0]]
        for off, (x, y) in enumerate(zip(path, path[1:])):
            p *= model.transition(first + off)[x, y]
        return p

    bridge = np.eye(S)
    for u in range(s, t):
        bridge = bridge @ model.transition(u)

    lkeys = [tuple(f[a - 1 + i, x] for i, x in enumerate(path)) for path in left_paths]
    rkeys = [tuple(f[t - 1 + i, x] for i, x in enumerate(path)) for path in right_paths]
    lp = np.array([path_prob(model.marginals[a - 1], p, a) for p in left_paths])
    # conditional right-path probabilities given the first state
    unit = np.eye(S)
    rp = np.array([path_prob(unit[p[0]], p, t) for p in right_paths])
    lidx = {k: i for i, k in enumerate(dict.fromkeys(lkeys))}
    ridx = {k: i for i, k in enumerate(dict.fromkeys(rkeys))}
    J = np.zeros((len(lidx), len(ridx)))
    for li, lpath in enumerate(left_paths):
        if lp[li] == 0:
            continue
        row = lp[li] * bridge[lpath[-1]]
        for ri, rpath in enumerate(right_paths):
            J[lidx[lkeys[li]], ridx[rkeys[ri]]] += row[rpath[0]] * rp[ri]
    return J


def mdep_window_joint(model: MDepArrayModel, past, future, max_innovations: int = 20):
    """Joint law of windowed xi-tuples for a finite-valued moving average."""
    if model.innovation == "gaussian":
        raise ValueError("finite-atom joints need discrete innovations")
    (a, s), (t, b) = past, future
    m0 = model.m0
    first, last = a - m0, b  # innovation indices involved
    count = last - first + 1
    if count > max_innovations:
        raise ValueError(f"{count} innovations exceed the enumeration cap {max_innovations}")
    if model.innovation == "rademacher":
        values, weights = np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    else:
        p = model.bernoulli_p
        values = np.array([-p, 1 - p]) / math.sqrt(p * (1 - p))
        weights = np.array([1 - p, p])
    C = model.coefficients
    lkeys, rkeys, probs = [], [], []
    for combo in itertools.product(range(2), repeat=count):
        eta = values[list(combo)]
        pr = float(np.prod(weights[list(combo)]))

        def xi(k):
            return sum(C[k - 1, i] * eta[k - i - first] for i in range(m0 + 1) if k - i >= first)

        lkeys.append(tuple(round(xi(k), 12) for k in range(a, s + 1)))
        rkeys.append(tuple(round(xi(k), 12) for k in range(t, b + 1)))
        probs.append(pr)
    lidx = {k: i for i, k in enumerate(dict.fromkeys(lkeys))}
    ridx = {k: i for i, k in enumerate(dict.fromkeys(rkeys))}
    J = np.zeros((len(lidx), len(ridx)))
    for lk, rk, pr in zip(lkeys, rkeys, probs):
        J[lidx[lk], ridx[rk]] += pr
    return J


def gaussian_window_rho(model: MDepArrayModel, past, future) -> float:
    """First canonical correlation of two Gaussian windows.

    For jointly Gaussian vectors this equals the maximal correlation.
    """
    (a, s), (t, b) = past, future
    idx = list(range(a, s + 1)) + list(range(t, b + 1))
    Sigma = np.array([[model.pair_cov(i, j) for j in idx] for i in idx])
    p = s - a + 1
    Sxx, Syy, Sxy = Sigma[:p, :p], Sigma[p:, p:], Sigma[:p, p:]

    def inv_sqrt(M):
        w, V = np.linalg.eigh(M)
        keep = w > 1e-12 * max(w.max(), 1e-300)
        return V[:, keep] / np.sqrt(w[keep])

    if not np.any(Sxy):
        return 0.0
    K = inv_sqrt(Sxx).T @ Sxy @ inv_sqrt(Syy)
    return float(min(np.linalg.svd(K, compute_uv=False)[0], 1.0))


# ---------------------------------------------------------------------------
# profiles


@dataclass
class MixingProfile:
    """Coefficient sequences by lag, each entry with its provenance."""

    n: int
    lags: list
    rho: list
    phi: list
    alpha: list
    provenance: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)

    def entry(self, lag: int) -> dict:
        i = self.lags.index(lag)
        return {
            "rho": self.rho[i],
            "phi": self.phi[i],
            "alpha": self.alpha[i],
            **{f"{k}_provenance": v[i] for k, v in self.provenance.items()},
        }

    def value(self, name: str, lag: int) -> float:
        """Coefficient at integer or real lag; real lags are floored."""
        lag = int(math.floor(lag))
        seq = getattr(self, name)
        if lag in self.lags:
            return seq[self.lags.index(lag)]
        if lag > max(self.lags) and self.lags == list(range(1, max(self.lags) + 1)):
            if seq[-1] == 0:
                return 0.0
        raise KeyError(f"lag {lag} not in profile")

    def ordering_violations(self, tol: float = 1e-12) -> list[str]:
        """Proven breaches of rho <= 2 sqrt(phi), alpha <= phi, alpha <= rho/4 or monotonicity.

        A breach ``x > y`` is only reported when the value of ``x`` cannot
        overstate the truth (exact or lower bound) and the value of ``y``
        cannot understate it (exact or upper bound).
        """
        low_ok = (Provenance.EXACT.value, Provenance.LOWER_BOUND.value)
        high_ok = (Provenance.EXACT.value, Provenance.UPPER_BOUND.value)
        prov = {name: self.provenance.get(name, [Provenance.EXACT.value] * len(self.lags))
                for name in ("rho", "phi", "alpha")}

        def proven(big: str, i: int, small: str, j: int) -> bool:
            return prov[big][i] in low_ok and prov[small][j] in high_ok

        out = []
        for i, k in enumerate(self.lags):
            r, ph, al = self.rho[i], self.phi[i], self.alpha[i]
            if r > 2 * math.sqrt(ph) + tol and proven("rho", i, "phi", i):
                out.append(f"lag {k}: rho={r:.6g} > 2 sqrt(phi)={2 * math.sqrt(ph):.6g}")
            if al > ph + tol and proven("alpha", i, "phi", i):
                out.append(f"lag {k}: alpha={al:.6g} > phi={ph:.6g}")
            if al > r / 4 + tol and proven("alpha", i, "rho", i):
                out.append(f"lag {k}: alpha={al:.6g} > rho/4={r / 4:.6g}")
        order = np.argsort(self.lags)
        for name in ("rho", "phi", "alpha"):
            seq = np.asarray(getattr(self, name))[order]
            for b in np.flatnonzero(np.diff(seq) > tol):
                i, j = order[b], order[b + 1]
                if proven(name, j, name, i):
                    out.append(f"{name} increases between lags {self.lags[i]} and {self.lags[j]}")
        return out

    def rho_le_2sqrt_phi(self, tol: float = 1e-12) -> bool:
        return all(r <= 2 * math.sqrt(p) + tol for r, p in zip(self.rho, self.phi))

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lag", "rho", "phi", "alpha", "provenance"])
        for i, k in enumerate(self.lags):
            flags = {name: self.provenance[name][i] for name in ("rho", "phi", "alpha")}
            if len(set(flags.values())) == 1:
                prov = flags["rho"]
            else:
                prov = "|".join(f"{name}:{v}" for name, v in flags.items())
            w.writerow([k, repr(float(self.rho[i])), repr(float(self.phi[i])), repr(float(self.alpha[i])), prov])
        return buf.getvalue()


def aggregate_profiles(profiles) -> MixingProfile:
    """Entrywise max over profiles of several rows (the array coefficients)."""
    profiles = list(profiles)
    lags = profiles[0].lags
    if any(p.lags != lags for p in profiles):
        raise ValueError("profiles must share lags")
    out = {}
    prov = {}
    for name in ("rho", "phi", "alpha"):
        stack = np.array([getattr(p, name) for p in profiles])
        out[name] = stack.max(axis=0).tolist()
        prov[name] = [
            _combine(*(Provenance(p.provenance[name][i]) for p in profiles)).value
            for i in range(len(lags))
        ]
    return MixingProfile(max(p.n for p in profiles), list(lags), out["rho"], out["phi"], out["alpha"], prov)


def _split_points(n: int, k: int, s_values=None) -> tuple[list[int], bool]:
    """Admissible split points ``s <= n - k`` and whether they were thinned."""
    if s_values is not None:
        pts = sorted({int(s) for s in s_values if 1 <= s <= n - k})
        return pts, len(pts) < n - k
    if n - k <= STRIDE_THRESHOLD:
        return list(range(1, n - k + 1)), False
    pts = np.unique(np.linspace(1, n - k, STRIDE_THRESHOLD).round().astype(int))
    return pts.tolist(), True


def _pairwise(J: np.ndarray) -> tuple[float, float, float]:
    J = J / J.sum()
    joint = JointBlockDistribution(J)
    if joint.trivial:
        return 0.0, 0.0, 0.0
    if joint.left_atoms + joint.right_atoms > ATOM_BUDGET:
        raise ValueError(
            f"{joint.left_atoms} + {joint.right_atoms} atoms exceed the budget of {ATOM_BUDGET}"
        )
    return rho_exact(joint), phi_exact(joint), alpha_exact(joint)


def coefficient_profile(model, lags, scope: str = "single", window: int = 2,
                        s_values=None, delta_lags=()) -> MixingProfile:
    """Coefficients ``rho(k), phi(k), alpha(k)`` of one row, max over split points.

    ``scope="single"`` uses the coordinate sigma-algebras at the split;
    ``scope="window"`` uses ``window`` coordinates on each side.  Rows longer
    than 200 are scanned on 200 evenly spaced split points, which flags the
    entries as lower bounds of the sup.
    """
    if scope not in ("single", "window"):
        raise ValueError("scope must be 'single' or 'window'")
    lags = [int(k) for k in lags]
    if any(k < 1 or k >= model.n for k in lags):
        raise ValueError("lags must lie in 1..n-1")
    w = 1 if scope == "single" else int(window)
    rho, phi, alpha = [], [], []
    prov = {"rho": [], "phi": [], "alpha": []}
    for k in lags:
        pts, thinned = _split_points(model.n, k, s_values)
        best = np.zeros(3)
        flags = [Provenance.EXACT] * 3
        for s in pts:
            vals, fl = _split_coefficients(model, s, k, w)
            best = np.maximum(best, vals)
            flags = [_combine(a, b) for a, b in zip(flags, fl)]
        if thinned:
            flags = [_combine(f, Provenance.LOWER_BOUND) if f != Provenance.UPPER_BOUND
                     else Provenance.APPROXIMATE for f in flags]
        for name, v, f in zip(("rho", "phi", "alpha"), best, flags):
            {"rho": rho, "phi": phi, "alpha": alpha}[name].append(float(v))
            prov[name].append(f.value)
    profile = MixingProfile(model.n, lags, rho, phi, alpha, prov)
    for m in delta_lags:
        profile.delta[int(m)] = delta_with_provenance(model, int(m))
    return profile


def _split_coefficients(model, s: int, k: int, w: int):
    n = model.n
    past = (max(1, s - w + 1), s)
    future = (s + k, min(n, s + k + w - 1))
    full = past[0] == 1 and future[1] == n
    if isinstance(model, MarkovArrayModel):
        if w == 1:
            vals = _pairwise(state_joint(model, s, k))
        else:
            vals = _pairwise(markov_window_joint(model, past, future))
        flag = Provenance.EXACT if model.injective else (
            Provenance.UPPER_BOUND if w == 1 else Provenance.LOWER_BOUND)
        return np.array(vals), [flag] * 3
    if isinstance(model, MDepArrayModel):
        if k > model.m0:
            return np.zeros(3), [Provenance.EXACT] * 3
        window_flag = Provenance.EXACT if full else Provenance.LOWER_BOUND
        if model.innovation == "gaussian":
            r = gaussian_window_rho(model, past, future)
            if window_flag == Provenance.EXACT:
                return np.array([r, 1.0, r / 4]), [Provenance.EXACT, Provenance.UPPER_BOUND, Provenance.UPPER_BOUND]
            return np.array([r, 1.0, 0.25]), [Provenance.LOWER_BOUND, Provenance.UPPER_BOUND, Provenance.UPPER_BOUND]
        vals = _pairwise(mdep_window_joint(model, past, future))
        return np.array(vals), [window_flag] * 3
    raise TypeError(f"unsupported model {type(model).__name__}")


# ---------------------------------------------------------------------------
# projective coefficient


@numba.njit(cache=True)
def _markov_delta_at(P, f, mu, k, m, n):
    # sum_{s=m}^{n-1-k} || P_k ... P_{k+s-1} f_{k+s} ||_{L2(mu_k)}, 0-based k
    period = P.shape[0]
    S = f.shape[1]
    Q = np.eye(S)
    total = 0.0
    if m == 0:
        sq = 0.0
        for x in range(S):
            sq += mu[k, x] * f[k, x] ** 2
        total += math.sqrt(sq)
    for s in range(1, n - k):
        Q = Q @ P[(k + s - 1) % period]
        if s < m:
            continue
        sq = 0.0
        for x in range(S):
            h = 0.0
            for y in range(S):
                h += Q[x, y] * f[k + s, y]
            sq += mu[k, x] * h * h
        total += math.sqrt(sq)
        spread = 0.0
        for y in range(S):
            lo = Q[0, y]
            hi = Q[0, y]
            for x in range(1, S):
                lo = min(lo, Q[x, y])
                hi = max(hi, Q[x, y])
            spread = max(spread, hi - lo)
        if spread < 1e-18:
            break
    return total


def _k_points(n: int, k_values=None) -> tuple[list[int], bool]:
    if k_values is not None:
        pts = sorted({int(k) for k in k_values if 1 <= k < n})
        return pts, len(pts) < n - 1
    if n - 1 <= STRIDE_THRESHOLD:
        return list(range(1, n)), False
    return np.unique(np.linspace(1, n - 1, STRIDE_THRESHOLD).round().astype(int)).tolist(), True


def delta_with_provenance(model, m: int, k_values=None, window: int = 64):
    """``delta_n(m)`` and how far it can be trusted.

    Markov rows condition on ``Y_k`` (equal to conditioning on the xi-past
    when observables separate states, an upper bound otherwise).  For
    moving averages the terms vanish for lags beyond ``m0``; inside the range
    the best linear predictor on the last ``window`` coordinates is used,
    a lower bound (exact for Gaussian innovations with a full window).
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    n = model.n
    ks, thinned = _k_points(n, k_values)
    if isinstance(model, MarkovArrayModel):
        best = max((_markov_delta_at(model.transitions, model.observables, model.marginals, k - 1, m, n)
                    for k in ks), default=0.0)
        flag = Provenance.EXACT if model.injective else Provenance.UPPER_BOUND
    elif isinstance(model, MDepArrayModel):
        if m > model.m0:
            return 0.0, Provenance.EXACT
        best, flag = 0.0, Provenance.EXACT
        for k in ks:
            lo = max(1, k - window + 1)
            past = range(lo, k + 1)
            Sig = np.array([[model.pair_cov(i, j) for j in past] for i in past])
            total = 0.0
            for s in range(m, min(model.m0, n - k) + 1):
                if s == 0:
                    total += math.sqrt(model.pair_cov(k, k))
                    continue
                c = np.array([model.pair_cov(i, k + s) for i in past])
                if not np.any(c):
                    continue
                coef = np.linalg.lstsq(Sig, c, rcond=None)[0]
                total += math.sqrt(max(float(c @ coef), 0.0))
            best = max(best, total)
            if lo > 1 or model.innovation != "gaussian":
                flag = Provenance.LOWER_BOUND
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    if thinned:
        flag = _combine(flag, Provenance.LOWER_BOUND) if flag != Provenance.UPPER_BOUND else Provenance.APPROXIMATE
    return float(best), flag


def delta_coefficient(model, m: int, k_values=None) -> float:
    """``delta_n(m) = sup_k sum_{s>=m} || E[xi_{k+s} | xi_1..xi_k] ||_2``."""
    return delta_with_provenance(model, m, k_values)[0]


def alpha_sum_bound(profile: MixingProfile, m: int, q: float, C_q: float = 4.0,
                    A_q: float = 1.0, extrapolate: bool = True) -> float:
    """``C_q A_q sum_{j>=m} alpha(j)^(1/2 - 1/q)`` from a lag profile.

    Lags ``m..K`` must be present.  Beyond ``K`` the tail is zero when
    ``alpha(K) = 0`` (the sequence is non-increasing), otherwise it is
    extrapolated geometrically from the last two entries.
    """
    if not q > 2:
        raise ValueError("q must exceed 2")
    theta = 0.5 - 1.0 / q
    K = max(profile.lags)
    needed = list(range(m, K + 1))
    if any(j not in profile.lags for j in needed):
        raise ValueError(f"profile must contain every lag from {m} to {K}")
    terms = [profile.alpha[profile.lags.index(j)] ** theta for j in needed]
    total = math.fsum(terms)
    last = profile.alpha[profile.lags.index(K)]
    if last > 0:
        if not extrapolate:
            raise ValueError("alpha does not vanish at the last lag and no tail model was requested")
        if K - 1 not in profile.lags or profile.alpha[profile.lags.index(K - 1)] <= 0:
            raise ValueError("geometric tail needs two positive trailing entries")
        r = (last / profile.alpha[profile.lags.index(K - 1)]) ** theta
        if r >= 1:
            raise ValueError("alpha tail is not geometrically decaying")
        total += last**theta * r / (1 - r)
    return C_q * A_q * total


def fit_C_q(pairs) -> float:
    """Smallest ``C_q`` making ``delta <= C_q * (bound at C_q = 1)`` over ``pairs``."""
    quotients = [d / b for d, b in pairs if b > 0]
    return max(quotients, default=0.0)
