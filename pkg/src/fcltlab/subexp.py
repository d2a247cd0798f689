"""Subexponential block-scale sequences ``a_j = exp(G(j))``.

Four families are supported:

========== ============================== ==============================
family     G(x)                           canonical H(u)
========== ============================== ==============================
power      q log x                        1/u
explogpow  (log x)^s, s > 1               (log u)^(s-1) / u
stretched  c x^alpha, 0 < alpha < 1       u^(alpha-1)
iterlog    x / log^{(d)}(x)               1 / log^{(d)}(u)
========== ============================== ==============================

``log^{(d)}`` is the d-fold iterated logarithm.  For ``a_j`` the logs are
clamped from below at 1 (``log(max(x, e))`` at every stage) so the sequence
is defined for every ``j >= 1``; above the default threshold ``c0`` (the
height-``d`` exponential tower) the clamp is inactive.

Everything that sums powers of ``a_j`` works in log-space: ``exp(c sqrt(j))``
already leaves double range near ``j = 10^5``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._numerics import log_sum_exp

FAMILIES = ("power", "explogpow", "stretched", "iterlog")


def _tower(d: int) -> float:
    """Height-``d`` exponential tower e^e^...^e (d copies of e)."""
    v = 1.0
    for _ in range(d):
        v = math.exp(v)
    return v


@dataclass(frozen=True)
class SubexpSpec:
    """A sequence family together with the constants of the good-divergence test.

    Only the parameter belonging to ``family`` is read: ``q`` (power), ``s``
    (explogpow), ``c`` and ``alpha`` (stretched), ``d`` (iterlog).
    ``alpha = 1`` is accepted for ``stretched`` as the purely exponential
    boundary case; it is the standard negative control for :func:`check_def1`.
    """

    family: str
    q: float = 1.0
    s: float = 2.0
    c: float = 1.0
    alpha: float = 0.5
    d: int = 1
    c0: float | None = None
    eps: float = 0.5
    delta: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "power" and self.q < 0:
            raise ValueError("power family needs q >= 0")
        if self.family == "explogpow" and not self.s > 1:
            raise ValueError("explogpow family needs s > 1")
        if self.family == "stretched" and not (self.c > 0 and 0 < self.alpha <= 1):
            raise ValueError("stretched family needs c > 0 and 0 < alpha <= 1")
        if self.family == "iterlog" and (int(self.d) != self.d or self.d < 1):
            raise ValueError("iterlog family needs an integer d >= 1")
        if not (0 < self.eps < 1 and 0 < self.delta < 1):
            raise ValueError("eps and delta must lie in (0, 1)")
        if self.c0 is not None and self.c0 < 1:
            raise ValueError("c0 must be >= 1")

    # constructors -----------------------------------------------------
    @classmethod
    def power(cls, q: float, **kw) -> "SubexpSpec":
        return cls("power", q=q, **kw)

    @classmethod
    def explogpow(cls, s: float, **kw) -> "SubexpSpec":
        return cls("explogpow", s=s, **kw)

    @classmethod
    def stretched(cls, c: float, alpha: float, **kw) -> "SubexpSpec":
        return cls("stretched", c=c, alpha=alpha, **kw)

    @classmethod
    def iterlog(cls, d: int, **kw) -> "SubexpSpec":
        return cls("iterlog", d=d, **kw)

    @property
    def threshold(self) -> float:
        """``c0``, or the family default when unset."""
        if self.c0 is not None:
            return float(self.c0)
        if self.family == "explogpow":
            return math.e
        if self.family == "iterlog":
            return _tower(int(self.d))
        return 1.0

    # serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        keep = {
            "power": ("q",),
            "explogpow": ("s",),
            "stretched": ("c", "alpha"),
            "iterlog": ("d",),
        }[self.family]
        full = asdict(self)
        out = {"family": self.family}
        out.update({k: full[k] for k in keep})
        out.update(c0=self.c0, eps=self.eps, delta=self.delta)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SubexpSpec":
        allowed = {"family", "q", "s", "c", "alpha", "d", "c0", "eps", "delta"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown subexp keys: {sorted(unknown)}")
        kw = dict(data)
        if "d" in kw:
            kw["d"] = int(kw["d"])
        return cls(**kw)


# ---------------------------------------------------------------------------
# G, G' and H


def _clamped_iterlog(x: np.ndarray, d: int):
    """Clamped iterated log and its derivative with respect to ``x``."""
    v = x.astype(np.float64)
    dv = np.ones_like(v)
    for _ in range(d):
        active = v > math.e
        dv = np.where(active, dv / np.where(active, v, 1.0), 0.0)
        v = np.log(np.maximum(v, math.e))
    return v, dv


def log_a(spec: SubexpSpec, x) -> np.ndarray:
    """``G(x) = log a(x)``, vectorised."""
    x = np.asarray(x, dtype=np.float64)
    fam = spec.family
    if fam == "power":
        return spec.q * np.log(x)
    if fam == "explogpow":
        return np.log(x) ** spec.s
    if fam == "stretched":
        return spec.c * x**spec.alpha
    L, _ = _clamped_iterlog(x, int(spec.d))
    return x / L


def dlog_a(spec: SubexpSpec, x) -> np.ndarray:
    """Analytic derivative ``G'(x)``."""
    x = np.asarray(x, dtype=np.float64)
    fam = spec.family
    if fam == "power":
        return spec.q / x
    if fam == "explogpow":
        return spec.s * np.log(x) ** (spec.s - 1) / x
    if fam == "stretched":
        return spec.c * spec.alpha * x ** (spec.alpha - 1)
    L, dL = _clamped_iterlog(x, int(spec.d))
    return 1.0 / L - x * dL / L**2


def eval_a(spec: SubexpSpec, j) -> float:
    """Return ``a_j = exp(G(j))`` (``j**q`` for the power family)."""
    if np.any(np.asarray(j) < 1):
        raise ValueError("j must be >= 1")
    if spec.family == "power":
        out = np.asarray(j, dtype=np.float64) ** spec.q
    else:
        with np.errstate(over="ignore"):
            out = np.exp(log_a(spec, j))
    return float(out) if np.ndim(out) == 0 else out


def eval_H(spec: SubexpSpec, u) -> float:
    """Canonical rate function ``H(u)`` of the family.

    Raises ``ValueError`` when an iterated logarithm is not positive at ``u``.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr < 1):
        raise ValueError("H is defined for u >= 1")
    fam = spec.family
    if fam == "power":
        out = 1.0 / u_arr
    elif fam == "explogpow":
        out = np.log(u_arr) ** (spec.s - 1) / u_arr
    elif fam == "stretched":
        out = u_arr ** (spec.alpha - 1)
    else:
        v = u_arr
        for level in range(int(spec.d)):
            if np.any(v <= 0):
                raise ValueError(f"iterated log of depth {level} is non-positive at u={u}")
            v = np.log(v)
        if np.any(v <= 0):
            raise ValueError(f"iterated log of depth {spec.d} is non-positive at u={u}")
        out = 1.0 / v
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# block counts


def _log_a2_prefix(spec: SubexpSpec, count: int) -> np.ndarray:
    return 2.0 * log_a(spec, np.arange(1, count + 1, dtype=np.float64))


def _prefix_exceeds(a2: np.ndarray, u: int, target: float) -> bool:
    # correctly rounded prefix sum, so the answer does not depend on summation order
    head = a2[:u]
    if not np.all(np.isfinite(head)):
        return True
    try:
        return math.fsum(head) >= target
    except OverflowError:
        return True


def estimate_u_n(spec: SubexpSpec, sigma_sq: float, cap: int = 10**7) -> int:
    """Smallest ``u`` with ``sum_{j<=u} a_j**2 >= sigma_sq``.

    The sum is exact (correctly rounded), so feeding back
    ``math.fsum(a_j**2 for j <= u)`` returns ``u``.  Raises ``OverflowError``
    when ``u`` would exceed ``cap``.
    """
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    hi = 16
    while True:
        size = min(hi, cap)
        with np.errstate(over="ignore"):
            a2 = np.exp(_log_a2_prefix(spec, size))
        if _prefix_exceeds(a2, size, sigma_sq):
            break
        if size >= cap:
            raise OverflowError(f"u_n exceeds the cap {cap}")
        hi *= 2
    lo, hi = 0, size  # invariant: prefix(lo) < target <= prefix(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _prefix_exceeds(a2, mid, sigma_sq):
            hi = mid
        else:
            lo = mid
    return hi


def u_n_order(spec: SubexpSpec, sigma_sq: float) -> tuple[float, float]:
    """Asymptotic order of ``u_n`` as a ``(low, high)`` bracket, constants dropped.

    Only meant as a sanity check for :func:`estimate_u_n`; the two ends
    coincide except for the iterated-log family.
    """
    log_sigma = 0.5 * math.log(sigma_sq)
    fam = spec.family
    if fam == "power":
        v = sigma_sq ** (1.0 / (2 * spec.q + 1))
    elif fam == "explogpow":
        v = math.exp(log_sigma ** (1.0 / spec.s))
    elif fam == "stretched":
        v = log_sigma ** (1.0 / spec.alpha)
    else:
        inner = log_sigma
        for _ in range(int(spec.d)):
            inner = math.log(max(inner, math.e))
        return log_sigma, log_sigma * inner
    return v, v


# ---------------------------------------------------------------------------
# good-divergence conditions


@dataclass(frozen=True)
class Def1Report:
    cond1: bool
    cond2: bool
    C1: float
    C2: float
    h_vanishes: bool
    cond3: bool
    grid_min: float
    grid_max: float

    @property
    def all_pass(self) -> bool:
        return self.cond1 and self.cond2 and self.cond3


def default_grid(spec: SubexpSpec, points: int = 200) -> np.ndarray:
    lo = max(10.0, spec.threshold)
    return np.geomspace(lo, max(1e4, 1e3 * lo), points)


def check_def1(spec: SubexpSpec, grid=None) -> Def1Report:
    """Check the three good-divergence conditions numerically on ``grid``.

    Failures are reported, never raised.  ``C1``/``C2`` are the tightest
    constants with ``C1 H <= G' <= C2 H`` on the grid.
    """
    x = default_grid(spec) if grid is None else np.asarray(grid, dtype=np.float64)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
        raise ValueError("grid must be a strictly increasing 1-d sequence")
    if x[0] < spec.threshold:
        raise ValueError(f"grid starts below c0 = {spec.threshold}")

    G = log_a(spec, x)
    cond1 = bool(np.all(G > 0) and np.all(np.diff(G) >= 0) and G[-1] >= 2 * G[0])

    H = np.asarray(eval_H(spec, x))
    ratio = dlog_a(spec, x) / H
    C1, C2 = float(ratio.min()), float(ratio.max())
    h_vanishes = bool(np.all(np.diff(H) <= 0) and H[-1] <= 0.5 * H[0])
    cond2 = bool(C1 > 0 and math.isfinite(C2) and h_vanishes)

    upper = x[x >= np.median(x)]
    upper = upper[upper * (1 - spec.delta) >= 1]
    gap = log_a(spec, upper) - log_a(spec, upper * (1 - spec.delta))
    cond3 = bool(upper.size > 0 and np.all(gap > math.log1p(-spec.eps)))

    return Def1Report(cond1, cond2, C1, C2, h_vanishes, cond3, float(x[0]), float(x[-1]))


# ---------------------------------------------------------------------------
# moment ratio


@dataclass(frozen=True)
class RatioLemmaResult:
    ratio: float
    bound_unit: float

    @property
    def quotient(self) -> float:
        return self.ratio / self.bound_unit


def ratio_lemma(spec: SubexpSpec, p: float, u: int) -> RatioLemmaResult:
    """``sum a_j^p / (sum a_j^2)^(p/2)`` over ``j <= u`` and ``H(u)^(p/2-1)``."""
    if not p > 2:
        raise ValueError("p must exceed 2")
    if u < 2:
        raise ValueError("u must be >= 2")
    G = log_a(spec, np.arange(1, int(u) + 1, dtype=np.float64))
    log_ratio = log_sum_exp(p * G) - 0.5 * p * log_sum_exp(2.0 * G)
    bound = eval_H(spec, float(u)) ** (0.5 * p - 1)
    return RatioLemmaResult(math.exp(log_ratio), bound)
