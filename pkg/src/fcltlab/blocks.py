"""Greedy regular-block constructions and exact checks of their constants.

Two schemes partition ``{1..n}`` into ``B_1, D_1, B_2, D_2, ..., B_u``:

* ``rho`` -- block ``B_j`` grows until ``||S(B_j)||_2 >= A a_j``; it is
  followed by a gap ``D_j`` of ``ceil(a_j)`` indices.
* ``projective`` -- ``B_j`` grows until its norm reaches ``A`` and the
  following ``D_j`` until its norm reaches ``A eps``.

In both, indices left over when the next block cannot reach its threshold
are appended to the last block, whose norm is then unconstrained.  With
``Y_j = S(B_j)``, ``Z_j = S(D_j)`` and ``X_j = Y_j + Z_j`` the row sum is
``X_1 + ... + X_u``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .subexp import SubexpSpec, eval_a

X_BOUNDS = (5 / 24, 7 / 2)
YZ_BOUNDS = (1 / 2, 3 / 2)
THRESHOLD_RTOL = 1e-12


def perturbation_E(A: float) -> float:
    """``3/A^2 + 2 sqrt(3/A^2)``: relative gap between Var(sum X) and Var(sum Y)."""
    return 3 / A**2 + 2 * math.sqrt(3 / A**2)


def perturbation_D(eps: float) -> float:
    """``6 eps^2 + 2 sqrt(6) eps`` for the projective scheme."""
    return 6 * eps**2 + 2 * math.sqrt(6) * eps


def min_A_for_perturbation(target: float) -> float:
    """Smallest ``A`` with ``perturbation_E(A) <= target``.

    With ``x = sqrt(3)/A`` the condition is ``x^2 + 2x <= target``.
    """
    if not target > 0:
        raise ValueError("target must be positive")
    x = math.sqrt(1 + target) - 1
    return math.sqrt(3) / x


def max_eps_for_perturbation(target: float) -> float:
    """Largest ``eps`` with ``perturbation_D(eps) <= target``."""
    if target < 0:
        raise ValueError("target must be non-negative")
    return (math.sqrt(24 + 24 * target) - 2 * math.sqrt(6)) / 12


@dataclass
class Block:
    j: int
    b_start: int
    b_end: int
    gap_len: int
    scale: float  # a_j (rho scheme) or A (projective scheme)
    y_norm: float = math.nan
    z_norm: float = math.nan
    x_norm: float = math.nan

    @property
    def d_start(self) -> int:
        return self.b_end + 1

    @property
    def d_end(self) -> int:
        return self.b_end + self.gap_len

    @property
    def x_start(self) -> int:
        return self.b_start

    @property
    def x_end(self) -> int:
        return self.d_end

    @property
    def size(self) -> int:
        return self.b_end - self.b_start + 1


@dataclass
class BlockPartition:
    n: int
    scheme: str
    A: float
    blocks: list
    spec: SubexpSpec | None = None
    eps: float | None = None
    r: int | None = None
    warnings: list = field(default_factory=list)

    @property
    def u_n(self) -> int:
        return len(self.blocks)

    def intervals(self) -> list:
        """``[B_1, D_1, ..., B_u, D_u]`` as inclusive ``(start, end)`` pairs."""
        out = []
        for b in self.blocks:
            out.append((b.b_start, b.b_end))
            out.append((b.d_start, b.d_end))
        return out

    def x_intervals(self) -> list:
        return [(b.x_start, b.x_end) for b in self.blocks]

    def scales(self) -> np.ndarray:
        return np.array([b.scale for b in self.blocks])

    def tiles(self) -> bool:
        """True when the B and D intervals cover ``1..n`` in order without overlap."""
        pos = 1
        for b in self.blocks:
            if b.b_start != pos or b.b_end < b.b_start or b.gap_len < 0:
                return False
            pos = b.d_end + 1
        return pos == self.n + 1

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "b_start", "b_end", "gap_len", "Y_norm", "Z_norm", "X_norm"])
        for b in self.blocks:
            w.writerow([b.j, b.b_start, b.b_end, b.gap_len,
                        repr(b.y_norm), repr(b.z_norm), repr(b.x_norm)])
        return buf.getvalue()


def _first_crossing(oracle, start: int, threshold_sq: float):
    """First ``k >= start`` with ``Var(xi_start + ... + xi_k) >= threshold_sq``."""
    prof = oracle.running_variance(start, oracle.n)
    # relative slack absorbs rounding in the running sums (e.g. 2L - 1 = 81 exactly)
    hit = np.flatnonzero(prof >= threshold_sq * (1 - THRESHOLD_RTOL))
    return None if hit.size == 0 else start + int(hit[0])


def _fill_norms(partition: BlockPartition, oracle) -> BlockPartition:
    for b in partition.blocks:
        b.y_norm = oracle.partial_sum_norm(b.b_start, b.b_end)
        b.z_norm = oracle.partial_sum_norm(b.d_start, b.d_end) if b.gap_len > 0 else 0.0
        b.x_norm = oracle.partial_sum_norm(b.x_start, b.x_end)
    return partition


def _close_tail(blocks: list, n: int) -> None:
    last = blocks[-1]
    last.b_end = n
    last.gap_len = 0


def construct_rho_blocks(oracle, spec: SubexpSpec, A: float) -> BlockPartition:
    """Greedy blocks with ``A a_j <= ||Y_j|| <= A a_j + 1`` and gaps ``ceil(a_j)``."""
    if not A > 1:
        raise ValueError("A must exceed 1")
    n = oracle.n
    blocks: list[Block] = []
    pos, j = 1, 1
    while pos <= n:
        a = eval_a(spec, j)
        end = _first_crossing(oracle, pos, (A * a) ** 2)
        if end is None:
            break
        gap = min(int(math.ceil(a)), n - end)
        blocks.append(Block(j, pos, end, gap, a))
        pos = end + gap + 1
        j += 1
    if not blocks:
        raise ValueError(f"variance too small for A={A}, a_1={eval_a(spec, 1)}")
    _close_tail(blocks, n)
    part = BlockPartition(n, "rho", float(A), blocks, spec=spec)
    if A < min_A_for_perturbation(0.5):
        part.warnings.append(
            f"A={A} is below {min_A_for_perturbation(0.5):.4f}, so E(A) > 1/2"
        )
    return _fill_norms(part, oracle)


def construct_projective_blocks(oracle, A: float, eps: float, r: int) -> BlockPartition:
    """Alternating blocks with ``||Y_j|| >= A`` and ``||Z_j|| >= A eps``."""
    if not A > r:
        raise ValueError(f"need A > r, got A={A}, r={r}")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    n = oracle.n
    blocks: list[Block] = []
    pos, j = 1, 1
    while pos <= n:
        end = _first_crossing(oracle, pos, A * A)
        if end is None:
            break
        if end == n:
            blocks.append(Block(j, pos, end, 0, float(A)))
            break
        gap_end = _first_crossing(oracle, end + 1, (A * eps) ** 2)
        if gap_end is None:
            blocks.append(Block(j, pos, n, 0, float(A)))
            break
        blocks.append(Block(j, pos, end, gap_end - end, float(A)))
        pos = gap_end + 1
        j += 1
    if not blocks:
        raise ValueError(f"variance too small for A={A}")
    _close_tail(blocks, n)
    part = BlockPartition(n, "projective", float(A), blocks, eps=float(eps), r=int(r))
    if not A * eps > r:
        part.warnings.append(f"A*eps = {A * eps:.4g} does not exceed r = {r}")
    if eps > max_eps_for_perturbation(0.5):
        part.warnings.append(
            f"eps={eps} exceeds {max_eps_for_perturbation(0.5):.6f}, so D(eps) > 1/2"
        )
    return _fill_norms(part, oracle)


def partition_from_blocks(oracle, blocks, scheme: str = "rho", A: float = 1.0,
                          scales=None, spec=None, eps=None, r=None) -> BlockPartition:
    """Partition from explicit ``(b_start, b_end, gap_len)`` triples (no greedy scan)."""
    recs = []
    for j, (s, e, g) in enumerate(blocks, start=1):
        scale = scales[j - 1] if scales is not None else (eval_a(spec, j) if spec else A)
        recs.append(Block(j, int(s), int(e), int(g), float(scale)))
    part = BlockPartition(oracle.n, scheme, float(A), recs, spec=spec, eps=eps, r=r)
    if not part.tiles():
        raise ValueError("blocks do not tile 1..n")
    return _fill_norms(part, oracle)


# ---------------------------------------------------------------------------
# verification


@dataclass
class CheckResult:
    name: str
    low: float
    high: float
    min_value: float
    max_value: float
    passed: bool
    witness: tuple | None = None
    checked_pairs: int = 0


@dataclass
class RegularityReport:
    scheme: str
    u_n: int
    seed: int
    pair_budget: int
    pairs_checked: int
    exhaustive: bool
    checks: dict
    perturbation_bound: float
    sandwich_ok: bool
    sandwich_witness: int | None
    gap_ok: bool
    block_size_ok: bool
    z_as_written_count: int
    z_weak_count: int
    sigma_ratio: float
    final_block_unconstrained: bool
    warnings: list

    @property
    def min_ratio(self) -> float:
        return self.checks["x_ratio"].min_value

    @property
    def max_ratio(self) -> float:
        return self.checks["x_ratio"].max_value

    @property
    def passed(self) -> bool:
        """All paper-constant inequalities hold on every checked pair."""
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _pairs(u: int, budget: int, seed: int) -> tuple[list, bool]:
    total = u * (u - 1) // 2
    if total <= budget:
        return [(a, b) for a in range(1, u + 1) for b in range(a + 1, u + 1)], True
    rng = np.random.default_rng(seed)
    chosen = {(1, u), (1, 2), (u - 1, u)}
    target = min(total, budget + 3)
    while len(chosen) < target:
        a, b = sorted(rng.choice(np.arange(1, u + 1), size=2, replace=False).tolist())
        chosen.add((a, b))
    return sorted(chosen), False


def _interval_check(name, values, pairs, low, high) -> CheckResult:
    vals = np.asarray(values, dtype=float)
    ok = np.isfinite(vals)
    if not ok.any():
        return CheckResult(name, low, high, math.nan, math.nan, True, None, 0)
    v = vals[ok]
    inside = (v >= low - 1e-12) & (v <= high + 1e-12)
    witness = None
    mid = 0.5 * (low + high)
    if not inside.all():
        bad = np.flatnonzero(ok)[~inside]
        worst = bad[np.argmax(np.abs(vals[bad] - mid))]
        witness = (pairs[worst], float(vals[worst]))
    return CheckResult(name, low, high, float(v.min()), float(v.max()), bool(inside.all()), witness, int(ok.sum()))


def verify_regularity(partition: BlockPartition, oracle, pair_budget: int = 500,
                      seed: int = 0) -> RegularityReport:
    """Exact variance-ratio checks on block ranges ``s1 < s2``.

    Every ordered pair is checked when there are at most ``pair_budget`` of
    them; otherwise ``pair_budget`` random pairs plus ``(1, u)``, ``(1, 2)``
    and ``(u-1, u)``.
    """
    u = partition.u_n
    G = oracle.interval_gram(partition.intervals())
    GY, GZ = G[0::2, 0::2], G[1::2, 1::2]
    var_x = np.array([G[2 * i : 2 * i + 2, 2 * i : 2 * i + 2].sum() for i in range(u)])
    var_y, var_z = np.diag(GY), np.diag(GZ)
    pairs, exhaustive = _pairs(u, pair_budget, seed) if u >= 2 else ([], True)

    rx, ry, rz, two = [], [], [], []
    for s1, s2 in pairs:
        sl = slice(s1 - 1, s2)
        vx = G[2 * (s1 - 1) : 2 * s2, 2 * (s1 - 1) : 2 * s2].sum()
        vy = GY[sl, sl].sum()
        vz = GZ[sl, sl].sum()
        rx.append(vx / var_x[sl].sum())
        ry.append(vy / var_y[sl].sum())
        rz.append(vz / var_z[sl].sum() if var_z[sl].sum() > 0 else math.nan)
        two.append(abs(vx / vy - 1) if vy > 0 else math.nan)

    if partition.scheme == "rho":
        bound = perturbation_E(partition.A)
    else:
        bound = perturbation_D(partition.eps)
    checks = {
        "x_ratio": _interval_check("x_ratio", rx, pairs, *X_BOUNDS),
        "y_ratio": _interval_check("y_ratio", ry, pairs, *YZ_BOUNDS),
        "z_ratio": _interval_check("z_ratio", rz, pairs, *YZ_BOUNDS),
        "perturbation": _interval_check("perturbation", two, pairs, 0.0, bound),
    }

    blocks = partition.blocks
    A = partition.A
    sandwich_ok, sandwich_witness = True, None
    gap_ok = size_ok = True
    z_written = z_weak = 0
    for b in blocks[:-1]:
        if partition.scheme == "rho":
            lo, hi = A * b.scale, A * b.scale + 1
            z_lo, z_hi = -math.inf, math.inf
            if b.gap_len < math.ceil(b.scale):
                gap_ok = False
            if b.size < A * b.scale:
                size_ok = False
            z_written += b.z_norm <= b.scale + 1e-12
            z_weak += b.z_norm <= math.ceil(b.scale) + 1e-12
        else:
            lo, hi = A, A + 1
            z_lo, z_hi = A * partition.eps, A * partition.eps + 1
        y_in = lo - 1e-9 <= b.y_norm <= hi + 1e-9
        z_in = z_lo - 1e-9 <= b.z_norm <= z_hi + 1e-9
        if not (y_in and z_in) and sandwich_ok:
            sandwich_ok, sandwich_witness = False, b.j
    sigma_sq = oracle.range_variance(1, oracle.n)
    scales = partition.scales()
    sigma_ratio = sigma_sq / float(np.sum(scales**2))
    return RegularityReport(
        scheme=partition.scheme,
        u_n=u,
        seed=int(seed),
        pair_budget=int(pair_budget),
        pairs_checked=len(pairs),
        exhaustive=exhaustive,
        checks=checks,
        perturbation_bound=bound,
        sandwich_ok=sandwich_ok,
        sandwich_witness=sandwich_witness,
        gap_ok=gap_ok,
        block_size_ok=size_ok,
        z_as_written_count=int(z_written),
        z_weak_count=int(z_weak),
        sigma_ratio=float(sigma_ratio),
        final_block_unconstrained=True,
        warnings=list(partition.warnings),
    )


def rho_sum_hypothesis(model, partition: BlockPartition):
    """``sum_{j <= u_n} rho(floor(a_j))`` and its provenance, from the exact profile."""
    from .mixing import Provenance, _combine, coefficient_profile

    lags = sorted({max(1, int(math.floor(b.scale))) for b in partition.blocks})
    inside = [k for k in lags if k < model.n]
    profile = coefficient_profile(model, inside) if inside else None
    total, flags = 0.0, [Provenance.EXACT]
    for b in partition.blocks:
        k = max(1, int(math.floor(b.scale)))
        if k >= model.n:
            continue
        i = profile.lags.index(k)
        total += profile.rho[i]
        flags.append(Provenance(profile.provenance["rho"][i]))
    return total, _combine(*flags)
