"""Truncated-exponential bound machinery for sharp moment estimates.

The engine room: partial exponential sums E_ell, a decreasing sequence of
even lengths with its prime blocks, character sums over those blocks, the
block mollifiers they generate, and the pointwise splitting inequality that
converts |L|^(nk) into short-Dirichlet-polynomial data.  Everything here is
pointwise in d; family averaging lives in the moments module.

Numeric modes follow one rule: exact rational arithmetic wherever float
cancellation could fake a counterexample (alternating E_ell sums, the
product inequality E_ell(x) E_ell(-x) >= 1), floats with an explicit 1e-9
relative slack elsewhere.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np

from .arith import SIEVE_MEMORY_BUDGET, JacobiTables, kronecker, primes_upto
from .errors import DomainError, ResourceError
from .lvalues import _validate_family_d

DEFAULT_TAIL_THRESHOLD = 1e4
_EXPANSION_NODE_BUDGET = 2_000_000


@dataclass(frozen=True)
class MomentParameters:
    """Outer exponent n and interpolation weight k, with 0 <= k <= 1."""

    n: float
    k: float

    def __post_init__(self):
        if not self.n > 0:
            raise DomainError("moment parameter n must be positive")
        if not 0.0 <= self.k <= 1.0:
            raise DomainError("moment parameter k must lie in [0, 1]")

    @property
    def nk(self) -> float:
        return self.n * self.k


@dataclass(frozen=True)
class HeuristicConfig:
    """Prime cutoff for the log-proxy sums."""

    z: float

    def __post_init__(self):
        if not self.z >= 2:
            raise DomainError("proxy cutoff z must be >= 2")


def paper_scale_cutoff(X: float) -> float:
    """The default proxy cutoff X^(1/(log log X)^2)."""
    if X <= math.e:
        raise DomainError("cutoff needs X > e")
    llx = math.log(math.log(X))
    return X ** (1.0 / llx ** 2)


# ------------------------------------------------------------ E_ell


def truncated_exp(ell: int, x):
    """Partial exponential sum E_ell(x) = sum_{j<=ell} x^j / j!.

    ell must be even (every inequality downstream needs it).  Fraction or
    int input is evaluated exactly and returns a Fraction; float input uses
    Horner in double precision; numpy arrays evaluate elementwise.
    """
    if ell < 0 or ell % 2 == 1:
        raise DomainError("truncated_exp needs an even ell >= 0")
    if isinstance(x, np.ndarray):
        acc = np.ones(x.shape, dtype=np.float64)
        for j in range(ell, 0, -1):
            acc = 1.0 + acc * x / j
        return acc
    if isinstance(x, (int, Fraction)) and not isinstance(x, bool):
        xf = Fraction(x)
        acc = Fraction(1)
        for j in range(ell, 0, -1):
            acc = 1 + acc * xf / j
        return acc
    y = float(x)
    acc = 1.0
    for j in range(ell, 0, -1):
        acc = 1.0 + acc * y / j
    return acc


# ------------------------------------------------------- block structure


@dataclass(frozen=True)
class BlockFlags:
    monotone_decreasing: bool
    square_gap: bool       # ell_j > ell_{j+1}^2 for every adjacent pair
    tail_condition: bool   # last ell exceeds the tail threshold


def compute_block_flags(ells, tail_threshold: float) -> BlockFlags:
    """Flags as pure functions of the length sequence; never asserted."""
    ells = tuple(ells)
    mono = all(a >= b for a, b in zip(ells, ells[1:]))
    gap = all(a > b * b for a, b in zip(ells, ells[1:]))
    tail = bool(ells) and ells[-1] > tail_threshold
    return BlockFlags(mono, gap, tail)


@dataclass(frozen=True)
class BlockStructure:
    """Even lengths ell_j with their disjoint ascending prime intervals.

    blocks[j] is the half-open interval (lo, hi]; the first always starts
    at 2 so only odd primes ever enter.  Flags are recomputed facts about
    the sequence, not promises.
    """

    X: float | None
    ells: tuple[int, ...]
    blocks: tuple[tuple[float, float], ...]
    flags: BlockFlags
    mode: str
    tail_threshold: float

    @property
    def block_count(self) -> int:
        return len(self.ells)


def ell_sequence(X, c: float = 100.0,
                 tail_threshold: float = DEFAULT_TAIL_THRESHOLD) -> BlockStructure:
    """Length sequence ell_1 = 2*ceil(c log log X), ell_{j+1} = 2*ceil(c log ell_j).

    The recurrence decreases to a fixed point; candidates are generated
    while strictly decreasing.  When some candidates clear tail_threshold
    the sequence truncates there (the classically valid prefix); otherwise
    the whole candidate chain is reported and the flags say why it fails.
    X may be an mpmath float, letting callers pass scales past 1e308.
    """
    xm = mpmath.mpf(X)
    if not xm >= 16:
        raise DomainError("ell_sequence needs X >= 16")
    if not c > 0:
        raise DomainError("ell_sequence needs c > 0")
    log_x = float(mpmath.log(xm))
    first = 2 * math.ceil(c * float(mpmath.log(mpmath.log(xm))))
    cand = [first]
    while True:
        nxt = 2 * math.ceil(c * math.log(cand[-1]))
        if nxt >= cand[-1]:
            break
        cand.append(nxt)
    valid = [l for l in cand if l > tail_threshold]
    ells = tuple(valid if valid else cand)
    edges = [math.exp(log_x / l ** 2) for l in ells]
    blocks = []
    prev = 2.0
    for e in edges:
        blocks.append((prev, e))
        prev = e
    return BlockStructure(float(xm), ells, tuple(blocks),
                          compute_block_flags(ells, tail_threshold),
                          "paper", tail_threshold)


def custom_blocks(ells, boundaries,
                  tail_threshold: float = DEFAULT_TAIL_THRESHOLD) -> BlockStructure:
    """Caller-supplied lengths and upper boundaries, one per block."""
    ells = tuple(int(l) for l in ells)
    boundaries = tuple(float(b) for b in boundaries)
    if len(ells) != len(boundaries):
        raise DomainError("need one boundary per block length")
    if any(l < 2 or l % 2 == 1 for l in ells):
        raise DomainError("every block length must be even and >= 2")
    if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise DomainError("block boundaries must be strictly ascending")
    blocks = []
    prev = 2.0
    for b in boundaries:
        if b <= prev:
            raise DomainError("block boundaries must exceed 2 and ascend")
        blocks.append((prev, b))
        prev = b
    return BlockStructure(None, ells, tuple(blocks),
                          compute_block_flags(ells, tail_threshold),
                          "custom", tail_threshold)


# ------------------------------------------------------ block prime sums


def _block_primes(block: tuple[float, float]) -> np.ndarray:
    lo, hi = block
    if hi <= lo or hi < 3:
        # paper-mode structures at small X produce empty first blocks
        return np.empty(0, dtype=np.int64)
    if not math.isfinite(hi) or hi + 1 > SIEVE_MEMORY_BUDGET:
        raise DomainError(f"block upper edge {hi} is outside the sieved range")
    ps = primes_upto(int(hi))
    return ps[ps > max(lo, 2.0)]


def prime_block_sum(d: int, block: tuple[float, float]) -> float:
    """sum over primes p in (lo, hi] of chi_8d(p)/sqrt(p), exact and odd-only."""
    _validate_family_d(d)
    q = 8 * d
    return math.fsum(kronecker(q, int(p)) / math.sqrt(p)
                     for p in _block_primes(block))


_FAMILY_ROW_BLOCK = 8192


def prime_block_sums_family(d: np.ndarray, block: tuple[float, float]) -> np.ndarray:
    """prime_block_sum for a whole array of family d at once (table-driven).

    Rows are processed in fixed-size blocks to cap the residue-matrix
    allocation; per-row results are independent of the blocking.
    """
    d = np.asarray(d, dtype=np.int64)
    ps = _block_primes(block)
    if ps.size == 0:
        return np.zeros(d.size, dtype=np.float64)
    tables = JacobiTables(ps)
    weights = 1.0 / np.sqrt(ps.astype(np.float64))
    q = 8 * d
    out = np.empty(d.size, dtype=np.float64)
    for a in range(0, d.size, _FAMILY_ROW_BLOCK):
        b = min(a + _FAMILY_ROW_BLOCK, d.size)
        out[a:b] = tables.weighted_sums(q[a:b], weights)
    return out


# ------------------------------------------------------------- mollifier


def mollifier(d: int, alpha: float, bs: BlockStructure) -> tuple[list[float], float]:
    """Per-block E_ell_j(alpha * block_sum_j(d)) and their product."""
    per = [float(truncated_exp(l, alpha * prime_block_sum(d, blk)))
           for l, blk in zip(bs.ells, bs.blocks)]
    return per, math.prod(per)


def mollifier_family(d: np.ndarray, alpha: float,
                     bs: BlockStructure) -> tuple[list[np.ndarray], np.ndarray]:
    """Vectorized mollifier: list of per-block arrays plus the product array."""
    d = np.asarray(d, dtype=np.int64)
    per = []
    prod = np.ones(d.size, dtype=np.float64)
    for l, blk in zip(bs.ells, bs.blocks):
        vals = truncated_exp(l, alpha * prime_block_sums_family(d, blk))
        per.append(vals)
        prod = prod * vals
    return per, prod


# ------------------------------------------------------ pointwise bound


def _split_constant(ells) -> float:
    return math.exp(sum(math.exp(-l) for l in ells) / 16.0)


def pointwise_rhs(d: int, L: float, mp: MomentParameters,
                  bs: BlockStructure) -> tuple[float, float]:
    """Both sides of the pointwise splitting bound at one family member.

    lhs = (|L|^n (log d)^(-n/2))^k.  rhs combines the two mollifier
    products with the per-prefix correction factors
    (e^2 n S_{r+1} / ell_{r+1})^ell_{r+1}; even lengths keep every
    correction nonnegative whatever the sign of the block sum S.
    """
    if d < 3:
        raise DomainError("pointwise bound needs d >= 3 (log d must be positive)")
    if not bs.ells:
        raise DomainError("pointwise bound needs at least one block")
    _validate_family_d(d)
    n, k = mp.n, mp.k
    y = abs(L) ** n * math.log(d) ** (-n / 2.0)
    lhs = y ** k
    sums = [prime_block_sum(d, blk) for blk in bs.blocks]
    a_vals = [float(truncated_exp(l, (k - 1.0) * n * s))
              for l, s in zip(bs.ells, sums)]
    b_vals = [float(truncated_exp(l, k * n * s)) for l, s in zip(bs.ells, sums)]
    corr = [(math.e ** 2 * n * s / l) ** l for l, s in zip(bs.ells, sums)]
    a_bracket = math.prod(a_vals)
    b_bracket = math.prod(b_vals)
    prefix_a = 1.0
    prefix_b = 1.0
    for r in range(len(bs.ells)):
        a_bracket += prefix_a * corr[r]
        b_bracket += prefix_b * corr[r]
        prefix_a *= a_vals[r]
        prefix_b *= b_vals[r]
    c_split = _split_constant(bs.ells)
    rhs = c_split * (k * y * a_bracket + (1.0 - k) * b_bracket)
    return lhs, rhs


def split_brackets_family(d: np.ndarray, mp: MomentParameters,
                          bs: BlockStructure) -> tuple[np.ndarray, np.ndarray]:
    """Both bracketed combinations of mollifier products and corrections.

    First array: prod_j E_ell_j((k-1) n S_j) plus the prefix-weighted
    correction terms; second: the same built from E_ell_j(k n S_j).  These
    are the two family averages the averaged bounds control.
    """
    d = np.asarray(d, dtype=np.int64)
    if not bs.ells:
        raise DomainError("bracket evaluation needs at least one block")
    n, k = mp.n, mp.k
    sums = [prime_block_sums_family(d, blk) for blk in bs.blocks]
    a_vals = [truncated_exp(l, (k - 1.0) * n * s) for l, s in zip(bs.ells, sums)]
    b_vals = [truncated_exp(l, k * n * s) for l, s in zip(bs.ells, sums)]
    corr = [(math.e ** 2 * n * s / l) ** l for l, s in zip(bs.ells, sums)]
    a_bracket = np.ones(d.size)
    b_bracket = np.ones(d.size)
    for av, bv in zip(a_vals, b_vals):
        a_bracket = a_bracket * av
        b_bracket = b_bracket * bv
    prefix_a = np.ones(d.size)
    prefix_b = np.ones(d.size)
    for r in range(len(bs.ells)):
        a_bracket = a_bracket + prefix_a * corr[r]
        b_bracket = b_bracket + prefix_b * corr[r]
        prefix_a = prefix_a * a_vals[r]
        prefix_b = prefix_b * b_vals[r]
    return a_bracket, b_bracket


def pointwise_rhs_family(d: np.ndarray, L: np.ndarray, mp: MomentParameters,
                         bs: BlockStructure) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pointwise_rhs over arrays of d and matching L-values."""
    d = np.asarray(d, dtype=np.int64)
    L = np.asarray(L, dtype=np.float64)
    if d.size and int(d.min()) < 3:
        raise DomainError("pointwise bound needs d >= 3")
    if not bs.ells:
        raise DomainError("pointwise bound needs at least one block")
    n, k = mp.n, mp.k
    y = np.abs(L) ** n * np.log(d.astype(np.float64)) ** (-n / 2.0)
    lhs = y ** k
    a_bracket, b_bracket = split_brackets_family(d, mp, bs)
    c_split = _split_constant(bs.ells)
    rhs = c_split * (k * y * a_bracket + (1.0 - k) * b_bracket)
    return lhs, rhs


# ----------------------------------------------------- inequality audit


@dataclass
class ELemmaReport:
    """Seeded audit of the partial-exponential inequalities."""

    trials: int
    seed: int
    passes: dict
    failures: dict
    witnesses: list

    @property
    def ok(self) -> bool:
        return all(v == 0 for v in self.failures.values())


def _exact_to_mpf(x: Fraction):
    return mpmath.mpf(x.numerator) / x.denominator


def verify_e_lemmas(trials: int, seed: int) -> ELemmaReport:
    """Random audits of the four partial-exponential facts.

    positivity_and_exp_floor: E_ell(x) > 0 everywhere (exact rationals) and
        E_ell(x) >= e^x for x <= 0, certified at 60-digit resolution.
    exp_ceiling: e^x <= (1 + e^-ell/16) E_ell(x) for x <= ell/e^2.
    moment_split: the R-block splitting inequality in floats with 1e-9
        relative slack, R <= 4.
    reciprocal_product: E_ell(x) E_ell(-x) >= 1 in exact rationals.
    """
    if trials < 1:
        raise DomainError("verify_e_lemmas needs trials >= 1")
    rng = random.Random(seed)
    passes = {"positivity_and_exp_floor": 0, "exp_ceiling": 0,
              "moment_split": 0, "reciprocal_product": 0}
    failures = dict.fromkeys(passes, 0)
    witnesses = []

    def tally(cat, ok, witness):
        if ok:
            passes[cat] += 1
        else:
            failures[cat] += 1
            if len(witnesses) < 32:
                witnesses.append((cat, witness))

    with mpmath.workdps(60):
        resolution = mpmath.mpf(10) ** -50
        for _ in range(trials):
            cat = "positivity_and_exp_floor"
            ell = 2 * rng.randrange(0, 21)
            x = Fraction(rng.randrange(-4000, 501), 100)
            e_exact = truncated_exp(ell, x)
            ok = e_exact > 0
            if ok and x <= 0:
                gap = _exact_to_mpf(e_exact) - mpmath.exp(_exact_to_mpf(x))
                ok = gap >= -resolution
            tally(cat, ok, (ell, str(x)))

            cat = "exp_ceiling"
            ell = 2 * rng.randrange(1, 21)
            hi = math.floor(100 * ell / math.e ** 2)
            x = Fraction(rng.randrange(-300 * ell, hi + 1), 100)
            e_exact = truncated_exp(ell, x)
            bound = (1 + mpmath.exp(-mpmath.mpf(ell)) / 16) * _exact_to_mpf(e_exact)
            ok = bound - mpmath.exp(_exact_to_mpf(x)) >= -resolution
            tally(cat, ok, (ell, str(x)))

    for _ in range(trials):
        cat = "moment_split"
        r_blocks = rng.randrange(1, 5)
        ells = [2 * rng.randrange(1, 16) for _ in range(r_blocks)]
        xs = [rng.uniform(-6.0, 6.0) for _ in range(r_blocks)]
        y = math.exp(rng.uniform(-6.0, 6.0)) if rng.random() < 0.9 else 0.0
        k = rng.choice([0.0, 1.0]) if rng.random() < 0.1 else rng.random()
        lhs = y ** k
        c_split = _split_constant(ells)
        a_term = math.prod(truncated_exp(l, (k - 1.0) * x) for l, x in zip(ells, xs))
        b_term = math.prod(truncated_exp(l, k * x) for l, x in zip(ells, xs))
        rhs = c_split * k * y * a_term + c_split * (1.0 - k) * b_term
        pref_a = 1.0
        pref_b = 1.0
        for r in range(r_blocks):
            corr = (math.e ** 2 * xs[r] / ells[r]) ** ells[r]
            rhs += (c_split * k * y * pref_a + c_split * (1.0 - k) * pref_b) * corr
            pref_a *= truncated_exp(ells[r], (k - 1.0) * xs[r])
            pref_b *= truncated_exp(ells[r], k * xs[r])
        tally(cat, rhs >= lhs * (1.0 - 1e-9), (ells, xs, y, k))

        cat = "reciprocal_product"
        ell = 2 * rng.randrange(1, 11)
        den = rng.randrange(1, 21)
        x = Fraction(rng.randrange(-10 * den, 10 * den + 1), den)
        ok = truncated_exp(ell, x) * truncated_exp(ell, -x) >= 1
        tally(cat, ok, (ell, str(x)))

    return ELemmaReport(trials, seed, passes, failures, witnesses)


# ------------------------------------------------- short-polynomial maps


def dirichlet_expansion(block_kind: str, mp: MomentParameters,
                        bs: BlockStructure, j: int) -> dict[int, float]:
    """Sparse coefficient map for one block's short Dirichlet polynomial.

    kind "B": coefficients of E_ell(nk * block_sum), i.e. (nk)^Omega(m) /
    (w(m) sqrt(m)) over m built from at most ell block primes (with
    multiplicity; m = 1 included).  kind "P_power": coefficients of
    block_sum^ell / ell!, i.e. 1/(w(m) sqrt(m)) over m built from exactly
    ell block primes.  Evaluating either against chi_8d reproduces the
    direct computation; that identity is exact.
    """
    if block_kind not in ("B", "P_power"):
        raise DomainError(f"unknown expansion kind {block_kind!r}")
    if not 0 <= j < bs.block_count:
        raise DomainError("block index out of range")
    ell = bs.ells[j]
    ps = [int(p) for p in _block_primes(bs.blocks[j])]
    if math.comb(len(ps) + ell, ell) > _EXPANSION_NODE_BUDGET:
        raise ResourceError("expansion support exceeds the node budget")
    nk = mp.nk
    out: dict[int, float] = {}

    def descend(i: int, used: int, m: int, w: int) -> None:
        if used == ell or i == len(ps):
            if block_kind == "B":
                out[m] = nk ** used / (w * math.sqrt(m))
            elif used == ell:
                out[m] = 1.0 / (w * math.sqrt(m))
            return
        descend(i + 1, used, m, w)
        pe, fact = 1, 1
        for e in range(1, ell - used + 1):
            pe *= ps[i]
            fact *= e
            descend(i + 1, used + e, m * pe, w * fact)

    descend(0, 0, 1, 1)
    return out


def evaluate_expansion(coeffs: dict[int, float], d: int) -> float:
    """Contract a sparse coefficient map against chi_8d."""
    _validate_family_d(d)
    q = 8 * d
    return math.fsum(c * kronecker(q, m) for m, c in coeffs.items())


# ------------------------------------------------------------ log proxy


def log_proxy(d: int, cfg: HeuristicConfig) -> tuple[float, float]:
    """(weighted prime-power sum, plain prime sum) below the cutoff.

    First component: sum over prime powers p^e <= z of
    log(p) chi_8d(p^e) / p^(e/2).  Second: sum over primes p <= z of
    chi_8d(p)/sqrt(p).  Even prime powers of the character vanish, so both
    run over odd p only.
    """
    _validate_family_d(d)
    z = cfg.z
    if z + 1 > SIEVE_MEMORY_BUDGET:
        raise DomainError(f"proxy cutoff {z} is outside the sieved range")
    q = 8 * d
    lam_terms = []
    p_terms = []
    if z >= 3:
        for p in primes_upto(int(z))[1:]:
            p = int(p)
            chi = kronecker(q, p)
            if chi == 0:
                continue
            p_terms.append(chi / math.sqrt(p))
            lp = math.log(p)
            pe, chie = p, chi
            while pe <= z:
                lam_terms.append(lp * chie / math.sqrt(pe))
                pe *= p
                chie *= chi
    return math.fsum(lam_terms), math.fsum(p_terms)
