"""Family averages over the fundamental quadratic family.

Everything here consumes a value cache plus the smoothing weight and turns
pointwise data into family statements: smoothed character sums against
their square-term main term, sharp and smoothed moments, the twisted
second moment against its predicted main term, growth-exponent fits, the
averaged bound checks, the Holder-factorized route, and the distribution
study with its character-sum proxy.

Sums use math.fsum throughout, so results are exact for the given terms
and independent of accumulation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .arith import (
    constant_D,
    factorize,
    mertens_sum,
    multiplicative_profile,
    sieve_family,
    JacobiTables,
)
from .errors import DomainError
from .lvalues import FamilyCache
from .machinery import (
    BlockStructure,
    HeuristicConfig,
    MomentParameters,
    mollifier_family,
    prime_block_sums_family,
    split_brackets_family,
)
from .smoothing import SmoothingWeight

ZETA_TWO = math.pi ** 2 / 6
_D_PRIME_LIMIT = 10 ** 7


@dataclass(frozen=True)
class MomentReport:
    """One family-average measurement against its predicted main term."""

    k: float
    X: float
    weighting: str
    value: float
    predicted_main: float | None
    ratio: float | None
    sample_count: int
    notes: str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DomainError("moment report value must be finite")
        if self.weighting not in ("sharp", "smooth"):
            raise DomainError(f"unknown weighting tag {self.weighting!r}")
        if self.predicted_main is not None and self.predicted_main != 0:
            want = self.value / self.predicted_main
            if self.ratio is None or not math.isclose(self.ratio, want,
                                                      rel_tol=1e-9):
                raise DomainError("ratio does not match value/predicted_main")


def _report(k, X, weighting, value, predicted, count, notes=""):
    ratio = None
    if predicted is not None and predicted != 0:
        ratio = value / predicted
    return MomentReport(float(k), float(X), weighting, float(value),
                        predicted, ratio, int(count), notes)


def _fsum(arr) -> float:
    return math.fsum(arr.tolist())


# ------------------------------------------------- character sum helpers


def _char_values(ds: np.ndarray, n: int) -> np.ndarray:
    """chi_8d(n) for every d in the array, via the prime factors of n."""
    out = np.ones(ds.size, dtype=np.int64)
    if n == 1:
        return out
    q = 8 * ds.astype(np.int64)
    fac = factorize(n)
    primes = np.array(sorted(fac), dtype=np.int64)
    tables = JacobiTables(primes)
    cols = tables.chi_block(q, 0, primes.size).astype(np.int64)
    for i, p in enumerate(primes):
        e = fac[int(p)]
        col = cols[:, i]
        # chi(p)^e collapses to chi(p) for odd e and chi(p)^2 for even e
        out *= col if e % 2 else col * col
    return out


def smoothed_char_sum(n: int, X: float, phi: SmoothingWeight,
                      error_coeff: float = 50.0):
    """Weighted family character sum with its square-term prediction.

    Returns (value, main_term, error_budget): value is the full enumerated
    sum of chi_8d(n) Phi(d/X); main_term is nonzero only at square n,
    where it is mellin(1) * 2X/(3 zeta(2)) * prod_{p|n} p/(p+1); the
    budget is error_coeff * sqrt(nX).
    """
    if n < 1 or n % 2 == 0:
        raise DomainError("smoothed_char_sum needs odd n >= 1")
    if not X > 1:
        raise DomainError("smoothed_char_sum needs X > 1")
    hi = int(math.floor(phi.support[1] * X))
    ds = sieve_family(hi)
    w = phi(ds.astype(np.float64) / X)
    chi = _char_values(ds, n)
    value = _fsum(w * chi)
    root = math.isqrt(n)
    if root * root == n:
        euler = 1.0
        for p in factorize(n):
            euler *= p / (p + 1.0)
        main = phi.mellin_at_1 * (2.0 * X / (3.0 * ZETA_TWO)) * euler
    else:
        main = 0.0
    budget = error_coeff * math.sqrt(n * X)
    return value, main, budget


# ----------------------------------------------------------- cache slices


def _sharp_slice(cache: FamilyCache, X: float):
    hi = int(math.ceil(X)) - 1
    if hi < 1:
        raise DomainError("sharp moment needs X > 1")
    cache.require_coverage(1, hi)
    ds, vals, _ = cache.slice_arrays(1, hi)
    return ds, vals


def _smooth_slice(cache: FamilyCache, X: float, phi: SmoothingWeight):
    lo = max(1, int(math.floor(phi.support[0] * X)) + 1)
    hi = int(math.floor(phi.support[1] * X))
    if hi < lo:
        raise DomainError("smoothed moment needs a wider window")
    cache.require_coverage(lo, hi)
    ds, vals, _ = cache.slice_arrays(lo, hi)
    w = phi(ds.astype(np.float64) / X)
    return ds, vals, w


# --------------------------------------------------------------- moments


def moment_sum(k: float, X: float, weighting: str, cache: FamilyCache,
               phi: SmoothingWeight | None = None) -> MomentReport:
    """Family moment of |L|^k, sharp cutoff d < X or smoothed by Phi."""
    if not 0 <= k <= 4:
        raise DomainError("moment exponent must lie in [0, 4]")
    if weighting == "sharp":
        ds, vals = _sharp_slice(cache, X)
        terms = np.abs(vals) ** k
    elif weighting == "smooth":
        if phi is None:
            raise DomainError("smooth weighting needs a SmoothingWeight")
        ds, vals, w = _smooth_slice(cache, X, phi)
        terms = np.abs(vals) ** k * w
    else:
        raise DomainError(f"unknown weighting tag {weighting!r}")
    value = _fsum(terms)
    predicted = None
    if X > math.e:
        predicted = X * math.log(X) ** (k * (k + 1) / 2.0)
    return _report(k, X, weighting, value, predicted, ds.size,
                   notes="order-of-growth prediction only; the implied "
                         "constant is not specified")


def twisted_second_moment(l: int, X: float, phi: SmoothingWeight,
                          cache: FamilyCache) -> MomentReport:
    """Second moment twisted by chi_8d(l) against its predicted main term."""
    if l < 1 or l % 2 == 0:
        raise DomainError("twist index must be odd and >= 1")
    ds, vals, w = _smooth_slice(cache, X, phi)
    chi = _char_values(ds, l)
    value = _fsum(vals * vals * chi * w)
    prof = multiplicative_profile(l)
    l1 = prof.squarefree_part
    kernel = multiplicative_profile(l1)
    d_big, _ = constant_D(_D_PRIME_LIMIT)
    log_ratio = math.log(X / l1)
    log_poly = log_ratio ** 3 - 3.0 * sum(
        math.log(p) ** 2 for p in factorize(l1)) * log_ratio
    predicted = (d_big * phi.mellin_at_1 / (36.0 * ZETA_TWO)) \
        * (kernel.tau / math.sqrt(l1)) * (l1 / (kernel.sigma * float(prof.h))) \
        * X * log_poly
    return _report(2.0, X, "smooth", value, predicted, ds.size,
                   notes="prediction drops the O(l) secondary term; expect "
                         "~10% relative slack at desk scales")


def fit_growth_exponents(x_grid, values):
    """Per-doubling log-power exponents from (X, M(X)) pairs."""
    pairs = list(zip(x_grid, values))
    ests = []
    for (x1, m1), (x2, m2) in zip(pairs, pairs[1:]):
        num = math.log((m2 / x2) / (m1 / x1))
        den = math.log(math.log(x2) / math.log(x1))
        ests.append(num / den)
    return ests


def growth_fit(k: float, x_grid, weighting: str, cache: FamilyCache,
               phi: SmoothingWeight | None = None):
    """Exponent estimates across the grid plus a stability spread."""
    xs = [float(x) for x in x_grid]
    if len(xs) < 3:
        raise DomainError("growth fit needs at least 3 grid points")
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise DomainError("growth grid must be strictly ascending")
    ms = [moment_sum(k, x, weighting, cache, phi).value for x in xs]
    ests = fit_growth_exponents(xs, ms)
    stability = max(abs(b - a) for a, b in zip(ests, ests[1:])) \
        if len(ests) > 1 else 0.0
    return ests, stability


# ---------------------------------------------------- averaged bound side


def averaged_bound_check(which: str, mp: MomentParameters, bs: BlockStructure,
                         X: float, phi: SmoothingWeight,
                         cache: FamilyCache) -> MomentReport:
    """Exact family average of one bracketed bound side, over its predicted
    power of log.

    "prop27": sum of the plain bracket built from E_ell(k n S_j), predicted
    X (log X)^((nk)^2/2).  "prop31": the same with |L|^n and the conjugate
    bracket, predicted X (log X)^(((nk)^2+n)/2).
    """
    if which not in ("prop27", "prop31"):
        raise DomainError(f"unknown averaged bound tag {which!r}")
    ds, vals, w = _smooth_slice(cache, X, phi)
    a_bracket, b_bracket = split_brackets_family(ds, mp, bs)
    if which == "prop27":
        terms = b_bracket * w
        exponent = mp.nk ** 2 / 2.0
    else:
        terms = np.abs(vals) ** mp.n * a_bracket * w
        exponent = (mp.nk ** 2 + mp.n) / 2.0
    value = _fsum(terms)
    predicted = X * math.log(X) ** exponent
    return _report(mp.k, X, "smooth", value, predicted, ds.size,
                   notes=f"{which} side with n={mp.n}, k={mp.k}; "
                         "implied constant unspecified, ratio tracked "
                         "across scales")


# ------------------------------------------------------------ Holder path


@dataclass(frozen=True)
class HolderReport:
    """The factorized upper-bound route at one (n, k, X)."""

    n: float
    k: float
    X: float
    sample_count: int
    s_value: float
    two_factor_first: float
    two_factor_second: float
    two_factor_bound: float
    two_factor_holds: bool
    pointwise_min: float
    pointwise_violations: int
    chain_m: int = 0
    chain_factors: tuple = ()
    chain_bound: float | None = None
    chain_holds: bool | None = None
    chain_pointwise_min: float | None = None
    chain_pointwise_violations: int | None = None


def holder_variant(mp: MomentParameters, bs: BlockStructure, X: float,
                   phi: SmoothingWeight, cache: FamilyCache) -> HolderReport:
    """Split the nk-th moment through mollifier averages and verify it.

    Two-factor route for any 0 < k < 1:
        S <= F1^k * F2^(1-k),
        F1 = sum |L|^n N(d, n(k-1)) Phi,  F2 = sum N(d, n(1-k))^(k/(1-k)) Phi,
    where N(d, a) is the block mollifier product.  The pointwise step
    N(d, a) N(d, -a) >= 1 is checked at every d.  When k = 1/m for integer
    m <= 4, the m-factor chain is evaluated as well; its m = 2 case
    coincides with the two-factor formula identically.
    """
    n, k = mp.n, mp.k
    if not 0 < k < 1:
        raise DomainError("holder route needs 0 < k < 1")
    ds, vals, w = _smooth_slice(cache, X, phi)
    abs_l = np.abs(vals)
    s_value = _fsum(abs_l ** (n * k) * w)

    moll_cache: dict[float, np.ndarray] = {}

    def moll(alpha: float) -> np.ndarray:
        if alpha not in moll_cache:
            moll_cache[alpha] = mollifier_family(ds, alpha, bs)[1]
        return moll_cache[alpha]

    moll_minus = moll(n * (k - 1.0))
    moll_plus = moll(n * (1.0 - k))
    f1 = _fsum(abs_l ** n * moll_minus * w)
    f2 = _fsum(moll_plus ** (k / (1.0 - k)) * w)
    bound = f1 ** k * f2 ** (1.0 - k)
    holds = s_value <= bound * (1.0 + 1e-9)

    pair = moll_minus * moll_plus
    pointwise_min = float(pair.min() ** k) if pair.size else 1.0
    violations = int(np.count_nonzero(pair < 1.0 - 1e-12))

    chain_m = 0
    chain_factors = ()
    chain_bound = None
    chain_holds = None
    chain_min = None
    chain_violations = None
    m_guess = round(1.0 / k)
    if 2 <= m_guess <= 4 and math.isclose(k, 1.0 / m_guess, rel_tol=1e-12):
        m = m_guess
        factors = [f1]
        pair_prod = np.ones(ds.size)
        for i in range(1, m):
            a = n * (i * k - 1.0)
            pair_prod = pair_prod * moll(a) * moll(-a)
        for i in range(1, m - 1):
            factors.append(_fsum(moll(n * (1.0 - i * k))
                                 * moll(n * ((i + 1) * k - 1.0)) * w))
        factors.append(_fsum(moll(n * (1.0 - (m - 1) * k)) * w))
        chain_m = m
        chain_factors = tuple(factors)
        chain_bound = math.prod(f ** k for f in factors)
        chain_holds = s_value <= chain_bound * (1.0 + 1e-9)
        chain_min = float(pair_prod.min() ** k) if pair_prod.size else 1.0
        chain_violations = int(np.count_nonzero(pair_prod < 1.0 - 1e-12))

    return HolderReport(n, k, float(X), int(ds.size), s_value, f1, f2,
                        bound, holds, pointwise_min, violations, chain_m,
                        chain_factors, chain_bound, chain_holds, chain_min,
                        chain_violations)


# ----------------------------------------------------------- distribution


QUANTILE_LEVELS = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)


@dataclass(frozen=True)
class DistributionReport:
    """Standardized log-value statistics next to the character-sum proxy."""

    X: float
    sample_count: int
    zero_count: int
    proxy_cutoff: float
    ks_true_normal: float
    ks_proxy_normal: float
    ks_true_proxy: float
    quantile_levels: tuple
    quantiles_true: tuple
    quantiles_proxy: tuple
    quantiles_normal: tuple
    bin_edges: tuple
    hist_true: tuple
    hist_proxy: tuple
    notes: str = ""


def variance_matched_cutoff(X: float) -> float:
    """Smallest prime cutoff whose reciprocal-prime mass reaches log log X."""
    if X <= math.e:
        raise DomainError("cutoff matching needs X > e")
    target = math.log(math.log(X))
    if mertens_sum(3, 0) >= target:
        return 3.0
    lo, hi = 3, 6
    while mertens_sum(hi, 0) < target:
        lo, hi = hi, hi * 2
        if hi > 2 ** 26:
            raise DomainError("variance matching ran past the sieve budget")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mertens_sum(mid, 0) < target:
            lo = mid
        else:
            hi = mid
    return float(hi)


def _ks_to_standard_normal(sorted_x: np.ndarray) -> float:
    n = sorted_x.size
    grid = ndtr(sorted_x)
    upper = np.max(np.arange(1, n + 1) / n - grid)
    lower = np.max(grid - np.arange(0, n) / n)
    return float(max(upper, lower))


def _ks_two_sample(a: np.ndarray, b: np.ndarray) -> float:
    grid = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def distribution_report(X: float, cache: FamilyCache, bins: int = 40,
                        proxy_cfg: HeuristicConfig | None = None
                        ) -> DistributionReport:
    """Compare standardized log |L| over d in (X, 2X] with the normal law
    and with the standardized prime character sum."""
    if bins < 1:
        raise DomainError("need at least one histogram bin")
    lo = int(math.floor(X)) + 1
    hi = int(math.floor(2 * X))
    if hi < lo:
        raise DomainError("empty distribution window")
    cache.require_coverage(lo, hi)
    ds, vals, _ = cache.slice_arrays(lo, hi)
    if ds.size == 0:
        raise DomainError("no family members in the window")
    nonzero = vals != 0.0
    zero_count = int(ds.size - np.count_nonzero(nonzero))
    ds_nz = ds[nonzero]
    vals_nz = vals[nonzero]
    if ds_nz.size == 0:
        raise DomainError("all central values in the window are zero")
    loglog = np.log(np.log(ds_nz.astype(np.float64)))
    spread = np.sqrt(loglog)
    s_true = (np.log(np.abs(vals_nz)) - 0.5 * loglog) / spread

    cfg = proxy_cfg if proxy_cfg is not None else \
        HeuristicConfig(variance_matched_cutoff(X))
    p_sums = prime_block_sums_family(ds_nz, (2.0, cfg.z))
    s_proxy = p_sums / spread

    st = np.sort(s_true)
    sp = np.sort(s_proxy)
    ks_true = _ks_to_standard_normal(st)
    ks_proxy = _ks_to_standard_normal(sp)
    ks_cross = _ks_two_sample(st, sp)

    levels = np.array(QUANTILE_LEVELS)
    q_true = tuple(float(v) for v in np.quantile(s_true, levels))
    q_proxy = tuple(float(v) for v in np.quantile(s_proxy, levels))
    q_normal = tuple(float(v) for v in ndtri(levels))

    edges = np.histogram_bin_edges(np.concatenate([s_true, s_proxy]),
                                   bins=bins)
    hist_true, _ = np.histogram(s_true, bins=edges)
    hist_proxy, _ = np.histogram(s_proxy, bins=edges)

    return DistributionReport(
        float(X), int(ds_nz.size), zero_count, float(cfg.z),
        ks_true, ks_proxy, ks_cross,
        tuple(QUANTILE_LEVELS), q_true, q_proxy, q_normal,
        tuple(float(e) for e in edges),
        tuple(int(c) for c in hist_true), tuple(int(c) for c in hist_proxy),
        notes="log log convergence is slow at desk scales; distances are "
              "descriptive, not one-sided dominance claims")
