"""Central values L(1/2, chi_8d) across the family of odd square-free d.

Three routes to the same number:

  * central_value_afe: the production engine.  For the even primitive real
    character mod q = 8d with root number +1,

        L(1/2, chi) = (2/Gamma(1/4)) sum_{n>=1} chi(n) n^(-1/2) Gamma(1/4, pi n^2/q),

    truncated where a certified tail bound drops under tolerance.  Only odd
    n contribute since chi_8d kills even arguments.

  * central_value_hurwitz: a slow oracle, L(1/2, chi) =
    q^(-1/2) sum_a chi(a) zeta(1/2, a/q), with an in-house Euler-Maclaurin
    Hurwitz zeta at extended precision.  The two routes are kept separate
    so one can certify the other.

  * family_sweep: the vectorized bulk kernel behind the cache.  Work is cut
    into fixed absolute blocks of d so every record's bytes depend only on
    (d, tol), never on the requested range or worker count.

Cache files are flat little-endian record dumps; see cache_store.
"""

from __future__ import annotations

import math
import multiprocessing
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import mpmath
import numpy as np

from .arith import (
    JacobiTables,
    _SPF_DEFAULT_LIMIT,
    _spf_cached,
    factorize,
    kronecker,
    primes_upto,
    sieve_family_range,
)
from .errors import (
    CacheFormatError,
    CoverageError,
    DomainError,
    PrecisionError,
    ResourceError,
    StorageError,
)
from .smoothing import SmoothingWeight, smoothing_weight  # noqa: F401  (re-export)

GAMMA_QUARTER = math.gamma(0.25)
AFE_PREFACTOR = 2.0 / GAMMA_QUARTER

TOL_MIN, TOL_MAX = 1e-12, 1e-6


@dataclass(frozen=True)
class LValueRecord:
    """One computed central value with its certified absolute error."""

    d: int
    value: float
    abs_error: float
    method: str = "afe"


def _validate_family_d(d: int) -> None:
    if d < 1 or d % 2 == 0:
        raise DomainError(f"family parameter must be odd and positive, got {d}")
    if any(e > 1 for e in factorize(d).values()):
        raise DomainError(f"family parameter must be square-free, got {d}")


# ------------------------------------------------------------ Gamma(1/4, x)


def upper_gamma_quarter(x: float) -> float:
    """Upper incomplete gamma Gamma(1/4, x) in double precision.

    Power series against the complete gamma below 2, modified Lentz
    continued fraction above.  Relative accuracy ~1e-14 except very near
    the series/fraction energy scale where cancellation costs a digit.
    """
    a = 0.25
    if x < 0:
        raise DomainError("upper_gamma_quarter needs x >= 0")
    if x == 0.0:
        return GAMMA_QUARTER
    if x < 2.0:
        # lower gamma series: x^a e^-x sum x^k / (a(a+1)...(a+k))
        term = 1.0 / a
        total = term
        k = 1
        while term > 1e-18 * total:
            term *= x / (a + k)
            total += term
            k += 1
        return GAMMA_QUARTER - x ** a * math.exp(-x) * total
    # Lentz continued fraction for the upper function
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 300):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x)) * h


# Hot-path weight G(u) = Gamma(1/4, u^4) tabulated as a cubic Hermite spline
# on a uniform u-grid; the derivative is exactly G'(u) = -4 exp(-u^4), so
# node data cost nothing beyond the node values themselves.  Past the grid
# end G < 2e-23 and is clamped to zero.
_TABLE_SIZE = 4096
_TABLE_UMAX = 50.0 ** 0.25
_TABLE_ERR = 6e-14  # empirical interpolation ceiling, asserted in tests


@lru_cache(maxsize=1)
def _weight_table() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    h = _TABLE_UMAX / _TABLE_SIZE
    u = np.arange(_TABLE_SIZE + 1, dtype=np.float64) * h
    y = np.array([upper_gamma_quarter(float(v) ** 4) for v in u])
    dy = -4.0 * np.exp(-(u ** 4))
    y0, y1 = y[:-1], y[1:]
    d0, d1 = dy[:-1], dy[1:]
    c0 = y0.copy()
    c1 = d0.copy()
    c2 = (3.0 * (y1 - y0) / h - 2.0 * d0 - d1) / h
    c3 = (2.0 * (y0 - y1) / h + d0 + d1) / (h * h)
    return c0, c1, c2, c3, h


def _gamma_weight_grid(u: np.ndarray) -> np.ndarray:
    """Vectorized G(u) = Gamma(1/4, u^4) from the Hermite table, u >= 0."""
    c0, c1, c2, c3, h = _weight_table()
    idx = np.minimum((u * (1.0 / h)).astype(np.int64), _TABLE_SIZE - 1)
    s = u - idx * h
    w = c0[idx] + s * (c1[idx] + s * (c2[idx] + s * c3[idx]))
    w[u >= _TABLE_UMAX] = 0.0
    return w


# ------------------------------------------------------------- truncation


def _afe_tail_bound(q: float, n_trunc: int) -> float:
    """Certified bound on the dropped AFE tail past n_trunc.

    Uses Gamma(1/4, x) <= x^(-3/4) e^-x (monotone integrand, valid for all
    x > 0), then sums the resulting Gaussian tail by ratio comparison.
    """
    c = math.pi / q
    m = n_trunc + 1
    den = -math.expm1(-2.0 * c * m)
    return AFE_PREFACTOR * (q / math.pi) ** 0.75 * math.exp(-c * m * m) / (m * m * den)


def afe_truncation_length(q: int, tol: float) -> int:
    """Least n_trunc >= 1 whose certified tail bound is <= tol."""
    if q < 8:
        raise DomainError("modulus must be at least 8")
    if tol <= 0:
        raise DomainError("tol must be positive")
    lo, hi = 0, 1
    while _afe_tail_bound(q, hi) > tol:
        lo, hi = hi, hi * 2
        if hi > 1 << 34:
            raise PrecisionError(f"tail bound cannot reach {tol} for q={q}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _afe_tail_bound(q, mid) <= tol:
            hi = mid
        else:
            lo = mid
    return max(hi, 1)


# --------------------------------------------------------- single-d routes


def _afe_partial(d: int, n_trunc: int) -> float:
    """Exact-rounded partial AFE sum over odd n <= n_trunc (term-by-term)."""
    q = 8 * d
    terms = []
    for n in range(1, n_trunc + 1, 2):
        chi = kronecker(q, n)
        if chi:
            terms.append(chi * upper_gamma_quarter(math.pi * n * n / q) / math.sqrt(n))
    return AFE_PREFACTOR * math.fsum(terms)


def central_value_afe(d: int, tol: float = 1e-9) -> LValueRecord:
    """L(1/2, chi_8d) by the truncated functional-equation sum."""
    _validate_family_d(d)
    if not TOL_MIN <= tol <= TOL_MAX:
        raise DomainError(f"tol must lie in [{TOL_MIN}, {TOL_MAX}]")
    q = 8 * d
    n_trunc = afe_truncation_length(q, 0.95 * tol)
    value = _afe_partial(d, n_trunc)
    # fsum is exactly rounded; the error budget is per-term gamma accuracy
    mag = AFE_PREFACTOR * math.fsum(
        abs(upper_gamma_quarter(math.pi * n * n / q)) / math.sqrt(n)
        for n in range(1, n_trunc + 1, 2))
    err = _afe_tail_bound(q, n_trunc) + 1e-14 * mag + 5e-16 * abs(value)
    if err > tol:
        raise PrecisionError(f"achieved error {err:.3e} exceeds tol {tol:.3e} at d={d}")
    return LValueRecord(d, value, err, "afe")


def _hurwitz_zeta_half(x, eps, m_head: int = 40):
    """zeta(1/2, x) for real 0 < x <= 1 by Euler-Maclaurin, error <= eps.

    The correction terms alternate for real positive s, so truncating at
    the first term below eps is safe; if the asymptotic series bottoms out
    early the head length doubles and the evaluation restarts.
    """
    s = mpmath.mpf("0.5")
    while True:
        head = mpmath.fsum((x + k) ** -s for k in range(m_head))
        z = x + m_head
        total = head + z ** (1 - s) / (s - 1) + z ** -s / 2
        poch = s
        zpow = z ** (-s - 1)
        zm2 = z ** -2
        prev = mpmath.inf
        j = 1
        while True:
            term = mpmath.bernoulli(2 * j) / math.factorial(2 * j) * poch * zpow
            if abs(term) <= eps:
                return total
            if abs(term) >= prev:
                break  # asymptotic floor reached; lengthen the head
            total += term
            prev = abs(term)
            poch *= (s + 2 * j - 1) * (s + 2 * j)
            zpow *= zm2
            j += 1
        m_head *= 2


def central_value_hurwitz_mp(d: int, digits: int = 30):
    """L(1/2, chi_8d) as an mpmath float certified to `digits` decimals."""
    _validate_family_d(d)
    if not 1 <= digits <= 50:
        raise DomainError("digits must lie in 1..50")
    q = 8 * d
    if q > 100_000:
        raise ResourceError(f"hurwitz oracle caps at modulus 1e5, got {q}")
    with mpmath.workdps(digits + 15):
        eps = mpmath.mpf(10) ** -(digits + 6)
        acc = mpmath.mpf(0)
        # chi_8d is even, so a and q - a carry the same character value
        for a in range(1, q // 2 + 1, 2):
            chi = kronecker(q, a)
            if chi:
                xa = mpmath.mpf(a) / q
                acc += chi * (_hurwitz_zeta_half(xa, eps)
                              + _hurwitz_zeta_half(1 - xa, eps))
        value = acc / mpmath.sqrt(q)
    return +value


def central_value_hurwitz(d: int, digits: int = 30) -> LValueRecord:
    value = central_value_hurwitz_mp(d, digits)
    v = float(value)
    err = max(10.0 ** -digits, abs(v) * 2.3e-16)
    return LValueRecord(d, v, err, "hurwitz")


# ------------------------------------------------------------ bulk kernel

#: absolute d-axis block width; records in block k (d in [k*W+1, (k+1)*W])
#: always use the truncation length of the block's upper edge, making every
#: record's bytes a function of (d, tol) alone
CHUNK_WIDTH = 4096
_COLUMN_BLOCK = 512


def _chunk_truncation(k: int, tol: float) -> int:
    return afe_truncation_length(8 * CHUNK_WIDTH * (k + 1), 0.95 * tol)


def _chi_matrix(d: np.ndarray, n_trunc: int, tables: JacobiTables) -> np.ndarray:
    """int8 matrix chi[i, j] = chi_{8 d[i]}(2j+1) for odd arguments <= n_trunc."""
    m_cols = (n_trunc + 1) // 2
    q = (8 * d).astype(np.int64)
    chi = np.empty((d.size, m_cols), dtype=np.int8)
    chi[:, 0] = 1
    if n_trunc >= 3:
        spf = _spf_cached(_SPF_DEFAULT_LIMIT)
        odd = np.arange(1, n_trunc + 1, 2, dtype=np.int64)
        spf_odd = spf[odd].astype(np.int64)
        is_prime = spf_odd == odd
        is_prime[0] = False
        prime_cols = np.flatnonzero(is_prime)
        # table columns are exactly the odd primes ascending, so the first
        # prime_cols.size of them line up with our prime columns
        for a in range(0, prime_cols.size, JacobiTables.PRIME_CHUNK):
            b = min(a + JacobiTables.PRIME_CHUNK, prime_cols.size)
            chi[:, prime_cols[a:b]] = tables.chi_block(q, a, b)
        # composites by complete multiplicativity; processing [j0, 3 j0 + 1)
        # guarantees both factor columns sit strictly below j0
        j0 = 1
        while j0 < m_cols:
            j1 = min(3 * j0 + 1, m_cols)
            comp = j0 + np.flatnonzero(~is_prime[j0:j1])
            if comp.size:
                n_comp = odd[comp]
                p = spf_odd[comp]
                cof = n_comp // p
                chi[:, comp] = chi[:, (p - 1) // 2] * chi[:, (cof - 1) // 2]
            j0 = j1
    return chi


def _chunk_values(d: np.ndarray, n_trunc: int, tables: JacobiTables,
                  tol: float) -> tuple[np.ndarray, np.ndarray]:
    """(value, abs_error) arrays for one block of family d, fixed n_trunc."""
    q = (8 * d).astype(np.int64)
    chi = _chi_matrix(d, n_trunc, tables)
    m_cols = chi.shape[1]
    odd = np.arange(1, n_trunc + 1, 2, dtype=np.float64)
    sqrt_n = np.sqrt(odd)
    rsqrt_n = 1.0 / sqrt_n
    u_scale = math.pi ** 0.25 * q.astype(np.float64) ** -0.25
    acc = np.zeros(d.size, dtype=np.float64)
    for a in range(0, m_cols, _COLUMN_BLOCK):
        b = min(a + _COLUMN_BLOCK, m_cols)
        u = u_scale[:, None] * sqrt_n[None, a:b]
        w = _gamma_weight_grid(u)
        w *= rsqrt_n[None, a:b]
        acc += (chi[:, a:b] * w).sum(axis=1)
    value = AFE_PREFACTOR * acc
    # error budget: dropped tail (at each d's own modulus) + table truncation
    # + rounding, all deterministic functions of (d, n_trunc)
    sum_rsqrt = float(rsqrt_n.sum())
    cushion = AFE_PREFACTOR * (_TABLE_ERR + 16 * 2.3e-16 * GAMMA_QUARTER) * sum_rsqrt
    tail = np.array([_afe_tail_bound(float(qi), n_trunc) for qi in q])
    err = tail + cushion
    if np.any(err > tol):
        raise PrecisionError(
            f"block error budget {float(err.max()):.3e} exceeds tol {tol:.3e}")
    return value, err


_SWEEP_TABLES: JacobiTables | None = None
_SWEEP_ARGS: tuple[int, int, float] | None = None


def _chunk_job(k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_min, x_max, tol = _SWEEP_ARGS
    lo = max(x_min, k * CHUNK_WIDTH + 1)
    hi = min(x_max, (k + 1) * CHUNK_WIDTH)
    d = sieve_family_range(lo, hi)
    if d.size == 0:
        return d, np.empty(0), np.empty(0)
    n_trunc = _chunk_truncation(k, tol)
    value, err = _chunk_values(d, n_trunc, _SWEEP_TABLES, tol)
    return d, value, err


def _sweep_arrays(x_min: int, x_max: int, tol: float,
                  workers: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    global _SWEEP_TABLES, _SWEEP_ARGS
    if x_min < 1 or x_max < x_min:
        raise DomainError("need 1 <= x_min <= x_max")
    if not TOL_MIN <= tol <= TOL_MAX:
        raise DomainError(f"tol must lie in [{TOL_MIN}, {TOL_MAX}]")
    k_lo = (x_min - 1) // CHUNK_WIDTH
    k_hi = (x_max - 1) // CHUNK_WIDTH
    n_max = _chunk_truncation(k_hi, tol)
    if n_max >= _SPF_DEFAULT_LIMIT:
        raise ResourceError("sweep range exceeds supported truncation tables")
    _SWEEP_TABLES = JacobiTables(primes_upto(n_max)[1:])
    _SWEEP_ARGS = (x_min, x_max, tol)
    ks = range(k_lo, k_hi + 1)
    try:
        if workers <= 1 or len(ks) == 1:
            parts = [_chunk_job(k) for k in ks]
        else:
            # fork shares the tables copy-on-write; merge order is fixed by k
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(min(workers, len(ks))) as pool:
                parts = pool.map(_chunk_job, ks, chunksize=1)
    finally:
        _SWEEP_TABLES = None
        _SWEEP_ARGS = None
    d = np.concatenate([p[0] for p in parts])
    value = np.concatenate([p[1] for p in parts])
    err = np.concatenate([p[2] for p in parts])
    return d, value, err


def family_sweep(x_min: int, x_max: int, tol: float = 1e-9, workers: int = 1,
                 cache_path=None) -> list[LValueRecord]:
    """Records for every odd square-free d in [x_min, x_max], ascending.

    Content is bit-deterministic: independent of workers and of how the
    requested range slices the absolute block grid.  With cache_path the
    same records are also written to disk.
    """
    d, value, err = _sweep_arrays(x_min, x_max, tol, workers)
    if cache_path is not None:
        _store_arrays(d, value, err, cache_path)
    return [LValueRecord(int(di), float(vi), float(ei))
            for di, vi, ei in zip(d, value, err)]


def sweep_to_cache(x_min: int, x_max: int, tol: float, workers: int,
                   path) -> int:
    """family_sweep straight to a cache file; returns the record count."""
    d, value, err = _sweep_arrays(x_min, x_max, tol, workers)
    _store_arrays(d, value, err, path)
    return int(d.size)


# ------------------------------------------------------------------ cache

CACHE_MAGIC = b"QLM1"
CACHE_VERSION = 1
CACHE_DTYPE = np.dtype([("d", "<u8"), ("value", "<f8"), ("abs_error", "<f8")])
_HEADER = struct.Struct("<4sIQ")


def _store_arrays(d: np.ndarray, value: np.ndarray, err: np.ndarray, path) -> None:
    arr = np.empty(d.size, dtype=CACHE_DTYPE)
    arr["d"] = d
    arr["value"] = value
    arr["abs_error"] = err
    try:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, d.size))
            f.write(arr.tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write cache file {path}: {exc}") from exc


def cache_store(records, path) -> None:
    """Write records (ascending d) in the flat binary cache format."""
    d = np.array([r.d for r in records], dtype=np.uint64)
    if d.size > 1 and np.any(np.diff(d.astype(np.int64)) <= 0):
        raise DomainError("cache records must be strictly ascending in d")
    value = np.array([r.value for r in records], dtype=np.float64)
    err = np.array([r.abs_error for r in records], dtype=np.float64)
    _store_arrays(d, value, err, path)


def _load_arrays(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read cache file {path}: {exc}") from exc
    if len(data) < 4 or data[:4] != CACHE_MAGIC:
        raise CacheFormatError("bad magic", 0)
    if len(data) < _HEADER.size:
        raise CacheFormatError("truncated header", len(data))
    _, version, count = _HEADER.unpack_from(data, 0)
    if version != CACHE_VERSION:
        raise CacheFormatError(f"unsupported version {version}", 4)
    end = _HEADER.size + CACHE_DTYPE.itemsize * count
    if len(data) < end:
        raise CacheFormatError(
            f"count {count} exceeds stored records", len(data))
    if len(data) > end:
        raise CacheFormatError("trailing bytes after records", end)
    arr = np.frombuffer(data, dtype=CACHE_DTYPE, count=count,
                        offset=_HEADER.size).copy()
    dd = arr["d"].astype(np.int64)
    if count and (dd[0] < 1 or np.any(np.diff(dd) <= 0)):
        bad = 0 if dd[0] < 1 else int(np.flatnonzero(np.diff(dd) <= 0)[0]) + 1
        raise CacheFormatError("records not ascending in d",
                               _HEADER.size + CACHE_DTYPE.itemsize * bad)
    return arr


def cache_load(path) -> list[LValueRecord]:
    """Read a cache file back into records (sweep-produced, method afe)."""
    arr = _load_arrays(path)
    return [LValueRecord(int(r["d"]), float(r["value"]), float(r["abs_error"]))
            for r in arr]


class FamilyCache:
    """Random access over one loaded cache file, arrays kept columnar."""

    def __init__(self, path):
        arr = _load_arrays(path)
        self.path = str(path)
        self.d = arr["d"].astype(np.int64)
        self.value = arr["value"]
        self.abs_error = arr["abs_error"]

    def __len__(self) -> int:
        return int(self.d.size)

    def lookup(self, d: int) -> LValueRecord | None:
        i = int(np.searchsorted(self.d, d))
        if i < self.d.size and self.d[i] == d:
            return LValueRecord(d, float(self.value[i]), float(self.abs_error[i]))
        return None

    def slice_arrays(self, x_min: int, x_max: int):
        """(d, value, abs_error) views over x_min <= d <= x_max."""
        i = int(np.searchsorted(self.d, x_min))
        j = int(np.searchsorted(self.d, x_max, side="right"))
        return self.d[i:j], self.value[i:j], self.abs_error[i:j]

    def require_coverage(self, x_min: int, x_max: int) -> None:
        """Raise CoverageError unless every family d in range is present."""
        expected = sieve_family_range(x_min, x_max)
        idx = np.searchsorted(self.d, expected)
        idx = np.minimum(idx, max(len(self) - 1, 0))
        present = (self.d[idx] == expected) if len(self) else np.zeros(expected.size, bool)
        if present.all():
            return
        missing = expected[~present]
        gaps = np.flatnonzero(np.diff(missing) > 2)
        starts = np.concatenate(([0], gaps + 1))
        ends = np.concatenate((gaps, [missing.size - 1]))
        ranges = [(int(missing[a]), int(missing[b])) for a, b in zip(starts, ends)]
        raise CoverageError(ranges)
