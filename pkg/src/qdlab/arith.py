"""Integer and multiplicative arithmetic for the quadratic family.

The family parameter is an odd square-free d > 0; the character chi_8d is the
Kronecker symbol (8d/.), a real primitive character modulo 8d.  Everything a
family sweep needs reduces to fast evaluation of such symbols plus a handful
of multiplicative functions:

  Omega(n)   prime divisors counted with multiplicity
  w(n)       product of alpha! over prime powers p^alpha || n
  d(n)       divisor count, sigma(n) divisor sum
  h(n)       multiplicative with h(p^k) = 1 + 1/p + 1/p^2 - 4/(p(p+1)), any k >= 1
  Lambda_j   coefficients of (-1)^j zeta^(j)(s)/zeta(s), j <= 3

plus Mertens sums over primes and the Euler product constant

  D = (1/8) prod_{p >= 3} (1 - 1/p) h(p)

whose tail is controlled through log((1-1/p)h(p)) = -4/p^2 + 7/p^3 - 16/p^4 + ...

For family sweeps the key fact is that (b/m) for fixed odd m > 0 depends only
on b mod m, so a one-time residue table per modulus turns each character value
into an int8 gather; JacobiTables packs those tables for a whole ascending
prime list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np

from .errors import DomainError, ResourceError

# Hard ceiling for any single sieve allocation (bytes of the bool array).
SIEVE_MEMORY_BUDGET = 2**28


def kronecker(m: int, n: int) -> int:
    """Kronecker symbol (m/n), full integer conventions.

    (m/2) is 0 for even m and (-1)^((m^2-1)/8) otherwise; (m/-1) is the sign
    of m; (m/1) = 1 including m = 0.  Completely multiplicative in both
    arguments.  Binary algorithm, no factorization.
    """
    if m == 0 and n == 0:
        raise DomainError("kronecker(0, 0) is undefined")
    if n == 0:
        return 1 if m in (1, -1) else 0
    sign = 1
    if n < 0:
        n = -n
        if m < 0:
            sign = -1
    if n % 2 == 0:
        if m % 2 == 0:
            return 0
        e = (n & -n).bit_length() - 1
        n >>= e
        if e & 1 and m % 8 in (3, 5):
            sign = -sign
    # n odd positive from here; classic binary Jacobi with 2-adic flips
    m %= n
    while m:
        e = (m & -m).bit_length() - 1
        m >>= e
        if e & 1 and n % 8 in (3, 5):
            sign = -sign
        if m % 4 == 3 and n % 4 == 3:
            sign = -sign
        m, n = n % m, m
    return sign if n == 1 else 0


def _check_sieve_budget(limit: int) -> None:
    if limit + 1 > SIEVE_MEMORY_BUDGET:
        raise ResourceError(
            f"sieve limit {limit} exceeds memory budget of {SIEVE_MEMORY_BUDGET} entries")


def sieve_primes(limit: int) -> np.ndarray:
    """All primes <= limit, ascending, as int64."""
    if limit < 2:
        raise DomainError("sieve_primes needs limit >= 2")
    _check_sieve_budget(limit)
    is_prime = np.ones(limit + 1, dtype=bool)
    is_prime[:2] = False
    for p in range(2, math.isqrt(limit) + 1):
        if is_prime[p]:
            is_prime[p * p:: p] = False
    return np.flatnonzero(is_prime).astype(np.int64)


@lru_cache(maxsize=6)
def primes_upto(limit: int) -> np.ndarray:
    """Memoized sieve_primes; the returned array must be treated as read-only."""
    ps = sieve_primes(limit)
    ps.setflags(write=False)
    return ps


def sieve_family(limit: int) -> np.ndarray:
    """All odd square-free d with 1 <= d <= limit, ascending, as int64."""
    if limit < 1:
        raise DomainError("sieve_family needs limit >= 1")
    _check_sieve_budget(limit)
    return sieve_family_range(1, limit)


def sieve_family_range(lo: int, hi: int) -> np.ndarray:
    """Odd square-free d in [lo, hi], ascending.  Windowed squared-prime sieve."""
    if hi < lo or lo < 1:
        raise DomainError("need 1 <= lo <= hi")
    _check_sieve_budget(hi - lo + 1)
    ok = np.zeros(hi - lo + 1, dtype=bool)
    first_odd = lo if lo % 2 == 1 else lo + 1
    ok[first_odd - lo:: 2] = True
    root = math.isqrt(hi)
    if root >= 3:
        for p in sieve_primes(root):
            p = int(p)
            if p == 2:
                continue
            p2 = p * p
            # odd multiples of p^2 in the window: p^2 * t with t odd
            t0 = -(-lo // p2)
            if t0 % 2 == 0:
                t0 += 1
            start = p2 * t0
            if start <= hi:
                ok[start - lo:: 2 * p2] = False
    return (np.flatnonzero(ok) + lo).astype(np.int64)


def smallest_prime_factor(limit: int) -> np.ndarray:
    """spf[n] = smallest prime factor of n for 2 <= n <= limit; spf[0..1] = 0, 1."""
    if limit < 2:
        raise DomainError("smallest_prime_factor needs limit >= 2")
    if 4 * (limit + 1) > SIEVE_MEMORY_BUDGET:
        raise ResourceError(f"spf table for limit {limit} exceeds memory budget")
    spf = np.zeros(limit + 1, dtype=np.int32)
    spf[1] = 1
    for p in range(2, math.isqrt(limit) + 1):
        if spf[p] == 0:
            seg = spf[p * p:: p]
            seg[seg == 0] = p
    rest = np.flatnonzero(spf == 0)[1:]  # skip index 0
    spf[rest] = rest
    return spf


@lru_cache(maxsize=2)
def _spf_cached(limit: int) -> np.ndarray:
    t = smallest_prime_factor(limit)
    t.setflags(write=False)
    return t


_SPF_DEFAULT_LIMIT = 1 << 20


def factorize(n: int) -> dict[int, int]:
    """Prime factorization {p: alpha}.  SPF table for small n, trial division above."""
    if n < 1:
        raise DomainError("factorize needs n >= 1")
    out: dict[int, int] = {}
    if n <= _SPF_DEFAULT_LIMIT:
        spf = _spf_cached(_SPF_DEFAULT_LIMIT)
        while n > 1:
            p = int(spf[n])
            e = 0
            while n % p == 0:
                n //= p
                e += 1
            out[p] = e
        return out
    for p in (2, 3, 5):
        if n % p == 0:
            e = 0
            while n % p == 0:
                n //= p
                e += 1
            out[p] = e
    # wheel over 6k +- 1
    f = 7
    while f * f <= n:
        for step in (0, 4):
            q = f + step
            if n % q == 0:
                e = 0
                while n % q == 0:
                    n //= q
                    e += 1
                out[q] = e
        f += 6
    if n > 1:
        out[n] = out.get(n, 0) + 1
    return dict(sorted(out.items()))


def h_factor(p: int) -> Fraction:
    """h(p^k) for any k >= 1: 1 + 1/p + 1/p^2 - 4/(p(p+1)), exact."""
    return 1 + Fraction(1, p) + Fraction(1, p * p) - Fraction(4, p * (p + 1))


@dataclass(frozen=True)
class MultiplicativeProfile:
    """Multiplicative data of one integer, as the moment formulas consume it."""

    n: int
    omega_big: int            # Omega(n), with multiplicity
    w: int                    # prod alpha!
    tau: int                  # divisor count d(n)
    sigma: int                # divisor sum
    h: Fraction               # multiplicative, h(p^k) independent of k
    squarefree_part: int      # n1 in n = n1 * n2^2, n1 square-free
    square_root_part: int     # n2


def multiplicative_profile(n: int) -> MultiplicativeProfile:
    if n < 1:
        raise DomainError("multiplicative_profile needs n >= 1")
    fac = factorize(n)
    omega = sum(fac.values())
    w = 1
    tau = 1
    sigma = 1
    h = Fraction(1)
    n1 = 1
    n2 = 1
    for p, a in fac.items():
        w *= math.factorial(a)
        tau *= a + 1
        sigma *= (p ** (a + 1) - 1) // (p - 1)
        h *= h_factor(p)
        if a % 2 == 1:
            n1 *= p
        n2 *= p ** (a // 2)
    return MultiplicativeProfile(n, omega, w, tau, sigma, h, n1, n2)


def lambda_j(n: int, j: int) -> float:
    """Generalized von Mangoldt weight Lambda_j(n).

    Lambda_0 is the indicator of n = 1, Lambda_1 the usual von Mangoldt
    function, and higher orders follow the convolution recursion

        Lambda_{j+1}(n) = Lambda_j(n) log n + sum_{ab=n} Lambda(a) Lambda_j(b),

    equivalent to the Dirichlet series (-1)^j zeta^(j)(s)/zeta(s).  Vanishes
    as soon as n has more than j distinct prime factors.
    """
    if n < 1:
        raise DomainError("lambda_j needs n >= 1")
    if not 0 <= j <= 3:
        raise DomainError("lambda_j supports 0 <= j <= 3")
    fac = factorize(n)
    if len(fac) > j:
        return 0.0
    return _lambda_rec(n, j, fac)


def _lambda_rec(n: int, j: int, fac: dict[int, int]) -> float:
    if j == 0:
        return 1.0 if n == 1 else 0.0
    if j == 1:
        return math.log(next(iter(fac))) if len(fac) == 1 else 0.0
    base = _lambda_rec(n, j - 1, fac) * (math.log(n) if n > 1 else 0.0)
    conv = 0.0
    # sum Lambda(a) Lambda_{j-1}(n/a) over prime-power divisors a = p^e
    for p, amax in fac.items():
        lp = math.log(p)
        for e in range(1, amax + 1):
            b = n // p ** e
            fb = dict(fac)
            if e == amax:
                del fb[p]
            else:
                fb[p] = amax - e
            conv += lp * _lambda_rec(b, j - 1, fb)
    return base + conv


def mertens_sum(x: float, j: int) -> float:
    """Exact finite sum over primes: sum_{p <= x} (log p)^j / p."""
    if x < 2:
        raise DomainError("mertens_sum needs x >= 2")
    if j < 0:
        raise DomainError("mertens_sum needs j >= 0")
    ps = primes_upto(int(x)).astype(np.float64)
    if j == 0:
        return float(np.sum(1.0 / ps))
    return float(np.sum(np.log(ps) ** j / ps))


@lru_cache(maxsize=4)
def _prime_zeta(s: int) -> float:
    """P(s) = sum_p p^-s via the Moebius/log-zeta expansion, s >= 2."""
    mu = {1: 1, 2: -1, 3: -1, 5: -1, 6: 1, 7: -1, 10: 1, 11: -1, 13: -1,
          14: 1, 15: 1, 17: -1, 19: -1, 21: 1, 22: 1, 23: -1, 26: 1, 29: -1,
          30: -1, 31: -1, 33: 1, 34: 1, 35: 1, 37: -1, 38: 1, 39: 1}
    with mpmath.workdps(30):
        acc = mpmath.mpf(0)
        for k, m in sorted(mu.items()):
            acc += mpmath.mpf(m) / k * mpmath.log(mpmath.zeta(k * s))
        return float(acc)


# |log((1-1/p) h(p)) + 4/p^2 - 7/p^3| <= C4/p^4 for p >= 5; checked in tests
# against the sieved primes and consistent with the Taylor tail -16/p^4 + ...
_D_TAIL_C4 = 17.0


def constant_D(p_limit: int) -> tuple[float, float]:
    """Partial Euler product for D = (1/8) prod_{p>=3} (1-1/p) h(p).

    Returns (value, tail_bound) where value is the raw partial product over
    3 <= p <= p_limit and tail_bound is a certified bound on
    |value - D|.  The tail of the log-product is sandwiched through
    log((1-1/p)h(p)) = -4/p^2 + 7/p^3 + O(1/p^4), with the prime sums
    sum_{p > p_limit} p^-2 and p^-3 evaluated exactly as prime-zeta values
    minus the sieved partial sums.
    """
    if p_limit < 3:
        raise DomainError("constant_D needs p_limit >= 3")
    ps = primes_upto(p_limit).astype(np.float64)
    odd = ps[1:]
    f = (1.0 - 1.0 / odd) * (1.0 + 1.0 / odd + 1.0 / odd**2 - 4.0 / (odd * (odd + 1.0)))
    value = 0.125 * math.exp(float(np.sum(np.log(f))))
    t2 = max(_prime_zeta(2) - float(np.sum(ps ** -2.0)), 0.0) * (1 + 1e-6) + 1e-15
    t3 = max(_prime_zeta(3) - float(np.sum(ps ** -3.0)), 0.0) * (1 + 1e-6) + 1e-16
    z = 4.0 * t2 + 7.0 * t3 + _D_TAIL_C4 / (3.0 * float(p_limit) ** 3)
    tail = value * z * math.exp(z) * (1 + 1e-9) + 1e-12 * value
    return value, tail


def character_table(m: int) -> np.ndarray:
    """int8 table T with T[b] = kronecker(b, m) for 0 <= b < m, odd m >= 1.

    For fixed odd positive m the symbol (b/m) is a character mod m, so this
    table answers chi_8d(m) = T[8d mod m] across an entire family sweep.
    """
    if m < 1 or m % 2 == 0:
        raise DomainError("character_table needs odd m >= 1")
    if m > SIEVE_MEMORY_BUDGET:
        raise ResourceError(f"character table modulus {m} exceeds memory budget")
    if m == 1:
        return np.ones(1, dtype=np.int8)
    t = np.zeros(m, dtype=np.int8)
    spf = _spf_cached(_SPF_DEFAULT_LIMIT) if m <= _SPF_DEFAULT_LIMIT else None
    t[1] = 1
    for b in range(2, m):
        if spf is not None:
            p = int(spf[b])
        else:
            p = min(factorize(b))
        if p == b:
            t[b] = kronecker(b, m)
        else:
            t[b] = t[p] * t[b // p]
    return t


class JacobiTables:
    """Packed quadratic-residue tables for an ascending array of odd primes.

    flat[offset[j] + r] = Legendre symbol (r/p_j), r in [0, p_j).  Evaluating
    chi_8d over a block of d and a slice of primes is then a residue matrix
    plus one int8 gather, which is what both the L-value kernel and the
    prime-block sums run on.
    """

    #: column chunk used by weighted_sums; fixed so reductions are reproducible
    PRIME_CHUNK = 2048

    def __init__(self, primes: np.ndarray):
        primes = np.asarray(primes, dtype=np.int64)
        if primes.size and (primes[0] < 3 or np.any(primes % 2 == 0)):
            raise DomainError("JacobiTables wants odd primes only")
        self.primes = primes
        sizes = primes.astype(np.int64)
        self.offsets = np.zeros(primes.size, dtype=np.int64)
        if primes.size:
            np.cumsum(sizes[:-1], out=self.offsets[1:])
        self.flat = np.empty(int(sizes.sum()), dtype=np.int8)
        for j, p in enumerate(primes):
            p = int(p)
            o = int(self.offsets[j])
            tab = self.flat[o: o + p]
            tab.fill(-1)
            tab[0] = 0
            sq = (np.arange(1, (p - 1) // 2 + 1, dtype=np.int64) ** 2) % p
            tab[sq] = 1

    def chi_block(self, q: np.ndarray, j0: int, j1: int) -> np.ndarray:
        """chi_q(p_j) for q (int64 array) and table columns j0 <= j < j1."""
        pr = self.primes[j0:j1]
        r = q[:, None] % pr[None, :]
        return self.flat[self.offsets[j0:j1][None, :] + r]

    def weighted_sums(self, q: np.ndarray, weights: np.ndarray,
                      j0: int = 0, j1: int | None = None) -> np.ndarray:
        """sum_j weights[j] * chi_q(p_j) over columns [j0, j1), per q entry."""
        if j1 is None:
            j1 = self.primes.size
        acc = np.zeros(q.size, dtype=np.float64)
        for a in range(j0, j1, self.PRIME_CHUNK):
            b = min(a + self.PRIME_CHUNK, j1)
            acc += (self.chi_block(q, a, b) * weights[a - j0: b - j0][None, :]).sum(axis=1)
        return acc
