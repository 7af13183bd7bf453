"""Exact-rational exponent numerology.

Everything here is computed with `fractions.Fraction`; float mirrors are
provided for display only.  The module reproduces the maximal-inequality
exponent tables, the Hausdorff-dimension conjugates, the gamma-weight /
Lebesgue-exponent ladder with its linear-system verification, and the
polynomial-Wolff-axiom exponent variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction


@dataclass
class ExponentReport:
    n: int
    table: list  # rows (k, term_broad, term_threshold, max_term)
    argmin_k: int
    p: Fraction
    p_float: float
    trace: list = field(default_factory=list)


def broad_exponent(n: int, k: int) -> Fraction:
    """Endpoint 1 + 2n / ((n-1)n + (k-1)k) of the k-broad estimate."""
    _check_nk(n, k)
    return 1 + Fraction(2 * n, (n - 1) * n + (k - 1) * k)


def bg_threshold(n: int, k: int) -> Fraction:
    """Broad-to-linear passage threshold (n-k+2)/(n-k+1)."""
    _check_nk(n, k)
    return Fraction(n - k + 2, n - k + 1)


def _check_nk(n: int, k: int):
    if not (2 <= k <= n):
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")


def linear_exponent(n: int) -> ExponentReport:
    """p = 1 + min_k max{2n/((n-1)n+(k-1)k), 1/(n-k+1)} over integer k.

    Ties break toward smaller k (recorded in the trace).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    table = []
    best_k, best = None, None
    trace = []
    for k in range(2, n + 1):
        t_broad = broad_exponent(n, k) - 1
        t_thresh = bg_threshold(n, k) - 1
        m = max(t_broad, t_thresh)
        table.append((k, t_broad, t_thresh, m))
        if best is None or m < best:
            best, best_k = m, k
        elif m == best:
            trace.append(f"k={k} ties k={best_k}; keeping smaller k")
    p = 1 + best
    trace.insert(0, f"argmin k={best_k}, p=1+{best}")
    return ExponentReport(n, table, best_k, p, float(p), trace)


def easy_exponent(n: int) -> float:
    """Closed-form comparison bound 1 + (1/(2-sqrt 2)) / (n-1).

    Asserts that the tabulated exponent is never larger (the table is the
    stronger statement in every dimension).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    value = 1.0 + 1.0 / (2.0 - math.sqrt(2.0)) / (n - 1)
    if n > 2 and float(linear_exponent(n).p) > value + 1e-12:
        raise AssertionError(f"table exponent exceeds comparison bound at n={n}")
    return value


def hausdorff_bound(n: int) -> Fraction:
    """Conjugate exponent p' of the tabulated maximal exponent."""
    p = linear_exponent(n).p
    return p / (p - 1)


def gamma_weights(n: int, m: int) -> list:
    """Weights gamma_m..gamma_n: closed form through n-1, then the closure
    gamma_n = 1 - sum so the total weight is exactly 1."""
    if not (2 <= m <= n - 1):
        raise ValueError("need 2 <= m <= n-1")
    gammas = [Fraction((m - 1) * m, (j - 1) * j * (j + 1)) for j in range(m, n)]
    # recursion cross-check: gamma_i = ((i-2)/(i+1)) gamma_{i-1}
    for idx, i in enumerate(range(m + 1, n)):
        assert gammas[idx + 1] == Fraction(i - 2, i + 1) * gammas[idx]
    gammas.append(1 - sum(gammas))
    return gammas


def p_ladder(n: int, m: int) -> list:
    """Exponents p_m..p_n defined by (1 - 1/p_i)^{-1} = m + sum (i-j) gamma_j."""
    if not (2 <= m <= n):
        raise ValueError("need 2 <= m <= n")
    if m == n:
        return [Fraction(n, n - 1)]
    gammas = gamma_weights(n, m)
    ladder = []
    for i in range(m, n + 1):
        recip = Fraction(m) + sum(
            (i - j) * gammas[j - m] for j in range(m, i)
        )
        ladder.append(1 / (1 - 1 / recip))
    # closed-form cross-check for the last rung
    final = Fraction(n) - Fraction((n - 1) * n - (m - 1) * m, 2 * n)
    assert 1 / (1 - 1 / ladder[-1]) == final
    return ladder


def verify_xy_zero(n: int, m: int, gammas=None) -> bool:
    """Exact check that the weight/exponent system zeroes out both
    constraint families:

        X_i = Theta_{i+1} - Theta_i - (sum_{j<=i} gamma_j)(1 - 1/p)
        Y_i = Theta_{i+1} - (1 + i(1 - sum_{j<=i} gamma_j))(1 - 1/p)

    for m <= i <= n-1 together with Y_{m-1} = 0, where
    Theta_l = (1 - 1/p_l)^{-1} (1 - 1/p).
    """
    if not (2 <= m <= n - 1):
        raise ValueError("need 2 <= m <= n-1")
    if gammas is None:
        gammas = gamma_weights(n, m)
    gammas = [Fraction(g) for g in gammas]

    def gsum(i):
        return sum(gammas[j - m] for j in range(m, i + 1)) if i >= m else Fraction(0)

    ladder = []
    for i in range(m, n + 1):
        recip = Fraction(m) + sum((i - j) * gammas[j - m] for j in range(m, i))
        ladder.append(1 / (1 - 1 / recip))
    p = ladder[-1]
    one_minus = 1 - 1 / p

    def theta(l):
        return one_minus / (1 - 1 / ladder[l - m])

    for i in range(m, n):
        x_i = theta(i + 1) - theta(i) - gsum(i) * one_minus
        if x_i != 0:
            return False
    for i in range(m - 1, n):
        y_i = theta(i + 1) - (1 + i * (1 - gsum(i))) * one_minus
        if y_i != 0:
            return False
    return True


def k1_threshold(n: int):
    """Real-relaxation crossover k1 where the two exponent terms agree.

    Returns (root, upper_bound) where the root solves
    k^2 + (2n-1)k - (n^2 + 3n) = 0 and the bound is
    (sqrt2 - 1) n + 1/2 + 1/sqrt2 + 1/(8 sqrt2 n).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    root = (-(2 * n - 1) + math.sqrt(8.0 * n * n + 8.0 * n + 1.0)) / 2.0
    s2 = math.sqrt(2.0)
    bound = (s2 - 1.0) * n + 0.5 + 1.0 / s2 + 1.0 / (8.0 * s2 * n)
    if root > bound + 1e-12:
        raise AssertionError("quadratic root exceeds its closed-form bound")
    return root, bound


def dimension_corollary(n: int, eps: float = 0.0):
    """Best- and worst-case Hausdorff dimension lower bounds.

    best  = (2 - sqrt2) n + 3/2 - 1/sqrt2 - eps   (integer k lands near k1)
    worst = (2 - sqrt2) n + 1/2 - 1/(8 sqrt2 n)   (conjugate of the
            guaranteed exponent 1 + 1/((2-sqrt2)n - 1/2 - 1/(8 sqrt2 n)))
    """
    if n < 2 or eps < 0:
        raise ValueError("need n >= 2 and eps >= 0")
    s2 = math.sqrt(2.0)
    best = (2.0 - s2) * n + 1.5 - 1.0 / s2 - eps
    q = (2.0 - s2) * n - 0.5 - 1.0 / (8.0 * s2 * n)
    worst = q + 1.0
    return best, worst


def omega_constant(tol: float = 1e-14) -> float:
    """Solution of exp(x) = 1/x in (1/2, 1), by bisection."""
    lo, hi = 0.5, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if math.exp(mid) * mid > 1.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def pwa_exponent(n: int) -> ExponentReport:
    """Exponent under the polynomial Wolff axioms:
    p = 1 + min_k max{(n/(n-1))^{n-k}, (n-1)/(n-k+1)} / (n-1)."""
    if n < 2:
        raise ValueError("need n >= 2")
    table = []
    best_k, best = None, None
    for k in range(2, n + 1):
        t_pow = Fraction(n, n - 1) ** (n - k)
        t_frac = Fraction(n - 1, n - k + 1)
        m = max(t_pow, t_frac)
        table.append((k, t_pow, t_frac, m))
        if best is None or m < best:
            best, best_k = m, k
    alpha = best
    p = 1 + alpha / (n - 1)
    omega = omega_constant()
    trace = [f"argmin k={best_k}", f"alpha_n={alpha} ({float(alpha):.6f})"]
    if float(alpha) >= 1.0 / omega:
        raise AssertionError("alpha_n must stay below the omega-constant bound")
    trace.append(f"alpha_n < 1/Omega = {1.0 / omega:.6f}")
    return ExponentReport(n, table, best_k, p, float(p), trace)


# ---------------------------------------------------------------------------
# table emission

_PRIOR_FIG1 = {
    2: ("2", "Cordoba 1977"),
    3: ("5/3-eps", "Katz-Zahl"),
    4: ("1.4794...", "Katz-Zahl"),
    6: ("4/3", "Wolff 1995"),
}

_PRIOR_FIG3 = {
    2: ("2", "Davies 1971"),
    3: ("5/2+eps", "Katz-Zahl"),
    4: ("3.0858...", "Katz-Zahl"),
    6: ("7-2sqrt2", "Katz-Tao 2002"),
    8: ("11-4sqrt2", "Katz-Tao 2002"),
    10: ("15-6sqrt2", "Katz-Tao 2002"),
    11: ("17-7sqrt2", "Katz-Tao 2002"),
    13: ("21-9sqrt2", "Katz-Tao 2002"),
    15: ("25-11sqrt2", "Katz-Tao 2002"),
}

_PRIOR_FIG4 = {
    2: ("2", "Cordoba 1977"),
    3: ("5/3-eps", "Katz-Zahl"),
    4: ("121/81", "Guth-Zahl"),
    6: ("4/3", "Wolff 1995"),
}


def _frac_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def figure_rows(figure: int, n_range) -> list:
    """Rows (n, value string, source) for one of the three exponent tables.

    Rows covered by earlier results carry the quoted literature value;
    the remaining rows are recomputed exactly here.
    """
    if figure == 1:
        prior, compute = _PRIOR_FIG1, lambda n: linear_exponent(n).p
    elif figure == 3:
        prior, compute = _PRIOR_FIG3, hausdorff_bound
    elif figure == 4:
        prior, compute = _PRIOR_FIG4, lambda n: pwa_exponent(n).p
    else:
        raise ValueError(f"unknown figure {figure}; choose 1, 3 or 4")
    rows = []
    for n in n_range:
        if not (2 <= n <= 64):
            raise ValueError("figure range must stay within [2, 64]")
        if n in prior:
            value, source = prior[n]
        else:
            value, source = _frac_str(compute(n)), "computed"
        rows.append((n, value, source))
    return rows


def emit_tables(figure: int, n_range, fmt: str = "csv") -> str:
    rows = figure_rows(figure, n_range)
    header = {1: "p", 3: "dim_H", 4: "p"}[figure]
    if fmt == "csv":
        out = [f"n,{header},source"]
        out += [f"{n},{v},{s}" for n, v, s in rows]
        return "\n".join(out) + "\n"
    if fmt == "md":
        out = [f"| n | {header} | source |", "| --- | --- | --- |"]
        out += [f"| {n} | {v} | {s} |" for n, v, s in rows]
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown format {fmt!r}; choose csv or md")
