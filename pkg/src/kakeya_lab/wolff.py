"""Multiscale occupancy counting against nested varieties.

count_multiscale_tubes measures how many tubes of a family occupy the
rho-neighborhoods of a chain of nested varieties at every scale
simultaneously, against the product bound

    (prod_{j=k}^{m-1} rho/lambda_j) (rho/lambda_m)^{n-m} delta^{-(n-1)}.

nested_plane_extremal_family builds the configuration that saturates the
bound; sm_volume estimates the volume of the union of admissible line
segments; poly_average_bound is the one-variable averaging inequality
used to control polynomial sections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .algebraic import Variety, plane_variety, tube_occupancy, wongkew_volume
from .geometry import Ball, Tube, TubeFamily
from .rng import rng_for


class WolffError(ValueError):
    pass


@dataclass
class MultiscaleConfig:
    n: int
    k: int
    m: int
    delta: float
    rho: float
    lambdas: list  # lambda_k <= ... <= lambda_m
    varieties: list  # Z_k ... Z_m, dim j each
    balls: list  # nested B_{lambda_k} <= ... <= B_{lambda_m}

    def __post_init__(self):
        if not (1 <= self.k <= self.m <= self.n):
            raise WolffError("need 1 <= k <= m <= n")
        lams = list(self.lambdas)
        if len(lams) != self.m - self.k + 1 or len(self.varieties) != len(lams):
            raise WolffError("scale chain length mismatch")
        chain = [self.delta, self.rho] + lams + [1.0 + 1e-12]
        if any(a > b + 1e-12 for a, b in zip(chain, chain[1:])):
            raise WolffError("need delta <= rho <= lambda_k <= ... <= lambda_m <= 1")
        for j, (V, lam) in enumerate(zip(self.varieties, lams), start=self.k):
            if V.m != j:
                raise WolffError(f"variety at scale {j} has dimension {V.m}")
        for small, big in zip(self.balls, self.balls[1:]):
            gap = np.linalg.norm(big.c - small.c)
            if gap + small.radius > big.radius + 1e-9:
                raise WolffError("balls must be nested")


def multiscale_bound(cfg: MultiscaleConfig) -> float:
    prod = 1.0
    for lam in cfg.lambdas[:-1]:
        prod *= cfg.rho / lam
    prod *= (cfg.rho / cfg.lambdas[-1]) ** (cfg.n - cfg.m)
    return prod * cfg.delta ** (-(cfg.n - 1))


def count_multiscale_tubes(family: TubeFamily, cfg: MultiscaleConfig):
    """(count, bound, ratio) for the simultaneous occupancy conditions."""
    count = 0
    for tube in family.tubes:
        ok = True
        for V, ball, lam in zip(cfg.varieties, cfg.balls, cfg.lambdas):
            if tube_occupancy(tube, ball, V, cfg.rho) < lam - 1e-12:
                ok = False
                break
        if ok:
            count += 1
    bound = multiscale_bound(cfg)
    return count, bound, count / bound


def nested_plane_chain(n: int, k: int, m: int) -> list:
    """Nested coordinate planes span(e_1..e_j) through the origin."""
    out = []
    for j in range(k, m + 1):
        dirs = np.eye(n)[:j]
        out.append(plane_variety(np.zeros(n), dirs))
    return out


def nested_plane_extremal_family(
    n: int, k: int, m: int, delta: float, rho: float, lambdas, seed: int
) -> TubeFamily:
    """Direction-separated family threading every scale of the nested-plane
    chain: about bound-many tubes each occupy N_rho Z_j within B_lambda_j.

    Directions cluster near e_1 in a box whose half-width in coordinate i
    is rho/(2 lambda_{j}) for the scale j that first constrains it; cores
    pass through the common ball center, so the occupancy fraction inside
    B_lambda_j is min(1, 2 lambda_j) >= lambda_j by construction.
    """
    lambdas = list(lambdas)
    if len(lambdas) != m - k + 1:
        raise WolffError("need one lambda per scale")
    chain = [delta, rho] + lambdas
    if any(a > b + 1e-12 for a, b in zip(chain, chain[1:])) or lambdas[-1] > 1:
        raise WolffError("need delta <= rho <= lambda_k <= ... <= lambda_m <= 1")
    half_widths = []
    for i in range(2, n + 1):  # coordinate theta_i of the direction
        if i <= k:
            half_widths.append(1.0 / (2.0 * n))
        elif i <= m:
            half_widths.append(rho / (2.0 * lambdas[i - 1 - k]))
        else:
            half_widths.append(rho / (2.0 * lambdas[-1]))
    grids = []
    for w in half_widths:
        if w < delta:
            grids.append(np.array([0.0]))
        else:
            count = int(math.floor(w / delta))
            grids.append(delta * np.arange(-count, count + 1))
    bound = 1.0
    for lam in lambdas[:-1]:
        bound *= rho / lam
    bound *= (rho / lambdas[-1]) ** (n - m)
    bound *= delta ** (-(n - 1))
    if bound < 1.0:
        return TubeFamily(n, delta, [], separated=True)
    mesh = np.meshgrid(*grids, indexing="ij")
    thetas = np.stack([g.ravel() for g in mesh], axis=-1)
    tubes = []
    origin = np.zeros(n)
    for theta in thetas:
        d = np.concatenate([[1.0], theta])
        d = d / np.linalg.norm(d)
        tubes.append(Tube(n, delta, d, origin))
    return TubeFamily(n, delta, tubes, separated=True)


# ---------------------------------------------------------------------------
# volume of the union of admissible line segments


@dataclass
class SmConfig:
    """Line-segment occupancy problem on the axis t = last coordinate.

    Lines are l(a, d)(t) = (a + t d, t) with (a, d) in the slightly
    enlarged cube Q^{2(n-1)}(rho).  A line is admissible when its segment
    over the interval I_j stays inside N_rho Z_j intersected with
    B_{lambda_j} for every scale j."""

    n: int
    k: int
    m: int
    rho: float
    lambdas: list
    intervals: list  # (lo, hi) per scale, on the t-axis
    varieties: list  # affine planes containing the t-axis direction
    samples: int = 200_000
    d_bound: int = 1

    def __post_init__(self):
        if len(self.intervals) != self.m - self.k + 1:
            raise WolffError("need one interval per scale")
        if self.rho / 4.0 > self.lambdas[0] + 1e-12:
            raise WolffError("need rho/4 <= lambda_k")
        for V in self.varieties:
            if V.kind != "affine":
                raise WolffError("segment volumes support affine varieties only")

    def interval_points(self, j: int) -> np.ndarray:
        lo, hi = self.intervals[j]
        count = 2 * self.n * self.d_bound + 1
        return np.linspace(lo, hi, count)


def dyadic_interval_length(lam: float, n: int, d: int) -> float:
    """Round lambda/(2 n d) up to the next power of two."""
    raw = lam / (2.0 * n * d)
    return 2.0 ** math.ceil(math.log2(raw))


@dataclass
class SmEstimate:
    volume: float
    bound: float
    ratio: float
    accepted: int
    samples: int
    stderr: float
    inconclusive: bool = False


def _sm_sample_box(cfg: SmConfig):
    """Per-coordinate sampling ranges covering the admissible (a, d) set.

    For the position, u_i = a_i + t_c d_i is sampled near the binding
    interval's midpoint; necessary conditions |u_i| <= lambda + rho and
    |d_i| |I| <= 2 rho bound the feasible set."""
    n = cfg.n
    d_half = np.empty(n - 1)
    u_half = np.empty(n - 1)
    t_ref = np.empty(n - 1)
    for idx in range(n - 1):
        binding = None
        for jpos, V in enumerate(cfg.varieties):
            # coordinate constrained when e_idx is not inside the plane
            # span; the first (tightest-interval) binding scale wins
            e = np.zeros(n)
            e[idx] = 1.0
            if np.linalg.norm(V.basis @ e) < 1.0 - 1e-9:
                binding = jpos
                break
        if binding is None:
            d_half[idx] = 1.0 + cfg.rho
            u_half[idx] = 1.0 + cfg.rho
            t_ref[idx] = 0.0
        else:
            lo, hi = cfg.intervals[binding]
            t_ref[idx] = 0.5 * (lo + hi)
            length = hi - lo
            d_half[idx] = min(1.0 + cfg.rho, 2.0 * cfg.rho / max(length, 1e-12))
            u_half[idx] = min(1.0 + cfg.rho, 1.05 * cfg.rho)
    return d_half, u_half, t_ref


def sm_volume(cfg: SmConfig, seed: int) -> SmEstimate:
    """Monte-Carlo volume of the union of admissible segments over I_m.

    Accepted sample points are binned at resolution rho/4; the estimate
    is the occupied-bin volume (a slight undercount, which is the safe
    direction for the upper-bound checks made against it)."""
    n = cfg.n
    rng = rng_for(seed, "sm-volume")
    d_half, u_half, t_ref = _sm_sample_box(cfg)
    interval_pts = [cfg.interval_points(j) for j in range(len(cfg.intervals))]
    lo_m, hi_m = cfg.intervals[-1]

    bound = 1.0
    for lam in cfg.lambdas[:-1]:
        bound *= cfg.rho / lam
    bound *= cfg.lambdas[-1] ** cfg.m * cfg.rho ** (n - cfg.m)

    bin_size = cfg.rho / 4.0
    budget = cfg.samples
    for attempt in range(3):
        bins = set()
        accepted = 0
        chunk = 20_000
        done = 0
        while done < budget:
            size = min(chunk, budget - done)
            done += size
            d_vec = rng.uniform(-d_half, d_half, size=(size, n - 1))
            u_vec = rng.uniform(-u_half, u_half, size=(size, n - 1))
            a_vec = u_vec - t_ref[None, :] * d_vec
            keep = np.ones(size, dtype=bool)
            for jpos, V in enumerate(cfg.varieties):
                lam = cfg.lambdas[jpos]
                for t in interval_pts[jpos]:
                    pts = np.concatenate(
                        [a_vec + t * d_vec, np.full((size, 1), t)], axis=1
                    )
                    rel = pts - V.base
                    perp = rel - (rel @ V.basis.T) @ V.basis
                    keep &= np.linalg.norm(perp, axis=1) <= cfg.rho
                    keep &= np.linalg.norm(pts, axis=1) <= lam + cfg.rho
                    if not keep.any():
                        break
                if not keep.any():
                    break
            if not keep.any():
                continue
            t_samples = rng.uniform(lo_m, hi_m, size=size)
            sel = np.nonzero(keep)[0]
            pts = np.concatenate(
                [
                    a_vec[sel] + t_samples[sel, None] * d_vec[sel],
                    t_samples[sel, None],
                ],
                axis=1,
            )
            accepted += len(sel)
            for row in np.floor(pts / bin_size).astype(int):
                bins.add(tuple(row))
        if accepted >= 10:
            break
        budget *= 4
    volume = len(bins) * bin_size ** n
    stderr = volume / math.sqrt(accepted) if accepted > 0 else math.inf
    return SmEstimate(
        volume=volume,
        bound=bound,
        ratio=volume / bound,
        accepted=accepted,
        samples=done,
        stderr=stderr,
        inconclusive=accepted < 10,
    )


# ---------------------------------------------------------------------------
# one-variable polynomial averaging bound


def poly_average_bound(coeffs, interval, t: float):
    """(lhs, rhs, holds) for the averaging inequality

        |P(t)| <= (8 m max(|I|, dist(t, I)) / |I|)^m  (1/|I|) int_I |P|.

    `coeffs` are ascending power coefficients; m = deg P >= 1."""
    coeffs = np.asarray(coeffs, dtype=float)
    while len(coeffs) > 1 and coeffs[-1] == 0.0:
        coeffs = coeffs[:-1]
    m = len(coeffs) - 1
    if m < 1:
        raise WolffError("need degree >= 1")
    lo, hi = float(interval[0]), float(interval[1])
    if hi <= lo:
        raise WolffError("interval must have positive length")
    length = hi - lo
    dist = max(0.0, lo - t, t - hi)
    poly = np.polynomial.Polynomial(coeffs)
    roots = [r.real for r in poly.roots() if abs(r.imag) < 1e-12 and lo < r.real < hi]
    pts = sorted(set([lo, hi] + roots))
    integral = 0.0
    for a, b in zip(pts, pts[1:]):
        val, _ = quad(lambda s: abs(poly(s)), a, b, epsabs=1e-10, epsrel=1e-10, limit=200)
        integral += val
    lhs = abs(poly(t))
    rhs = (8.0 * m * max(length, dist) / length) ** m * integral / length
    return lhs, rhs, lhs <= rhs * (1.0 + 1e-9)
