"""Varieties, neighborhoods, tangency tests and volume estimation.

Two kinds of variety are supported: affine subspaces (exact distance,
exact tangent spaces) and transverse complete intersections cut out by
polynomials (distance is an upper bound from projected descent, flagged
approximate).  The sharp constructions in the test corpus live on the
affine side; polynomial varieties appear as partition walls.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, Tube, angle_to_subspace, orthonormal_basis, unit_ball_volume
from .rng import rng_for

TRANSVERSALITY_TOL = 1e-8
ON_VARIETY_TOL = 1e-8


class AlgebraicError(ValueError):
    pass


class DegeneratePointError(AlgebraicError):
    pass


# ---------------------------------------------------------------------------
# multivariate polynomials


def monomials_upto(dim: int, degree: int) -> list:
    """All exponent tuples of total degree <= degree, in graded-lex order
    (ascending total degree, then ascending lexicographic)."""
    out = []
    for d in range(degree + 1):
        out.extend(
            sorted(
                e
                for e in itertools.product(range(d + 1), repeat=dim)
                if sum(e) == d
            )
        )
    return out


class MultiPoly:
    """Dense-enough multivariate polynomial: exponent rows + coefficients."""

    def __init__(self, dim: int, exponents, coeffs):
        self.dim = int(dim)
        self.exponents = np.atleast_2d(np.asarray(exponents, dtype=int))
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.exponents.shape[0] != self.coeffs.shape[0]:
            raise AlgebraicError("exponent/coefficient length mismatch")
        self._grads = None

    @classmethod
    def from_terms(cls, dim: int, terms: dict) -> "MultiPoly":
        exps = sorted(terms, key=lambda e: (sum(e), e))
        return cls(dim, np.array(exps, dtype=int), [terms[e] for e in exps])

    @classmethod
    def from_dense(cls, dim: int, degree: int, coeffs) -> "MultiPoly":
        exps = monomials_upto(dim, degree)
        coeffs = np.asarray(coeffs, dtype=float)
        if len(coeffs) != len(exps):
            raise AlgebraicError("dense coefficient list has wrong length")
        return cls(dim, np.array(exps, dtype=int), coeffs)

    @property
    def degree(self) -> int:
        live = np.abs(self.coeffs) > 0
        return int(self.exponents[live].sum(axis=1).max()) if live.any() else 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        mono = np.prod(pts[..., None, :] ** self.exponents[None, :, :], axis=-1)
        out = mono @ self.coeffs
        return float(out[0]) if single else out

    def gradient(self) -> list:
        if self._grads is None:
            grads = []
            for i in range(self.dim):
                e = self.exponents.copy()
                c = self.coeffs * e[:, i]
                e[:, i] = np.maximum(e[:, i] - 1, 0)
                keep = np.abs(c) > 0
                if not keep.any():
                    grads.append(MultiPoly(self.dim, np.zeros((1, self.dim), int), [0.0]))
                else:
                    grads.append(MultiPoly(self.dim, e[keep], c[keep]))
            self._grads = grads
        return self._grads

    def __mul__(self, other: "MultiPoly") -> "MultiPoly":
        terms: dict = {}
        for ea, ca in zip(self.exponents, self.coeffs):
            for eb, cb in zip(other.exponents, other.coeffs):
                key = tuple(int(v) for v in (ea + eb))
                terms[key] = terms.get(key, 0.0) + float(ca * cb)
        terms = {e: c for e, c in terms.items() if c != 0.0} or {(0,) * self.dim: 0.0}
        return MultiPoly.from_terms(self.dim, terms)

    def dense_coeffs(self, degree=None):
        degree = self.degree if degree is None else degree
        lookup = {tuple(int(v) for v in e): c for e, c in zip(self.exponents, self.coeffs)}
        return [lookup.get(e, 0.0) for e in monomials_upto(self.dim, degree)]


def poly_jacobian(polys, x) -> np.ndarray:
    """Jacobian rows grad P_i(x), shape (len(polys), dim)."""
    return np.array([[g(x) for g in P.gradient()] for P in polys], dtype=float)


# ---------------------------------------------------------------------------
# varieties


@dataclass
class Variety:
    dim: int  # ambient dimension n
    m: int  # intrinsic dimension
    kind: str  # "affine" | "poly"
    base: np.ndarray = None
    basis: np.ndarray = None  # (m, n) orthonormal rows
    polys: list = None
    degree_bound: int = None

    def __post_init__(self):
        if self.kind == "affine":
            self.base = np.asarray(self.base, dtype=float)
            self.basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
            gram = self.basis @ self.basis.T
            if not np.allclose(gram, np.eye(len(self.basis)), atol=1e-10):
                raise AlgebraicError("affine variety basis must be orthonormal")
        elif self.kind == "poly":
            if len(self.polys) != self.dim - self.m:
                raise AlgebraicError("need n - m defining polynomials")
            if self.degree_bound is None:
                self.degree_bound = max(P.degree for P in self.polys)
        else:
            raise AlgebraicError(f"unknown variety kind {self.kind!r}")

    @property
    def approximate_distance(self) -> bool:
        return self.kind == "poly"


def plane_variety(basepoint, directions) -> Variety:
    """Affine subspace through `basepoint` spanned by `directions`."""
    basis = orthonormal_basis(directions)
    base = np.asarray(basepoint, dtype=float)
    return Variety(dim=base.shape[0], m=basis.shape[0], kind="affine", base=base, basis=basis)


def poly_variety(dim: int, m: int, polys, degree_bound=None) -> Variety:
    return Variety(dim=dim, m=m, kind="poly", polys=list(polys), degree_bound=degree_bound)


@dataclass
class DistanceResult:
    value: float
    approximate: bool
    converged: bool = True
    witness: np.ndarray = None


def _project_to_zero_set(V: Variety, x: np.ndarray, newton_iters=25):
    """Gauss-Newton projection of x onto Z(P_1..P_{n-m}) with step halving."""
    y = np.asarray(x, dtype=float).copy()
    vals = np.array([P(y) for P in V.polys])
    for _ in range(newton_iters):
        if np.max(np.abs(vals)) < 1e-13:
            break
        J = poly_jacobian(V.polys, y)
        step, *_ = np.linalg.lstsq(J, vals, rcond=None)
        scale = 1.0
        for _ in range(20):
            cand = y - scale * step
            cand_vals = np.array([P(cand) for P in V.polys])
            if np.max(np.abs(cand_vals)) < np.max(np.abs(vals)):
                y, vals = cand, cand_vals
                break
            scale *= 0.5
        else:
            return y, False
    return y, bool(np.max(np.abs(vals)) < 1e-9)


def _slide_to_nearest(V: Variety, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # 25 safeguarded steps minimizing |y - x| along the zero set
    for _ in range(25):
        J = poly_jacobian(V.polys, y)
        g = y - x
        jj = J @ J.T
        try:
            coef = np.linalg.solve(jj, J @ g)
        except np.linalg.LinAlgError:
            break
        tang = g - J.T @ coef
        norm_t = np.linalg.norm(tang)
        if norm_t < 1e-12:
            break
        step = tang
        best = np.linalg.norm(g)
        improved = False
        scale = 1.0
        for _ in range(12):
            cand, ok2 = _project_to_zero_set(V, y - scale * step, newton_iters=8)
            if ok2 and np.linalg.norm(cand - x) < best - 1e-15:
                y = cand
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return y


def distance_info(V: Variety, x) -> DistanceResult:
    x = np.asarray(x, dtype=float)
    if V.kind == "affine":
        rel = x - V.base
        perp = rel - V.basis.T @ (V.basis @ rel)
        return DistanceResult(float(np.linalg.norm(perp)), False, True, x - perp)
    # second start is jittered to escape symmetric critical points
    jitter = np.cos(np.arange(1, V.dim + 1) * 1.3247179572447458)
    jitter = 1e-3 * (1.0 + np.linalg.norm(x)) * jitter / np.linalg.norm(jitter)
    best_y, best_d = None, math.inf
    for start in (x, x + jitter):
        y, ok = _project_to_zero_set(V, start)
        if not ok:
            continue
        y = _slide_to_nearest(V, x, y)
        d = float(np.linalg.norm(y - x))
        if d < best_d:
            best_y, best_d = y, d
    if best_y is None:
        return DistanceResult(math.inf, True, False, None)
    return DistanceResult(best_d, True, True, best_y)


def distance_to(V: Variety, x) -> float:
    """Distance to the variety; exact for affine, an upper bound otherwise."""
    return distance_info(V, x).value


def tangent_space(V: Variety, z) -> np.ndarray:
    """Orthonormal basis of the tangent space at a point z on V."""
    z = np.asarray(z, dtype=float)
    if distance_to(V, z) > ON_VARIETY_TOL:
        raise AlgebraicError("point is not on the variety")
    if V.kind == "affine":
        return V.basis
    J = poly_jacobian(V.polys, z)
    u, s, vt = np.linalg.svd(J)
    if s.min(initial=math.inf) < TRANSVERSALITY_TOL:
        raise DegeneratePointError("gradients fail transversality at this point")
    return vt[len(V.polys):]


def sample_points(V: Variety, ball: Ball, count: int, seed: int = 0) -> np.ndarray:
    """Points of V inside `ball` (best effort for polynomial varieties)."""
    if V.kind == "affine":
        rng = rng_for(seed, "variety-samples")
        params = rng.uniform(-ball.radius, ball.radius, size=(4 * count, V.m))
        rel = ball.c - V.base
        foot = V.base + V.basis.T @ (V.basis @ rel)
        pts = foot + params @ V.basis
        keep = ball.contains(pts)
        return pts[keep][:count]
    rng = rng_for(seed, "variety-samples-poly")
    raw = ball.c + rng.uniform(-ball.radius, ball.radius, size=(4 * count, V.dim))
    out = []
    for x in raw:
        y, ok = _project_to_zero_set(V, x)
        if ok and ball.contains(y[None, :])[0]:
            out.append(y)
        if len(out) >= count:
            break
    return np.array(out) if out else np.zeros((0, V.dim))


# ---------------------------------------------------------------------------
# tangency


@dataclass
class TangencyReport:
    tube_id: int
    condition_i: bool
    condition_ii: bool
    worst_angle: float
    c_tang: float
    witness_pairs: int = 0

    @property
    def is_tangent(self) -> bool:
        return self.condition_i and self.condition_ii


def is_tangent_tube(
    tube: Tube,
    V: Variety,
    ball: Ball,
    c_tang: float = 1.0,
    tube_id: int = -1,
    samples_per_unit: int = 64,
) -> TangencyReport:
    """Tangency of a tube to V inside `ball`.

    Condition i: the tube meets ball & the delta-neighborhood of V
    (tested on core-line samples).  Condition ii: wherever a tube point
    sits within 8 delta of a nearby variety point z in the doubled ball,
    the direction makes angle <= c_tang * delta / r with T_z V.  If no
    witness pair exists the quantified condition holds vacuously.
    """
    if tube.delta >= ball.radius:
        raise AlgebraicError("tangency needs delta < r")
    count = max(16, int(samples_per_unit))
    core = tube.core_points(count)
    infos = [distance_info(V, p) for p in core]
    dists = np.array([info.value for info in infos])
    in_ball = ball.contains(core)
    condition_i = bool(np.any(in_ball & (dists <= tube.delta)))

    big = Ball(ball.center, 2.0 * ball.radius)
    worst = 0.0
    witnesses = 0
    threshold = c_tang * tube.delta / ball.radius
    condition_ii = True
    for p, d, info in zip(core, dists, infos):
        if d > 8.0 * tube.delta:
            continue
        z = info.witness
        if z is None or not big.contains(z[None, :])[0]:
            continue
        try:
            tz = tangent_space(V, z)
        except DegeneratePointError:
            condition_ii = False
            worst = math.pi / 2
            continue
        ang = angle_to_subspace(tube.direction, tz)
        witnesses += 1
        worst = max(worst, ang)
        if ang > threshold:
            condition_ii = False
    return TangencyReport(tube_id, condition_i, condition_ii, worst, c_tang, witnesses)


# ---------------------------------------------------------------------------
# occupancy and volume


def _quadratic_sublevel_interval(a, b, c):
    """{t : a t^2 + b t + c <= 0} for a >= 0, as an interval or None."""
    if a < 1e-14:
        if abs(b) < 1e-14:
            return (-math.inf, math.inf) if c <= 0 else None
        t = -c / b
        return (-math.inf, t) if b > 0 else (t, math.inf)
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    root = math.sqrt(disc)
    return ((-b - root) / (2 * a), (-b + root) / (2 * a))


def tube_occupancy(tube: Tube, ball: Ball, V: Variety, rho: float) -> float:
    """Fraction of the core line lying in ball & the rho-neighborhood of V."""
    if rho < tube.delta:
        raise AlgebraicError("occupancy needs rho >= delta")
    if V.kind == "affine":
        d, c = tube.direction, tube.center
        rel = c - ball.c
        iv_ball = _quadratic_sublevel_interval(
            1.0, 2.0 * float(rel @ d), float(rel @ rel) - ball.radius ** 2
        )
        if iv_ball is None:
            return 0.0
        relv = c - V.base
        perp_d = d - V.basis.T @ (V.basis @ d)
        perp_c = relv - V.basis.T @ (V.basis @ relv)
        iv_slab = _quadratic_sublevel_interval(
            float(perp_d @ perp_d),
            2.0 * float(perp_c @ perp_d),
            float(perp_c @ perp_c) - rho ** 2,
        )
        if iv_slab is None:
            return 0.0
        lo = max(-0.5, iv_ball[0], iv_slab[0])
        hi = min(0.5, iv_ball[1], iv_slab[1])
        return max(0.0, hi - lo)
    core = tube.core_points(128)
    ok = ball.contains(core)
    ok &= np.array([distance_to(V, p) <= rho for p in core])
    return float(np.mean(ok))


@dataclass
class VolumeEstimate:
    volume: float
    stderr: float
    ratio: float
    samples: int


def wongkew_volume(
    V: Variety, lam: float, rho: float, center, samples: int, seed: int
) -> VolumeEstimate:
    """Monte-Carlo |N_rho V  intersect  B_lam| with its ratio to lam^m rho^(n-m)."""
    if not (0.0 < rho <= lam <= 1.0):
        raise AlgebraicError("need 0 < rho <= lambda <= 1")
    if samples < 1000:
        raise AlgebraicError("need at least 10^3 samples")
    center = np.asarray(center, dtype=float)
    n = V.dim
    rng = rng_for(seed, f"wongkew-{V.kind}-{V.m}")
    pts = center + rng.uniform(-lam, lam, size=(samples, n))
    inside = np.linalg.norm(pts - center, axis=1) <= lam
    if V.kind == "affine":
        rel = pts - V.base
        perp = rel - (rel @ V.basis.T) @ V.basis
        near = np.linalg.norm(perp, axis=1) <= rho
    else:
        near = np.zeros(samples, dtype=bool)
        idx = np.nonzero(inside)[0]
        for i in idx:
            vals = np.array([abs(P(pts[i])) for P in V.polys])
            grads = poly_jacobian(V.polys, pts[i])
            gn = np.linalg.norm(grads, axis=1)
            # cheap reject: first-order lower bound on the distance
            if np.any(vals > rho * np.maximum(gn, 1e-9) * 4.0):
                continue
            near[i] = distance_to(V, pts[i]) <= rho
    hits = inside & near
    f = float(np.mean(hits))
    cube = (2.0 * lam) ** n
    vol = f * cube
    stderr = cube * math.sqrt(max(f * (1.0 - f), 0.0) / samples)
    ratio = vol / (lam ** V.m * rho ** (n - V.m))
    return VolumeEstimate(vol, stderr, ratio, samples)
