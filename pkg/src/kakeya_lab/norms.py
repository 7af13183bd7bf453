"""Rasterized tube-count fields, L^p norms, and broad norms.

The broad norm of a family over a region is a lattice sum, over balls of
radius delta centered on a delta-spaced grid, of ball weights times a
per-ball quantity mu.  mu minimizes, over A-tuples of candidate
subspaces, the largest local L^p mass among direction caps making angle
more than beta with every chosen subspace.  Because the minimization
runs over a finite candidate list instead of the full Grassmannian, the
result is an upper bound for the continuum quantity; that is the
conservative side for every check made here.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import (
    Ball,
    Cap,
    GeometryError,
    TubeFamily,
    bucket_by_cap,
    cap_decomposition,
    orthonormal_basis,
    rescale_cap_map,
    sphere_angle,
    tube_volume,
)
from .algebraic import Variety, is_tangent_tube, sample_points, tangent_space


class NormsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid fields


@dataclass
class GridField:
    box_lo: np.ndarray
    h: float
    values: np.ndarray

    def __post_init__(self):
        self.box_lo = np.asarray(self.box_lo, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def box_hi(self) -> np.ndarray:
        return self.box_lo + self.h * np.array(self.values.shape)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.box_lo[axis] + (np.arange(self.values.shape[axis]) + 0.5) * self.h

    def total_mass(self) -> float:
        return float(self.h ** self.dim * self.values.sum())

    def scaled(self, c: float) -> "GridField":
        return GridField(self.box_lo, self.h, c * self.values)

    def to_binary(self) -> bytes:
        n = self.dim
        head = struct.pack("<q", n)
        head += struct.pack(f"<{2 * n}d", *self.box_lo, *self.box_hi)
        head += struct.pack("<d", self.h)
        head += struct.pack(f"<{n}q", *self.values.shape)
        return head + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_binary(cls, blob: bytes) -> "GridField":
        (n,) = struct.unpack_from("<q", blob, 0)
        off = 8
        box = struct.unpack_from(f"<{2 * n}d", blob, off)
        off += 16 * n
        (h,) = struct.unpack_from("<d", blob, off)
        off += 8
        shape = struct.unpack_from(f"<{n}q", blob, off)
        off += 8 * n
        values = np.frombuffer(blob, dtype="<f8", offset=off).reshape(shape).copy()
        return cls(np.array(box[:n]), h, values)

    def csv_slice(self, axis: int = 0, index: int = 0) -> str:
        """2-D slice as CSV rows (first two remaining axes)."""
        vals = np.take(self.values, index, axis=axis) if self.dim > 2 else self.values
        vals = np.atleast_2d(vals)
        lines = [",".join(f"{v:.17g}" for v in row) for row in vals]
        return "\n".join(lines) + "\n"


def default_box(family: TubeFamily, h: float):
    lo, hi = family.bounding_box(pad=2 * h)
    return lo, hi


def rasterize(family: TubeFamily, h: float, box=None) -> GridField:
    """Tube-count field: value at a cell is the number of tubes whose
    membership test passes at the cell center."""
    if h > family.delta / 2 + 1e-15:
        raise NormsError(f"need h <= delta/2 (h={h}, delta={family.delta})")
    if box is None:
        box = default_box(family, h)
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    extents = np.maximum(1, np.ceil((hi - lo) / h - 1e-12).astype(int))
    values = np.zeros(tuple(extents))
    for idx, tube in enumerate(family.tubes):
        t_lo, t_hi = tube.bounding_box()
        if np.any(t_lo < lo - 1e-9) or np.any(t_hi > lo + extents * h + 1e-9):
            raise NormsError(f"box too small for tube {idx}: bbox {t_lo}..{t_hi}")
        _accumulate_tube(values, lo, h, tube)
    return GridField(lo, h, values)


def _accumulate_tube(values, lo, h, tube):
    t_lo, t_hi = tube.bounding_box()
    i_lo = np.maximum(0, np.floor((t_lo - lo) / h).astype(int))
    i_hi = np.minimum(values.shape, np.ceil((t_hi - lo) / h).astype(int))
    if np.any(i_lo >= i_hi):
        return
    axes = [
        lo[d] + (np.arange(i_lo[d], i_hi[d]) + 0.5) * h for d in range(len(lo))
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    mask = tube.contains(pts).reshape([len(a) for a in axes])
    window = tuple(slice(i_lo[d], i_hi[d]) for d in range(len(lo)))
    values[window] += mask


def lp_norm(fld: GridField, p: float) -> float:
    if p < 1:
        raise NormsError("need p >= 1")
    return float((fld.h ** fld.dim * np.sum(np.abs(fld.values) ** p)) ** (1.0 / p))


def kakeya_ratio(family: TubeFamily, p: float, h: float = None) -> float:
    """Measured constant in the maximal inequality at a single scale:
    |sum chi_T|_p / (delta^{-(n-1-n/p)} (sum |T|)^{1/p})."""
    if not family.separated:
        raise NormsError("kakeya_ratio expects a direction-separated family")
    n, delta = family.dim, family.delta
    h = delta / 4.0 if h is None else h
    fld = rasterize(family, h)
    numerator = lp_norm(fld, p)
    denom = delta ** -(n - 1 - n / p) * family.total_volume() ** (1.0 / p)
    return numerator / denom


# ---------------------------------------------------------------------------
# broad norms


@dataclass
class BroadConfig:
    k: int
    A: int
    beta: float
    p: float
    candidate_subspaces: list  # orthonormal (k-1, n) row bases
    delta: float = None  # ball scale; defaults to the family delta

    def __post_init__(self):
        if self.k < 2 or self.A < 1 or self.p < 1:
            raise NormsError("need k >= 2, A >= 1, p >= 1")
        if not self.candidate_subspaces:
            raise NormsError("candidate subspace list must be nonempty")
        self.candidate_subspaces = [
            np.atleast_2d(np.asarray(v, dtype=float)) for v in self.candidate_subspaces
        ]


def default_candidates(n: int, k: int, beta: float, extra=()) -> list:
    """Spans of (k-1)-subsets of cap centers, plus injected extras."""
    caps = cap_decomposition(n, beta)
    centers = [c.unit for c in caps]
    cands = []
    if k == 2:
        for c in centers:
            cands.append(orthonormal_basis([c]))
    else:
        import itertools

        for combo in itertools.combinations(range(len(centers)), k - 1):
            try:
                cands.append(orthonormal_basis([centers[i] for i in combo]))
            except GeometryError:
                continue
    cands.extend(np.atleast_2d(np.asarray(e, dtype=float)) for e in extra)
    return _dedupe_subspaces(cands)


def _dedupe_subspaces(cands) -> list:
    out, seen = [], set()
    for b in cands:
        # canonical signature: projection matrix rounded
        proj = b.T @ b
        key = tuple(np.round(proj, 9).ravel())
        if key not in seen:
            seen.add(key)
            out.append(b)
    return out


def cap_subspace_angle(cap: Cap, basis: np.ndarray) -> float:
    """Infimum of angles between cap vectors and subspace vectors."""
    v = cap.unit
    proj = np.linalg.norm(basis @ v)
    center_angle = float(np.arccos(np.clip(proj, 0.0, 1.0)))
    return max(0.0, center_angle - cap.radius)


def minimize_mu(masses: dict, kill: np.ndarray, A: int) -> float:
    """Exact min over A-tuples of candidates of the largest surviving cap
    mass.  Branch-and-bound over caps sorted by mass: the top cap either
    survives (giving its mass) or is killed by one of the candidates that
    cover it, deduplicated by their effect on the remaining caps."""
    if not masses:
        return 0.0
    order = sorted(masses, key=lambda c: (-masses[c], c))
    mass_vec = [masses[c] for c in order]
    n_cand = kill.shape[1]
    memo: dict = {}

    def best(alive: tuple, a_rem: int) -> float:
        if not alive:
            return 0.0
        key = (alive, a_rem)
        if key in memo:
            return memo[key]
        top = alive[0]
        value = mass_vec[top]
        if a_rem > 0:
            seen = set()
            for cand in range(n_cand):
                if not kill[order[top], cand]:
                    continue
                rest = tuple(i for i in alive if not kill[order[i], cand])
                if rest in seen:
                    continue
                seen.add(rest)
                value = min(value, best(rest, a_rem - 1))
                if value == 0.0:
                    break
        memo[key] = value
        return value

    return best(tuple(range(len(order))), A)


class BroadNormEngine:
    """Shared machinery for broad-norm evaluations over one grid.

    Rasterizes each direction cap's subfamily lazily per ball, walks the
    delta-ball lattice, and minimizes mu exactly over candidate tuples by
    a branch-and-bound over the caps sorted by local mass.
    """

    def __init__(self, family: TubeFamily, cfg: BroadConfig, box=None, h=None):
        self.family = family
        self.cfg = cfg
        self.delta = cfg.delta if cfg.delta is not None else family.delta
        self.h = self.delta / 4.0 if h is None else h
        if box is None:
            box = default_box(family, self.h) if family.tubes else ((0, 0), (1, 1))
        self.lo = np.asarray(box[0], dtype=float)
        self.hi = np.asarray(box[1], dtype=float)
        self.n = family.dim
        self.caps = cap_decomposition(self.n, cfg.beta)
        self.tube_cap = np.full(len(family.tubes), -1, dtype=int)
        if family.tubes:
            centers = np.stack([c.unit for c in self.caps])
            radii = np.array([c.radius for c in self.caps])
            angles = np.arccos(np.clip(family.directions @ centers.T, -1.0, 1.0))
            covered = angles <= radii[None, :] + 1e-12
            for i in range(len(family.tubes)):
                hits = np.nonzero(covered[i])[0]
                if hits.size == 0:
                    raise NormsError(f"tube {i} not covered by any cap")
                self.tube_cap[i] = int(hits[0])
        # kill matrix: candidate a kills cap c when angle(cap, V_a) <= beta
        self.kill = np.array(
            [
                [cap_subspace_angle(c, v) <= cfg.beta for v in cfg.candidate_subspaces]
                for c in self.caps
            ],
            dtype=bool,
        )
        self._build_lattice()
        self._index_tubes()

    def _build_lattice(self):
        d = self.delta
        counts = np.maximum(1, np.ceil((self.hi - self.lo) / d - 1e-12).astype(int))
        self.ball_counts = counts
        grids = [self.lo[i] + (np.arange(counts[i]) + 0.5) * d for i in range(self.n)]
        mesh = np.meshgrid(*grids, indexing="ij")
        self.ball_centers = np.stack([m.ravel() for m in mesh], axis=-1)

    def _index_tubes(self):
        self.ball_tubes = [[] for _ in range(len(self.ball_centers))]
        margin = 2.0 * self.delta + self.h
        for ti, tube in enumerate(self.family.tubes):
            dist = tube.core_distance(self.ball_centers)
            for bi in np.nonzero(dist <= margin)[0]:
                self.ball_tubes[bi].append(ti)

    def _ball_cells(self, center):
        """Grid cell centers within `delta` of the ball center (cells may
        extend past the field box; indices can then be out of range)."""
        d = self.delta
        i_lo = np.floor((center - d - self.lo) / self.h).astype(int)
        i_hi = np.ceil((center + d - self.lo) / self.h).astype(int)
        axes = [
            self.lo[k] + (np.arange(i_lo[k], i_hi[k]) + 0.5) * self.h
            for k in range(self.n)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        keep = np.linalg.norm(pts - center, axis=1) <= d
        idx = np.stack(
            [m.ravel() for m in np.meshgrid(*[np.arange(i_lo[k], i_hi[k]) for k in range(self.n)], indexing="ij")],
            axis=-1,
        )[keep]
        return pts[keep], idx

    def ball_cap_masses(self, bi: int, pts=None):
        """Per-cap local L^p masses h^n sum v^p over cells in ball bi."""
        tubes = self.ball_tubes[bi]
        if not tubes:
            return {}
        if pts is None:
            pts, _ = self._ball_cells(self.ball_centers[bi])
        if len(pts) == 0:
            return {}
        per_cap_values: dict = {}
        for ti in tubes:
            inside = self.family.tubes[ti].contains(pts)
            if not inside.any():
                continue
            ci = int(self.tube_cap[ti])
            per_cap_values.setdefault(ci, np.zeros(len(pts)))
            per_cap_values[ci] += inside
        p = self.cfg.p
        return {
            ci: float(self.h ** self.n * np.sum(vals ** p))
            for ci, vals in per_cap_values.items()
            if vals.any()
        }

    def mu(self, bi: int) -> float:
        return minimize_mu(self.ball_cap_masses(bi), self.kill, self.cfg.A)

    @staticmethod
    def _region_fraction(pts, idx, region_mask=None, region_ball: Ball = None) -> float:
        total = len(pts)
        if total == 0:
            return 0.0
        if region_mask is not None:
            valid = np.all(idx >= 0, axis=1) & np.all(idx < region_mask.shape, axis=1)
            inside = np.zeros(total, dtype=bool)
            inside[valid] = region_mask[tuple(idx[valid].T)]
        elif region_ball is not None:
            inside = region_ball.contains(pts)
        else:
            inside = np.ones(total, dtype=bool)
        return float(np.count_nonzero(inside)) / total

    def ball_weight(self, bi: int, region_mask=None, region_ball: Ball = None) -> float:
        pts, idx = self._ball_cells(self.ball_centers[bi])
        return self._region_fraction(pts, idx, region_mask, region_ball)

    def norm(self, region_mask=None, region_ball: Ball = None) -> float:
        total = 0.0
        for bi in range(len(self.ball_centers)):
            if not self.ball_tubes[bi]:
                continue
            pts, idx = self._ball_cells(self.ball_centers[bi])
            w = self._region_fraction(pts, idx, region_mask, region_ball)
            if w == 0.0:
                continue
            m = self._minimize(self.ball_cap_masses(bi, pts=pts))
            if m > 0.0:
                total += w * m
        return total ** (1.0 / self.cfg.p)


def k_broad_norm(family: TubeFamily, region, cfg: BroadConfig, box=None, h=None) -> float:
    """Broad norm of the family over `region` (a Ball, (lo, hi) box, or
    a boolean mask aligned with the engine grid)."""
    if not family.tubes:
        return 0.0
    engine = BroadNormEngine(family, cfg, box=box, h=h)
    if isinstance(region, Ball):
        return engine.norm(region_ball=region)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return engine.norm(region_mask=region)
    if region is None:
        return engine.norm()
    # rectangular region: mask cells whose centers fall inside the box
    lo, hi = (np.asarray(b, dtype=float) for b in region)
    shape = np.maximum(1, np.ceil((engine.hi - engine.lo) / engine.h - 1e-12).astype(int))
    mask = np.ones(tuple(shape), dtype=bool)
    axes = [engine.lo[i] + (np.arange(shape[i]) + 0.5) * engine.h for i in range(engine.n)]
    for i in range(engine.n):
        sel = (axes[i] >= lo[i]) & (axes[i] <= hi[i])
        mask = mask & sel.reshape([-1 if j == i else 1 for j in range(engine.n)])
    return engine.norm(region_mask=mask)


def broad_mu(family: TubeFamily, ball: Ball, cfg: BroadConfig) -> float:
    """mu for a single delta-ball (the ball radius must equal family delta)."""
    if not family.tubes:
        return 0.0
    if abs(ball.radius - family.delta) > 1e-12:
        raise NormsError("broad_mu expects a ball of radius delta")
    if cfg.A > len(cfg.candidate_subspaces):
        raise NormsError("A exceeds the candidate subspace count")
    pad = 2.0 * family.delta
    box = (ball.c - pad, ball.c + pad)
    engine = BroadNormEngine(family, cfg, box=box)
    dist = np.linalg.norm(engine.ball_centers - ball.c, axis=1)
    bi = int(np.argmin(dist))
    engine.ball_centers[bi] = ball.c
    engine._index_tubes()
    return engine.mu(bi)


def vanishing_check(
    family: TubeFamily,
    variety: Variety,
    ball: Ball,
    cfg: BroadConfig,
    eps0: float = 0.1,
    c_tang: float = 1.0,
) -> bool:
    """True iff the broad norm over the ball is exactly zero for a family
    tangent to a variety of dimension <= k-1.

    Preconditions are enforced: every tube must pass the tangency test,
    the ball must not be too small relative to delta, and tangent-space
    candidates sampled along the variety are injected into the config.
    """
    if variety.m > cfg.k - 1:
        raise NormsError("variety dimension must be at most k-1")
    if ball.radius <= family.delta ** (1.0 - eps0):
        raise NormsError("ball radius must exceed delta^(1-eps0)")
    for i, tube in enumerate(family.tubes):
        rep = is_tangent_tube(tube, variety, ball, c_tang=c_tang, tube_id=i)
        if not rep.is_tangent:
            raise NormsError(f"tube {i} fails the tangency precondition")
    extra = []
    zs = sample_points(variety, Ball(ball.center, 2 * ball.radius), 16, seed=0)
    for z in zs:
        basis = tangent_space(variety, z)
        if basis.shape[0] == cfg.k - 1:
            extra.append(basis)
        elif basis.shape[0] < cfg.k - 1:
            extra.append(_extend_basis(basis, cfg.k - 1, family.dim))
    cfg2 = BroadConfig(
        cfg.k,
        cfg.A,
        cfg.beta,
        cfg.p,
        _dedupe_subspaces(list(cfg.candidate_subspaces) + extra),
        delta=cfg.delta,
    )
    return k_broad_norm(family, ball, cfg2) == 0.0


def _extend_basis(basis: np.ndarray, target: int, n: int) -> np.ndarray:
    rows = list(basis)
    for i in range(n):
        if len(rows) == target:
            break
        e = np.zeros(n)
        e[i] = 1.0
        cand = np.vstack(rows + [e])
        if np.linalg.matrix_rank(cand, tol=1e-10) == len(rows) + 1:
            rows.append(e)
    return orthonormal_basis(rows)


@dataclass
class SplitResult:
    broad_term: float
    narrow: list  # (cap, rescaled TubeFamily)
    lp_value: float
    narrow_sum: float
    measured_constant: float


def broad_narrow_split(family: TubeFamily, cfg: BroadConfig, h: float = None) -> SplitResult:
    """Broad/narrow decomposition with the rescaled per-cap subproblems.

    Refuses exponents below the passage threshold (n-k+2)/(n-k+1).
    Verifies numerically that

        |f|_p^p <= C (beta^{-(n-1)p} broad + beta^{-(k-2)(p-1)} sum narrow)

    and reports the measured constant C.
    """
    n, p, beta, k = family.dim, cfg.p, cfg.beta, cfg.k
    gate = (n - k + 2) / (n - k + 1)
    if p < gate - 1e-12:
        raise NormsError(f"p={p} below the broad-narrow threshold {gate}")
    h = family.delta / 4.0 if h is None else h
    fld = rasterize(family, h)
    lp_p = lp_norm(fld, p) ** p
    box = (fld.box_lo, fld.box_hi)
    broad = k_broad_norm(family, None, cfg, box=box, h=h) ** p
    caps = cap_decomposition(n, beta)
    buckets = bucket_by_cap(family, caps)
    narrow = []
    narrow_sum = 0.0
    for cap, sub in buckets.items():
        narrow_sum += lp_norm(rasterize(sub, h, box=box), p) ** p
        narrow.append((cap, rescale_cap_map(cap).map_family(sub)))
    bound = beta ** (-(n - 1) * p) * broad + beta ** (-(k - 2) * (p - 1)) * narrow_sum
    measured = lp_p / bound if bound > 0 else math.inf
    return SplitResult(broad, narrow, lp_p, narrow_sum, measured)
