"""Recursive partitioning of broad norms: the dimensional-reduction pass
and the driver that iterates it to a final decomposition.

The dimensional-reduction pass (run_alg1) repeatedly partitions each
cell's mass: while cellular outcomes dominate it halves the scale and
recurses into shrunken cells; when algebraic outcomes dominate it covers
the partition wall with balls and splits each ball's tubes into
wall-tangent and transversal parts, stopping when the tangent side
carries the norm.  The driver (run_alg2) covers space at the coarse
scale, runs the pass per ball, and on tiny-dominant termination
evaluates the resulting one-step comparison of the global broad norm
against the final cells (the first key estimate), recording measured
ratios for every inequality the construction promises.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .algebraic import Variety, is_tangent_tube, plane_variety
from .geometry import Ball, TubeFamily
from .norms import (
    BroadConfig,
    BroadNormEngine,
    GridField,
    default_candidates,
    minimize_mu,
)
from .partition import PartitionError, cellular_or_algebraic


class StructureError(ValueError):
    pass


class DegenerateFamilyError(StructureError):
    """The family's broad norm vanishes: nothing to decompose."""


def sigma_step(r: float, letter: str, eps0: float) -> float:
    """One scale update: halving for a cellular step, r^(1+eps0) for an
    algebraic step."""
    if not (0.0 < r < 1.0):
        raise StructureError("need r in (0,1)")
    if not (0.0 < eps0 < 0.25):
        raise StructureError("need eps0 in (0, 1/4)")
    if letter == "c":
        return r / 2.0
    if letter == "a":
        return r ** (1.0 + eps0)
    raise StructureError(f"letter must be 'a' or 'c', got {letter!r}")


def word_scale(word: str, r0: float, eps0: float) -> float:
    r = r0
    for letter in word:
        r = sigma_step(r, letter, eps0)
    return r


def coefficient(word: str, d: int, n: int, eps0: float) -> float:
    """Normalizer d^(#c eps0) d^(#a (n + eps0)) for the step properties."""
    n_c = word.count("c")
    n_a = word.count("a")
    return d ** (n_c * eps0) * d ** (n_a * (n + eps0))


def a_parameter(word: str, A: int) -> int:
    """2^(-#a) A, clamped at 1 when too many algebraic steps occur."""
    return max(1, A >> word.count("a"))


@dataclass
class StructureConfig:
    k: int = 2
    A: int = 4
    beta: float = 0.125
    p: float = 2.0
    eps0: float = 0.1
    d: int = 4
    tol: float = 0.25
    c_tang_const: float = 10.0
    c_alg: float = 4.0
    budget: int = 64
    candidates: list = None
    _caps: list = field(default=None, repr=False)
    _kill: np.ndarray = field(default=None, repr=False)

    def broad_cfg(self, n: int, A_j: int, delta: float, extra=()) -> BroadConfig:
        if self.candidates is None:
            self.candidates = default_candidates(n, self.k, self.beta)
        cands = list(self.candidates) + [
            np.atleast_2d(np.asarray(e, dtype=float)) for e in extra
        ]
        return BroadConfig(self.k, A_j, self.beta, self.p, cands, delta=delta)

    def cap_tables(self, n: int):
        """Cached cap decomposition and cap-vs-candidate kill matrix."""
        if self._caps is None:
            from .geometry import cap_decomposition
            from .norms import cap_subspace_angle

            if self.candidates is None:
                self.candidates = default_candidates(n, self.k, self.beta)
            self._caps = cap_decomposition(n, self.beta)
            self._kill = np.array(
                [
                    [cap_subspace_angle(c, v) <= self.beta for v in self.candidates]
                    for c in self._caps
                ],
                dtype=bool,
            )
        return self._caps, self._kill


@dataclass
class CellState:
    offset: np.ndarray  # grid index offset of the cropped mask
    mask: np.ndarray  # boolean crop
    tubes: list  # indices into the run's family

    def cell_count(self) -> int:
        return int(self.mask.sum())


@dataclass
class Ensemble:
    step: int
    word: str
    r: float
    cells: list  # CellState
    A_j: int
    C_j: float
    d: int


@dataclass
class StepStats:
    word: str
    r: float
    n_cells: int
    branch: str
    ratio_i: float
    ratio_ii: float
    ratio_iii: float
    max_diameter: float


@dataclass
class TangencyData:
    wall_texts: list  # serialized wall polynomials
    balls: list  # (center tuple, radius)
    tube_counts: list
    norm_sum: float


@dataclass
class RunReport:
    stop: str  # tiny | tang | budget | contradiction
    steps: list
    fitted: dict
    tang: TangencyData = None
    final_cells: list = None
    word: str = ""
    lhs_norm: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "stop": self.stop,
            "word": self.word,
            "lhs_norm": self.lhs_norm,
            "fitted": self.fitted,
            "steps": [
                {
                    "word": s.word,
                    "r": s.r,
                    "cells": s.n_cells,
                    "branch": s.branch,
                    "ratio_i": s.ratio_i,
                    "ratio_ii": s.ratio_ii,
                    "ratio_iii": s.ratio_iii,
                    "max_diameter": s.max_diameter,
                }
                for s in self.steps
            ],
            "extras": self.extras,
        }
        if self.tang is not None:
            payload["tang"] = {
                "balls": self.tang.balls,
                "tube_counts": self.tang.tube_counts,
                "norm_sum": self.tang.norm_sum,
                "walls": self.tang.wall_texts,
            }
        return json.dumps(payload, sort_keys=True, indent=2, default=float)


# ---------------------------------------------------------------------------
# grid helpers


@dataclass
class Grid:
    lo: np.ndarray
    h: float
    shape: tuple

    def mask_for_ball(self, ball: Ball) -> np.ndarray:
        axes = [self.lo[i] + (np.arange(self.shape[i]) + 0.5) * self.h for i in range(len(self.shape))]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        return np.linalg.norm(pts - ball.c, axis=-1) <= ball.radius

    def crop_points(self, offset, shape):
        axes = [
            self.lo[i] + (np.arange(offset[i], offset[i] + shape[i]) + 0.5) * self.h
            for i in range(len(self.shape))
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def make_grid(family: TubeFamily, ball: Ball, h: float) -> Grid:
    lo_f, hi_f = family.bounding_box(pad=2 * h) if family.tubes else (ball.c - ball.radius, ball.c + ball.radius)
    lo = np.minimum(lo_f, ball.c - ball.radius - 2 * h)
    hi = np.maximum(hi_f, ball.c + ball.radius + 2 * h)
    shape = tuple(np.maximum(1, np.ceil((hi - lo) / h - 1e-12).astype(int)))
    return Grid(lo, h, shape)


def _crop(mask: np.ndarray):
    nz = np.nonzero(mask)
    if len(nz[0]) == 0:
        return None, None
    offset = np.array([int(v.min()) for v in nz])
    stop = np.array([int(v.max()) + 1 for v in nz])
    window = tuple(slice(o, s) for o, s in zip(offset, stop))
    return offset, mask[window].copy()


def _tubes_meeting(family: TubeFamily, tube_ids, grid: Grid, offset, mask) -> list:
    pts = grid.crop_points(offset, mask.shape)[mask.ravel()]
    if len(pts) == 0:
        return []
    out = []
    for ti in tube_ids:
        if family.tubes[ti].contains(pts).any():
            out.append(ti)
    return out


def _cell_field(family: TubeFamily, tube_ids, grid: Grid, offset, mask) -> GridField:
    pts = grid.crop_points(offset, mask.shape)
    values = np.zeros(pts.shape[0])
    for ti in tube_ids:
        values += family.tubes[ti].contains(pts)
    values[~mask.ravel()] = 0.0
    lo = grid.lo + offset * grid.h
    return GridField(lo, grid.h, values.reshape(mask.shape))


@lru_cache(maxsize=8)
def _ball_template(n: int) -> np.ndarray:
    """Relative cell indices of a radius-(4h) ball on the h-grid when the
    ball center sits on a grid corner."""
    axis = np.arange(-5, 5)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    rel = np.stack([m.ravel() for m in mesh], axis=-1)
    return rel[np.linalg.norm(rel + 0.5, axis=1) <= 4.0]


def _assign_caps(family: TubeFamily, caps) -> np.ndarray:
    if not family.tubes:
        return np.zeros(0, dtype=int)
    centers = np.stack([c.unit for c in caps])
    radii = np.array([c.radius for c in caps])
    angles = np.arccos(np.clip(family.directions @ centers.T, -1.0, 1.0))
    covered = angles <= radii[None, :] + 1e-12
    out = np.full(len(family.tubes), -1, dtype=int)
    for i in range(len(family.tubes)):
        hits = np.nonzero(covered[i])[0]
        if hits.size == 0:
            raise StructureError(f"tube {i} not covered by any direction cap")
        out[i] = int(hits[0])
    return out


def _cell_bl_norm(family, tube_ids, grid, offset, mask, cfg: StructureConfig, A_j, delta, tube_cap=None):
    """Broad norm of the subfamily over a masked grid region.

    Walks a delta-spaced ball lattice aligned with the grid (delta must
    equal 4h).  Per-cap local masses are accumulated with one broadcasted
    membership evaluation per tube over (its nearby balls) x (the shared
    in-ball cell template); only the per-ball tuple minimization is left
    as a scalar loop."""
    if not tube_ids or not mask.any():
        return 0.0
    n = family.dim
    h = grid.h
    if abs(delta / h - 4.0) > 1e-9:
        raise StructureError("masked broad norms assume h = delta / 4")
    caps, kill = cfg.cap_tables(n)
    if tube_cap is None:
        tube_cap = _assign_caps(family, caps)
    rel = _ball_template(n)
    rel_pts = (rel + 0.5) * h
    R = len(rel)
    shape = np.array(mask.shape)
    lattice_counts = np.ceil((shape + 12) / 4.0).astype(int)
    idx_mesh = np.meshgrid(*[np.arange(c) for c in lattice_counts], indexing="ij")
    lattice_i = np.stack([m.ravel() for m in idx_mesh], axis=-1)
    bases = offset[None, :] - 6 + 4 * lattice_i
    centers = grid.lo + bases * h

    # region weight of every lattice ball
    local = bases[:, None, :] + rel[None, :, :] - offset[None, None, :]
    ok = np.all(local >= 0, axis=2) & np.all(local < shape[None, None, :], axis=2)
    in_region = np.zeros(ok.shape, dtype=bool)
    if ok.any():
        hits = local[ok]
        in_region[ok] = mask[tuple(hits.T)]
    weights = in_region.sum(axis=1) / R
    active = np.nonzero(weights > 0)[0]
    if len(active) == 0:
        return 0.0
    act_centers = centers[active]

    p = cfg.p
    hn = h ** n
    margin = 2.0 * delta + h
    groups: dict = {}
    for ti in tube_ids:
        groups.setdefault(int(tube_cap[ti]), []).append(ti)
    cap_masses = {}
    ball_has_mass = np.zeros(len(active), dtype=bool)
    for ci, members in sorted(groups.items()):
        counts = np.zeros((len(active), R))
        touched = False
        for ti in members:
            tube = family.tubes[ti]
            near = np.nonzero(tube.core_distance(act_centers) <= margin)[0]
            if len(near) == 0:
                continue
            v = act_centers[near] - tube.center
            ax_c = v @ tube.direction
            ax_r = rel_pts @ tube.direction
            axial = ax_c[:, None] + ax_r[None, :]
            norm2 = (
                np.einsum("ij,ij->i", v, v)[:, None]
                + 2.0 * (v @ rel_pts.T)
                + np.einsum("ij,ij->i", rel_pts, rel_pts)[None, :]
            )
            member = (np.abs(axial) <= 0.5) & (norm2 - axial ** 2 <= delta ** 2 + 1e-15)
            if member.any():
                counts[near] += member
                touched = True
        if touched:
            m = hn * np.sum(counts ** p, axis=1)
            live = m > 0.0
            if live.any():
                cap_masses[ci] = m
                ball_has_mass |= live

    total = 0.0
    for pos in np.nonzero(ball_has_mass)[0]:
        masses = {
            ci: float(m[pos]) for ci, m in cap_masses.items() if m[pos] > 0.0
        }
        if not masses:
            continue
        mu = minimize_mu(masses, kill, A_j)
        if mu > 0.0:
            total += weights[active[pos]] * mu
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# the dimensional-reduction pass


def run_alg1(
    family: TubeFamily,
    variety: Variety,
    ball: Ball,
    delta: float,
    cfg: StructureConfig,
    seed: int,
    grid: Grid = None,
):
    """Run the partition/recurse pass on a family tangent to `variety`
    inside `ball`; returns (ensembles, RunReport)."""
    n = family.dim
    if n != 2:
        raise StructureError("the grid pass is exercised at n = 2 only")
    m = variety.m
    eps0 = cfg.eps0
    r0 = ball.radius
    tiny_scale = delta ** (1.0 - eps0)
    if not (tiny_scale - 1e-12 <= r0 <= delta ** eps0 + 1e-12):
        raise StructureError("need r0 within [delta^(1-eps0), delta^eps0]")
    if grid is None:
        grid = make_grid(family, ball, delta / 4.0)

    offset0, mask0 = _crop(grid.mask_for_ball(ball))
    if mask0 is None:
        raise StructureError("ball does not meet the grid")
    caps, _ = cfg.cap_tables(n)
    tube_cap = _assign_caps(family, caps)
    cells = [CellState(offset0, mask0, list(range(len(family.tubes))))]
    word = ""
    r = r0
    A0 = a_parameter(word, cfg.A)
    lhs = _cell_bl_norm(
        family, cells[0].tubes, grid, offset0, mask0, cfg, A0, delta, tube_cap=tube_cap
    )
    ensembles = [Ensemble(0, word, r, cells, A0, 1.0, cfg.d)]
    steps = []
    report = RunReport(stop="budget", steps=steps, fitted={}, lhs_norm=lhs)
    if lhs == 0.0:
        report.stop = "tiny"
        report.extras["vacuous"] = True
        report.final_cells = cells
        report.fitted = {"ratio_i": 0.0, "ratio_ii": 0.0, "ratio_iii": 0.0}
        return ensembles, report

    def per_cell_norms(cells, A_j):
        return [
            _cell_bl_norm(
                family, c.tubes, grid, c.offset, c.mask, cfg, A_j, delta, tube_cap=tube_cap
            )
            for c in cells
        ]

    stop = "budget"
    cached_norms = [lhs]
    for j in range(cfg.budget):
        if r <= tiny_scale + 1e-15:
            stop = "tiny"
            break
        A_j = a_parameter(word, cfg.A)
        outcomes = []
        for ci, cell in enumerate(cells):
            if not cell.tubes:
                outcomes.append(None)
                continue
            fld = _cell_field(family, cell.tubes, grid, cell.offset, cell.mask)
            if fld.values.sum() <= 0:
                outcomes.append(None)
                continue
            try:
                outcomes.append(
                    cellular_or_algebraic(
                        fld, m, cfg.d, tol=cfg.tol, seed=seed * 1009 + 31 * j + ci,
                        shrink=delta,
                    )
                )
            except PartitionError:
                outcomes.append(None)
        norms_now = cached_norms
        cell_side = sum(
            v for v, o in zip(norms_now, outcomes) if o is not None and o.kind == "cellular"
        )
        alg_side = sum(
            v for v, o in zip(norms_now, outcomes) if o is not None and o.kind == "algebraic"
        )
        if cell_side == 0.0 and alg_side == 0.0:
            report.extras["vacuous"] = True
            stop = "tiny"
            break

        if cell_side >= alg_side:
            letter = "c"
            new_cells = []
            for cell, outcome in zip(cells, outcomes):
                if outcome is None or outcome.kind != "cellular":
                    continue
                part = outcome.partition
                shrunk = part.shrunken_labels(delta)
                keep_ids = {c.id for c in outcome.cells}
                for cid in sorted(keep_ids):
                    sub_mask = np.zeros(grid.shape, dtype=bool)
                    window = tuple(
                        slice(cell.offset[i], cell.offset[i] + cell.mask.shape[i])
                        for i in range(n)
                    )
                    local = (shrunk == cid) & cell.mask
                    if not local.any():
                        continue
                    sub_mask[window] = local
                    off, crop = _crop(sub_mask)
                    tubes = _tubes_meeting(family, cell.tubes, grid, off, crop)
                    if tubes:
                        new_cells.append(CellState(off, crop, tubes))
        else:
            letter = "a"
            r_next = sigma_step(r, "a", eps0)
            ball_radius = max(r_next, tiny_scale)
            new_cells = []
            tang_entries = []
            tang_norm_sum = 0.0
            for cell, outcome in zip(cells, outcomes):
                if outcome is None or outcome.kind != "algebraic":
                    continue
                part = outcome.partition
                wall_variety = outcome.wall
                shrunk_dist_mask = _near_wall(part, delta)
                pts_local = grid.crop_points(cell.offset, cell.mask.shape)
                wall_pts = pts_local[
                    (shrunk_dist_mask & cell.mask).ravel()
                ]
                if len(wall_pts) == 0:
                    continue
                centers = _ball_cover(wall_pts, ball_radius)
                for center in centers:
                    wall_ball = Ball(tuple(center), ball_radius)
                    near = (
                        np.linalg.norm(wall_pts - center, axis=1) <= ball_radius
                    )
                    region_pts = wall_pts[near]
                    if len(region_pts) == 0:
                        continue
                    t_in = [
                        ti
                        for ti in cell.tubes
                        if family.tubes[ti].contains(region_pts).any()
                    ]
                    if not t_in:
                        continue
                    tang, trans = [], []
                    for ti in t_in:
                        rep = is_tangent_tube(
                            family.tubes[ti],
                            wall_variety,
                            wall_ball,
                            c_tang=1.0,
                            tube_id=ti,
                            samples_per_unit=32,
                        )
                        (tang if rep.is_tangent else trans).append(ti)
                    region_mask = np.zeros(grid.shape, dtype=bool)
                    window = tuple(
                        slice(cell.offset[i], cell.offset[i] + cell.mask.shape[i])
                        for i in range(n)
                    )
                    local = shrunk_dist_mask & cell.mask
                    sel = np.zeros(local.shape, dtype=bool)
                    sel[local] = near  # raveled True-order matches wall_pts
                    region_mask[window] = sel
                    off, crop = _crop(region_mask)
                    if off is None:
                        continue
                    if tang:
                        t_norm = _cell_bl_norm(
                            family, tang, grid, off, crop, cfg,
                            max(1, A_j // 2), delta, tube_cap=tube_cap,
                        )
                        tang_norm_sum += t_norm ** cfg.p
                        tang_entries.append((wall_variety, wall_ball, tang))
                    if trans:
                        new_cells.append(CellState(off, crop, trans))
            if cfg.c_tang_const * math.log(cfg.d) * tang_norm_sum >= alg_side and tang_entries:
                report.word = word
                report.stop = "tang"
                report.tang = TangencyData(
                    wall_texts=[f"degree<={cfg.c_alg * cfg.d}" for _ in tang_entries],
                    balls=[(e[1].center, e[1].radius) for e in tang_entries],
                    tube_counts=[len(e[2]) for e in tang_entries],
                    norm_sum=tang_norm_sum,
                )
                report.extras["tang_families"] = [e[2] for e in tang_entries]
                report.extras["tang_ball_radius"] = ball_radius
                stop = "tang"
                break

        word = word + letter
        r = sigma_step(r, letter, eps0)
        A_j = a_parameter(word, cfg.A)
        C_j = coefficient(word, cfg.d, n, eps0)
        cells = new_cells
        ensembles.append(Ensemble(j + 1, word, r, cells, A_j, C_j, cfg.d))
        child_norms = per_cell_norms(cells, A_j)
        cached_norms = child_norms
        rhs = C_j * sum(v ** cfg.p for v in child_norms)
        ratio_i = (lhs ** cfg.p) / rhs if rhs > 0 else math.inf
        total_t = len(family.tubes)
        sum_t = sum(len(c.tubes) for c in cells)
        max_t = max((len(c.tubes) for c in cells), default=0)
        n_c = word.count("c")
        ratio_ii = sum_t / (C_j * cfg.d ** n_c * total_t) if total_t else 0.0
        ratio_iii = (
            max_t / (C_j * cfg.d ** (-n_c * (m - 1)) * total_t) if total_t else 0.0
        )
        max_diam = max(
            (
                float(np.linalg.norm(np.array(c.mask.shape) * grid.h))
                for c in cells
            ),
            default=0.0,
        )
        steps.append(
            StepStats(word, r, len(cells), letter, ratio_i, ratio_ii, ratio_iii, max_diam)
        )
        if not cells:
            stop = "tiny"
            break

    report.stop = stop if report.stop != "tang" else "tang"
    report.word = word
    report.final_cells = cells
    report.fitted = {
        "ratio_i": max((s.ratio_i for s in steps), default=0.0),
        "ratio_ii": max((s.ratio_ii for s in steps), default=0.0),
        "ratio_iii": max((s.ratio_iii for s in steps), default=0.0),
    }
    return ensembles, report


def _near_wall(partition, delta):
    labels = partition.shrunken_labels(delta)
    return (partition.labels < 0) | (labels < 0)


def _ball_cover(points: np.ndarray, radius: float) -> np.ndarray:
    """Greedy cover of the point set by balls of the given radius,
    deterministic in lexicographic point order."""
    order = np.lexsort(points.T[::-1])
    pts = points[order]
    centers = []
    covered = np.zeros(len(pts), dtype=bool)
    for i in range(len(pts)):
        if covered[i]:
            continue
        c = pts[i]
        centers.append(c)
        covered |= np.linalg.norm(pts - c, axis=1) <= radius
    return np.array(centers)


# ---------------------------------------------------------------------------
# the driver


def trivial_variety(n: int) -> Variety:
    """The ambient space as an affine variety (everything is tangent)."""
    return plane_variety(np.zeros(n), np.eye(n))


def corpus_family(delta: float, seed: int, spread: float = 0.1) -> TubeFamily:
    """Direction-separated family with cores drawn toward the unit-square
    center.  Concentrating positions makes many direction caps meet every
    nearby ball, so the broad norm stays alive at desk scale; a family
    with fully spread positions rarely sees more than A caps per ball and
    its broad norm vanishes."""
    from .geometry import Tube, make_direction_separated_family

    base = make_direction_separated_family(2, delta, seed)
    tubes = [
        Tube(2, delta, t.direction, 0.5 + spread * (t.center - 0.5))
        for t in base.tubes
    ]
    return TubeFamily(2, delta, tubes, separated=True)


def run_alg2(
    family: TubeFamily,
    delta: float,
    A: int,
    k: int,
    p_vector,
    eps0: float,
    seed: int,
    cfg: StructureConfig = None,
) -> RunReport:
    """Coarse cover + per-ball reduction passes + final-stage evaluation.

    Exercised at n = 2, k = 2; returns a report with the measured
    first-key-estimate ratio and the count-transfer ratios."""
    n = family.dim
    if n != 2 or k != 2:
        raise StructureError("the driver runs at n = 2, k = 2")
    if not family.tubes:
        raise DegenerateFamilyError("empty family rejected (degenerate)")
    p_vector = list(p_vector)
    if any(a < b - 1e-12 for a, b in zip(p_vector, p_vector[1:])):
        raise StructureError("need p_k >= ... >= p_n")
    p = float(p_vector[-1])
    if cfg is None:
        cfg = StructureConfig(k=k, A=A, eps0=eps0, p=p)
    cfg.p = p
    cfg.A = A
    cfg.k = k
    cfg.eps0 = eps0

    h = delta / 4.0
    lo, hi = family.bounding_box(pad=2 * h)
    grid = Grid(lo, h, tuple(np.maximum(1, np.ceil((hi - lo) / h - 1e-12).astype(int))))
    bcfg = cfg.broad_cfg(n, A, delta)
    engine = BroadNormEngine(family, bcfg, box=(lo, hi), h=h)
    lhs = engine.norm()
    if lhs == 0.0:
        raise DegenerateFamilyError(
            "broad norm vanishes; the family clusters near a low-dimensional set"
        )

    r_cover = delta ** eps0
    counts = np.maximum(1, np.ceil((hi - lo) / r_cover).astype(int))
    ball_centers = [
        lo + (np.array(idx) + 0.5) * r_cover
        for idx in np.ndindex(*counts)
    ]
    runs = []
    Z = trivial_variety(n)
    for bi, center in enumerate(ball_centers):
        ball = Ball(tuple(center), r_cover)
        tubes = [
            ti
            for ti, t in enumerate(family.tubes)
            if t.core_distance(center[None, :])[0] <= r_cover + delta
        ]
        if not tubes:
            continue
        sub = family.subfamily(tubes)
        ensembles, rep = run_alg1(sub, Z, ball, delta, cfg, seed * 127 + bi, grid=None)
        runs.append({"ball": ball, "tubes": tubes, "report": rep, "sub": sub})

    report = RunReport(stop="tiny-dom", steps=[], fitted={}, lhs_norm=lhs)
    if not runs:
        raise DegenerateFamilyError("no cover ball meets the family")
    budget_stops = [r for r in runs if r["report"].stop == "budget"]
    tiny = [r for r in runs if r["report"].stop == "tiny"]
    tang = [r for r in runs if r["report"].stop == "tang"]
    total_norm = sum(r["report"].lhs_norm ** p for r in runs)
    tiny_norm = sum(r["report"].lhs_norm ** p for r in tiny)
    report.extras["cover_balls"] = len(runs)
    report.extras["budget_stops"] = len(budget_stops)
    report.extras["per_ball_stops"] = [r["report"].stop for r in runs]
    report.extras["per_ball_fitted"] = [r["report"].fitted for r in runs]

    if 2.0 * tiny_norm < total_norm:
        # tangent side dominates: at k = 2 the tangent families live on a
        # one-dimensional wall, where the broad norm vanishes; a dominant
        # contribution would contradict the nonvanishing measured above
        report.stop = "contradiction"
        report.extras["tang_norm_share"] = 1.0 - tiny_norm / total_norm if total_norm else 0.0
        return report

    # final stage: group tiny runs by their observed cell-count parameter
    groups: dict = {}
    for r in tiny:
        d_value = cfg.d ** r["report"].word.count("c")
        groups.setdefault(d_value, []).append(r)
    dominant = max(
        groups.items(), key=lambda kv: sum(r["report"].lhs_norm ** p for r in kv[1])
    )
    d_value, members = dominant
    report.extras["d_groups"] = {str(kq): len(v) for kq, v in groups.items()}
    report.extras["d_value"] = d_value

    rhs_sum = 0.0
    sum_final = 0
    max_final = 0
    sum_parent = 0
    max_parent = 0
    for r in members:
        rep = r["report"]
        sub = r["sub"]
        sub_grid = make_grid(sub, r["ball"], h)
        A_last = a_parameter(rep.word, cfg.A)
        sub_caps, _ = cfg.cap_tables(n)
        sub_cap_assign = _assign_caps(sub, sub_caps)
        for cell in rep.final_cells or []:
            v = _cell_bl_norm(
                sub, cell.tubes, sub_grid, cell.offset, cell.mask, cfg, A_last, delta,
                tube_cap=sub_cap_assign,
            )
            rhs_sum += v ** p
            sum_final += len(cell.tubes)
            max_final = max(max_final, len(cell.tubes))
        sum_parent += len(sub.tubes)
        max_parent = max(max_parent, len(sub.tubes))

    theta_m = 1.0  # single-level run: Theta_n = 1 and the prefactor is 1
    rhs = rhs_sum ** (theta_m / p) if rhs_sum > 0 else 0.0
    report.extras["fke_lhs"] = lhs
    report.extras["fke_rhs"] = rhs
    report.extras["fke_ratio"] = lhs / rhs if rhs > 0 else math.inf
    if sum_parent:
        report.extras["prop2_ratio"] = sum_final / (
            d_value ** (1.0 + eps0) * sum_parent
        )
    if max_parent:
        mm = 2  # final cells arise from partitions of the planar mass
        report.extras["prop3_ratio"] = max_final / (
            max(d_value, 1.0 + 1e-12) ** (-(mm - 1) + eps0) * max_parent
        )
    report.fitted = {
        "ratio_i": max((r["report"].fitted["ratio_i"] for r in runs), default=0.0),
        "ratio_ii": max((r["report"].fitted["ratio_ii"] for r in runs), default=0.0),
        "ratio_iii": max((r["report"].fitted["ratio_iii"] for r in runs), default=0.0),
    }
    report.stop = "tiny-dom"
    return report


# ---------------------------------------------------------------------------
# the count bound used downstream of the decomposition


def second_key_estimate(gammas, D, deltas, delta, n: int, m: int) -> float:
    """Product bound for the largest per-cell tube count:

        delta^{-(n-1)} prod_{i=m-1}^{n-1}
            (delta_i/delta)^{-sum_{j=m}^{i} gamma_j}
            D_i^{-i (1 - sum_{j=m}^{i} gamma_j)}

    with the i = m-1 scale factor read as 1.  Weights must sum to 1."""
    gammas = list(gammas)
    if len(gammas) != n - m + 1:
        raise StructureError("need one gamma per level m..n")
    total = sum(gammas)
    if abs(float(total) - 1.0) > 1e-12:
        raise StructureError("gamma weights must sum to 1")
    if any(float(g) < -1e-15 or float(g) > 1.0 + 1e-15 for g in gammas):
        raise StructureError("gamma weights must lie in [0,1]")
    levels = list(range(m - 1, n))
    if len(D) not in (len(levels), 0) or len(deltas) not in (len(levels), 0):
        raise StructureError("need one D and one delta per level m-1..n-1")
    bound = delta ** (-(n - 1))
    for pos, i in enumerate(levels):
        if pos >= len(D):
            break
        gsum = float(sum(gammas[j - m] for j in range(m, i + 1))) if i >= m else 0.0
        scale_factor = 1.0 if i == m - 1 else (deltas[pos] / delta) ** (-gsum)
        bound *= scale_factor * D[pos] ** (-i * (1.0 - gsum))
    return bound
