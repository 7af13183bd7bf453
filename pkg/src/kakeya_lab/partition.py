"""Equal-mass polynomial partitioning on grid fields.

partition_mass runs iterated ham-sandwich bisection: each step searches
for a low-degree polynomial that simultaneously halves the mass of every
current cell, lifting grid points through the monomial (Veronese) map
and driving a softened sign objective to zero by damped Gauss-Newton
from several deterministic and seeded starts.  The product of the step
polynomials cuts the grid into sign-labelled connected components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .algebraic import MultiPoly, monomials_upto, poly_variety
from .geometry import Tube
from .norms import GridField
from .rng import rng_for

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class PartitionError(RuntimeError):
    def __init__(self, message, best=None, deviation=None):
        super().__init__(message)
        self.best = best
        self.deviation = deviation


class BezoutViolation(AssertionError):
    pass


@dataclass
class Cell:
    id: int
    sign_chart: tuple
    mass: float
    diameter: float
    grid_count: int


@dataclass
class Partition:
    field: GridField
    factors: list  # per-step MultiPoly bisectors
    labels: np.ndarray  # component id per grid cell, -1 on the wall
    cells: list  # Cell records, indexed by id
    wall_mass: float
    degree: int
    wall_dominated: bool
    delta: float = None
    _shrunk: dict = field(default_factory=dict, repr=False)

    @property
    def polynomial(self) -> MultiPoly:
        prod = self.factors[0]
        for f in self.factors[1:]:
            prod = prod * f
        return prod

    def wall_variety(self):
        poly = self.polynomial
        return poly_variety(self.field.dim, self.field.dim - 1, [poly])

    def shrunken_labels(self, delta: float) -> np.ndarray:
        """Labels with cells within `delta` of the wall removed (-1)."""
        key = round(float(delta), 15)
        if key not in self._shrunk:
            wall = self.labels < 0
            if wall.any():
                dist = ndimage.distance_transform_edt(~wall, sampling=self.field.h)
            else:
                dist = np.full(self.labels.shape, np.inf)
            out = self.labels.copy()
            out[dist <= max(delta, self.field.h)] = -1
            self._shrunk[key] = out
        return self._shrunk[key]


def _cell_centers(fld: GridField):
    axes = [fld.axis_centers(i) for i in range(fld.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _step_degrees(D: int, dim: int) -> list:
    """Bisection step degrees: minimal degree with enough coefficients to
    halve the current cells, while the product degree stays <= D."""
    degrees = []
    cells = 1
    total = 0
    while True:
        need = cells
        d = 1
        while math.comb(d + dim, dim) - 1 < need:
            d += 1
        if total + d > D:
            break
        degrees.append(d)
        total += d
        cells *= 2
    return degrees


def _features(points: np.ndarray, degree: int):
    exps = np.array(monomials_upto(points.shape[1], degree), dtype=int)
    feats = np.prod(points[:, None, :] ** exps[None, :, :], axis=-1)
    scale = np.maximum(np.abs(feats).max(axis=0), 1e-30)
    return feats / scale, exps, scale


def _snap(q: np.ndarray) -> np.ndarray:
    """Zero out relatively tiny values so near-interpolated mass sits on
    the wall rather than picking an arbitrary side."""
    top = np.abs(q).max()
    if top == 0.0:
        return q
    out = q.copy()
    out[np.abs(out) <= 1e-12 * top] = 0.0
    return out


def _hard_deviation(q, masses, labels, n_labels):
    """Max over cells of |m_plus - m_minus| / m_cell; zeros of q sit on
    the wall and count for neither side."""
    signed = np.where(q > 0, masses, np.where(q < 0, -masses, 0.0))
    num = np.abs(np.bincount(labels, weights=signed, minlength=n_labels))
    den = np.bincount(labels, weights=masses, minlength=n_labels)
    live = den > 0
    if not live.any():
        return 0.0
    return float((num[live] / den[live]).max())


def _parked_fraction(q, masses) -> float:
    total = masses.sum()
    return float(masses[q == 0.0].sum() / total) if total > 0 else 0.0


def _soft_refine(w, feats, masses, labels, n_labels, tol_step, iters=40):
    """Damped Gauss-Newton on the tanh-softened per-cell imbalance."""
    den = np.bincount(labels, weights=masses, minlength=n_labels)
    den = np.maximum(den, 1e-300)
    best_w = w / np.linalg.norm(w)
    best_dev = _hard_deviation(_snap(feats @ best_w), masses, labels, n_labels)
    w = best_w.copy()
    q = feats @ w
    tau = max(1e-12, float(np.median(np.abs(q))))
    for _ in range(iters):
        if best_dev <= tol_step:
            break
        q = feats @ w
        s = np.tanh(q / tau)
        resid = np.bincount(labels, weights=masses * s, minlength=n_labels) / den
        ds = (1.0 - s * s) / tau
        jac = np.zeros((n_labels, feats.shape[1]))
        weighted = feats * (masses * ds)[:, None]
        np.add.at(jac, labels, weighted)
        jac /= den[:, None]
        try:
            step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
        except np.linalg.LinAlgError:
            break
        moved = False
        scale = 1.0
        for _ in range(8):
            cand = w - scale * step
            norm = np.linalg.norm(cand)
            if norm < 1e-14:
                scale *= 0.5
                continue
            cand /= norm
            dev = _hard_deviation(_snap(feats @ cand), masses, labels, n_labels)
            if dev < best_dev - 1e-15:
                w, best_w, best_dev = cand, cand, dev
                moved = True
                break
            scale *= 0.5
        if not moved:
            w = w - 0.5 * step
            n = np.linalg.norm(w)
            if n < 1e-14:
                break
            w /= n
        tau *= 0.6
    return best_w, best_dev


def _linear_start(normal, offset_point, exps, scale):
    w = np.zeros(len(exps))
    for i, e in enumerate(exps):
        e = tuple(e)
        if sum(e) == 0:
            w[i] = -float(np.dot(normal, offset_point)) * scale[i]
        elif sum(e) == 1:
            w[i] = float(normal[e.index(1)]) * scale[i]
    return w


def _pca_normal_start(points, masses, exps, scale):
    """Level line of the least principal direction: hugs mass that is
    concentrated along an affine line."""
    total = masses.sum()
    if total <= 0:
        return None
    mean = (points * masses[:, None]).sum(axis=0) / total
    centered = points - mean
    cov = (centered * masses[:, None]).T @ centered / total
    _, eigvecs = np.linalg.eigh(cov)
    return _linear_start(eigvecs[:, 0], mean, exps, scale)


def _start_vectors(points, masses, exps, scale, rng):
    """Axis-median cuts (widest span first), the principal-line level
    set, then seeded random coefficient vectors."""
    dim = points.shape[1]
    total = masses.sum()
    spans = points.max(axis=0) - points.min(axis=0)
    for axis in np.argsort(-spans, kind="stable"):
        e = np.zeros(dim)
        e[axis] = 1.0
        order = np.argsort(points[:, axis], kind="stable")
        csum = np.cumsum(masses[order])
        cut = points[order[min(len(order) - 1, np.searchsorted(csum, 0.5 * total))], axis]
        pt = np.zeros(dim)
        # exact median-atom cut: the median row lands on the wall, which
        # keeps stubborn point masses balanceable
        pt[axis] = cut
        yield _linear_start(e, pt, exps, scale)
    hug = _pca_normal_start(points, masses, exps, scale)
    if hug is not None:
        yield hug
    for _ in range(8):
        yield rng.standard_normal(len(exps))


def _atom_parking_start(feats, masses, labels, n_labels):
    """Least-squares interpolation of the stubbornest cell's atoms: puts
    its mass on the wall when balancing is impossible (odd single atoms)."""
    den = np.bincount(labels, weights=masses, minlength=n_labels)
    worst = int(np.argmax(den))
    rows = feats[(labels == worst) & (masses > 0)]
    if len(rows) == 0 or len(rows) >= feats.shape[1]:
        return None
    _, _, vt = np.linalg.svd(rows, full_matrices=True)
    return vt[-1]


def partition_mass(fld: GridField, D: int, tol: float, seed: int) -> Partition:
    """Iterated ham-sandwich partition of a non-negative mass field.

    The returned cells are the 4-connected components of the grid away
    from the wall (sign changes of any bisecting factor).  Each sign
    class holds at most (1+tol) 2^{-s} of the mass after s bisections.
    """
    if fld.dim not in (2, 3):
        raise PartitionError("partitioning supports dim 2 (dim 3 experimental)")
    if D < 1 or D > 8:
        raise PartitionError("need 1 <= D <= 8")
    masses_grid = fld.values
    if np.any(masses_grid < 0) or masses_grid.sum() <= 0:
        raise PartitionError("field must be non-negative with positive mass")
    points = _cell_centers(fld)
    masses = masses_grid.ravel().astype(float)
    degrees = _step_degrees(D, fld.dim)
    t_step = (1.0 + tol) ** (1.0 / max(1, len(degrees))) - 1.0

    labels = np.zeros(len(points), dtype=int)
    n_labels = 1
    factors = []
    sign_arrays = []
    rng = rng_for(seed, "partition-descent")
    for step, d_step in enumerate(degrees):
        feats, exps, scale = _features(points, d_step)

        def commit(w):
            nonlocal labels, n_labels
            q = _snap(feats @ w)
            sign_arrays.append(np.sign(q).reshape(masses_grid.shape))
            factors.append(MultiPoly(fld.dim, exps, w / scale))
            labels = labels * 2 + (q > 0)
            n_labels *= 2

        # degenerate pre-check: if the principal-line level set already
        # carries nearly all the mass, the wall is the answer
        hug = _pca_normal_start(points, masses, exps, scale)
        if hug is not None and np.linalg.norm(hug) > 0:
            hug = hug / np.linalg.norm(hug)
            if _parked_fraction(_snap(feats @ hug), masses) >= 0.9:
                commit(hug)
                continue

        accepted = None
        fallback = None  # best tolerable candidate that over-parks mass
        starts = list(_start_vectors(points, masses, exps, scale, rng))
        park = _atom_parking_start(feats, masses, labels, n_labels)
        if park is not None:
            starts.append(park)
        best_dev = math.inf
        for w0 in starts:
            w, dev = _soft_refine(w0, feats, masses, labels, n_labels, t_step)
            best_dev = min(best_dev, dev)
            if dev <= t_step:
                parked = _parked_fraction(_snap(feats @ w), masses)
                if parked <= 0.25:
                    accepted = w
                    break
                if fallback is None:
                    fallback = w
        if accepted is None:
            accepted = fallback
        if accepted is None:
            partial = _finalize(fld, factors, sign_arrays, masses_grid) if factors else None
            raise PartitionError(
                f"bisection step {step} stalled at deviation {best_dev:.4f} > {t_step:.4f}",
                best=partial,
                deviation=best_dev,
            )
        commit(accepted)
    if not factors:
        raise PartitionError("degree budget admits no bisection step")
    return _finalize(fld, factors, sign_arrays, masses_grid)


def _finalize(fld, factors, sign_arrays, masses_grid) -> Partition:
    if not factors:
        raise PartitionError("no bisecting polynomial found")
    wall = np.zeros(masses_grid.shape, dtype=bool)
    for s in sign_arrays:
        wall |= s == 0
        for axis in range(fld.dim):
            fwd = np.diff(np.sign(s), axis=axis) != 0
            pad_lo = [(0, 1) if a == axis else (0, 0) for a in range(fld.dim)]
            pad_hi = [(1, 0) if a == axis else (0, 0) for a in range(fld.dim)]
            wall |= np.pad(fwd, pad_lo)
            wall |= np.pad(fwd, pad_hi)
    comp, n_comp = ndimage.label(~wall, structure=FOUR_CONN if fld.dim == 2 else None)
    labels = comp - 1  # wall becomes -1
    labels[wall] = -1
    h = fld.h
    cells = []
    centers = _cell_centers(fld)
    flat = labels.ravel()
    for cid in range(n_comp):
        member = flat == cid
        mass = float(masses_grid.ravel()[member].sum() * h ** fld.dim)
        pts = centers[member]
        diameter = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) if len(pts) else 0.0
        chart = tuple(int(np.sign(s.ravel()[member][0])) for s in sign_arrays) if member.any() else ()
        cells.append(Cell(cid, chart, mass, diameter, int(member.sum())))
    total = float(masses_grid.sum() * h ** fld.dim)
    wall_mass = total - sum(c.mass for c in cells)
    degree = sum(f.degree for f in factors)
    return Partition(
        field=fld,
        factors=factors,
        labels=labels,
        cells=cells,
        wall_mass=wall_mass,
        degree=degree,
        wall_dominated=wall_mass >= 0.5 * total,
    )


def shrunken_cells(partition: Partition, delta: float) -> list:
    """Cells minus the delta-neighborhood of the wall (delta clamps to h)."""
    if delta < 0:
        raise PartitionError("delta must be non-negative")
    labels = partition.shrunken_labels(delta)
    partition.delta = max(delta, partition.field.h)
    h = partition.field.h
    masses = partition.field.values.ravel()
    centers = _cell_centers(partition.field)
    flat = labels.ravel()
    out = []
    for cell in partition.cells:
        member = flat == cell.id
        if not member.any():
            out.append(Cell(cell.id, cell.sign_chart, 0.0, 0.0, 0))
            continue
        pts = centers[member]
        out.append(
            Cell(
                cell.id,
                cell.sign_chart,
                float(masses[member].sum() * h ** partition.field.dim),
                float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))),
                int(member.sum()),
            )
        )
    return out


def tube_cell_crossings(tube: Tube, partition: Partition, delta: float = None) -> list:
    """Ids of shrunken cells met by the tube; hard Bezout ceiling deg P + 1."""
    delta = tube.delta if delta is None else delta
    labels = partition.shrunken_labels(delta)
    fld = partition.field
    lo, hi = tube.bounding_box()
    i_lo = np.maximum(0, np.floor((lo - fld.box_lo) / fld.h).astype(int))
    i_hi = np.minimum(fld.values.shape, np.ceil((hi - fld.box_lo) / fld.h).astype(int))
    if np.any(i_lo >= i_hi):
        return []
    axes = [fld.box_lo[d] + (np.arange(i_lo[d], i_hi[d]) + 0.5) * fld.h for d in range(fld.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    inside = tube.contains(pts)
    window = tuple(slice(i_lo[d], i_hi[d]) for d in range(fld.dim))
    hit = labels[window].ravel()[inside]
    ids = sorted(set(int(i) for i in hit if i >= 0))
    ceiling = partition.degree + 1
    if len(ids) > ceiling:
        raise BezoutViolation(
            f"tube crosses {len(ids)} shrunken cells > deg P + 1 = {ceiling}"
        )
    return ids


@dataclass
class CaseResult:
    kind: str  # "cellular" | "algebraic"
    partition: Partition
    cells: list = None  # refined shrunken cells (cellular)
    wall: object = None  # Variety for the wall (algebraic)
    mass_ratio: float = 0.0  # surviving refined mass / total


def cellular_or_algebraic(
    fld: GridField, m: int, D: int, tol: float = 0.25, seed: int = 0, shrink: float = None
) -> CaseResult:
    """Partition, refine away light cells, and classify the outcome.

    Cellular when the refined cells (mass at least half the per-cell
    average) retain at least half the total mass, algebraic otherwise;
    the wall variety is the zero set of the partitioning polynomial.
    """
    if fld.dim != 2:
        raise PartitionError("cellular_or_algebraic is 2-D only")
    partition = partition_mass(fld, D, tol, seed)
    shrink = fld.h if shrink is None else shrink
    cells = shrunken_cells(partition, shrink)
    total = fld.total_mass()
    nonempty = [c for c in cells if c.mass > 0]
    if nonempty:
        avg = sum(c.mass for c in nonempty) / len(nonempty)
        refined = [c for c in nonempty if c.mass >= 0.5 * avg]
    else:
        refined = []
    surviving = sum(c.mass for c in refined)
    ratio = surviving / total if total > 0 else 0.0
    if not partition.wall_dominated and ratio >= 0.5:
        return CaseResult("cellular", partition, cells=refined, mass_ratio=ratio)
    return CaseResult(
        "algebraic", partition, wall=partition.wall_variety(), mass_ratio=ratio
    )


# ---------------------------------------------------------------------------
# export


def partition_csv(partition: Partition) -> str:
    lines = ["id,mass,diameter,grid_cells"]
    for c in partition.cells:
        lines.append(f"{c.id},{c.mass:.17g},{c.diameter:.17g},{c.grid_count}")
    return "\n".join(lines) + "\n"


def partition_coeffs_text(partition: Partition) -> str:
    """Product polynomial as dense graded-lex coefficients."""
    poly = partition.polynomial
    deg = poly.degree
    coeffs = poly.dense_coeffs(deg)
    head = f"poly dim={partition.field.dim} degree={deg}"
    return head + "\n" + " ".join(f"{c:.17g}" for c in coeffs) + "\n"
