"""Tubes, sphere caps, and direction-separated family construction.

A tube is a closed cylinder of unit height and radius delta with an
arbitrary center and orientation.  Families keep a `separated`
certificate meaning the directions form a delta-separated subset of the
unit sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import rng_for

DIRECTION_TOL = 1e-12


class GeometryError(ValueError):
    pass


def unit_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise GeometryError("zero vector has no direction")
    return v / norm


def sphere_angle(u, v) -> float:
    """Angle between two unit vectors as points of the sphere, in [0, pi]."""
    return float(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0)))


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def tube_volume(n: int, delta: float) -> float:
    """Volume of a unit-height cylinder of radius delta in R^n."""
    return unit_ball_volume(n - 1) * delta ** (n - 1)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise GeometryError("ball radius must be positive")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.linalg.norm(points - self.c, axis=-1) <= self.radius


@dataclass
class Tube:
    """Closed cylinder of unit height and radius delta."""

    dim: int
    delta: float
    direction: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        if self.dim < 2:
            raise GeometryError("tubes need dimension >= 2")
        if not (0.0 < self.delta <= 0.5):
            raise GeometryError(f"delta must lie in (0, 1/2], got {self.delta}")
        if abs(np.linalg.norm(self.direction) - 1.0) > DIRECTION_TOL:
            raise GeometryError("direction must be a unit vector")
        if self.direction.shape != (self.dim,) or self.center.shape != (self.dim,):
            raise GeometryError("direction/center shape mismatch with dim")

    def contains(self, points) -> np.ndarray:
        """Membership test: axial coordinate <= 1/2 and radial <= delta."""
        points = np.asarray(points, dtype=float)
        rel = points - self.center
        axial = rel @ self.direction
        radial2 = np.einsum("...i,...i->...", rel, rel) - axial ** 2
        return (np.abs(axial) <= 0.5) & (radial2 <= self.delta ** 2 + 1e-15)

    def core_points(self, count: int) -> np.ndarray:
        t = (np.arange(count) + 0.5) / count - 0.5
        return self.center + t[:, None] * self.direction

    def bounding_box(self):
        half = 0.5 * np.abs(self.direction) + self.delta
        return self.center - half, self.center + half

    def core_distance(self, points) -> np.ndarray:
        """Distance from points to the core segment."""
        points = np.asarray(points, dtype=float)
        rel = points - self.center
        axial = np.clip(rel @ self.direction, -0.5, 0.5)
        foot = self.center + axial[..., None] * self.direction
        return np.linalg.norm(points - foot, axis=-1)


@dataclass
class TubeFamily:
    dim: int
    delta: float
    tubes: list
    separated: bool = False
    _dirs: np.ndarray = field(default=None, repr=False, compare=False)
    _centers: np.ndarray = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.tubes)

    def __iter__(self):
        return iter(self.tubes)

    @property
    def directions(self) -> np.ndarray:
        if self._dirs is None or len(self._dirs) != len(self.tubes):
            self._dirs = (
                np.stack([t.direction for t in self.tubes])
                if self.tubes
                else np.zeros((0, self.dim))
            )
        return self._dirs

    @property
    def centers(self) -> np.ndarray:
        if self._centers is None or len(self._centers) != len(self.tubes):
            self._centers = (
                np.stack([t.center for t in self.tubes])
                if self.tubes
                else np.zeros((0, self.dim))
            )
        return self._centers

    def subfamily(self, indices) -> "TubeFamily":
        tubes = [self.tubes[i] for i in indices]
        return TubeFamily(self.dim, self.delta, tubes, separated=self.separated)

    def total_volume(self) -> float:
        return len(self.tubes) * tube_volume(self.dim, self.delta)

    def bounding_box(self, pad: float = 0.0):
        if not self.tubes:
            raise GeometryError("empty family has no bounding box")
        los, his = zip(*(t.bounding_box() for t in self.tubes))
        return np.min(los, axis=0) - pad, np.max(his, axis=0) + pad

    def min_pairwise_angle(self) -> float:
        dirs = self.directions
        if len(dirs) < 2:
            return math.pi
        dots = np.clip(dirs @ dirs.T, -1.0, 1.0)
        np.fill_diagonal(dots, -1.0)
        return float(np.arccos(dots.max()))


@dataclass(frozen=True)
class Cap:
    """Spherical cap: all unit vectors within angle `radius` of `center`."""

    center: tuple
    radius: float

    @property
    def unit(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def contains_direction(self, v) -> bool:
        return sphere_angle(self.unit, v) <= self.radius + 1e-12


# ---------------------------------------------------------------------------
# direction pools and greedy nets


def _direction_pool(n: int, spacing: float, seed: int) -> np.ndarray:
    """Quasi-uniform candidate directions with mesh <= spacing."""
    rng = rng_for(seed, f"direction-pool-n{n}")
    if n == 2:
        count = max(16, int(math.ceil(2.0 * math.pi / spacing)))
        offset = rng.uniform(0.0, 2.0 * math.pi / count)
        theta = offset + 2.0 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if n == 3:
        # Fibonacci sphere: mesh ~ sqrt(4 pi / count)
        count = max(64, int(math.ceil(4.0 * math.pi / spacing ** 2 * 4.0)))
        golden = math.pi * (3.0 - math.sqrt(5.0))
        i = np.arange(count)
        z = 1.0 - 2.0 * (i + 0.5) / count
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = golden * i + rng.uniform(0.0, 2.0 * math.pi)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    count = max(256, int(math.ceil(8.0 * (3.0 / spacing) ** (n - 1))))
    count = min(count, 400_000)
    raw = rng.standard_normal((count, n))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _greedy_net(pool: np.ndarray, separation: float) -> np.ndarray:
    """Maximal separation-separated subset of `pool`, greedy in pool order."""
    cos_sep = math.cos(separation)
    kept: list[np.ndarray] = []
    kept_mat = None
    for v in pool:
        if kept_mat is None:
            kept.append(v)
            kept_mat = v[None, :]
            continue
        if float((kept_mat @ v).max()) < cos_sep:
            kept.append(v)
            kept_mat = np.vstack([kept_mat, v])
    return np.asarray(kept)


def make_direction_separated_family(n: int, delta: float, seed: int) -> TubeFamily:
    """Greedy maximal delta-separated direction net, one tube per direction.

    Positions are uniform in [0, 1]^n from the stream (seed, "tube-centers").
    """
    if n < 2:
        raise GeometryError("need n >= 2")
    if not (0.0 < delta <= 0.25):
        raise GeometryError(f"delta must lie in (0, 1/4], got {delta}")
    pool = _direction_pool(n, delta / 4.0, seed)
    dirs = _greedy_net(pool, delta)
    rng = rng_for(seed, "tube-centers")
    centers = rng.uniform(0.0, 1.0, size=(len(dirs), n))
    tubes = [Tube(n, delta, d, c) for d, c in zip(dirs, centers)]
    return TubeFamily(n, delta, tubes, separated=True)


def cap_decomposition(n: int, beta: float) -> list:
    """Finitely-overlapping cover of the sphere by caps of radius beta.

    Centers form a greedy (3 beta / 4)-separated net over a fine pool, so
    every unit vector lies within beta of some center.
    """
    if not (0.0 < beta <= 0.5):
        raise GeometryError(f"beta must lie in (0, 1/2], got {beta}")
    pool = _direction_pool(n, beta / 8.0, seed=0)
    centers = _greedy_net(pool, 0.75 * beta)
    return [Cap(tuple(c), beta) for c in centers]


def bucket_by_cap(family: TubeFamily, caps: list) -> dict:
    """Disjoint partition of the family by first covering cap."""
    if caps and family.tubes:
        max_radius = max(c.radius for c in caps)
        if max_radius <= family.delta:
            raise GeometryError("cap radius must exceed the family delta")
    centers = np.stack([c.unit for c in caps]) if caps else np.zeros((0, family.dim))
    radii = np.array([c.radius for c in caps])
    buckets: dict = {}
    dirs = family.directions
    if len(dirs):
        dots = np.clip(dirs @ centers.T, -1.0, 1.0)
        angles = np.arccos(dots)
        covered = angles <= radii[None, :] + 1e-12
        for i in range(len(dirs)):
            hits = np.nonzero(covered[i])[0]
            if hits.size == 0:
                raise GeometryError(
                    f"tube {i} direction not covered by any cap (bad decomposition)"
                )
            buckets.setdefault(int(hits[0]), []).append(i)
    return {
        caps[ci]: family.subfamily(idx)
        for ci, idx in sorted(buckets.items())
    }


def angle_to_subspace(v, basis) -> float:
    """Angle arccos ||proj_V v|| in [0, pi/2]; 0 iff v lies in V.

    `basis` is an orthonormal (d, n) row matrix spanning V, d >= 1.
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.shape[0] == 0:
        raise GeometryError("zero-dimensional subspace rejected")
    v = unit_vector(v)
    proj = np.linalg.norm(basis @ v)
    return float(np.arccos(np.clip(proj, 0.0, 1.0)))


def orthonormal_basis(vectors) -> np.ndarray:
    """Orthonormal row basis for the span; rejects dependent input."""
    mat = np.atleast_2d(np.asarray(vectors, dtype=float))
    q, r = np.linalg.qr(mat.T)
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10))
    if rank < mat.shape[0]:
        raise GeometryError("vectors are linearly dependent")
    return q.T[: mat.shape[0]]


@dataclass
class CapRescaleMap:
    """Linear map fixing span(omega), dilating its complement by 1/beta."""

    omega: np.ndarray
    beta: float
    matrix: np.ndarray

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.matrix.T

    def map_tube(self, tube: Tube) -> Tube:
        new_dir = unit_vector(self.matrix @ tube.direction)
        new_delta = min(0.5, tube.delta / self.beta)
        return Tube(tube.dim, new_delta, new_dir, self.matrix @ tube.center)

    def map_family(self, family: TubeFamily) -> TubeFamily:
        tubes = [self.map_tube(t) for t in family.tubes]
        delta = tubes[0].delta if tubes else min(0.5, family.delta / self.beta)
        return TubeFamily(family.dim, delta, tubes, separated=family.separated)


def rescale_cap_map(cap: Cap) -> CapRescaleMap:
    omega = unit_vector(cap.unit)
    if not (0.0 < cap.radius <= 0.5):
        raise GeometryError("cap radius must lie in (0, 1/2]")
    n = len(omega)
    proj = np.outer(omega, omega)
    matrix = proj + (np.eye(n) - proj) / cap.radius
    return CapRescaleMap(omega=omega, beta=cap.radius, matrix=matrix)


# ---------------------------------------------------------------------------
# serialization: header "n delta count", one "d... c..." row per tube


def family_to_text(family: TubeFamily) -> str:
    lines = [f"{family.dim} {family.delta!r} {len(family.tubes)}"]
    for t in family.tubes:
        nums = list(t.direction) + list(t.center)
        lines.append(" ".join(f"{x:.17g}" for x in nums))
    return "\n".join(lines) + "\n"


def family_from_text(text: str) -> TubeFamily:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    n, delta, count = int(head[0]), float(head[1]), int(head[2])
    tubes = []
    for ln in lines[1 : 1 + count]:
        vals = [float(x) for x in ln.split()]
        if len(vals) != 2 * n:
            raise GeometryError("malformed tube row")
        tubes.append(Tube(n, delta, np.array(vals[:n]), np.array(vals[n:])))
    return TubeFamily(n, delta, tubes, separated=True)
