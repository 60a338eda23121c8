"""Space-time lattice over ]0,T[ x Omega and parabolic-boundary classification.

Points of C^n are stored as real vectors (x1, y1, ..., xn, yn) of length 2n.
Spatial nodes are the lattice points c + h*m (m integer) lying strictly inside
the domain; a node is spatial-boundary when one of its 2*(2n) axis arms leaves
the domain, which is what the collar rule with kappa = sqrt(2n) encodes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import BadSpacing, EmptyInterior, NoIntersection

INTERIOR = 0
SPATIAL_BOUNDARY = 1
INITIAL_SLICE = 2
CLASS_NAMES = {INTERIOR: "interior", SPATIAL_BOUNDARY: "spatial-boundary", INITIAL_SLICE: "initial-slice"}


@dataclass(frozen=True)
class DomainSpec:
    """A ball or polydisc in C^n, n in {1, 2}."""

    kind: str = "ball"
    n: int = 1
    radius: float | tuple = 1.0
    center: tuple = None

    def __post_init__(self):
        if self.kind not in ("ball", "polydisc"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.n not in (1, 2):
            raise ValueError("complex dimension must be 1 or 2")
        radii = np.atleast_1d(np.asarray(self.radius, dtype=float))
        if np.any(radii <= 0):
            raise ValueError("radius must be positive")
        if self.kind == "ball" and radii.size != 1:
            raise ValueError("a ball takes a single radius")
        if self.kind == "polydisc" and radii.size not in (1, self.n):
            raise ValueError("polydisc takes one radius or one per coordinate")
        center = (0.0,) * (2 * self.n) if self.center is None else tuple(float(c) for c in self.center)
        if len(center) != 2 * self.n:
            raise ValueError("center must have 2n real coordinates")
        object.__setattr__(self, "center", center)

    @property
    def radii(self) -> np.ndarray:
        r = np.atleast_1d(np.asarray(self.radius, dtype=float))
        return np.broadcast_to(r, (self.n,)) if self.kind == "polydisc" else r

    @property
    def diameter(self) -> float:
        if self.kind == "ball":
            return 2 * float(self.radii[0])
        return 2 * float(np.sqrt(np.sum(self.radii**2)))

    def rho(self, points) -> np.ndarray:
        """Defining function: negative exactly inside the domain.

        Ball: |z - c|^2 - r^2. Polydisc: max_j (|z_j - c_j|^2 - r_j^2), which is
        only piecewise smooth but has the same zero set.
        """
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        if self.kind == "ball":
            return np.sum(p**2, axis=-1) - self.radii[0] ** 2
        per = p[..., 0::2] ** 2 + p[..., 1::2] ** 2 - self.radii**2
        return np.max(per, axis=-1)

    def contains(self, points) -> np.ndarray:
        return self.rho(points) < 0

    def to_dict(self) -> dict:
        radius = self.radius if np.isscalar(self.radius) else list(self.radius)
        return {"kind": self.kind, "n": self.n, "radius": radius, "center": list(self.center)}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        radius = d.get("radius", 1.0)
        if isinstance(radius, list):
            radius = tuple(radius)
        center = d.get("center")
        return cls(kind=d.get("kind", "ball"), n=int(d.get("n", 1)), radius=radius,
                   center=tuple(center) if center is not None else None)


@dataclass(frozen=True, eq=False)
class ComplexGrid:
    """Immutable space-time lattice.

    ``points`` holds the spatial nodes (lexicographic in integer lattice
    coordinates); space-time node (k, i) has flat index ``k * n_space + i``.
    """

    domain: DomainSpec
    h: float
    dt: float
    T: float
    points: np.ndarray
    lattice: np.ndarray
    spatial_class: np.ndarray
    kappa: float = field(default=None)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def dim(self) -> int:
        return 2 * self.domain.n

    @property
    def n_space(self) -> int:
        return self.points.shape[0]

    @property
    def n_times(self) -> int:
        return int(round(self.T / self.dt)) + 1

    @property
    def n_nodes(self) -> int:
        return self.n_space * self.n_times

    @cached_property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_times)

    @cached_property
    def interior(self) -> np.ndarray:
        """Indices of spatially interior nodes."""
        return np.flatnonzero(self.spatial_class == INTERIOR)

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.spatial_class != INTERIOR)

    @cached_property
    def index_of(self) -> dict:
        return {tuple(m): i for i, m in enumerate(self.lattice.tolist())}

    @cached_property
    def lattice_origin(self) -> np.ndarray:
        return np.asarray(self.domain.center)

    def lookup(self, lattice_coords) -> np.ndarray:
        """Node indices for integer lattice coordinates (shape (..., 2n)); -1 where absent."""
        lc = np.asarray(lattice_coords, dtype=np.int64)
        flat = lc.reshape(-1, self.dim)
        lo = self._lo
        span = self._span
        rel = flat - lo
        ok = np.all((rel >= 0) & (rel < span), axis=1)
        keys = np.zeros(flat.shape[0], dtype=np.int64)
        keys[ok] = np.ravel_multi_index(tuple(rel[ok].T), tuple(span))
        out = np.full(flat.shape[0], -1, dtype=np.int64)
        out[ok] = self._dense[keys[ok]]
        return out.reshape(lc.shape[:-1])

    @cached_property
    def _lo(self) -> np.ndarray:
        return self.lattice.min(axis=0) - 1

    @cached_property
    def _span(self) -> np.ndarray:
        return self.lattice.max(axis=0) + 2 - self._lo

    @cached_property
    def _dense(self) -> np.ndarray:
        dense = np.full(int(np.prod(self._span)), -1, dtype=np.int64)
        rel = self.lattice - self._lo
        dense[np.ravel_multi_index(tuple(rel.T), tuple(self._span))] = np.arange(self.n_space)
        return dense

    def node_class(self) -> np.ndarray:
        """Class of every space-time node, shape (n_times, n_space)."""
        return classify_parabolic_boundary(self)

    def metadata(self) -> dict:
        return {"n": self.n, "h": self.h, "dt": self.dt, "T": self.T,
                "nodes": self.n_nodes, "domain": self.domain.to_dict()}

    def same_as(self, other: "ComplexGrid") -> bool:
        return (
            self is other
            or (
                self.domain == other.domain
                and self.h == other.h
                and self.dt == other.dt
                and self.T == other.T
                and self.n_space == other.n_space
            )
        )


def build_grid(domain: DomainSpec, h: float, dt: float, T: float, kappa: float | None = None) -> ComplexGrid:
    """Enumerate lattice points inside ``domain`` and classify them.

    Raises BadSpacing for nonpositive h, dt, T and EmptyInterior when no node
    keeps all of its axis arms inside the domain.
    """
    if not (h > 0 and dt > 0 and T > 0):
        raise BadSpacing(f"need h, dt, T > 0 (got h={h}, dt={dt}, T={T})")
    steps = T / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise BadSpacing(f"T={T} is not a whole number of steps dt={dt}")
    dim = 2 * domain.n
    if kappa is None:
        kappa = math.sqrt(dim)
    c = np.asarray(domain.center)
    reach = domain.diameter / 2 if domain.kind == "ball" else float(np.max(domain.radii))
    m = int(math.floor(reach / h)) + 1
    axis = np.arange(-m, m + 1)
    # lexicographic order of integer lattice coordinates (x1, y1, x2, y2)
    lattice = np.array(list(itertools.product(axis, repeat=dim)), dtype=np.int64).reshape(-1, dim)
    pts = c + h * lattice
    inside = domain.contains(pts)
    lattice, pts = lattice[inside], pts[inside]

    arms_out = np.zeros(len(pts), dtype=bool)
    for d in range(dim):
        e = np.zeros(dim)
        e[d] = h
        arms_out |= ~domain.contains(pts + e) | ~domain.contains(pts - e)
    cls = np.where(arms_out, SPATIAL_BOUNDARY, INTERIOR).astype(np.int8)
    if not np.any(cls == INTERIOR):
        raise EmptyInterior(f"no interior node at h={h}")
    return ComplexGrid(domain=domain, h=float(h), dt=float(dt), T=float(T), points=pts,
                       lattice=lattice, spatial_class=cls, kappa=kappa)


def classify_parabolic_boundary(grid: ComplexGrid) -> np.ndarray:
    """Per-node class array of shape (n_times, n_space).

    Initial-slice wins over spatial-boundary at k = 0.
    """
    cls = np.broadcast_to(grid.spatial_class, (grid.n_times, grid.n_space)).copy()
    cls[0, :] = INITIAL_SLICE
    return cls


def boundary_projection(grid_or_domain, z, v, cutoff: float | None = None):
    """First exit of the ray z + s*v from the domain.

    Returns ``(s, z + s*v)`` with s > 0 the smallest root of rho along the ray.
    """
    domain = grid_or_domain.domain if isinstance(grid_or_domain, ComplexGrid) else grid_or_domain
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    cutoff = 2.0 * domain.diameter if cutoff is None else cutoff
    if not domain.rho(z) < 0:
        raise NoIntersection("ray origin is not inside the domain")
    if domain.kind == "ball":
        p = z - np.asarray(domain.center)
        b = float(p @ v)
        cc = float(p @ p) - domain.radii[0] ** 2
        s = -b + math.sqrt(b * b - cc)
    else:
        # smallest exit over the coordinate discs
        s = math.inf
        p = z - np.asarray(domain.center)
        for j, r in enumerate(domain.radii):
            pj, vj = p[2 * j: 2 * j + 2], v[2 * j: 2 * j + 2]
            a = float(vj @ vj)
            if a == 0:
                continue
            b = float(pj @ vj)
            cc = float(pj @ pj) - r**2
            s = min(s, (-b + math.sqrt(b * b - a * cc)) / a)
        if not math.isfinite(s):
            raise NoIntersection("ray never leaves the polydisc")
    if not (0 < s <= cutoff):
        raise NoIntersection(f"no boundary hit within {cutoff}")
    return s, z + s * v


def boundary_projection_many(domain: DomainSpec, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized exit distance for many rays (rows of z, v); v need not be unit."""
    z = np.asarray(z, dtype=float) - np.asarray(domain.center)
    v = np.asarray(v, dtype=float)
    if domain.kind == "ball":
        a = np.sum(v * v, axis=-1)
        b = np.sum(z * v, axis=-1)
        c = np.sum(z * z, axis=-1) - domain.radii[0] ** 2
        return (-b + np.sqrt(np.maximum(b * b - a * c, 0.0))) / a
    s = np.full(z.shape[:-1], np.inf)
    for j, r in enumerate(domain.radii):
        zj, vj = z[..., 2 * j: 2 * j + 2], v[..., 2 * j: 2 * j + 2]
        a = np.sum(vj * vj, axis=-1)
        b = np.sum(zj * vj, axis=-1)
        c = np.sum(zj * zj, axis=-1) - r**2
        with np.errstate(divide="ignore", invalid="ignore"):
            sj = np.where(a > 0, (-b + np.sqrt(np.maximum(b * b - a * c, 0.0))) / a, np.inf)
        s = np.minimum(s, sj)
    return s
