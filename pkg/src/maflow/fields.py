"""Discrete space-time fields, slices, time differences, and check reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, IndexOutOfRange, TooFewSlices
from .grid import ComplexGrid, INTERIOR


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SliceField:
    grid: ComplexGrid
    k: int
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_space,):
            raise ValueError(f"slice needs {self.grid.n_space} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("slice values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def t(self) -> float:
        return float(self.grid.times[self.k])


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Values on every (time, space) node, stored as an (n_times, n_space) array."""

    grid: ComplexGrid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        shape = (self.grid.n_times, self.grid.n_space)
        if v.shape != shape:
            raise ValueError(f"field needs shape {shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: ComplexGrid, fn) -> "SpaceTimeField":
        """Sample ``fn(t, points)`` on the grid; ``t`` arrives as a column vector."""
        vals = fn(grid.times[:, None], grid.points[None, :, :])
        return cls(grid, np.broadcast_to(vals, (grid.n_times, grid.n_space)))

    @classmethod
    def constant(cls, grid: ComplexGrid, c: float) -> "SpaceTimeField":
        return cls(grid, np.full((grid.n_times, grid.n_space), float(c)))

    def slice(self, k: int) -> SliceField:
        return slice_field(self, k)

    def with_values(self, values) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, values)

    def __add__(self, other):
        other_vals = other.values if isinstance(other, SpaceTimeField) else other
        return self.with_values(self.values + other_vals)

    def __sub__(self, other):
        other_vals = other.values if isinstance(other, SpaceTimeField) else other
        return self.with_values(self.values - other_vals)


@dataclass
class CheckReport:
    """Outcome of a nodal inequality check.

    ``worst_node`` is a flat space-time index ``k * n_space + i`` (or a plain
    sample index for checks not tied to a grid); ties go to the lowest index.
    """

    verdict: bool
    worst_margin: float
    worst_node: int
    tol: float
    margins: np.ndarray | None = field(default=None, repr=False)
    notes: dict = field(default_factory=dict)

    @classmethod
    def from_margins(cls, margins, tol: float, index=None, keep: bool = True, **notes) -> "CheckReport":
        m = np.asarray(margins, dtype=float).ravel()
        if m.size == 0:
            return cls(True, float("inf"), -1, tol, m if keep else None, notes)
        j = int(np.argmin(m))  # argmin returns the first minimum: lowest index wins ties
        worst = float(m[j])
        node = int(index[j]) if index is not None else j
        return cls(bool(worst >= -tol), worst, node, tol, m if keep else None, notes)

    @property
    def passed(self) -> bool:
        return self.verdict

    def to_json(self) -> dict:
        out = {
            "verdict": "pass" if self.verdict else "fail",
            "worstMargin": self.worst_margin,
            "worstNode": self.worst_node,
            "tol": self.tol,
        }
        if self.notes:
            out["notes"] = self.notes
        return out


def slice_field(f: SpaceTimeField, k: int) -> SliceField:
    if not 0 <= k < f.grid.n_times:
        raise IndexOutOfRange(f"slice {k} outside 0..{f.grid.n_times - 1}")
    return SliceField(f.grid, k, f.values[k])


def time_derivative(f: SpaceTimeField, mode: str = "forward") -> SpaceTimeField:
    """Finite-difference time derivative.

    forward: (u[k+1]-u[k])/dt, last slice repeats the previous value.
    backward: (u[k]-u[k-1])/dt, first slice repeats the next value.
    centered: (u[k+1]-u[k-1])/(2dt) inside, one-sided at both ends.
    """
    u = f.values
    K = u.shape[0]
    if K < 2:
        raise TooFewSlices("time derivative needs at least two slices")
    dt = f.grid.dt
    d = np.diff(u, axis=0) / dt
    if mode == "forward":
        out = np.vstack([d, d[-1:]])
    elif mode == "backward":
        out = np.vstack([d[:1], d])
    elif mode == "centered":
        out = np.empty_like(u)
        out[0], out[-1] = d[0], d[-1]
        if K > 2:
            out[1:-1] = (u[2:] - u[:-2]) / (2 * dt)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return f.with_values(out)


def second_time_difference(f: SpaceTimeField) -> np.ndarray:
    """(u[k+1] - 2u[k] + u[k-1]) / dt^2 on interior times, shape (K-2, n_space)."""
    u = f.values
    if u.shape[0] < 3:
        raise TooFewSlices("need at least three slices")
    return (u[2:] - 2 * u[1:-1] + u[:-2]) / f.grid.dt**2


def check_same_grid(*fields) -> ComplexGrid:
    g0 = fields[0].grid
    for f in fields[1:]:
        if not g0.same_as(f.grid):
            raise GridMismatch("fields live on different grids")
    return g0


def linf_distance(a: SpaceTimeField, b: SpaceTimeField, region: str = "all") -> float:
    grid = check_same_grid(a, b)
    diff = np.abs(a.values - b.values)
    if region == "interior":
        diff = diff[1:, grid.spatial_class == INTERIOR]
    elif region != "all":
        raise ValueError(f"unknown region {region!r}")
    return float(diff.max()) if diff.size else 0.0


def is_parabolic_potential(f: SpaceTimeField, tol: float = 1e-8, frames=None) -> CheckReport:
    """Every slice must have minimal directional second difference >= -tol at interior nodes."""
    from .stencil import default_frames, lambda_min_values

    grid = f.grid
    frames = default_frames(grid.n) if frames is None else frames
    lam = lambda_min_values(grid, frames, f.values)  # (n_times, n_interior)
    idx = np.arange(grid.n_times)[:, None] * grid.n_space + grid.interior[None, :]
    return CheckReport.from_margins(lam, tol, index=idx.ravel())
