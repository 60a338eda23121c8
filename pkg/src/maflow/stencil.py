"""Wide-stencil monotone discretization of the complex Monge-Ampere density.

For a complex unit direction v (stored as a real 2n-vector) the Levi form
u_{v vbar} is approximated by

    d_v(u)(z) = [u(z+dv) + u(z-dv) + u(z+d iv) + u(z-d iv) - 4u(z)] / (4d^2).

When v is a multiple of an integer vector k the arm length is d = h|k|, so
every arm ends on a lattice node and d_v is exact on quadratics. Other
directions use d = h with multilinear interpolation, which keeps monotonicity
but carries an O(1) interpolation bias on curved functions. Arms cut by the
boundary use Shortley-Weller weights. The density is

    c_n * min over frames of prod_j max(d_{v_j}, 0),

which is nondecreasing in every neighbour value because all weights are
nonnegative.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import UnresolvableArm
from .grid import ComplexGrid, boundary_projection_many

_SNAP = 1e-10


@dataclass(frozen=True, eq=False)
class StencilFrameSet:
    """Frames of n orthonormal complex directions, shape (m, n, 2n); frame 0 is the coordinate frame."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.array(self.frames, dtype=float)
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)

    @property
    def m(self) -> int:
        return self.frames.shape[0]

    @property
    def n(self) -> int:
        return self.frames.shape[1]

    @property
    def directions(self) -> np.ndarray:
        """All directions, flattened frame-major: direction j of frame f is row f*n + j."""
        return self.frames.reshape(-1, 2 * self.n)

    def complex_frames(self) -> np.ndarray:
        return self.frames[..., 0::2] + 1j * self.frames[..., 1::2]

    def is_unitary(self, tol: float = 1e-12) -> bool:
        Z = self.complex_frames()
        gram = np.einsum("fja,fka->fjk", Z.conj(), Z)
        return bool(np.all(np.abs(gram - np.eye(self.n)) <= tol))


@dataclass(frozen=True)
class MAConvention:
    """Density normalization: discrete density of smooth u tends to c_n det(complex Hessian)."""

    c_n: float

    def __post_init__(self):
        if not self.c_n > 0:
            raise ValueError("c_n must be positive")

    @classmethod
    def default(cls, n: int) -> "MAConvention":
        # 4^n n! makes the n = 1 density equal to the Laplacian
        return cls(4.0**n * math.factorial(n))


def _from_complex(Z: np.ndarray) -> np.ndarray:
    """(m, n, n) complex columns-as-directions -> (m, n, 2n) real."""
    m, n = Z.shape[0], Z.shape[-1]
    out = np.empty((m, n, 2 * n))
    cols = np.swapaxes(Z, 1, 2)  # direction j = column j
    out[..., 0::2] = cols.real
    out[..., 1::2] = cols.imag
    return out


def _phase_fixed(z: np.ndarray) -> np.ndarray:
    """Multiply by a unit in {1, i, -1, -i} so the leading nonzero entry has re > 0, im >= 0."""
    lead = z[np.flatnonzero(np.abs(z) > 0)[0]]
    for unit in (1, 1j, -1, -1j):
        w = lead * unit
        if w.real > 0 and w.imag >= 0:
            return z * unit
    raise AssertionError("unreachable")


def _line_key(z: np.ndarray) -> tuple:
    # the complex line through z, via its projector; the Levi form only sees the line
    P = np.outer(z, z.conj()) / np.vdot(z, z).real
    return tuple(np.round(np.concatenate([P.real.ravel(), P.imag.ravel()]), 9) + 0.0)


def _gaussian_frames(n: int, count: int) -> list:
    """Unitary frames with Gaussian-integer columns, shortest arms first.

    Frames spanning the same pair of complex lines are identical in the
    continuum; only the representative with the shortest arms is kept.
    """
    if n == 1:
        cands = sorted((a * a + b * b, a, b) for a in range(1, 8) for b in range(0, 8) if math.gcd(a, b) == 1)
        return [np.array([[complex(a, b)]]) / math.sqrt(N) for N, a, b in cands[:count]]
    vals = range(-2, 3)
    gints = [complex(a, b) for a in vals for b in vals]
    cands = []
    for p in gints:
        for q in gints:
            ints = [int(round(x)) for x in (p.real, p.imag, q.real, q.imag)]
            if math.gcd(*ints) != 1:
                continue
            k = _phase_fixed(np.array([p, q]))
            w = _phase_fixed(np.array([-np.conj(k[1]), np.conj(k[0])]))
            N = int(round(np.vdot(k, k).real))
            # prefer the column ordering that starts nearest the coordinate frame
            if abs(k[0]) < abs(w[0]):
                k, w = w, k
            order = tuple(int(round(x)) for c in (k, w) for x in (-abs(c[0]), c[0].real, c[0].imag, c[1].real, c[1].imag))
            cands.append((N, order, k, w))
    cands.sort(key=lambda c: (c[0], c[1]))
    seen, out = set(), []
    for N, _, k, w in cands:
        key = tuple(sorted((_line_key(k), _line_key(w))))
        if key in seen:
            continue
        seen.add(key)
        out.append(np.column_stack([k, w]) / math.sqrt(N))
    return out[:count]


def make_frames(n: int, m: int | None = None) -> StencilFrameSet:
    """Lattice-aligned frame net, coordinate frame first.

    Frames have Gaussian-integer columns (p, q) and (-conj q, conj p), so all
    stencil arms land on lattice nodes; larger m adds frames with longer arms.
    For n = 1 every frame gives the same Levi form in the continuum and the
    default is the coordinate frame alone.
    """
    if m is None:
        m = 1 if n == 1 else 16
    if m < 1:
        raise ValueError("need at least one frame")
    if n not in (1, 2):
        raise ValueError("frames are implemented for n in {1, 2}")
    mats = _gaussian_frames(n, m)
    if len(mats) < m:
        raise ValueError(f"at most {len(mats)} lattice frames are available for n={n}")
    return StencilFrameSet(_from_complex(np.array(mats)))


def lattice_multiple(v, max_entry: int = 4, tol: float = 1e-9):
    """Integer vector k with v parallel to k and |k_j| <= max_entry, or None."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    nz = a > tol * a.max()
    r = v / a[nz].min()
    for mult in range(1, max_entry + 1):
        k = r * mult
        kr = np.round(k)
        if np.all(np.abs(k - kr) < tol * mult * max_entry) and np.abs(kr).max() <= max_entry:
            kr[~nz] = 0
            return kr.astype(np.int64)
    return None


@lru_cache(maxsize=4)
def default_frames(n: int) -> StencilFrameSet:
    return make_frames(n)


def times_i(v: np.ndarray) -> np.ndarray:
    """Multiply a complex vector stored as (x1, y1, ...) by i."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0::2] = -v[..., 1::2]
    out[..., 1::2] = v[..., 0::2]
    return out


@dataclass(eq=False)
class DirectionOperator:
    """Affine map slice -> d_v at the selected rows: A @ u + B @ boundary(hits)."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    hits: np.ndarray
    cut: np.ndarray  # rows needing boundary data

    def apply(self, U: np.ndarray, hit_values: np.ndarray | None = None) -> np.ndarray:
        """U has shape (..., n_space); returns (..., n_rows), NaN on cut rows without data."""
        U = np.asarray(U, dtype=float)
        flat = U.reshape(-1, U.shape[-1])
        out = (self.A @ flat.T).T
        if self.hits.shape[0]:
            if hit_values is None:
                out[:, self.cut] = np.nan
            else:
                hv = np.asarray(hit_values, dtype=float).reshape(-1, self.hits.shape[0])
                out = out + (self.B @ hv.T).T
        return out.reshape(U.shape[:-1] + (out.shape[-1],))


def _arm_entries(grid: ComplexGrid, Z: np.ndarray, step: np.ndarray):
    """Interpolation data for points Z + step.

    Returns (ok, cols, weights) with cols/weights of shape (rows, 2^dim); ok marks
    rows whose every positively weighted corner is a grid node.
    """
    dim = grid.dim
    h = grid.h
    rel = (Z + step - grid.lattice_origin) / h
    fl = np.floor(rel)
    frac = rel - fl
    up = frac > 1 - _SNAP
    fl[up] += 1
    frac[up] = 0.0
    frac[frac < _SNAP] = 0.0
    bits = np.array(list(itertools.product((0, 1), repeat=dim)))  # (2^dim, dim)
    corners = fl[:, None, :].astype(np.int64) + bits[None, :, :]
    w = np.prod(np.where(bits[None, :, :] == 1, frac[:, None, :], 1 - frac[:, None, :]), axis=-1)
    cols = grid.lookup(corners)
    needed = w > 0
    ok = np.all(~needed | (cols >= 0), axis=1)
    cols = np.where(needed & (cols >= 0), cols, 0)
    w = np.where(needed, w, 0.0)
    return ok, cols, w


def direction_operator(grid: ComplexGrid, v, rows: np.ndarray | None = None) -> DirectionOperator:
    """Build the d_v operator for spatial nodes ``rows`` (default: interior nodes)."""
    rows = grid.interior if rows is None else np.asarray(rows, dtype=np.int64)
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    Z = grid.points[rows]
    nr = rows.size
    k = lattice_multiple(v)
    h = grid.h if k is None else grid.h * float(np.linalg.norm(k))
    r_idx, c_idx, vals = [], [], []
    b_row, b_val, hit_pts = [], [], []
    cut = np.zeros(nr, dtype=bool)
    row_ids = np.arange(nr)
    n_hits = 0
    for w in (v, times_i(v)):
        lengths = []
        arm_data = []
        for s in (1.0, -1.0):
            ok, cols, wts = _arm_entries(grid, Z, s * h * w)
            L = np.full(nr, h)  # nominal arm length
            bad = ~ok
            if np.any(bad):
                dist = boundary_projection_many(grid.domain, Z[bad], np.broadcast_to(s * w, Z[bad].shape))
                L[bad] = dist
            lengths.append(L)
            arm_data.append((ok, cols, wts, bad, s))
        Lp, Lm = lengths
        for (ok, cols, wts, bad, s), L in zip(arm_data, lengths):
            coef = 2.0 / ((Lp + Lm) * L) / 4.0
            # interpolated arms
            sel = ok
            r_idx.append(np.repeat(row_ids[sel], cols.shape[1]))
            c_idx.append(cols[sel].ravel())
            vals.append((coef[sel, None] * wts[sel]).ravel())
            # centre weight
            r_idx.append(row_ids)
            c_idx.append(rows)
            vals.append(-coef)
            if np.any(bad):
                nb = int(bad.sum())
                hit_pts.append(Z[bad] + L[bad, None] * (s * w)[None, :])
                b_row.append(row_ids[bad])
                b_val.append(coef[bad])
                n_hits += nb
                cut |= bad
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))), shape=(nr, grid.n_space)
    )
    A.eliminate_zeros()
    if n_hits:
        hits = np.concatenate(hit_pts)
        B = sp.csr_matrix((np.concatenate(b_val), (np.concatenate(b_row), np.arange(n_hits))), shape=(nr, n_hits))
    else:
        hits = np.zeros((0, grid.dim))
        B = sp.csr_matrix((nr, 0))
    return DirectionOperator(A, B, hits, cut)


class Stencil:
    """All direction operators of a frame set on a grid's interior nodes."""

    def __init__(self, grid: ComplexGrid, frames: StencilFrameSet):
        if frames.n != grid.n:
            raise ValueError("frame dimension does not match the grid")
        self.grid = grid
        self.frames = frames
        self.ops = [direction_operator(grid, v) for v in frames.directions]

    @cached_property
    def _laplace_lu(self):
        n = self.frames.n
        A = sum(op.A for op in self.ops[:n])  # coordinate frame: the discrete Laplacian / 4
        return A, spla.splu(A[:, self.grid.interior].tocsc())

    def harmonic_extension(self, boundary_increment: np.ndarray, hit_increment=None) -> np.ndarray:
        """Interior values x with Laplacian(x) = 0 and x = increment on boundary nodes and arm hits.

        ``hit_increment(op_index)`` returns increments at that operator's cut-arm
        hit points; omitted hits count as zero.
        """
        A, lu = self._laplace_lu
        full = np.zeros(self.grid.n_space)
        full[self.grid.boundary] = boundary_increment
        rhs = A @ full
        for d, op in enumerate(self.ops[: self.frames.n]):
            if op.hits.shape[0] and hit_increment is not None:
                rhs = rhs + op.B @ hit_increment(d)
        return lu.solve(-rhs)

    def dir_values(self, U: np.ndarray, boundary=None, times=None) -> np.ndarray:
        """Second differences for every direction: shape (n_dirs, ..., n_interior).

        ``boundary(t, points)`` supplies Dirichlet data at cut arms; without it
        cut rows come back as NaN and are skipped by the reductions below.
        """
        U = np.asarray(U, dtype=float)
        out = []
        for op in self.ops:
            hv = None
            if boundary is not None and op.hits.shape[0]:
                if U.ndim == 1:
                    hv = boundary(times, op.hits)
                else:
                    tt = np.broadcast_to(np.asarray(times, dtype=float).reshape(-1, 1), (U.shape[0], 1))
                    hv = boundary(tt, op.hits[None, :, :])
                    hv = np.broadcast_to(hv, (U.shape[0], op.hits.shape[0]))
            out.append(op.apply(U, hv))
        return np.stack(out)

    def lambda_min(self, U, boundary=None, times=None) -> np.ndarray:
        D = self.dir_values(U, boundary, times)
        return np.nanmin(D, axis=0)

    def density(self, U, conv: MAConvention, boundary=None, times=None, plus: bool = False,
                return_argmin: bool = False):
        D = self.dir_values(U, boundary, times)
        return density_from_dirs(D, self.frames.n, conv, plus=plus, return_argmin=return_argmin)


def density_from_dirs(D: np.ndarray, n: int, conv: MAConvention, plus: bool = False, return_argmin: bool = False):
    """Reduce direction values (n_dirs, ...) to the MA density; NaN directions are skipped."""
    m = D.shape[0] // n
    Df = D.reshape((m, n) + D.shape[1:])
    prod = np.prod(np.maximum(Df, 0.0), axis=1)  # NaN propagates to invalid frames
    prod = np.where(np.isnan(prod), np.inf, prod)
    arg = np.argmin(prod, axis=0)
    dens = conv.c_n * np.take_along_axis(prod, arg[None], axis=0)[0]
    if plus:
        lam = np.nanmin(D, axis=0)
        dens = np.where(lam >= 0, dens, 0.0)
    if return_argmin:
        return dens, arg
    return dens


@lru_cache(maxsize=16)
def _cached_stencil(grid: ComplexGrid, frames: StencilFrameSet) -> Stencil:
    return Stencil(grid, frames)


def get_stencil(grid: ComplexGrid, frames: StencilFrameSet | None = None) -> Stencil:
    frames = default_frames(grid.n) if frames is None else frames
    return _cached_stencil(grid, frames)


def _values(slice_or_values):
    return getattr(slice_or_values, "values", slice_or_values)


def dir_second_diff(slice_field, node: int, v, h: float | None = None, boundary=None) -> float:
    """Levi-form second difference of a slice at one spatial node along complex direction v.

    ``h`` must match the grid spacing when given. Raises UnresolvableArm when an
    arm is cut by the boundary and no ``boundary(t, points)`` data is supplied.
    """
    grid = slice_field.grid
    if h is not None and not math.isclose(h, grid.h):
        raise ValueError("arm length must equal the grid spacing")
    op = direction_operator(grid, v, rows=np.array([node]))
    hv = None
    if op.hits.shape[0]:
        if boundary is None:
            raise UnresolvableArm(f"node {node}: arm cut by the boundary and no boundary data given")
        hv = boundary(slice_field.t, op.hits)
    return float(op.apply(_values(slice_field), hv)[0])


def lambda_min(slice_field, frames: StencilFrameSet | None = None, boundary=None) -> np.ndarray:
    """Minimal directional second difference at each interior node."""
    st = get_stencil(slice_field.grid, frames)
    return st.lambda_min(_values(slice_field), boundary, getattr(slice_field, "t", None))


def ma_density(slice_field, frames: StencilFrameSet | None = None, conv: MAConvention | None = None,
               boundary=None) -> np.ndarray:
    """c_n * min over frames of prod_j max(d_{v_j}, 0) at each interior node."""
    grid = slice_field.grid
    conv = MAConvention.default(grid.n) if conv is None else conv
    st = get_stencil(grid, frames)
    return st.density(_values(slice_field), conv, boundary, getattr(slice_field, "t", None))


def ma_density_plus(slice_field, frames: StencilFrameSet | None = None, conv: MAConvention | None = None,
                    boundary=None) -> np.ndarray:
    """ma_density where lambda_min >= 0, zero elsewhere."""
    grid = slice_field.grid
    conv = MAConvention.default(grid.n) if conv is None else conv
    st = get_stencil(grid, frames)
    return st.density(_values(slice_field), conv, boundary, getattr(slice_field, "t", None), plus=True)


def lambda_min_values(grid: ComplexGrid, frames: StencilFrameSet | None, U: np.ndarray, boundary=None, times=None):
    return get_stencil(grid, frames).lambda_min(U, boundary, times)


def ma_density_values(grid: ComplexGrid, frames, conv, U, boundary=None, times=None, plus=False):
    return get_stencil(grid, frames).density(U, conv, boundary, times, plus=plus)


# Exact Levi-form evaluation for quadratic test functions.

def levi_dirs_from_hessian(H: np.ndarray, frames: StencilFrameSet) -> np.ndarray:
    """Directional values (v^T H v + (iv)^T H (iv)) / 4 for real Hessians H of shape (..., 2n, 2n).

    This is what d_v returns on a quadratic with real Hessian H. Output shape
    (n_dirs, ...).
    """
    V = frames.directions
    W = times_i(V)
    qv = np.einsum("da,...ab,db->d...", V, H, V)
    qw = np.einsum("da,...ab,db->d...", W, H, W)
    return (qv + qw) / 4.0
