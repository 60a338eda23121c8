"""Plurisubharmonic envelope of an obstacle and the Perron envelope of a family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyFamily, MaxIterExceeded
from .fields import SliceField, SpaceTimeField, check_same_grid
from .stencil import StencilFrameSet, get_stencil


@dataclass
class EnvelopeInfo:
    iterations: int
    last_update: float
    converged: bool


def _diagonals(st) -> list:
    I = st.grid.interior
    return [np.asarray(op.A[np.arange(I.size), I]).ravel() for op in st.ops]


def _zero_level(st, u: np.ndarray, diags: list) -> np.ndarray:
    """Per direction, the value at each interior node that makes d_v vanish; NaN on cut rows."""
    I = st.grid.interior
    out = np.empty((len(st.ops), I.size))
    for j, op in enumerate(st.ops):
        diag = diags[j]
        rest = op.A @ u - diag * u[I]
        val = -rest / diag
        if op.hits.shape[0]:
            val[op.cut] = np.nan
        out[j] = val
    return out


def psh_envelope(obstacle: SliceField, frames: StencilFrameSet | None = None, tol: float = 1e-10,
                 max_iter: int = 200_000, mode: str = "jacobi", return_info: bool = False):
    """Largest discrete psh function below ``obstacle``.

    Monotone iteration u <- min(obstacle, min over directions of the value that
    zeroes the directional second difference), started from the obstacle.
    Collar nodes carry no psh constraint and keep the obstacle value. On
    non-convergence raises MaxIterExceeded with the last iterate in ``.last``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    grid = obstacle.grid
    st = get_stencil(grid, frames)
    I = grid.interior
    v = np.asarray(obstacle.values, dtype=float)
    u = v.copy()
    upd = np.inf
    it = 0
    if mode == "jacobi":
        diags = _diagonals(st)
        for it in range(1, max_iter + 1):
            cand = np.nanmin(_zero_level(st, u, diags), axis=0)
            new = np.minimum(v[I], cand)
            upd = float(np.max(np.abs(new - u[I])))
            u[I] = new
            if upd < tol:
                break
    elif mode == "gauss-seidel":
        rows = [(op.A.tocsr(), op.cut if op.hits.shape[0] else np.zeros(I.size, bool)) for op in st.ops]
        for it in range(1, max_iter + 1):
            upd = 0.0
            for r, i in enumerate(I):
                best = v[i]
                for A, cut in rows:
                    if cut[r]:
                        continue
                    lo, hi = A.indptr[r], A.indptr[r + 1]
                    cols, vals = A.indices[lo:hi], A.data[lo:hi]
                    diag = vals[cols == i].sum()
                    rest = vals @ u[cols] - diag * u[i]
                    best = min(best, -rest / diag)
                upd = max(upd, abs(best - u[i]))
                u[i] = best
            if upd < tol:
                break
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = SliceField(grid, obstacle.k, u)
    info = EnvelopeInfo(it, upd, upd < tol)
    if not info.converged:
        err = MaxIterExceeded(f"envelope iteration stopped after {it} sweeps (last update {upd:.3g})")
        err.last = out
        err.info = info
        raise err
    return (out, info) if return_info else out


def psh_envelope_field(v: SpaceTimeField, frames=None, tol: float = 1e-10, max_iter: int = 200_000) -> SpaceTimeField:
    """Apply the slice envelope at every time."""
    vals = np.empty_like(v.values)
    for k in range(v.grid.n_times):
        vals[k] = psh_envelope(v.slice(k), frames, tol, max_iter).values
    return v.with_values(vals)


def perron_envelope(family, tol: float = 0.0) -> SpaceTimeField:
    """Pointwise maximum of a family of fields on one grid."""
    family = list(family)
    if not family:
        raise EmptyFamily("Perron envelope of an empty family")
    check_same_grid(*family)
    return family[0].with_values(np.max(np.stack([f.values for f in family]), axis=0))
