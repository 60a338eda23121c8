"""Backward-Euler solver for the Cauchy-Dirichlet problem

    (dd^c phi_t)^n = exp(d_t phi + F(t, z, phi)) g(z) dV

written in log form: phi_next = prev + dt * (log MA(phi_next) - log g - F(t_next, z, phi_next)).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateG, InnerDivergence
from .exprlang import CompiledExpr
from .fields import CheckReport, SliceField, SpaceTimeField
from .grid import ComplexGrid, DomainSpec, INTERIOR, build_grid
from .stencil import MAConvention, StencilFrameSet, default_frames, density_from_dirs, get_stencil

log = logging.getLogger(__name__)

MU_FLOOR = 1e-300


def _as_fn(obj, slot):
    if obj is None or callable(obj) and not isinstance(obj, str):
        return obj
    return CompiledExpr(obj, slot)


@dataclass(eq=False)
class FlowProblem:
    """Data (F, g, h, T, domain) of the flow.

    F, g, h are expression strings (compiled on construction) or callables with
    signatures F(t, points, r), g(points), h(t, points). ``conv`` fixes the
    density normalization used by solver and checkers alike.
    """

    domain: DomainSpec
    F: object
    g: object
    h: object
    T: float
    conv: MAConvention | None = None
    name: str = ""

    def __post_init__(self):
        self.F = _as_fn(self.F, "F")
        self.g = _as_fn(self.g, "g")
        self.h = _as_fn(self.h, "h")
        if self.conv is None:
            self.conv = MAConvention.default(self.domain.n)

    def F_at(self, t, points, r) -> np.ndarray:
        return np.asarray(self.F(t, points, r), dtype=float)

    def g_at(self, points) -> np.ndarray:
        if isinstance(self.g, CompiledExpr):
            return self.g(None, points)
        return np.asarray(self.g(points), dtype=float)

    def h_at(self, t, points) -> np.ndarray:
        return np.asarray(self.h(t, points), dtype=float)

    def boundary_fn(self):
        return lambda t, pts: self.h_at(t, pts)

    def boundary_field(self, grid: ComplexGrid) -> SpaceTimeField:
        """h sampled at every node (meaningful on the parabolic boundary only)."""
        return SpaceTimeField.from_function(grid, self.h_at)

    def expr_sources(self) -> dict:
        return {k: getattr(getattr(self, k), "src", None) for k in ("F", "g", "h")}

    def validate(self, grid: ComplexGrid, for_solver: bool = True, psh_tol: float = 1e-8,
                 r_range=(-10.0, 10.0)) -> dict:
        """Check the data hypotheses on the grid; returns the individual reports.

        Raises DegenerateG (solver use, g <= 0 at an interior node) and
        ValueError for g < 0, non-monotone F, or non-psh initial data.
        """
        g = self.g_at(grid.points)
        if np.any(g < 0):
            raise ValueError("g must be nonnegative on the grid")
        if for_solver and np.any(g[grid.interior] <= 0):
            bad = int(grid.interior[np.argmax(g[grid.interior] <= 0)])
            raise DegenerateG(f"g vanishes at interior node {bad}; the solver needs g > 0")
        mono = monotone_in_r(self.F, grid.points, grid.times, r_range)
        if not mono.verdict:
            raise ValueError(f"F is not nondecreasing in r (worst increment {mono.worst_margin:.3g})")
        st = get_stencil(grid, default_frames(grid.n))
        h0 = self.h_at(0.0, grid.points)
        lam = st.lambda_min(h0, self.boundary_fn(), 0.0)
        psh = CheckReport.from_margins(lam, psh_tol, index=grid.interior)
        if not psh.verdict:
            raise ValueError(f"initial data h(0, .) is not psh on the grid (margin {psh.worst_margin:.3g})")
        return {"F_monotone": mono, "h0_psh": psh}


def monotone_in_r(F, points, times, r_range=(-10.0, 10.0), ladder=17, tol=1e-12) -> CheckReport:
    """Sampled check that F(t, z, .) is nondecreasing; works for any callable F."""
    if isinstance(F, CompiledExpr):
        from .exprlang import validate_monotone_r

        return validate_monotone_r(F.expr, points, times, r_range, ladder, tol)
    rs = np.linspace(r_range[0], r_range[1], ladder)
    times = np.atleast_1d(times)
    vals = np.stack([np.asarray(F(times[:, None], points[None], r), dtype=float)
                     * np.ones((times.size, points.shape[0])) for r in rs], axis=-1)
    return CheckReport.from_margins(np.diff(vals, axis=-1), tol, keep=False)


@dataclass
class SolverParams:
    tol: float = 1e-8
    max_iter: int = 5000
    damping: float = 0.5
    frames: StencilFrameSet | None = None
    conv: MAConvention | None = None
    method: str = "fixed-point"
    mu: float = MU_FLOOR
    predictor: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("inner tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.method not in ("fixed-point", "newton"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class StepLog:
    step: int
    iterations: int
    residual: float


@dataclass
class _StepContext:
    grid: ComplexGrid
    prob: FlowProblem
    params: SolverParams
    t_next: float
    prev: np.ndarray
    log_g: np.ndarray
    stencil: object
    conv: MAConvention
    z_int: np.ndarray = field(init=False)

    def __post_init__(self):
        self.z_int = self.grid.points[self.grid.interior]

    def dirs(self, phi):
        return self.stencil.dir_values(phi, self.prob.boundary_fn(), self.t_next)

    def rhs(self, phi, D=None):
        """prev + dt * (log MA - log g - F) on interior nodes."""
        D = self.dirs(phi) if D is None else D
        dens = density_from_dirs(D, self.grid.n, self.conv)
        I = self.grid.interior
        F = self.prob.F_at(self.t_next, self.z_int, phi[I])
        return self.prev[I] + self.grid.dt * (np.log(np.maximum(dens, self.params.mu)) - self.log_g - F)


def _fixed_point(ctx: _StepContext, phi: np.ndarray, iters: int):
    I = ctx.grid.interior
    omega = ctx.params.damping
    first = None
    upd = math.inf
    it = 0
    est = math.inf
    for it in range(1, iters + 1):
        G = ctx.rhs(phi)
        res = G - phi[I]
        prev_upd = upd
        upd = float(np.max(np.abs(res))) if res.size else 0.0
        if first is None:
            first = upd
        phi[I] += omega * res
        # a-posteriori distance to the fixed point from the observed contraction rate
        rho = upd / prev_upd if prev_upd > 0 else 0.0
        est = omega * upd / (1.0 - rho) if rho < 1 else math.inf
        if upd == 0.0 or est < ctx.params.tol:
            break
    return phi, it, (est if upd > 0 else 0.0), first, upd


def _newton(ctx: _StepContext, phi: np.ndarray):
    grid = ctx.grid
    I = grid.interior
    n_int = I.size
    dt = grid.dt
    st = ctx.stencil
    pos = np.full(grid.n_space, -1)
    pos[I] = np.arange(n_int)
    first = None
    res_norm = math.inf
    total = 0
    for it in range(1, ctx.params.max_iter + 1):
        total = it
        D = ctx.dirs(phi)
        G = ctx.rhs(phi, D)
        R = phi[I] - G
        res_norm = float(np.max(np.abs(R)))
        if first is None:
            first = res_norm
        if res_norm < ctx.params.tol:
            break
        dens, arg = density_from_dirs(D, grid.n, ctx.conv, return_argmin=True)
        n = grid.n
        M = sp.csr_matrix((n_int, grid.n_space))
        for d, op in enumerate(st.ops):
            f, j = divmod(d, n)
            frame_dirs = D[f * n:(f + 1) * n]
            active = (arg == f) & np.all(frame_dirs > 0, axis=0) & (dens > ctx.params.mu)
            if not np.any(active):
                continue
            w = np.where(active, 1.0 / np.where(active, D[d], 1.0), 0.0)
            M = M + sp.diags(w) @ op.A
        M = M[:, I]
        eps = 1e-6
        Fr = (ctx.prob.F_at(ctx.t_next, ctx.z_int, phi[I] + eps)
              - ctx.prob.F_at(ctx.t_next, ctx.z_int, phi[I] - eps)) / (2 * eps)
        J = sp.identity(n_int, format="csr") - dt * M + sp.diags(dt * Fr)
        step = spla.spsolve(J.tocsc(), -R)
        if np.all(np.isfinite(step)) and np.max(np.abs(step)) < ctx.params.tol:
            # increment below tolerance: the residual is at its rounding floor (large dt)
            phi[I] += step
            res_norm = float(np.max(np.abs(step)))
            break
        trial = phi.copy()
        trial[I] += step
        R_trial = trial[I] - ctx.rhs(trial)
        if np.all(np.isfinite(R_trial)) and np.max(np.abs(R_trial)) < res_norm:
            phi = trial
        else:
            # non-monotone Newton step: fall back to damped fixed-point sweeps
            phi, k, _, _, _ = _fixed_point(ctx, phi, 20)
            total += k
    return phi, total, res_norm, first


def implicit_step(prev: SliceField, t_next: float, prob: FlowProblem, params: SolverParams | None = None,
                  stats: dict | None = None) -> SliceField:
    """One backward-Euler step from ``prev`` to time ``t_next``; boundary nodes pinned to h."""
    params = SolverParams() if params is None else params
    grid = prev.grid
    I = grid.interior
    g = prob.g_at(grid.points[I])
    if np.any(g <= 0):
        bad = int(I[np.argmax(g <= 0)])
        raise DegenerateG(f"g <= 0 at interior node {bad}")
    conv = params.conv or prob.conv
    frames = params.frames or default_frames(grid.n)
    ctx = _StepContext(grid, prob, params, float(t_next), np.asarray(prev.values, dtype=float),
                       np.log(g), get_stencil(grid, frames), conv)
    phi = ctx.prev.copy()
    B = grid.boundary
    phi[B] = prob.h_at(t_next, grid.points[B])
    if params.predictor:
        # carry the boundary increment inside harmonically so the first iterate keeps prev's curvature
        t_prev = t_next - grid.dt
        st = ctx.stencil

        def hit_inc(d):
            hits = st.ops[d].hits
            return prob.h_at(t_next, hits) - prob.h_at(t_prev, hits)

        phi[I] += st.harmonic_extension(phi[B] - ctx.prev[B], hit_inc)
    if params.method == "newton":
        phi, iters, res, first = _newton(ctx, phi)
        last = res
        converged = res < params.tol
    else:
        phi, iters, res, first, last = _fixed_point(ctx, phi, params.max_iter)
        converged = res < params.tol
    if not np.all(np.isfinite(phi)):
        raise InnerDivergence(f"non-finite iterate at t={t_next}")
    if not converged:
        if last > first:
            raise InnerDivergence(f"inner iteration diverged at t={t_next} (residual {last:.3g} > {first:.3g})")
        warnings.warn(f"inner iteration stopped at max_iter with residual {res:.3g} at t={t_next}",
                      RuntimeWarning, stacklevel=2)
    if stats is not None:
        stats.update(iterations=iters, residual=res, converged=converged)
    k = int(round(t_next / grid.dt))
    return SliceField(grid, min(k, grid.n_times - 1), phi)


def solve_flow(prob: FlowProblem, grid: ComplexGrid, params: SolverParams | None = None,
               log_rows: list | None = None, validate: bool = True) -> SpaceTimeField:
    """March all slices; initial slice is h(0, .), boundary nodes equal h exactly."""
    params = SolverParams() if params is None else params
    if validate:
        prob.validate(grid)
    values = np.empty((grid.n_times, grid.n_space))
    values[0] = prob.h_at(0.0, grid.points)
    current = SliceField(grid, 0, values[0])
    for k in range(1, grid.n_times):
        stats = {}
        current = implicit_step(current, grid.times[k], prob, params, stats)
        values[k] = current.values
        if log_rows is not None:
            log_rows.append(StepLog(k, stats["iterations"], stats["residual"]))
        log.debug("step %d: %d iterations, residual %.3e", k, stats["iterations"], stats["residual"])
    return SpaceTimeField(grid, values)


def boundary_residual(u: SpaceTimeField, prob: FlowProblem) -> float:
    """max |u - h| over the initial slice and the spatial-boundary nodes."""
    grid = u.grid
    hv = prob.boundary_field(grid).values
    mask = np.zeros((grid.n_times, grid.n_space), dtype=bool)
    mask[0] = True
    mask[:, grid.spatial_class != INTERIOR] = True
    return float(np.max(np.abs(u.values - hv)[mask]))


def make_grid(prob: FlowProblem, h: float, dt: float) -> ComplexGrid:
    return build_grid(prob.domain, h, dt, prob.T)
