"""Nodal checks of the four sub/supersolution notions on discrete fields.

Margins are signed so that a check passes when every margin is >= -tol:

* pluripotential subsolution:   MA(u_t) - g * exp(d_t^+ u + F)
* viscosity subsolution:        MA(q) - g * exp(q_t + F)       (q touches from above)
* viscosity supersolution:      g * exp(q_t + F) - MA_+(q)     (q touches from below)
* pluripotential supersolution: g * exp(d_t^- v + F) - MA(v_t)
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateFit, NonpositiveA, NotParabolicPotential, NotSemiConcave
from .fields import CheckReport, SpaceTimeField, is_parabolic_potential, time_derivative
from .grid import ComplexGrid
from .stencil import density_from_dirs, get_stencil, levi_dirs_from_hessian

DEFAULT_SEMICONCAVITY_SCREEN = 1e3


def legendre_density(f, a):
    """a*f + a - a*log(a); its supremum over a > 0 is exp(f), attained at a = exp(f)."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise NonpositiveA("a must be positive")
    out = a * f + a - a * np.log(a)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class LegendreParams:
    mode: str = "analytic"
    a_values: np.ndarray | None = None
    n_samples: int = 64

    def __post_init__(self):
        if self.mode not in ("analytic", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.a_values is not None:
            self.a_values = np.asarray(self.a_values, dtype=float)
            if np.any(self.a_values <= 0):
                raise NonpositiveA("a-values must be positive")

    def samples_for(self, f: np.ndarray) -> np.ndarray:
        if self.a_values is not None:
            return self.a_values
        return np.exp(np.linspace(np.min(f) - 2.0, np.max(f) + 2.0, self.n_samples))


def _st_index(grid: ComplexGrid, ks: np.ndarray) -> np.ndarray:
    return (ks[:, None] * grid.n_space + grid.interior[None, :]).ravel()


def _g_interior(prob, grid):
    return prob.g_at(grid.points[grid.interior])


def _weak_average(grid: ComplexGrid, ks: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Pair nodal margins with tensor-product hat functions (weights 1/6, 2/3, 1/6 per axis).

    The weights integrate the hat against the piecewise-multilinear interpolant
    exactly; neighbours without a margin (boundary collar, initial slice) are
    dropped and the remaining weights renormalized.
    """
    I = grid.interior
    K = M.shape[0]
    pos = np.full(grid.n_space, -1)
    pos[I] = np.arange(I.size)
    out = M.copy()
    # space axes
    for d in range(grid.dim):
        acc = (2 / 3) * out
        wsum = np.full(I.size, 2 / 3)
        for s in (1, -1):
            lat = grid.lattice[I].copy()
            lat[:, d] += s
            nb = pos[np.maximum(grid.lookup(lat), 0)]
            nb = np.where(grid.lookup(lat) >= 0, nb, -1)
            ok = nb >= 0
            acc[:, ok] += out[:, nb[ok]] / 6
            wsum[ok] += 1 / 6
        out = acc / wsum
    # time axis
    acc = (2 / 3) * out
    wsum = np.full((K, 1), 2 / 3)
    acc[1:] += out[:-1] / 6
    wsum[1:] += 1 / 6
    acc[:-1] += out[1:] / 6
    wsum[:-1] += 1 / 6
    return acc / wsum


def _report(grid, ks, M, tol, weak=False, **notes):
    if weak:
        M = _weak_average(grid, ks, M)
    return CheckReport.from_margins(M, tol, index=_st_index(grid, ks), **notes)


def psh_tolerance(grid: ComplexGrid, C: float | None = None) -> float:
    from .harness import SLACK_C

    return (SLACK_C if C is None else C) * grid.h**2


def _field_density(u: SpaceTimeField, prob, frames=None, plus=False):
    st = get_stencil(u.grid, frames)
    return st.density(u.values, prob.conv, plus=plus)


def check_pluripotential_subsolution(u: SpaceTimeField, prob, params: LegendreParams | None = None,
                                     tol: float = 1e-8, frames=None, weak: bool = False,
                                     slices=None, psh_tol: float | None = None) -> CheckReport:
    """MA(u_t) >= g * exp(f), f = forward time difference + F(t, z, u), at interior nodes.

    Sampled mode replaces exp(f) by the maximum of the Legendre family over the
    a-samples. ``slices`` restricts the time indices checked (default 1..K).
    """
    params = LegendreParams() if params is None else params
    grid = u.grid
    pt = psh_tolerance(grid) if psh_tol is None else psh_tol
    pre = is_parabolic_potential(u, pt, frames)
    if not pre.verdict:
        raise NotParabolicPotential(f"slice not psh (margin {pre.worst_margin:.3g} at node {pre.worst_node})")
    ks = np.arange(1, grid.n_times) if slices is None else np.asarray(slices)
    I = grid.interior
    MA = _field_density(u, prob, frames)[ks]
    dtu = time_derivative(u, "forward").values[ks][:, I]
    t = grid.times[ks][:, None]
    F = prob.F_at(t, grid.points[I][None], u.values[ks][:, I])
    f = dtu + F
    g = _g_interior(prob, grid)[None, :]
    if params.mode == "analytic":
        rhs = g * np.exp(f)
    else:
        a = params.samples_for(f)
        rhs = g * np.max(legendre_density(f[..., None], a), axis=-1)
    return _report(grid, ks, MA - rhs, tol, weak, mode=params.mode)


def check_pluripotential_supersolution(v: SpaceTimeField, prob, tol: float = 1e-8, frames=None,
                                       screen: float = DEFAULT_SEMICONCAVITY_SCREEN, weak: bool = False,
                                       slices=None) -> CheckReport:
    """MA(v_t) <= g * exp(backward time difference + F(t, z, v)) at interior nodes."""
    from .regularize import semiconcavity_constant

    grid = v.grid
    if grid.n_times >= 3:
        sc = semiconcavity_constant(v)
        if sc > screen:
            raise NotSemiConcave(f"time second differences reach {sc:.3g} > {screen:.3g}")
    ks = np.arange(1, grid.n_times) if slices is None else np.asarray(slices)
    I = grid.interior
    MA = _field_density(v, prob, frames)[ks]
    dtv = time_derivative(v, "backward").values[ks][:, I]
    t = grid.times[ks][:, None]
    F = prob.F_at(t, grid.points[I][None], v.values[ks][:, I])
    rhs = _g_interior(prob, grid)[None, :] * np.exp(dtv + F)
    return _report(grid, ks, rhs - MA, tol, weak)


# ---------------------------------------------------------------------------
# viscosity checks via fitted quadratic tests


@dataclass
class QuadraticTest:
    """q(t, z) = const + grad . (t - t0, z - z0) + 1/2 (.)^T hess (.), variables (t, x1, y1, ...).

    Tests are C^{1,2}: the time row and column of ``hess`` hold only the free
    time penalty used to dominate neighbouring slices.
    """

    node: tuple
    base: np.ndarray
    const: float
    grad: np.ndarray
    hess: np.ndarray
    side: str = "above"

    def __call__(self, t, z):
        d = np.concatenate([[t - self.base[0]], np.asarray(z) - self.base[1:]])
        return float(self.const + self.grad @ d + 0.5 * d @ self.hess @ d)

    @property
    def time_slope(self) -> float:
        return float(self.grad[0])

    @property
    def spatial_hessian(self) -> np.ndarray:
        return self.hess[1:, 1:]


@lru_cache(maxsize=8)
def _offsets(dim: int, radius2: int = 4) -> np.ndarray:
    rng = range(-2, 3)
    offs = [o for o in itertools.product(rng, repeat=dim) if sum(x * x for x in o) <= radius2]
    return np.array(offs, dtype=np.int64)


def _features(dim: int, dtau: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Columns: 1, tau, zeta_a, then 1/2 zeta_a^2 and zeta_a zeta_b (a < b)."""
    cols = [np.ones_like(dtau), dtau]
    cols += [zeta[:, a] for a in range(dim)]
    for a in range(dim):
        for b in range(a, dim):
            cols.append(0.5 * zeta[:, a] ** 2 if a == b else zeta[:, a] * zeta[:, b])
    return np.stack(cols, axis=1)


def _unpack_hessian(coef: np.ndarray, dim: int) -> np.ndarray:
    H = np.zeros(coef.shape[:-1] + (dim, dim))
    j = 2 + dim
    for a in range(dim):
        for b in range(a, dim):
            H[..., a, b] = coef[..., j]
            H[..., b, a] = coef[..., j]
            j += 1
    return H


@dataclass
class FittedTests:
    ks: np.ndarray
    slope: np.ndarray  # (K', n_int)
    hess: np.ndarray  # (K', n_int, 2n, 2n), physical units
    grad: np.ndarray  # (K', n_int, 2n)
    kappa: np.ndarray  # spatial curvature lift
    lam_t: np.ndarray  # time penalty coefficient
    u0: np.ndarray
    extra: dict = field(default_factory=dict)


def fit_tests(u: SpaceTimeField, side: str = "above", slices=None) -> FittedTests:
    """Least-squares quadratic tests at every interior node, lifted to touch ``u`` from one side.

    Neighbourhood: nodes within 2h (Euclidean) on slices k-1, k, k+1. The fit
    is pinned at the node; the smallest spatial curvature kappa*|z-z0|^2 making
    q dominate on the node's own slice is added (subtracted from below), and a
    time penalty lam*(t-t0)^2 handles the neighbouring slices. Neither changes
    the time slope at the node, and only kappa changes the Levi form.
    """
    grid = u.grid
    dim, h, dt = grid.dim, grid.h, grid.dt
    sign = 1.0 if side == "above" else -1.0
    I = grid.interior
    K = grid.n_times
    ks = np.arange(1, K) if slices is None else np.asarray(slices)
    offs = _offsets(dim)
    nbr = grid.lookup(grid.lattice[I][:, None, :] + offs[None, :, :])  # (n_int, n_off)
    avail = nbr >= 0
    n_unknown = 2 + dim + dim * (dim + 1) // 2

    slope = np.zeros((ks.size, I.size))
    grad = np.zeros((ks.size, I.size, dim))
    hess = np.zeros((ks.size, I.size, dim, dim))
    kappa = np.zeros((ks.size, I.size))
    lam_t = np.zeros((ks.size, I.size))
    u0 = u.values[ks][:, I]

    dts_all = np.array([-1, 0, 1])
    has_next = ks + 1 <= K - 1
    patterns, pat_of = np.unique(avail, axis=0, return_inverse=True)
    pat_of = np.asarray(pat_of).ravel()
    for nxt in (True, False):
        row_sel = np.flatnonzero(has_next == nxt)
        if row_sel.size == 0:
            continue
        tsteps = dts_all if nxt else dts_all[:2]
        for pid, av in enumerate(patterns):
            col_sel = np.flatnonzero(pat_of == pid)
            rows = np.repeat(row_sel, col_sel.size)
            cols = np.tile(col_sel, row_sel.size)
            sp_off = offs[av]
            tau = np.repeat(tsteps, sp_off.shape[0]).astype(float)
            zeta = np.tile(sp_off, (tsteps.size, 1)).astype(float)
            X = _features(dim, tau, zeta)
            if X.shape[0] < n_unknown or np.linalg.matrix_rank(X) < n_unknown:
                raise DegenerateFit(f"neighbourhood of {X.shape[0]} points cannot fit a quadratic")
            P = np.linalg.pinv(X)
            kk = ks[rows]
            nb_idx = nbr[cols][:, av]
            m_idx = np.arange(len(kk))[:, None]
            V = np.concatenate([u.values[kk + dk][m_idx, nb_idx] for dk in tsteps], axis=1)
            coef = V @ P.T  # scaled coordinates: tau in units of dt, zeta in units of h
            center = u.values[kk, I[cols]]
            coef[:, 0] = center
            q = coef @ X.T
            r = sign * (V - q)  # > 0 where q fails to dominate (resp. minorize)
            same = tau == 0
            zz = np.sum(zeta**2, axis=1)
            sel = same & (zz > 0)
            kap = np.maximum(0.0, np.max(r[:, sel] / zz[sel], axis=1)) if np.any(sel) else np.zeros(len(kk))
            r2 = r - kap[:, None] * zz[None, :]
            other = tau != 0
            lt = np.maximum(0.0, np.max(r2[:, other] / tau[other] ** 2, axis=1)) if np.any(other) else np.zeros(len(kk))
            H = _unpack_hessian(coef, dim) + sign * 2 * kap[:, None, None] * np.eye(dim)
            slope[rows, cols] = coef[:, 1] / dt
            grad[rows, cols] = coef[:, 2:2 + dim] / h
            hess[rows, cols] = H / h**2
            kappa[rows, cols] = kap / h**2
            lam_t[rows, cols] = lt / dt**2
    return FittedTests(ks, slope, hess, grad, kappa, lam_t, u0)


def test_at(tests: FittedTests, u: SpaceTimeField, row: int, col: int, side: str = "above") -> QuadraticTest:
    """Materialize the fitted test at (ks[row], interior[col]) as a QuadraticTest."""
    grid = u.grid
    k = int(tests.ks[row])
    i = int(grid.interior[col])
    dim = grid.dim
    Hfull = np.zeros((dim + 1, dim + 1))
    Hfull[1:, 1:] = tests.hess[row, col]
    sign = 1.0 if side == "above" else -1.0
    Hfull[0, 0] = sign * 2 * tests.lam_t[row, col]
    grad = np.concatenate([[tests.slope[row, col]], tests.grad[row, col]])
    base = np.concatenate([[grid.times[k]], grid.points[i]])
    return QuadraticTest((k, i), base, float(tests.u0[row, col]), grad, Hfull, side)


def _quadratic_density(tests: FittedTests, grid, frames, conv, plus):
    from .stencil import default_frames

    frames = default_frames(grid.n) if frames is None else frames
    D = levi_dirs_from_hessian(tests.hess, frames)
    return density_from_dirs(D, grid.n, conv, plus=plus)


def check_viscosity_subsolution(u: SpaceTimeField, prob, tol: float = 1e-8, frames=None,
                                slices=None) -> CheckReport:
    """MA(q) >= g * exp(q_t + F(t0, z0, u(t0, z0))) for the fitted test q from above at each node."""
    grid = u.grid
    tests = fit_tests(u, "above", slices)
    lhs = _quadratic_density(tests, grid, frames, prob.conv, plus=False)
    I = grid.interior
    t = grid.times[tests.ks][:, None]
    F = prob.F_at(t, grid.points[I][None], tests.u0)
    rhs = _g_interior(prob, grid)[None, :] * np.exp(tests.slope + F)
    return _report(grid, tests.ks, lhs - rhs, tol)


def check_viscosity_supersolution(v: SpaceTimeField, prob, tol: float = 1e-8, frames=None,
                                  slices=None) -> CheckReport:
    """MA_+(q) <= g * exp(q_t + F(t0, z0, v(t0, z0))) for the fitted test q from below at each node."""
    grid = v.grid
    tests = fit_tests(v, "below", slices)
    lhs = _quadratic_density(tests, grid, frames, prob.conv, plus=True)
    I = grid.interior
    t = grid.times[tests.ks][:, None]
    F = prob.F_at(t, grid.points[I][None], tests.u0)
    rhs = _g_interior(prob, grid)[None, :] * np.exp(tests.slope + F)
    return _report(grid, tests.ks, rhs - lhs, tol)
