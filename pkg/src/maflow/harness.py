"""Desk-scale experiments: exact-case corpus, comparison gap, stability, convergence, agreement of the two subsolution checkers.

All inequalities are asserted with slack ``SLACK_C * (h^2 + dt)``; SLACK_C was
fixed once on the quad1 case and is not tuned per experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checkers import (
    LegendreParams,
    check_pluripotential_subsolution,
    check_pluripotential_supersolution,
    check_viscosity_subsolution,
)
from .errors import GridMismatch, MAFlowError, UnknownCase
from .exprlang import CompiledExpr
from .fields import SpaceTimeField, check_same_grid, linf_distance
from .grid import ComplexGrid, DomainSpec, INTERIOR, build_grid
from .solver import FlowProblem, SolverParams, solve_flow

SLACK_C = 1.0
R_SAMPLES = 33


def slack(grid: ComplexGrid, C: float = SLACK_C) -> float:
    return C * (grid.h**2 + grid.dt)


# ---------------------------------------------------------------------------
# exact-case registry


@dataclass
class ExactCase:
    name: str
    problem: FlowProblem
    exact: CompiledExpr | None
    h: float
    dt: float
    solver_ok: bool = True
    description: str = ""

    def __iter__(self):
        yield self.problem
        yield self.exact

    def grid(self, h: float | None = None, dt: float | None = None) -> ComplexGrid:
        return build_grid(self.problem.domain, h or self.h, dt or self.dt, self.problem.T)

    def exact_field(self, grid: ComplexGrid) -> SpaceTimeField:
        if self.exact is None:
            raise UnknownCase(f"case {self.name!r} has no exact field")
        return SpaceTimeField.from_function(grid, lambda t, p: self.exact(t, p))


def _quad1():
    dom = DomainSpec("ball", 1, 1.0)
    phi = "log(2)*t + absz2"
    prob = FlowProblem(dom, "0", "2", phi, 0.25, name="quad1")
    return ExactCase("quad1", prob, CompiledExpr(phi, "exact"), 0.1, 0.005,
                     description="n=1: phi = log(2) t + |z|^2, F = 0, g = 2, c_1 = 4")


def _quad2(a: float = 0.0):
    dom = DomainSpec("ball", 2, 1.0)
    phi = f"{a!r}*t + absz12 + 2*absz22"
    g = repr(64.0 * math.exp(-a))
    prob = FlowProblem(dom, "0", g, phi, 0.1, name="quad2")
    return ExactCase("quad2", prob, CompiledExpr(phi, "exact"), 0.2, 0.01,
                     description="n=2: phi = a t + |z1|^2 + 2|z2|^2, c_2 det H = 64 = e^a g")


def _tquad(a: float = 0.5, b: float = 1.0, c: float = 0.5):
    dom = DomainSpec("ball", 1, 1.0)
    phi = f"{a!r}*t + ({b!r} + {c!r}*t)*absz2"
    F = f"log({b!r} + {c!r}*t) - {a!r}"
    g = f"4*exp(-{c!r}*absz2)"
    prob = FlowProblem(dom, F, g, phi, 0.25, name="tquad")
    return ExactCase("tquad", prob, CompiledExpr(phi, "exact"), 0.1, 0.005,
                     description="n=1: phi = a t + (b + c t)|z|^2, F = log(b + c t) - a, g = 4 exp(-c|z|^2)")


def _degen():
    dom = DomainSpec("ball", 1, 1.0)
    phi = "log(2)*t + absz2"
    prob = FlowProblem(dom, "0", "2*max(x1, 0)", phi, 0.25, name="degen-check")
    return ExactCase("degen-check", prob, CompiledExpr(phi, "exact"), 0.1, 0.005, solver_ok=False,
                     description="g vanishes on the half disc x1 <= 0; exact field is a subsolution")


def _radial_env():
    dom = DomainSpec("ball", 1, 1.0)
    prob = FlowProblem(dom, "0", "1", "-absz2", 0.1, name="radial-env")
    return ExactCase("radial-env", prob, CompiledExpr("-1", "exact"), 0.1, 0.1, solver_ok=False,
                     description="obstacle -|z|^2 on the unit disc; its psh envelope is -1")


def _quartic():
    # Laplacian of |z|^2 + |z|^4/4 is 4 + 4|z|^2, so the stencil is not exact here
    dom = DomainSpec("ball", 1, 1.0)
    phi = "log(2)*t + absz2 + absz2^2/4"
    prob = FlowProblem(dom, "0", "2 + 2*absz2", phi, 0.25, name="quartic")
    return ExactCase("quartic", prob, CompiledExpr(phi, "exact"), 0.1, 0.005,
                     description="n=1: phi = log(2) t + |z|^2 + |z|^4/4, g = 2 + 2|z|^2; exposes the spatial order")


def _tconvex(beta: float = 1.0, dt: float = 0.005):
    # F absorbs the forward-difference bias of beta t^2, so the exact field is a
    # discrete equality case on grids with this dt
    dom = DomainSpec("ball", 1, 1.0)
    phi = f"{beta!r}*t^2 + absz2"
    F = f"log(2) - {beta!r}*(2*t + {dt!r})"
    prob = FlowProblem(dom, F, "2", phi, 1.0, name="tconvex")
    return ExactCase("tconvex", prob, CompiledExpr(phi, "exact"), 0.1, dt,
                     description="n=1: phi = beta t^2 + |z|^2, convex in time; equality case of the forward-difference check")


REGISTRY = {
    "quad1": _quad1,
    "quad2": _quad2,
    "tquad": _tquad,
    "degen-check": _degen,
    "radial-env": _radial_env,
    "tconvex": _tconvex,
    "quartic": _quartic,
}


def exact_case(name: str) -> ExactCase:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise UnknownCase(f"unknown exact case {name!r}") from None


# ---------------------------------------------------------------------------
# comparison principle


def parabolic_boundary_mask(grid: ComplexGrid) -> np.ndarray:
    mask = np.zeros((grid.n_times, grid.n_space), dtype=bool)
    mask[0] = True
    mask[:, grid.spatial_class != INTERIOR] = True
    return mask


def positive_gap_norm(F, G, grid: ComplexGrid, C0: float, samples: int = R_SAMPLES) -> float:
    """max over grid nodes x r in [-C0, C0] of (G - F)_+ ."""
    rs = np.linspace(-C0, C0, samples)
    t = grid.times[:, None]
    pts = grid.points[None]
    best = 0.0
    for r in rs:
        d = np.asarray(G(t, pts, r), dtype=float) - np.asarray(F(t, pts, r), dtype=float)
        best = max(best, float(np.max(d)))
    return max(best, 0.0)


@dataclass
class GapResult:
    lhs: float
    rhs: float
    slack: float
    hypotheses_verified: bool
    details: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.lhs
        yield self.rhs
        yield self.slack


def comparison_gap(u: SpaceTimeField, v: SpaceTimeField, probF: FlowProblem, probG: FlowProblem,
                   tol: float | None = None, check: bool = True) -> GapResult:
    """lhs = max(u - v); rhs = max over the parabolic boundary of (u - v)_+ + T ||(G - F)_+||."""
    grid = check_same_grid(u, v)
    if probF.domain != probG.domain:
        raise GridMismatch("problems live on different domains")
    tol = slack(grid) if tol is None else tol
    diff = u.values - v.values
    lhs = float(diff.max())
    bnd = float(max(0.0, diff[parabolic_boundary_mask(grid)].max()))
    C0 = float(max(np.abs(u.values).max(), np.abs(v.values).max()))
    gap = positive_gap_norm(probF.F_at, probG.F_at, grid, C0)
    rhs = bnd + grid.T * gap
    details = {"boundary_term": bnd, "F_gap": gap, "C0": C0}
    verified = True
    if check:
        try:
            sub = check_pluripotential_subsolution(u, probF, tol=tol)
            sup = check_pluripotential_supersolution(v, probG, tol=tol)
            details["sub_margin"] = sub.worst_margin
            details["super_margin"] = sup.worst_margin
            verified = sub.verdict and sup.verdict
        except MAFlowError as exc:
            details["check_error"] = repr(exc)
            verified = False
        if not verified:
            details["flag"] = "unverified hypotheses"
    return GapResult(lhs, rhs, rhs - lhs, verified, details)


# ---------------------------------------------------------------------------
# stability


def stability_experiment(prob: FlowProblem, perturbations, grid: ComplexGrid, params: SolverParams | None = None,
                         base: SpaceTimeField | None = None) -> list[dict]:
    """Solve each perturbed problem (F_j, h_j) and compare with the unperturbed solution.

    Each perturbation is a pair of F and h (expression strings, callables, or
    None to keep the base data). Rows hold alpha_j (boundary gap + T * F gap),
    e_j (sup distance), and whether e_j <= alpha_j + slack.
    """
    params = SolverParams() if params is None else params
    phi = solve_flow(prob, grid, params) if base is None else base
    mask = parabolic_boundary_mask(grid)
    h0 = prob.boundary_field(grid).values
    rows = []
    for j, (Fj, hj) in enumerate(perturbations):
        pj = FlowProblem(prob.domain, prob.F if Fj is None else Fj, prob.g, prob.h if hj is None else hj,
                         prob.T, prob.conv, name=f"{prob.name}-perturbed-{j}")
        phij = solve_flow(pj, grid, params)
        C0 = float(max(np.abs(phi.values).max(), np.abs(phij.values).max()))
        bgap = float(np.abs(pj.boundary_field(grid).values - h0)[mask].max())
        fgap = max(positive_gap_norm(prob.F_at, pj.F_at, grid, C0), positive_gap_norm(pj.F_at, prob.F_at, grid, C0))
        alpha = bgap + grid.T * fgap
        e = linf_distance(phij, phi)
        rows.append({"j": j, "alpha": alpha, "error": e, "bound_ok": e <= alpha + slack(grid)})
    return rows


# ---------------------------------------------------------------------------
# convergence


def convergence_study(case: str | ExactCase, levels: int, params: SolverParams | None = None,
                      h0: float | None = None, dt0: float | None = None) -> list[dict]:
    """Halve h per level with dt proportional to h^2; report sup errors and observed orders."""
    if levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    ec = exact_case(case) if isinstance(case, str) else case
    if ec.exact is None or not ec.solver_ok:
        raise ValueError(f"case {ec.name!r} has no solvable exact field")
    params = SolverParams() if params is None else params
    h0 = 2 * ec.h if h0 is None else h0
    dt0 = 2 * ec.dt if dt0 is None else dt0
    rows = []
    for level in range(levels):
        h = h0 / 2**level
        dt = dt0 / 4**level
        grid = build_grid(ec.problem.domain, h, dt, ec.problem.T)
        phi = solve_flow(ec.problem, grid, params)
        err = linf_distance(phi, ec.exact_field(grid))
        order = math.nan
        if rows and rows[-1]["error"] > 0 and err > 0:
            order = math.log(rows[-1]["error"] / err, 2)
        steps = grid.n_times - 1
        # inner tolerance accrues once per step on a stencil-exact case
        rows.append({"level": level, "h": h, "dt": dt, "steps": steps, "error": err,
                     "budget": params.tol * steps, "order": order})
    hs = np.array([r["h"] for r in rows])
    es = np.array([r["error"] for r in rows])
    fit = math.nan
    if np.all(es > 0):
        fit = float(np.polyfit(np.log(hs), np.log(es), 1)[0])
    for r in rows:
        r["fitted_order"] = fit
    return rows


# ---------------------------------------------------------------------------
# checker agreement


@dataclass
class AgreementRow:
    label: str
    pp_verdict: bool
    pp_margin: float
    visc_verdict: bool
    visc_margin: float
    in_band: bool

    @property
    def agree(self) -> bool:
        return self.pp_verdict == self.visc_verdict


@dataclass
class AgreementTable:
    rows: list
    tol: float
    band: float

    @property
    def matrix(self) -> np.ndarray:
        """Counts [[pp pass & visc pass, pp pass & visc fail], [pp fail & visc pass, both fail]]."""
        m = np.zeros((2, 2), dtype=int)
        for r in self.rows:
            m[0 if r.pp_verdict else 1, 0 if r.visc_verdict else 1] += 1
        return m

    @property
    def disagreements(self) -> list:
        """Verdict disagreements among fields whose margins both lie outside the band."""
        return [r for r in self.rows if not r.agree and not r.in_band]

    @property
    def worst_disagreement(self) -> float:
        bad = [r for r in self.rows if not r.agree]
        return max((min(abs(r.pp_margin), abs(r.visc_margin)) for r in bad), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.disagreements


def theorem_a_suite(corpus, prob: FlowProblem, tol: float, band_factor: float = 5.0) -> AgreementTable:
    """Run both subsolution checkers on every corpus entry.

    Entries are fields, (label, field) or (label, field, problem) tuples; the
    last form checks against its own data, e.g. shifted F_eps for a
    sup-convolution. A field is in the band when either margin lies within
    +-band_factor*tol; only fields outside the band must agree.
    """
    band = band_factor * tol
    rows = []
    for j, entry in enumerate(corpus):
        if isinstance(entry, SpaceTimeField):
            label, u, p = f"field-{j}", entry, prob
        elif len(entry) == 2:
            (label, u), p = entry, prob
        else:
            label, u, p = entry
        pp = check_pluripotential_subsolution(u, p, LegendreParams(), tol=tol)
        vs = check_viscosity_subsolution(u, p, tol=tol)
        in_band = abs(pp.worst_margin) <= band or abs(vs.worst_margin) <= band
        rows.append(AgreementRow(label, pp.verdict, pp.worst_margin, vs.verdict, vs.worst_margin, in_band))
    return AgreementTable(rows, tol, band)


# ---------------------------------------------------------------------------
# corpora


def random_psh_field(grid: ComplexGrid, rng: np.random.Generator, slope: float | None = None) -> SpaceTimeField:
    """slope * t + sum c_i |<z - p_i, w_i>|^2 + pluriharmonic part, with c_i >= 0.

    The pluriharmonic part is Re(beta * z1^2) + const; everything is polynomial
    so the fields are smooth and psh in every slice.
    """
    n = grid.n
    P = grid.points
    Z = P[:, 0::2] + 1j * P[:, 1::2]
    vals = np.zeros(grid.n_space)
    for _ in range(3):
        c = rng.uniform(0.2, 1.0)
        w = rng.normal(size=n) + 1j * rng.normal(size=n)
        w /= np.linalg.norm(w)
        p = 0.3 * (rng.normal(size=n) + 1j * rng.normal(size=n))
        vals += c * np.abs((Z - p) @ w.conj()) ** 2
    beta = 0.2 * (rng.normal() + 1j * rng.normal())
    vals += np.real(beta * Z[:, 0] ** 2) + rng.normal()
    s = rng.uniform(-1.0, 1.5) if slope is None else slope
    return SpaceTimeField(grid, s * grid.times[:, None] + vals[None, :])


def subsolution_corpus(case: ExactCase, grid: ComplexGrid) -> list:
    """Subsolutions with boundary values <= h: downward shifts, steeper-decaying slopes, bowl lifts, maxima."""
    ex = case.exact_field(grid)
    t = grid.times[:, None]
    r2 = np.sum(grid.points**2, axis=-1)[None, :]
    out = [("exact", ex)]
    for c in (0.1, 0.5, 1.0):
        out.append((f"exact-{c}", ex - c))
    for c in (0.1, 0.5):
        out.append((f"exact-{c}t", ex - c * t))
    for s in (0.25, 1.0):
        out.append((f"bowl-{s}", ex + s * (r2 - 1.0)))
    out.append(("max(exact-0.5,bowl-1)", ex.with_values(np.maximum(ex.values - 0.5, (ex + (r2 - 1.0)).values))))
    return out


def sup_convolution_entries(case: ExactCase, grid: ComplexGrid, eps_values) -> list:
    """Sup-convolutions of the exact field, each paired with its shifted-infimum data F_eps."""
    from .regularize import shifted_inf_F, sup_convolution_time

    ex = case.exact_field(grid)
    out = []
    for eps in eps_values:
        ue, shift = sup_convolution_time(ex, eps, return_shift=True)
        radius = float(shift.max()) + grid.dt
        p = case.problem
        pe = FlowProblem(p.domain, shifted_inf_F(p.F, radius), p.g, p.h, p.T, p.conv, name=f"{p.name}-eps{eps}")
        out.append((f"{case.name}-supconv-{eps}", ue, pe))
    return out


def theorem_a_corpus(grid: ComplexGrid | None = None, seed: int = 0, n_random: int = 9) -> tuple:
    """Thirty quad1-grid fields mixing passes, failures and near-equality cases.

    Returns (corpus, problem, grid). Sup-convolution entries carry their own
    shifted data; everything else is checked against quad1.
    """
    case = exact_case("quad1")
    grid = case.grid() if grid is None else grid
    ex = case.exact_field(grid)
    t = grid.times[:, None]
    r2 = np.sum(grid.points**2, axis=-1)[None, :]
    rng = np.random.default_rng(seed)
    corpus = [("exact", ex)]
    corpus += [(f"exact-{c}", ex - c) for c in (0.1, 0.5, 1.0)]
    corpus += [(f"exact-{c}t", ex - c * t) for c in (0.1, 0.3, 0.6)]
    corpus += [(f"exact+{c}t", ex + c * t) for c in (0.1, 0.3)]
    corpus += [(f"bowl-{s}", ex + s * (r2 - 1.0)) for s in (0.25, 1.0)]
    corpus.append(("flat-bowl", ex - 0.5 * r2))
    corpus += [(f"const{c:+g}", SpaceTimeField.constant(grid, c)) for c in (0.0, 1.0, -1.0)]
    corpus += [(f"random-{j}", random_psh_field(grid, rng)) for j in range(n_random)]
    corpus += sup_convolution_entries(case, grid, (0.05, 0.1))
    tq = exact_case("tquad")
    corpus += sup_convolution_entries(tq, build_grid(tq.problem.domain, grid.h, grid.dt, tq.problem.T), (0.05, 0.1, 0.2))
    corpus.append(("max(exact-0.5,bowl-1)", ex.with_values(np.maximum(ex.values - 0.5, (ex + (r2 - 1.0)).values))))
    return corpus, case.problem, grid


def comparison_pairings(params: SolverParams | None = None) -> list:
    """Twelve (label, u, v, probF, probG) pairings on the quad1 grid.

    Includes solver pairings with F = G - 0.2, shifted boundary data, and
    analytic sub/supersolutions; u is meant to be a subsolution for probF and
    v a supersolution for probG.
    """
    params = SolverParams() if params is None else params
    case = exact_case("quad1")
    grid = case.grid()
    p = case.problem
    ex = case.exact_field(grid)
    t = grid.times[:, None]
    r2 = np.sum(grid.points**2, axis=-1)[None, :]

    def variant(F=None, h=None, name=""):
        return FlowProblem(p.domain, p.F if F is None else F, p.g, p.h if h is None else h, p.T, name=name)

    phi = solve_flow(p, grid, params)
    pF = variant(F="-0.2", name="F=G-0.2")
    phiF = solve_flow(pF, grid, params)
    pUp = variant(F="0.5", name="F+0.5")
    pH = variant(h="log(2)*t + absz2 + 0.1", name="h+0.1")
    phiH = solve_flow(pH, grid, params)
    pR = variant(F="r - log(2)*t - absz2", name="F=r-exact")
    tq = exact_case("tquad")
    tq_ex = tq.exact_field(grid)
    return [
        ("exact/exact", ex, ex, p, p),
        ("exact-0.3/exact", ex - 0.3, ex, p, p),
        ("exact-0.1t/exact+0.1t", ex - 0.1 * t, ex + 0.1 * t, p, p),
        ("F=G-0.2 solver", phiF, phi, pF, p),
        ("solver/exact", phi, ex, p, p),
        ("exact/solver", ex, phi, p, p),
        ("bowl/solver", ex + (r2 - 1.0), phi, p, p),
        ("F+0.5 exact/solver", ex - 0.5 * t, phi, pUp, p),
        ("h+0.1 solver/solver", phiH, phi, pH, p),
        ("solver/h+0.1 solver", phi, phiH, p, pH),
        ("r-dependent F exact/exact+0.05", ex, ex + 0.05, pR, pR),
        ("tquad exact/exact+0.1", tq_ex, tq_ex + 0.1, tq.problem, tq.problem),
    ]
