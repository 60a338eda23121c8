"""Regularization in the time variable: sup/inf-convolution, multiplicative mollification."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate

from .errors import KernelOutOfRange, TooFewSlices
from .fields import SpaceTimeField, second_time_difference


def _penalized_extremum(u: SpaceTimeField, eps: float, sign: float):
    if not eps > 0:
        raise ValueError("eps must be positive")
    t = u.grid.times
    pen = (t[:, None] - t[None, :]) ** 2 / (2 * eps**2)  # [k, j] = (t_k - t_j)^2 / 2eps^2
    cand = sign * u.values[None, :, :] - pen[:, :, None]  # (k, j, space)
    j = np.argmax(cand, axis=1)
    best = np.take_along_axis(cand, j[:, None, :], axis=1)[:, 0, :]
    shift = np.abs(t[:, None] - t[j])
    return u.with_values(sign * best), shift


def sup_convolution_time(u: SpaceTimeField, eps: float, return_shift: bool = False):
    """u_eps(t, z) = max over grid times t' of u(t', z) - (t - t')^2 / (2 eps^2).

    With ``return_shift`` also returns |t - t'| at the maximizer for every node.
    """
    out, shift = _penalized_extremum(u, eps, 1.0)
    return (out, shift) if return_shift else out


def inf_convolution_time(v: SpaceTimeField, eps: float, return_shift: bool = False):
    """v^eps(t, z) = min over grid times t' of v(t', z) + (t - t')^2 / (2 eps^2)."""
    out, shift = _penalized_extremum(v, eps, -1.0)
    return (out, shift) if return_shift else out


def shifted_inf_F(F, radius: float, samples: int = 33):
    """F_eps(t, z, r) = inf over |s| <= radius of F(t + s, z, r), sampled on a uniform ladder."""
    offsets = np.linspace(-radius, radius, samples) if radius > 0 else np.zeros(1)

    def F_eps(t, points, r):
        vals = [np.asarray(F(np.asarray(t) + s, points, r), dtype=float) for s in offsets]
        return np.minimum.reduce(np.broadcast_arrays(*vals))

    F_eps.radius = radius
    return F_eps


def bump(sigma):
    """exp(-1/(1 - sigma^2)) on (-1, 1), zero outside."""
    sigma = np.asarray(sigma, dtype=float)
    out = np.zeros_like(sigma)
    inside = np.abs(sigma) < 1
    out[inside] = np.exp(-1.0 / (1.0 - sigma[inside] ** 2))
    return out


def kernel_moment(kernel=bump, order: int = 2) -> float:
    """Normalized moment int sigma^order chi / int chi of a kernel supported on [-1, 1]."""
    mass = integrate.quad(lambda s: float(kernel(np.array(s))), -1, 1)[0]
    mom = integrate.quad(lambda s: s**order * float(kernel(np.array(s))), -1, 1)[0]
    return mom / mass


def time_mollify(u: SpaceTimeField, eps: float, kernel=None, n_points: int = 64, return_clamped: bool = False):
    """u^eps(t, z) = int u(s t, z) chi((s - 1)/eps) ds with the kernel normalized to unit mass.

    Composite trapezoid on ``n_points`` s-values spanning [1 - eps, 1 + eps];
    u(s t, .) by linear interpolation in t. Times s*t outside [0, T] are clamped
    and a KernelOutOfRange warning is issued.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    kernel = bump if kernel is None else kernel
    grid = u.grid
    sig = np.linspace(-1.0, 1.0, n_points)
    w = kernel(sig) * (sig[1] - sig[0])
    w[[0, -1]] *= 0.5
    if w.sum() <= 0:
        raise ValueError("kernel has no mass on (-1, 1)")
    w = w / w.sum()
    s = 1.0 + eps * sig
    st = grid.times[:, None] * s[None, :]  # (K, n_s)
    clamped = (st < 0) | (st > grid.T + 1e-12)
    st = np.clip(st, 0.0, grid.T)
    pos = st / grid.dt
    lo = np.minimum(np.floor(pos).astype(int), grid.n_times - 2) if grid.n_times > 1 else np.zeros_like(pos, int)
    frac = pos - lo
    U = u.values
    vals = (1 - frac)[..., None] * U[lo] + frac[..., None] * U[np.minimum(lo + 1, grid.n_times - 1)]
    out = np.einsum("ksz,s->kz", vals, w)
    clamped_slices = np.any(clamped & (w[None, :] > 0), axis=1)
    if np.any(clamped_slices):
        warnings.warn(
            f"mollifier support left [0, T] on {int(clamped_slices.sum())} slices; values clamped",
            KernelOutOfRange, stacklevel=2,
        )
    field = u.with_values(out)
    return (field, clamped_slices) if return_clamped else field


def semiconcavity_constant(u: SpaceTimeField) -> float:
    """Largest positive part of (u[k+1] - 2u[k] + u[k-1]) / dt^2 over interior times."""
    if u.grid.n_times < 3:
        raise TooFewSlices("need at least three slices")
    d2 = second_time_difference(u)
    return float(max(0.0, d2.max()))


def semiconvexity_floor(u: SpaceTimeField) -> float:
    """Smallest time second difference; sup-convolutions keep this >= -1/eps^2."""
    return float(second_time_difference(u).min())


def mollify_defect(u: SpaceTimeField, prob, eps: float, tol: float, kernel=None, c_max: float = 10.0,
                   iters: int = 60) -> tuple[float, np.ndarray]:
    """Smallest c >= 0 such that mollify(u) - c (t + 1) passes the pluripotential subsolution check.

    Only slices whose kernel support stays inside [0, T] are checked. Returns
    (c, checked slice indices). Bisection is valid because the margin is
    nondecreasing in c when F is nondecreasing in r.
    """
    from .checkers import check_pluripotential_subsolution

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelOutOfRange)
        ue, clamped = time_mollify(u, eps, kernel, return_clamped=True)
    grid = u.grid
    ks = np.arange(1, grid.n_times)
    # forward differences at k read slice k+1, so both must be unclamped
    good = ~clamped[ks] & ~clamped[np.minimum(ks + 1, grid.n_times - 1)]
    ks = ks[good]
    tt = grid.times[:, None]

    def passes(c):
        return check_pluripotential_subsolution(ue - c * (tt + 1.0), prob, tol=tol, slices=ks).verdict

    if passes(0.0):
        return 0.0, ks
    lo, hi = 0.0, 1e-3
    while not passes(hi):
        lo, hi = hi, 2 * hi
        if hi > c_max:
            return math.inf, ks
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-10:
            break
    return hi, ks
