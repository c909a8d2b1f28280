"""The Levy-type operator on bump functions, in raw and decomposed form, and
infinitesimal-invariance residuals of candidate measures.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import quad
from .expr import ScalarFunction, _bump_parts, as_function
from .levy import (ConstantKernel, Decomposition, LevyKernel, LevyMeasureSpec, ZERO_MEASURE,
                   a_pi_measure)
from .quad import DivergenceError, QuadratureError

log = logging.getLogger(__name__)

PSI3_MAX = 510.0          # sup |psi'''| of the standard bump (506.7 on a fine grid)
SMALL_JUMP_BOUND = 1e-11  # target for the Taylor remainder of the small jumps
_DYADIC = np.concatenate([2.0 ** -np.arange(0, 48), -(2.0 ** -np.arange(0, 48))])


class WindowGrowthError(QuadratureError):
    """The residual integral keeps changing as the window grows."""


@dataclass
class CharTriplet:
    """Drift a, diffusion b >= 0 and jump kernel of a Levy-type operator."""
    a: ScalarFunction
    b: ScalarFunction
    kernel: LevyKernel
    name: str = ""
    kinks: tuple = ()

    def __post_init__(self):
        self.a = as_function(self.a)
        self.b = as_function(self.b)
        if self.kernel is None:
            self.kernel = ConstantKernel(ZERO_MEASURE)

    def check_b(self, lo=-10.0, hi=10.0, n=2001):
        xs = np.linspace(lo, hi, n)
        bad = xs[np.asarray(self.b(xs)) < 0]
        if bad.size:
            raise ValueError(f"diffusion coefficient negative at x={bad[0]:.6g}")
        return True

    @property
    def pure_diffusion(self):
        return isinstance(self.kernel, ConstantKernel) and self.kernel.spec.is_zero()


class BumpFunction:
    """f(x) = psi((x - c)/w) with psi(u) = exp(1 - 1/(1-u^2)) on |u| < 1."""

    def __init__(self, center: float, width: float):
        if width <= 0:
            raise ValueError("bump width must be positive")
        self.center = float(center)
        self.width = float(width)

    def _eval(self, x, k):
        u = (np.asarray(x, dtype=float) - self.center) / self.width
        out = np.zeros(u.shape)
        inside = np.abs(u) < 1.0
        if inside.any():
            out[inside] = _bump_parts(u[inside])[k] / self.width ** k
        return float(out) if out.ndim == 0 else out

    def __call__(self, x):
        return self._eval(x, 0)

    def d1(self, x):
        return self._eval(x, 1)

    def d2(self, x):
        return self._eval(x, 2)

    def increment(self, x, y):
        """f(x + y) - f(x) without cancellation for small y.

        With u = (x-c)/w and v = y/w both inside the support,
        psi(u+v)/psi(u) = exp(-v (2u+v) / ((1-u^2)(1-(u+v)^2))).
        """
        u, v = np.broadcast_arrays((np.asarray(x, dtype=float) - self.center) / self.width,
                                   np.asarray(y, dtype=float) / self.width)
        s = u + v
        a_in = np.abs(u) < 1.0
        b_in = np.abs(s) < 1.0
        both = a_in & b_in
        with np.errstate(all="ignore"):
            qa = np.where(a_in, (1.0 - u) * (1.0 + u), 1.0)
            qb = np.where(b_in, (1.0 - s) * (1.0 + s), 1.0)
            pa = np.where(a_in, np.exp(1.0 - 1.0 / qa), 0.0)
            pb = np.where(b_in, np.exp(1.0 - 1.0 / qb), 0.0)
            r = -v * (2.0 * u + v) / (qa * qb)
            d = np.where(np.abs(r) < 1.0, pa * np.expm1(r), pb - pa)
        out = np.where(both, d, pb - pa)
        return float(out) if out.ndim == 0 else out

    @property
    def support(self):
        return self.center - self.width, self.center + self.width

    @property
    def d3_bound(self):
        return PSI3_MAX / self.width ** 3

    def __repr__(self):
        return f"BumpFunction({self.center!r}, {self.width!r})"


def standard_bumps(window, n_centers=17, widths=(0.5, 1.0, 2.0)):
    """Bumps centred on a uniform grid over ``window`` with the given widths."""
    centers = np.linspace(window[0], window[1], n_centers)
    return [BumpFunction(c, w) for w in widths for c in centers]


# ------------------------------------------------------------------ Measure1D

class Measure1D:
    """A candidate measure: density expression, grid density and atoms.

    Parameters
    ----------
    density : str, ScalarFunction or callable, optional
        Density on ``domain``; may be unnormalised (even infinite mass).
    domain : (lo, hi)
    grid : (nodes, values), optional
        Cell-centred grid density on a uniform grid (midpoint cells).
    atoms : sequence of (location, mass)
    normalized : bool
        If set, the total mass must be 1 within 1e-6.
    kinks : sequence of float
        Points where the density is not smooth (quadrature breakpoints).
    """

    def __init__(self, density=None, domain=(-np.inf, np.inf), grid=None, atoms=(),
                 normalized=False, kinks=()):
        self.density = as_function(density) if density is not None else None
        self.domain = (float(domain[0]), float(domain[1]))
        self.kinks = tuple(float(k) for k in kinks)
        if grid is not None:
            nodes, values = (np.asarray(v, dtype=float) for v in grid)
            if np.any(values < 0):
                raise ValueError("grid density must be non-negative")
            h = np.diff(nodes)
            if nodes.size > 1 and not np.allclose(h, h[0], rtol=1e-9, atol=0):
                raise ValueError("grid must be uniform")
            self.grid_nodes, self.grid_values = nodes, values
            self.grid_h = float(h[0]) if nodes.size > 1 else 1.0
        else:
            self.grid_nodes = self.grid_values = None
        self.atoms = [(float(a), float(m)) for a, m in atoms]
        if any(m <= 0 for _, m in self.atoms):
            raise ValueError("atom masses must be positive")
        self.normalized = normalized
        if normalized:
            tot = self.total_mass()
            if abs(tot - 1.0) > 1e-6:
                raise ValueError(f"normalized measure has total mass {tot:.10g}")

    @classmethod
    def from_grid(cls, nodes, values, **kw):
        return cls(grid=(nodes, values), **kw)

    @property
    def finite(self):
        if self.density is None:
            return True
        try:
            quad.integrate(self.pdf, *self.domain, self.kinks, rtol=1e-8)
            return True
        except DivergenceError:
            return False

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.density is None:
            return np.zeros_like(x)
        inside = (x > self.domain[0]) & (x < self.domain[1])
        with np.errstate(all="ignore"):
            v = np.asarray(self.density(np.where(inside, x, 0.5 * (max(self.domain[0], -1e300)
                                                                  + min(self.domain[1], 1e300)))))
        return np.where(inside, np.broadcast_to(v, x.shape), 0.0)

    def total_mass(self):
        tot = sum(m for _, m in self.atoms)
        if self.grid_values is not None:
            tot += float(np.sum(self.grid_values)) * self.grid_h
        if self.density is not None:
            tot += quad.integrate(self.pdf, *self.domain, self.kinks, rtol=1e-12)
        return tot

    def scale(self):
        s = [1.0]
        if self.grid_nodes is not None:
            s.append(float(np.max(np.abs(self.grid_nodes))) + self.grid_h)
        if self.atoms:
            s.append(max(abs(a) for a, _ in self.atoms) * 1.01)
        for d in self.domain:
            if np.isfinite(d):
                s.append(abs(d))
        return max(s)

    def integrate_window(self, g, inner, outer, rtol=1e-8):
        """int g d(eta) over inner <= |x| < outer (inner = 0: the full window)."""
        tot = 0.0
        for a, m in self.atoms:
            if inner <= abs(a) < outer:
                tot += m * float(g(np.array([a]))[0])
        if self.grid_values is not None:
            sel = (np.abs(self.grid_nodes) >= inner) & (np.abs(self.grid_nodes) < outer)
            if sel.any():
                tot += float(np.sum(self.grid_values[sel] * g(self.grid_nodes[sel]))) * self.grid_h
        if self.density is not None:
            pieces = [(-outer, -inner), (inner, outer)] if inner > 0 else [(-outer, outer)]
            for lo, hi in pieces:
                lo, hi = max(lo, self.domain[0]), min(hi, self.domain[1])
                if lo < hi:
                    tot += quad.integrate(lambda x: g(x.ravel()).reshape(x.shape) * self.pdf(x),
                                          lo, hi, self.kinks, rtol=rtol, atol=1e-300)
        return tot


# -------------------------------------------------------------- raw operator

def _direct_constants(m: LevyMeasureSpec, eps: float):
    """x-independent pieces of the raw compensated integral for |y| >= eps."""
    key = ("direct", eps)
    if key in m._tables:
        return m._tables[key]
    if m.density is None:
        out = (0.0, 0.0, 0.0, 0.0)
    else:
        dm = LevyMeasureSpec((), m.density, m.activity_class, m.support, m.breakpoints,
                             m.closed_tail, m.closed_m2)
        one = np.ones_like
        mass = dm.mass(eps, np.inf, True) + dm.mass(-np.inf, -eps, hi_closed=True)
        ident = lambda y: y  # noqa: E731
        mom = dm.integrate(ident, eps, 1.0, True) + dm.integrate(ident, -1.0, -eps, hi_closed=True)
        m2 = dm.small_moment(eps, 2)
        m3 = dm.small_moment(eps, 3, absolute=True)
        out = (mass, mom, m2, m3)
    m._tables[key] = out
    return out


def _choose_eps(m: LevyMeasureSpec, f: BumpFunction):
    """Start at min(0.1, w/10) and shrink until the Taylor bound is tiny."""
    eps = min(0.1, f.width / 10.0)
    for _ in range(12):
        m3 = _direct_constants(m, eps)[3]
        bound = f.d3_bound * m3 / 6.0
        if bound <= SMALL_JUMP_BOUND:
            break
        eps /= 10.0
    return eps, bound


def _window_density_integral(m_at, xs, f: BumpFunction, eps, weight=None, deriv=0, extra=()):
    """int_{|y|>=eps} f^(k)(x+y) w(y) p_x(y) dy over the bump window, per x.

    ``m_at(i)`` gives the measure at xs[i]; for constant kernels all the same.
    """
    xs = np.atleast_1d(xs)
    c0, c1 = f.support
    lo_all = c0 - xs
    hi_all = c1 - xs
    los, his, owner = [], [], []
    for i in range(xs.size):
        for lo, hi in ((lo_all[i], min(hi_all[i], -eps)), (max(lo_all[i], eps), hi_all[i])):
            if lo < hi:
                los.append(lo)
                his.append(hi)
                owner.append(i)
    out = np.zeros(xs.size)
    if not los:
        return out
    owner = np.array(owner)
    fk = (f, f.d1, f.d2)[deriv]
    m0 = m_at(0)
    constant = all(m_at(i) is m0 for i in range(1, xs.size))
    bps = set(_DYADIC.tolist()) | set(extra)
    if constant:
        bps |= set(m0.breakpoints)

        def g(y, idx):
            v = fk(xs[owner[idx]] + y) * m0.pdf(y)
            return v * weight(y) if weight is not None else v
        vals = quad.integrate_intervals(g, los, his, sorted(bps), atol=1e-15)
        np.add.at(out, owner, vals)
        return out
    for k, i in enumerate(owner):
        mi = m_at(i)
        gi = lambda y, _i, mi=mi, x=xs[i]: (fk(x + y) * mi.pdf(y)
                                            * (weight(y) if weight is not None else 1.0))  # noqa: E731
        out[i] += quad.integrate_intervals(gi, [los[k]], [his[k]], sorted(bps | set(mi.breakpoints)), atol=1e-15)[0]
    return out


def _near_integral(m_at, xs, f: BumpFunction, eps, delta):
    """int_{eps<=|y|<delta} (f(x+y) - f(x) - f'(x) y) p_x(y) dy, per x.

    The compensated integrand is formed from ``f.increment`` so it keeps
    its relative accuracy down to |y| ~ eps.
    """
    xs = np.atleast_1d(xs)
    out = np.zeros(xs.size)
    if not eps < delta:
        return out
    f1 = f.d1(xs)
    owner = np.repeat(np.arange(xs.size), 2)
    los = np.tile([-delta, eps], xs.size)
    his = np.tile([-eps, delta], xs.size)
    c0, c1 = f.support
    bps = set(_DYADIC.tolist()) | set((c0 - xs).tolist()) | set((c1 - xs).tolist())
    m0 = m_at(0)
    if all(m_at(i) is m0 for i in range(1, xs.size)):
        bps |= set(m0.breakpoints)

        def g(y, idx):
            o = owner[idx]
            return (f.increment(xs[o], y) - f1[o] * y) * m0.pdf(y)
        np.add.at(out, owner, quad.integrate_intervals(g, los, his, sorted(bps), atol=1e-15))
        return out
    for i in range(xs.size):
        mi = m_at(i)
        gi = lambda y, _o, mi=mi, x=xs[i], d=f1[i]: (f.increment(x, y) - d * y) * mi.pdf(y)  # noqa: E731
        out[i] = float(np.sum(quad.integrate_intervals(gi, los[:2], his[:2], sorted(bps | set(mi.breakpoints)),
                                                       atol=1e-15)))
    return out


def _measures(kernel: LevyKernel, xs):
    if kernel.constant:
        m = kernel.at(0.0)
        return [m] * len(xs)
    return [kernel.at(x) for x in xs]


def _local_part(t: CharTriplet, xs, f1, f2):
    """a f' + 1/2 (b f')' = (a + b'/2) f' + b f''/2."""
    a = np.asarray(t.a(xs), dtype=float)
    b = np.asarray(t.b(xs), dtype=float)
    db = np.asarray(t.b.d1(xs), dtype=float)
    return (a + 0.5 * db) * f1 + 0.5 * b * f2


def apply_direct(t: CharTriplet, f: BumpFunction, x, return_bound=False):
    """(A f)(x) from the raw triplet.

    a f' + 1/2 (b f')' + int (f(x+y) - f(x) - f'(x) y 1{|y|<1}) Pi(x, dy),
    with the |y| < eps part of the density replaced by 1/2 f''(x) M2(eps).
    Returns an array for array ``x``; with ``return_bound`` also the
    Taylor remainder bound.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    fx, f1, f2 = f(xs), f.d1(xs), f.d2(xs)
    out = _local_part(t, xs, f1, f2)
    bounds = np.zeros(xs.size)
    ms = _measures(t.kernel, xs)
    # atoms, exactly
    for i, m in enumerate(ms):
        if m.atom_loc.size:
            a = m.atom_loc
            jump = f(xs[i] + a) - fx[i] - f1[i] * a * (np.abs(a) < 1.0)
            out[i] += float(np.sum(m.atom_mass * jump))
    # densities: x-independent masses plus the window integral
    dens = [i for i, m in enumerate(ms) if m.density is not None]
    if dens:
        groups = {}
        for i in dens:
            eps, bound = _choose_eps(ms[i], f)
            groups.setdefault((id(ms[i]), eps), []).append(i)
            bounds[i] = bound
        # |y| >= delta: window integral minus the x-independent masses;
        # eps <= |y| < delta: compensated integrand; |y| < eps: Taylor term
        delta = min(0.1, f.width / 10.0)
        for (_, eps), idx in groups.items():
            idx = np.array(idx)
            m = ms[idx[0]]
            if t.kernel.constant:
                mass, mom, _, _ = _direct_constants(m, delta)
                m2 = _direct_constants(m, eps)[2]
                w = _window_density_integral(lambda i: m, xs[idx], f, delta)
                w += _near_integral(lambda i: m, xs[idx], f, eps, delta)
                out[idx] += w - fx[idx] * mass - f1[idx] * mom + 0.5 * f2[idx] * m2
            else:
                for i in idx:
                    mass, mom, _, _ = _direct_constants(ms[i], delta)
                    m2 = _direct_constants(ms[i], eps)[2]
                    w = _window_density_integral(lambda j: ms[i], xs[i:i + 1], f, delta)[0]
                    w += _near_integral(lambda j: ms[i], xs[i:i + 1], f, eps, delta)[0]
                    out[i] += w - fx[i] * mass - f1[i] * mom + 0.5 * f2[i] * m2
    if scalar:
        return (float(out[0]), float(bounds[0])) if return_bound else float(out[0])
    return (out, bounds) if return_bound else out


# -------------------------------------------------------- decomposed operator

def _tail_window_integral(m: LevyMeasureSpec, xs, f: BumpFunction, which):
    """int sgn(y) f'(x+y) m~(y) dy  or  int f''(x+y) m~~(y) dy over the window."""
    xs = np.atleast_1d(xs)
    if m.is_zero():
        return np.zeros(xs.size)
    c0, c1 = f.support
    lo = c0 - xs
    hi = c1 - xs
    bps = sorted(set(m.atom_loc.tolist()) | set(m.breakpoints) | set(_DYADIC.tolist()) | {0.0})
    if which == "mu":
        def g(y, idx):
            return np.sign(y) * f.d1(xs[idx] + y) * m.tail(np.where(y == 0, 1e-300, y))
    else:
        def g(y, idx):
            return f.d2(xs[idx] + y) * m.integrated_tail(np.where(y == 0, 1e-300, y))
    return quad.integrate_intervals(g, lo, hi, bps, atol=1e-15)


def decomposed_parts(t: CharTriplet, d: Decomposition, x):
    """(nu, mu, rho, a_pi) at x."""
    k = t.kernel
    nu, mu, rho = (d.part(k, x, w) for w in ("nu", "mu", "rho"))
    if k.constant:
        key = ("a_pi", d.kind)
        base = k.at(0.0)
        if key not in base._tables:
            base._tables[key] = a_pi_measure(nu, mu, rho)
        ap = base._tables[key]
    else:
        ap = a_pi_measure(nu, mu, rho)
    return nu, mu, rho, ap


def apply_decomposed(t: CharTriplet, d: Decomposition, f: BumpFunction, x):
    """(A f)(x) from the decomposition (nu, mu, rho).

    (a + a_pi) f' + 1/2 (b f')' + int (f(x+y) - f(x)) nu(dy)
    + int sgn(y) f'(x+y) mu~(y) dy + int f''(x+y) rho~~(y) dy,
    where mu~ is the one-sided tail of mu and rho~~ the integrated tail of rho.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    fx, f1, f2 = f(xs), f.d1(xs), f.d2(xs)
    out = _local_part(t, xs, f1, f2)
    k = t.kernel
    if k.constant:
        groups = [(np.arange(xs.size), decomposed_parts(t, d, 0.0))]
    else:
        groups = [(np.array([i]), decomposed_parts(t, d, xs[i])) for i in range(xs.size)]
    for idx, (nu, mu, rho, ap) in groups:
        xi = xs[idx]
        out[idx] += ap * f1[idx]
        if not nu.is_zero():
            if nu.atom_loc.size:
                a = nu.atom_loc
                out[idx] += np.array([np.sum(nu.atom_mass * (f(x0 + a) - f(x0))) for x0 in xi])
            if nu.density is not None:
                w = _window_density_integral(lambda i: nu, xi, f, 0.0)
                out[idx] += w - fx[idx] * _nu_mass_density(nu)
        out[idx] += _tail_window_integral(mu, xi, f, "mu")
        out[idx] += _tail_window_integral(rho, xi, f, "rho")
    return float(out[0]) if scalar else out


def _nu_mass_density(nu: LevyMeasureSpec):
    key = "density_mass"
    if key not in nu._tables:
        nu._tables[key] = quad.integrate(nu.pdf, *nu.support, nu.breakpoints, rtol=1e-13, atol=1e-300)
    return nu._tables[key]


# ----------------------------------------------------------------- residuals

def _x_breakpoints(t: CharTriplet, eta: Measure1D, f: BumpFunction):
    c0, c1 = f.support
    pts = {c0, c1, 0.0} | set(t.kinks) | set(eta.kinks)
    return sorted(pts)


def invariance_residual(t: CharTriplet, eta: Measure1D, fs: Sequence[BumpFunction], tol=1e-8,
                        start=None, max_doublings=12, operator: Optional[Callable] = None):
    """int (A f) d(eta) for every bump f.

    Atoms contribute exactly.  Density parts are integrated over a window
    [-L, L] that doubles until the increment falls below tol/10; grid
    densities use their midpoint cells.  Raises WindowGrowthError when the
    window never settles.
    """
    op = operator or (lambda f, x: apply_direct(t, f, x))
    res = []
    for f in fs:
        total = 0.0
        for a, m in eta.atoms:
            total += m * float(op(f, np.array([a]))[0])
        if eta.grid_values is not None:
            total += _grid_residual(eta, f, op)
        if eta.density is not None:
            total += _density_residual(t, eta, f, op, tol, start, max_doublings)
        res.append(total)
    return res


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


def _grid_residual(eta: Measure1D, f: BumpFunction, op):
    """int (A f) eta for the linear interpolant of a grid density.

    The interpolant runs through the nodes and is held constant on the two
    outer half cells; each piece gets a 6-point Gauss-Legendre rule, so the
    oscillation of A f on narrow bumps is resolved instead of being sampled
    at the nodes only.
    """
    x, v, h = eta.grid_nodes, eta.grid_values, eta.grid_h
    edges = np.concatenate([[x[0] - 0.5 * h], x, [x[-1] + 0.5 * h]])
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.interp(pts, x, v)
    g = op(f, pts.ravel()).reshape(pts.shape)
    return float(np.sum(half * np.sum(_GL_WEIGHTS * g * vals, axis=1)))


def _density_residual(t, eta, f, op, tol, start, max_doublings):
    bps = _x_breakpoints(t, eta, f)
    L = start or max(4.0, abs(f.center) + f.width + 2.0)

    def g(x, idx):
        return op(f, x.ravel()).reshape(x.shape) * eta.pdf(x)

    def piece(lo, hi):
        lo, hi = max(lo, eta.domain[0]), min(hi, eta.domain[1])
        if lo >= hi:
            return 0.0
        return float(quad.integrate_many(g, [lo], [hi], bps, rtol=1e-10, atol=tol * 1e-3,
                                         check_divergence=False, singular_zero=False)[0])
    total = piece(-L, L)
    for _ in range(max_doublings):
        inc = piece(-2 * L, -L) + piece(L, 2 * L)
        total += inc
        L *= 2
        if abs(inc) < tol / 10:
            return total
    raise WindowGrowthError(f"residual window does not settle (last increment {inc:.3g} at L={L:g})")
