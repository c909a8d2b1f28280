"""One-dimensional Levy measures, x-dependent kernels and decompositions.

A jump measure is a finite list of atoms plus an optional density.  Kernels
map a state x to such a measure.  A decomposition splits a kernel into
large (finite mass), medium and small jump parts by weight functions that
sum to one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import quad
from .expr import ScalarFunction, as_function, compile_expr, parse, to_text
from .quad import DivergenceError, QuadratureError

ACTIVITY_CLASSES = ("finite", "integrable_jumps", "levy")
INF = np.inf


def _as_density(spec):
    """Density from text (variable y), a ScalarFunction or a callable."""
    if spec is None:
        return None, None
    if isinstance(spec, str):
        f = ScalarFunction.from_expression(spec, "y")
        return f, spec
    if isinstance(spec, ScalarFunction):
        return spec, spec.text
    return spec, None


class LevyMeasureSpec:
    """A Levy measure on the real line (never charging 0).

    Parameters
    ----------
    atoms : sequence of (location, mass)
    density : str, ScalarFunction or callable, optional
        Density p(y) >= 0; text uses the variable ``y``.
    activity_class : {'finite', 'integrable_jumps', 'levy'}
    support : (lo, hi)
        The density is taken to vanish outside this interval.
    breakpoints : sequence of float
        Points where the density is not smooth.
    tail, m2 : callable, optional
        Closed forms for the one-sided tail and for
        ``M2(eps) = int_{|y|<eps} y^2 dPi``.
    """

    def __init__(self, atoms=(), density=None, activity_class="levy", support=(-INF, INF),
                 breakpoints=(), tail=None, m2=None, name: str = ""):
        if activity_class not in ACTIVITY_CLASSES:
            raise ValueError(f"activity_class must be one of {ACTIVITY_CLASSES}")
        atoms = [(float(a), float(m)) for a, m in atoms]
        for a, m in atoms:
            if a == 0:
                raise ValueError("atoms at 0 are not allowed")
            if m < 0:
                raise ValueError("atom masses must be non-negative")
        atoms = [(a, m) for a, m in atoms if m > 0]
        atoms.sort()
        self.atom_loc = np.array([a for a, _ in atoms], dtype=float)
        self.atom_mass = np.array([m for _, m in atoms], dtype=float)
        self.density, self.density_text = _as_density(density)
        self.activity_class = activity_class
        self.support = (float(support[0]), float(support[1]))
        self.breakpoints = tuple(sorted(set(float(b) for b in breakpoints)
                                        | {s for s in self.support if np.isfinite(s)}))
        self.closed_tail = tail
        self.closed_m2 = m2
        self.name = name
        self._tables = {}

    # ------------------------------------------------------------ basics
    @property
    def atoms(self):
        return list(zip(self.atom_loc.tolist(), self.atom_mass.tolist()))

    def is_zero(self):
        return self.atom_loc.size == 0 and self.density is None

    def pdf(self, y):
        """Density at y (0 outside the support and at y = 0)."""
        y = np.asarray(y, dtype=float)
        if self.density is None:
            return np.zeros_like(y)
        lo, hi = self.support
        inside = (y > lo) & (y < hi) & (y != 0)
        safe = np.where(inside, y, 1.0 if hi > 1 else 0.5 * (lo + hi))
        with np.errstate(all="ignore"):
            v = np.asarray(self.density(safe), dtype=float)
        return np.where(inside, v, 0.0)

    def weighted(self, h: Optional[Callable], key=None) -> "LevyMeasureSpec":
        """The measure h(y) Pi(dy); closed forms are dropped unless h is None."""
        if h is None:
            return self
        if key is not None and key in self._tables:
            return self._tables[key]
        atoms = [(a, m * float(h(a))) for a, m in self.atoms]
        dens = None
        if self.density is not None:
            p = self.pdf
            dens = lambda y, p=p: h(y) * p(y)  # noqa: E731
        w = LevyMeasureSpec(atoms, dens, self.activity_class, self.support, self.breakpoints,
                            name=self.name + "*h")
        if key is not None:
            self._tables[key] = w
        return w

    def reflect(self) -> "LevyMeasureSpec":
        if "reflect" in self._tables:
            return self._tables["reflect"]
        atoms = [(-a, m) for a, m in self.atoms]
        dens = None
        if self.density is not None:
            p = self.pdf
            dens = lambda y, p=p: p(-y)  # noqa: E731
        tail = None
        if self.closed_tail is not None:
            t = self.closed_tail
            tail = lambda z, t=t: t(-np.asarray(z))  # noqa: E731
        r = LevyMeasureSpec(atoms, dens, self.activity_class, (-self.support[1], -self.support[0]),
                            [-b for b in self.breakpoints], tail, self.closed_m2, self.name + "(-)")
        self._tables["reflect"] = r
        return r

    # ------------------------------------------------------- integration
    def integrate(self, g, lo=-INF, hi=INF, lo_closed=False, hi_closed=False, rtol=1e-11):
        """int g(y) Pi(dy) over the interval between lo and hi.

        Atoms sitting exactly on an end point count only if that end is
        closed.  ``g`` must be vectorised.
        """
        total = 0.0
        if self.atom_loc.size:
            a = self.atom_loc
            sel = ((a > lo) | (lo_closed & (a == lo))) & ((a < hi) | (hi_closed & (a == hi)))
            if sel.any():
                total += float(np.sum(np.asarray(g(a[sel]), dtype=float) * self.atom_mass[sel]))
        if self.density is not None:
            l = max(lo, self.support[0])
            h = min(hi, self.support[1])
            if l < h:
                total += quad.integrate(lambda y: g(y) * self.pdf(y), l, h, self.breakpoints, rtol=rtol)
        return total

    def mass(self, lo=-INF, hi=INF, lo_closed=False, hi_closed=False):
        return self.integrate(np.ones_like, lo, hi, lo_closed, hi_closed)

    # ------------------------------------------------------------- tails
    def tables(self):
        if "pos" not in self._tables:
            self._tables["pos"] = TailTable(self)
            self._tables["neg"] = TailTable(self.reflect())
        return self._tables["pos"], self._tables["neg"]

    def tail(self, z):
        """Pi((z, inf)) for z > 0, Pi((-inf, z)) for z < 0, 0 at z = 0."""
        z = np.asarray(z, dtype=float)
        if self.closed_tail is not None and not self.atom_loc.size:
            with np.errstate(all="ignore"):
                out = np.where(z != 0, self.closed_tail(np.where(z == 0, 1.0, z)), 0.0)
            return float(out) if out.ndim == 0 else out
        pos, neg = self.tables()
        out = np.zeros(z.shape)
        m = z > 0
        out[m] = pos.tail(z[m])
        m = z < 0
        out[m] = neg.tail(-z[m])
        return float(out) if out.ndim == 0 else out

    def integrated_tail(self, z):
        """int_z^inf tail(s) ds for z > 0, mirrored for z < 0."""
        z = np.asarray(z, dtype=float)
        pos, neg = self.tables()
        out = np.zeros(z.shape)
        m = z > 0
        out[m] = pos.integrated_tail(z[m])
        m = z < 0
        out[m] = neg.integrated_tail(-z[m])
        return float(out) if out.ndim == 0 else out

    def tail_integral(self, a, b):
        """int_a^b tail(s) ds for a <= b on one side of 0 (a, b may touch 0)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        pos, neg = self.tables()
        out = np.zeros(np.broadcast(a, b).shape)
        a, b = np.broadcast_arrays(a, b)
        m = b > 0
        out[m] = pos.cumulative(np.maximum(b[m], 0)) - pos.cumulative(np.maximum(a[m], 0))
        m = a < 0
        out[m] = neg.cumulative(np.maximum(-a[m], 0)) - neg.cumulative(np.maximum(-b[m], 0))
        return out

    def small_moment(self, eps, power=2, absolute=False):
        """int_{|y|<eps} y^power Pi(dy) (or |y|^power)."""
        if power == 2 and self.closed_m2 is not None and not self.atom_loc.size:
            return float(self.closed_m2(eps))
        if absolute:
            g = lambda y: np.abs(y) ** power  # noqa: E731
        else:
            g = lambda y: y ** power  # noqa: E731
        return self.integrate(g, -eps, eps)

    def check_activity(self, radii=(1e2, 1e3, 1e4)):
        """Probe the declared integrability class.

        Returns the estimates of the defining integral over
        ``[-R,-1/R] u [1/R,R]``.  A DivergenceError is raised when the last
        refinement still moves the estimate by 5% or more and the increments
        are not shrinking (a convergent power-law remainder shrinks
        geometrically, a divergent one does not).
        """
        g = {"finite": lambda y: np.ones_like(y),
             "integrable_jumps": lambda y: np.minimum(1.0, np.abs(y)),
             "levy": lambda y: np.minimum(1.0, y * y)}[self.activity_class]
        est = []
        for r in radii:
            est.append(self.integrate(g, 1.0 / r, r, True, True) + self.integrate(g, -r, -1.0 / r, True, True))
        est = np.array(est)
        inc = np.abs(np.diff(est))
        if inc[-1] > 0.05 * max(abs(est[-2]), 1e-300) and inc[-1] > 0.5 * inc[-2]:
            raise DivergenceError(f"{self.activity_class} integral keeps growing: {est.tolist()}")
        return est

    def check_closed_tail(self, probes=None, rtol=1e-6):
        """Compare the closed-form tail with quadrature on a probe grid."""
        if self.closed_tail is None:
            return True
        if probes is None:
            probes = np.concatenate([-np.geomspace(10.0, 0.05, 10), np.geomspace(0.05, 10.0, 10)])
        ok = True
        for z in probes:
            ref = (self.mass(z, INF) if z > 0 else self.mass(-INF, z))
            got = float(self.closed_tail(z))
            if abs(got - ref) > rtol * max(abs(ref), 1e-12):
                ok = False
        return ok

    def __repr__(self):
        parts = []
        if self.atom_loc.size:
            parts.append(f"atoms={self.atoms}")
        if self.density is not None:
            parts.append(f"density={self.density_text or 'callable'}")
        return f"LevyMeasureSpec({', '.join(parts)}, {self.activity_class})"


ZERO_MEASURE = LevyMeasureSpec((), None, "finite")


class TailTable:
    """Tabulated one-sided tails of a measure on (0, inf).

    Holds at dyadic nodes ``t_k`` (16 per octave from 2^-100 to 2^40):

    * ``T(t)  = Pi((t, inf))``
    * ``Y0(t) = int_{(0,t]} y Pi(dy)``
    * ``Y1(t) = int_{(t,inf)} y Pi(dy)`` (may be infinite)

    Values between nodes are completed by one 15-point panel.  Atoms are
    handled exactly.
    """

    LOW, HIGH, PER_OCTAVE = -100, 40, 16

    def __init__(self, m: LevyMeasureSpec):
        self.m = m
        pos = m.atom_loc > 0
        self.aloc = m.atom_loc[pos]
        self.amass = m.atom_mass[pos]
        # suffix sums for atoms strictly above t
        self.a_tail = np.concatenate([np.cumsum(self.amass[::-1])[::-1], [0.0]])
        self.a_y1 = np.concatenate([np.cumsum((self.aloc * self.amass)[::-1])[::-1], [0.0]])
        self.a_y0 = np.concatenate([[0.0], np.cumsum(self.aloc * self.amass)])
        self.has_density = m.density is not None and m.support[1] > 0
        if not self.has_density:
            return
        k = np.arange(self.LOW * self.PER_OCTAVE, self.HIGH * self.PER_OCTAVE + 1)
        nodes = 2.0 ** (k / self.PER_OCTAVE)
        extra = [b for b in m.breakpoints if b > nodes[0] and b < nodes[-1]]
        nodes = np.unique(np.concatenate([nodes, extra]))
        self.nodes = nodes
        p = m.pdf
        ncell = nodes.size - 1
        mass = quad.adaptive(lambda y, i: p(y), nodes[:-1], nodes[1:], np.arange(ncell), ncell, rtol=1e-13)
        mom = quad.adaptive(lambda y, i: y * p(y), nodes[:-1], nodes[1:], np.arange(ncell), ncell, rtol=1e-13)
        top = nodes[-1]
        top_mass = quad.integrate(p, top, INF, rtol=1e-12)
        try:
            top_mom = quad.integrate(lambda y: y * p(y), top, INF, rtol=1e-12)
        except DivergenceError:
            top_mom = INF
        # the piece below the first node is extrapolated as a power law
        low_mom = _power_law_below(mom[: 2 * self.PER_OCTAVE], self.PER_OCTAVE)
        self.T = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]]) + top_mass
        self.Y1 = np.concatenate([np.cumsum(mom[::-1])[::-1], [0.0]]) + top_mom
        self.Y0 = np.concatenate([[0.0], np.cumsum(mom)]) + low_mom
        self.low_mom = low_mom

    # piece of density integral from t up to the next node
    def _local(self, t, weight_y=False):
        nodes = self.nodes
        j = np.clip(np.searchsorted(nodes, t, side="right"), 1, nodes.size - 1)
        upper = nodes[j]
        lo = np.minimum(t, upper)
        half = 0.5 * (upper - lo)
        mid = 0.5 * (upper + lo)
        y = mid[:, None] + half[:, None] * quad.NODES[None, :]
        v = self.m.pdf(y)
        if weight_y:
            v = v * y
        return j, half * (v @ quad.WK15)

    def _atoms_above(self, t, arr):
        return arr[np.searchsorted(self.aloc, t, side="right")]

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        out = self._atoms_above(t, self.a_tail) if self.aloc.size else np.zeros(t.shape)
        if self.has_density and t.size:
            tt = np.maximum(t, self.nodes[0])
            j, loc = self._local(tt.ravel())
            out = out + (self.T[j] + loc).reshape(t.shape)
        return out

    def first_moment_above(self, t):
        t = np.asarray(t, dtype=float)
        out = self._atoms_above(t, self.a_y1) if self.aloc.size else np.zeros(t.shape)
        if self.has_density and t.size:
            tt = np.maximum(t, self.nodes[0])
            j, loc = self._local(tt.ravel(), True)
            out = out + (self.Y1[j] + loc).reshape(t.shape)
        return out

    def first_moment_below(self, t):
        """int_{(0,t]} y Pi(dy)."""
        t = np.asarray(t, dtype=float)
        out = (self.a_y0[np.searchsorted(self.aloc, t, side="right")] if self.aloc.size
               else np.zeros(t.shape))
        if self.has_density and t.size:
            tt = np.maximum(t, self.nodes[0])
            j, loc = self._local(tt.ravel(), True)
            out = out + (self.Y0[j] - loc).reshape(t.shape)
        return out

    def integrated_tail(self, t):
        """int_t^inf T(s) ds = int_{(t,inf)} (y - t) Pi(dy)."""
        t = np.asarray(t, dtype=float)
        return self.first_moment_above(t) - t * self.tail(t)

    def cumulative(self, t):
        """int_0^t T(s) ds = int min(y, t) Pi(dy)."""
        t = np.asarray(t, dtype=float)
        out = self.first_moment_below(t) + t * self.tail(t)
        return np.where(t > 0, out, 0.0)


def _power_law_below(cells, per_octave):
    """Mass below the first node assuming geometric decay per octave."""
    o0 = float(np.sum(cells[:per_octave]))
    o1 = float(np.sum(cells[per_octave:2 * per_octave]))
    if o0 <= 0 or o1 <= 0 or o0 >= o1:
        return 0.0
    q = o0 / o1
    return o0 * q / (1.0 - q)


# ------------------------------------------------------------------ kernels

class LevyKernel:
    """x -> Levy measure.  Subclasses implement :meth:`at`."""

    activity_class = "levy"
    constant = False

    def at(self, x: float) -> LevyMeasureSpec:
        raise NotImplementedError

    def weighted_at(self, x, h, key):
        return self.at(x).weighted(h, key)


class ConstantKernel(LevyKernel):
    constant = True

    def __init__(self, spec: LevyMeasureSpec):
        self.spec = spec
        self.activity_class = spec.activity_class

    def at(self, x):
        return self.spec

    def weighted_at(self, x, h, key):
        return self.spec.weighted(h, key)


class PushforwardKernel(LevyKernel):
    """Upsilon_phi(x, B) = Upsilon({y : phi(x) y in B})."""

    def __init__(self, base: LevyMeasureSpec, phi):
        self.base = base
        self.phi = as_function(phi)
        self.activity_class = base.activity_class

    def at(self, x):
        s = float(self.phi(float(x)))
        if s == 0.0 or not np.isfinite(s):
            if not np.isfinite(s):
                raise QuadratureError(f"phi({x}) is not finite")
            return ZERO_MEASURE
        b = self.base
        atoms = [(a * s, m) for a, m in b.atoms]
        dens = None
        if b.density is not None:
            p = b.pdf
            dens = lambda y, p=p, s=s: p(np.asarray(y) / s) / abs(s)  # noqa: E731
        lo, hi = sorted((b.support[0] * s, b.support[1] * s))
        tail = None
        if b.closed_tail is not None:
            t = b.closed_tail
            tail = lambda z, t=t, s=s: t(np.asarray(z) / s)  # noqa: E731
        m2 = None
        if b.closed_m2 is not None:
            q = b.closed_m2
            m2 = lambda e, q=q, s=s: s * s * q(e / abs(s))  # noqa: E731
        return LevyMeasureSpec(atoms, dens, b.activity_class, (lo, hi),
                               [bp * s for bp in b.breakpoints], tail, m2)


class GeneralKernel(LevyKernel):
    """Density p(x, y) given as an expression in x and y."""

    def __init__(self, density: str, activity_class="levy", support=(-INF, INF), breakpoints=()):
        self.text = density
        self.node = parse(density, ("x", "y"))
        self._f = compile_expr(self.node)
        self.activity_class = activity_class
        self.support = support
        self.breakpoints = tuple(breakpoints)

    def pdf_xy(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lo, hi = self.support
        inside = (y > lo) & (y < hi) & (y != 0)
        with np.errstate(all="ignore"):
            v = np.asarray(self._f({"x": x, "y": np.where(inside, y, 1.0)}), dtype=float)
        return np.where(inside, np.broadcast_to(v, inside.shape), 0.0)

    def at(self, x):
        x = float(x)
        return LevyMeasureSpec((), lambda y, x=x: self.pdf_xy(x, y), self.activity_class,
                               self.support, self.breakpoints)


# ----------------------------------------------------------- decompositions

def _h_std_nu(y):
    y = np.abs(np.asarray(y, dtype=float))
    return y * y / (y * y + y + 1.0)


def _h_std_mu(y):
    y = np.abs(np.asarray(y, dtype=float))
    return y / (y * y + y + 1.0)


def _h_std_rho(y):
    y = np.abs(np.asarray(y, dtype=float))
    return 1.0 / (y * y + y + 1.0)


def _h_nm_nu(y):
    y = np.asarray(y, dtype=float)
    return y * y / (y * y + 1.0)


def _h_nm_rho(y):
    y = np.asarray(y, dtype=float)
    return 1.0 / (y * y + 1.0)


def _zero(y):
    return np.zeros_like(np.asarray(y, dtype=float))


def _one(y):
    return np.ones_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class Decomposition:
    """Weights (h_nu, h_mu, h_rho) summing to one away from 0."""
    kind: str
    h_nu: Callable
    h_mu: Callable
    h_rho: Callable

    def parts(self):
        return (("nu", self.h_nu), ("mu", self.h_mu), ("rho", self.h_rho))

    def is_zero(self, which):
        return {"nu": self.h_nu, "mu": self.h_mu, "rho": self.h_rho}[which] is _zero

    def part(self, kernel: LevyKernel, x, which) -> LevyMeasureSpec:
        h = {"nu": self.h_nu, "mu": self.h_mu, "rho": self.h_rho}[which]
        if h is _zero:
            return ZERO_MEASURE
        if h is _one:
            return kernel.at(x)
        return kernel.weighted_at(x, h, (self.kind, which))

    def weights(self, y):
        return self.h_nu(y), self.h_mu(y), self.h_rho(y)


DECOMPOSITIONS = ("standard", "no_medium", "all_large", "all_medium")


def default_decomposition(kind: str, kernel: LevyKernel | None = None) -> Decomposition:
    """The built-in weight choices.

    ``standard`` uses |y|^2, |y| and 1 over |y|^2+|y|+1, ``no_medium`` puts
    |y|^2/(|y|^2+1) into the large part and the rest into the small part,
    ``all_large`` is only valid for finite-activity kernels.  ``all_medium``
    (everything medium) is valid for kernels with integrable jumps.
    """
    if kind == "standard":
        return Decomposition(kind, _h_std_nu, _h_std_mu, _h_std_rho)
    if kind == "no_medium":
        return Decomposition(kind, _h_nm_nu, _zero, _h_nm_rho)
    if kind == "all_large":
        if kernel is not None and kernel.activity_class != "finite":
            raise ValueError("all_large needs a finite-activity kernel, got "
                             f"activity class {kernel.activity_class!r}")
        return Decomposition(kind, _one, _zero, _zero)
    if kind == "all_medium":
        if kernel is not None and kernel.activity_class == "levy":
            raise ValueError("all_medium needs integrable jumps")
        return Decomposition(kind, _zero, _one, _zero)
    raise ValueError(f"unknown decomposition {kind!r}")


def valid_decompositions(kernel: LevyKernel):
    out = ["standard", "no_medium"]
    if kernel.activity_class == "finite":
        out.append("all_large")
    return out


# --------------------------------------------------------------- operations

def tail(m: LevyMeasureSpec, z):
    """One-sided tail of ``m`` beyond z."""
    if np.any(np.asarray(z) == 0):
        raise ValueError("tail is defined for z != 0")
    return m.tail(z)


def integrated_tail(m: LevyMeasureSpec, z):
    if np.any(np.asarray(z) == 0):
        raise ValueError("integrated_tail is defined for z != 0")
    return m.integrated_tail(z)


def a_pi_measure(nu: LevyMeasureSpec, mu: LevyMeasureSpec, rho: LevyMeasureSpec) -> float:
    ident = lambda y: y  # noqa: E731
    out = 0.0
    if not nu.is_zero():
        out -= nu.integrate(ident, -1.0, 1.0)
    if not mu.is_zero():
        out -= mu.integrate(ident, -1.0, 1.0)
    if not rho.is_zero():
        out += rho.integrate(ident, 1.0, INF, lo_closed=True) + rho.integrate(ident, -INF, -1.0, hi_closed=True)
    return out


def a_pi(triplet, d: Decomposition, x: float) -> float:
    """-int_{|y|<1} y nu - int_{|y|<1} y mu + int_{|y|>=1} y rho at x."""
    k = triplet.kernel
    cache = getattr(k, "_a_pi_cache", None) if k.constant else None
    if cache is not None and d.kind in cache:
        return cache[d.kind]
    v = a_pi_measure(d.part(k, x, "nu"), d.part(k, x, "mu"), d.part(k, x, "rho"))
    if k.constant:
        if cache is None:
            cache = {}
            k._a_pi_cache = cache
        cache[d.kind] = v
    return v


# ---------------------------------------------------------------- membership

@dataclass
class MembershipReport:
    r_values: list
    details: dict = field(default_factory=dict)   # (condition, r) -> dict

    @property
    def status(self):
        states = [v["status"] for v in self.details.values()]
        if "fail" in states:
            return "fail"
        if "inconclusive" in states:
            return "inconclusive"
        return "pass"

    @property
    def passed(self):
        return self.status == "pass"

    def summary(self):
        lines = []
        for (cond, r), v in sorted(self.details.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            est = ", ".join(f"{e:.6g}" for e in v["estimates"])
            lines.append(f"{cond:6s} r={r:<6g} {v['status']:12s} [{est}]")
        return "\n".join(lines)


def _condition_integrand(kernel: LevyKernel, d: Decomposition, which: str, r: float):
    """g(x) whose eta-integral is the membership condition."""
    def g(xs):
        out = np.empty(len(xs))
        for i, x in enumerate(xs):
            if which == "large":
                m = d.part(kernel, x, "nu")
                if m.is_zero():
                    out[i] = 0.0
                    continue
                v = m.mass(-x - r, -x + r)
                if abs(x) < r:
                    v += m.mass()
            elif which == "medium":
                m = d.part(kernel, x, "mu")
                v = 0.0 if m.is_zero() else m.integrate(lambda y: np.minimum(1.0, np.abs(y)))
            else:
                m = d.part(kernel, x, "rho")
                v = 0.0 if m.is_zero() else m.integrate(lambda y: np.minimum(np.abs(y), y * y))
            out[i] = v
        return out
    return g


def check_membership(triplet, d: Decomposition, eta, r_values=(0.5, 1.0, 2.0), start=None,
                     doublings=10, grow=0.05, settle=5e-3, shrink=0.9) -> MembershipReport:
    """Numerical diagnostics for the jump-functional membership conditions.

    For each r the integrals

    * large:  int (nu(x, B(-x, r)) + 1{|x|<r} nu(x, R)) eta(dx)
    * medium: int int (1 ^ |y|) mu(x, dy) eta(dx)
    * small:  int int (|y| ^ |y|^2) rho(x, dy) eta(dx)

    are evaluated on windows [-L, L] with L doubling.  A condition fails
    when three successive doublings each grow the estimate by more than
    ``grow`` while the increments do not shrink (ratio of successive
    increments above ``shrink``).  It passes when the last doubling moves
    the estimate by less than ``settle``, or when the last three increment
    ratios are all at most ``shrink`` (geometric convergence, as for
    densities with power-law tails); anything else is inconclusive.
    """
    kernel = triplet.kernel
    rep = MembershipReport(list(r_values))
    L0 = start if start is not None else max(4.0, eta.scale())
    for which in ("large", "medium", "small"):
        part = {"large": "nu", "medium": "mu", "small": "rho"}[which]
        if d.is_zero(part):
            for r in r_values:
                rep.details[(which, r)] = {"status": "pass", "estimates": [0.0]}
            continue
        rs = r_values if which == "large" else [r_values[0]]
        for r in rs:
            g = _condition_integrand(kernel, d, which, r)
            est = []
            status = "inconclusive"
            try:
                acc = eta.integrate_window(g, 0.0, L0)
                est.append(acc)
                L = L0
                for _ in range(doublings):
                    acc = acc + eta.integrate_window(g, L, 2 * L)
                    est.append(acc)
                    L *= 2
                    if not np.isfinite(acc):
                        status = "fail"
                        break
                    inc = np.diff(est)
                    rel = np.abs(inc) / np.maximum(np.abs(est[:-1]), 1e-300)
                    q = np.abs(inc[1:]) / np.maximum(np.abs(inc[:-1]), 1e-300)
                    if len(rel) >= 3 and np.all(rel[-3:] > grow) and np.all(q[-2:] > shrink):
                        status = "fail"
                        break
                    if len(q) >= 3 and np.all(q[-3:] <= shrink) and rel[-1] > settle:
                        status = "pass"
                        break
                else:
                    rel = abs(est[-1] - est[-2]) / max(abs(est[-2]), 1e-300)
                    status = "pass" if (rel < settle or abs(est[-1] - est[-2]) < 1e-12) else "inconclusive"
            except (DivergenceError, QuadratureError):
                status = "fail"
            if which == "large":
                rep.details[(which, r)] = {"status": status, "estimates": est}
            else:
                for rr in r_values:
                    rep.details[(which, rr)] = {"status": status, "estimates": est}
    return rep
