"""Monte-Carlo simulation of dX = phi(X-) dL with a one-dimensional state.

The driver L is n-dimensional (time, Brownian and jump coordinates).  Each
path owns a PCG64 generator seeded with ``seed ^ i`` so results do not
depend on how paths are scheduled.  The per-path loop is compiled with
numba; the coefficient row phi is generated as scalar source from the
expression trees.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .expr import SOURCE_NAMESPACE, ScalarFunction, as_function, parse, to_source
from .levy import LevyMeasureSpec

log = logging.getLogger(__name__)

BLOWUP = 1e12
MAX_ABORTED_FRACTION = 0.01
CHECKPOINTS = (0.5, 0.75, 1.0)


class SimulationError(RuntimeError):
    pass


# ------------------------------------------------------------------ drivers

@dataclass
class CompoundPoisson:
    """Jumps at rate ``rate`` with sizes drawn from the probability ``law``."""
    rate: float
    law: LevyMeasureSpec
    coordinate: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("jump rate must be positive")
        total = self.law.mass()
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"jump-size law must be a probability (mass {total:.8g})")


@dataclass
class StableJumps:
    """Spectrally positive stable jumps with Levy density scale * y^(-1-alpha) on y > 0."""
    alpha: float
    scale: float = 1.0
    coordinate: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("stable index must lie in (0, 1)")
        if not self.scale > 0:
            raise ValueError("stable scale must be positive")

    def tail(self, eps):
        return self.scale * eps ** -self.alpha / self.alpha

    def small_mean(self, eps):
        """int_0^eps y nu(dy), finite since alpha < 1."""
        return self.scale * eps ** (1 - self.alpha) / (1 - self.alpha)


@dataclass
class DriverSpec:
    gamma: np.ndarray
    sigma: np.ndarray
    jumps: Optional[CompoundPoisson | StableJumps] = None

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        n = self.gamma.size
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(n, n)
        if not np.allclose(self.sigma, self.sigma.T):
            raise ValueError("sigma must be symmetric")
        if np.any(np.diag(self.sigma) < 0):
            raise ValueError("sigma must have a non-negative diagonal")
        if np.any(self.sigma - np.diag(np.diag(self.sigma))):
            raise ValueError("only diagonal sigma is supported")
        if self.jumps is not None and not 0 <= self.jumps.coordinate < n:
            raise ValueError("jump coordinate out of range")

    @property
    def n(self):
        return self.gamma.size


@dataclass
class SdeSpec:
    phi: Sequence
    driver: DriverSpec
    x0: float = 0.0
    scheme: str = "euler_exact_jumps"
    eps: float = 1e-3

    def __post_init__(self):
        self.phi = [as_function(p) for p in self.phi]
        if len(self.phi) != self.driver.n:
            raise ValueError(f"phi has {len(self.phi)} entries, the driver has {self.driver.n} coordinates")
        if self.scheme not in ("euler_exact_jumps", "euler_truncated"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        stable = isinstance(self.driver.jumps, StableJumps)
        if stable and self.scheme != "euler_truncated":
            raise ValueError("a stable driver needs the euler_truncated scheme")
        if not self.eps > 0:
            raise ValueError("truncation level must be positive")

    def lipschitz_probe(self, R=10.0, pairs=10_000, seed=0):
        """Largest |phi(x)-phi(y)|/|x-y| over random pairs in [-R, R] (advisory)."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-R, R, pairs)
        y = rng.uniform(-R, R, pairs)
        keep = x != y
        x, y = x[keep], y[keep]
        q = max(float(np.max(np.abs(f(x) - f(y)) / np.abs(x - y))) for f in self.phi)
        log.info("Lipschitz probe on [-%g, %g]: %.6g", R, R, q)
        return q


# ------------------------------------------------------------ empirical law

@dataclass
class EmpiricalDistribution:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int
    n_samples: int
    burn_in: float
    seed: int
    paths: int
    aborted: int
    samples: np.ndarray = field(repr=False)        # (paths, checkpoints), nan for aborted paths
    times: np.ndarray = field(default=None)
    jumps: np.ndarray = field(default=None, repr=False)

    @property
    def widths(self):
        return np.diff(self.edges)

    def density(self):
        return self.counts / (self.n_samples * self.widths)

    def pooled(self):
        s = self.samples.ravel()
        return np.sort(s[np.isfinite(s)])

    def mean(self):
        return float(np.mean(self.pooled()))

    def var(self):
        return float(np.var(self.pooled()))


def _histogram(samples, edges):
    counts, _ = np.histogram(samples, edges)
    under = int(np.sum(samples < edges[0]))
    over = int(np.sum(samples > edges[-1]))
    return counts.astype(np.int64), under, over


# ------------------------------------------------------------- jump tables

def _jump_tables(law: LevyMeasureSpec, n=20001):
    """Atom locations/cumulative masses and an inverse-CDF table of the density part."""
    aloc = law.atom_loc.copy()
    acum = np.cumsum(law.atom_mass)
    atot = float(acum[-1]) if acum.size else 0.0
    if law.density is None or atot >= 1.0 - 1e-15:
        return aloc, acum, atot, np.array([0.0, 1.0]), np.array([0.0, 0.0])
    cont = LevyMeasureSpec((), law.density, law.activity_class, law.support, law.breakpoints,
                           tail=law.closed_tail)
    parts = []
    for side in (-1.0, 1.0):
        t0 = float(cont.tail(side * 1e-300))
        if t0 <= 0:
            continue
        ymax = 1.0
        while float(cont.tail(side * ymax)) > 1e-13 * t0 and ymax < 1e12:
            ymax *= 2.0
        y = np.unique(np.concatenate([np.linspace(0, ymax, n), np.geomspace(1e-12, ymax, n // 10)]))
        parts.append((side, y, t0))
    mneg = sum(t0 for s, _, t0 in parts if s < 0)
    ys, cs = [], []
    for side, y, t0 in parts:
        if side < 0:
            ys.append(-y[::-1])
            cs.append(cont.tail(-np.maximum(y[::-1], 1e-300)))
        else:
            ys.append(y)
            cs.append(mneg + t0 - cont.tail(np.maximum(y, 1e-300)))
    y = np.concatenate(ys)
    c = np.concatenate(cs)
    c = np.maximum.accumulate(c / c[-1])
    return aloc, acum, atot, c, y


# ---------------------------------------------------------- compiled kernel

_KERNELS = {}


def _numba_namespace():
    ns = {"math": math, "_inf": math.inf}
    for k, v in SOURCE_NAMESPACE.items():
        if k == "_inf":
            continue
        ns[k] = v if v in (math.sin, math.cos, math.tanh) else numba.njit(cache=False)(v)
    return ns


def _build_kernel(phi: Sequence[ScalarFunction]):
    """Compile the per-path loop for the coefficient row ``phi``."""
    srcs = []
    for f in phi:
        node = getattr(f, "expression", None)
        if node is None and f.text is not None and not f.text.startswith("bump("):
            node = parse(f.text)
        if node is None:
            raise ValueError(f"simulation needs expression-valued coefficients, got {f!r}")
        srcs.append(to_source(node))
    key = tuple(srcs)
    if key in _KERNELS:
        return _KERNELS[key]
    ns = _numba_namespace()
    body = ", ".join(srcs) + ("," if len(srcs) == 1 else "")
    exec(f"def phis(x):\n    return ({body})\n", ns)
    phis = numba.njit(ns["phis"])
    n = len(srcs)

    @numba.njit
    def sample_jump(g, aloc, acum, atot, cdf, ygrid):
        u = g.random()
        if u < atot:
            for k in range(acum.size):
                if u < acum[k]:
                    return aloc[k]
            return aloc[acum.size - 1]
        v = (u - atot) / (1.0 - atot)
        return np.interp(v, cdf, ygrid)

    @numba.njit
    def run_path(g, x0, T, dt, gamma, sig, mode, rate, jc, aloc, acum, atot, cdf, ygrid,
                 eps, alpha, comp, checkpoints, out, max_steps):
        x = x0
        t = 0.0
        nj = 0
        steps = 0
        nxt = t + g.exponential(1.0 / rate) if mode > 0 else math.inf
        ci = 0
        nc = checkpoints.size
        while ci < nc:
            target = min(nxt, checkpoints[ci])
            while t < target:
                p = phis(x)
                drift = 0.0
                var = 0.0
                for k in range(n):
                    drift += p[k] * gamma[k]
                    var += (p[k] * sig[k]) ** 2
                if mode == 2:
                    drift += p[jc] * comp
                ax = max(1.0, abs(x))
                f = 1.0
                if var > 0.0:
                    f = min(f, ax * ax / var)
                if drift != 0.0:
                    f = min(f, ax / abs(drift))
                h = dt * f
                if h >= target - t:
                    h = target - t
                    tn = target
                else:
                    tn = t + h
                x += drift * h
                sh = math.sqrt(h)
                for k in range(n):
                    if sig[k] > 0.0:
                        x += p[k] * sig[k] * sh * g.standard_normal()
                t = tn
                steps += 1
                if not abs(x) < 1e12 or steps > max_steps:
                    return -1
            if target == nxt:
                p = phis(x)
                if mode == 1:
                    J = sample_jump(g, aloc, acum, atot, cdf, ygrid)
                else:
                    J = eps * g.random() ** (-1.0 / alpha)
                    while J == math.inf:
                        J = eps * g.random() ** (-1.0 / alpha)
                x += p[jc] * J
                nj += 1
                nxt += g.exponential(1.0 / rate)
                if not abs(x) < 1e12:
                    return -1
            if target == checkpoints[ci]:
                out[ci] = x
                ci += 1
        return nj

    _KERNELS[key] = run_path
    return run_path


# ---------------------------------------------------------------- simulate

def simulate(spec: SdeSpec, T: float, dt: float, paths: int, seed: int,
             bins=(-5.0, 5.0, 100), max_steps_factor=1000) -> EmpiricalDistribution:
    """Simulate ``paths`` independent paths and pool checkpoint samples.

    The first half of [0, T] is burn-in; every path contributes its states at
    T/2, 3T/4 and T.  Paths leaving |x| < 1e12 (or exceeding the step
    budget) are aborted and counted; more than 1% aborted is an error.
    """
    if not (dt > 0 and T > 0 and paths > 0):
        raise ValueError("T, dt and paths must be positive")
    drv = spec.driver
    jumps = drv.jumps
    empty = np.zeros(0)
    mode, rate, jc, comp, alpha = 0, 1.0, 0, 0.0, 0.5
    aloc, acum, atot, cdf, ygrid = empty, empty, 0.0, np.array([0.0, 1.0]), np.zeros(2)
    if isinstance(jumps, CompoundPoisson):
        mode, rate, jc = 1, float(jumps.rate), jumps.coordinate
        aloc, acum, atot, cdf, ygrid = _jump_tables(jumps.law)
    elif isinstance(jumps, StableJumps):
        mode, jc, alpha = 2, jumps.coordinate, float(jumps.alpha)
        rate = float(jumps.tail(spec.eps))
        comp = float(jumps.small_mean(spec.eps))
        log.info("stable driver truncated at eps=%g: rate %.6g, small-jump mean %.6g", spec.eps, rate, comp)
    kernel = _build_kernel(spec.phi)
    checkpoints = np.array([c * T for c in CHECKPOINTS])
    sig = np.sqrt(np.diag(drv.sigma))
    max_steps = int(max_steps_factor * math.ceil(T / dt))
    samples = np.full((paths, checkpoints.size), np.nan)
    njumps = np.zeros(paths, dtype=np.int64)
    aborted = 0
    out = np.empty(checkpoints.size)
    for i in range(paths):
        g = np.random.Generator(np.random.PCG64(seed ^ i))
        r = kernel(g, float(spec.x0), float(T), float(dt), drv.gamma, sig, mode, rate, jc,
                   aloc, acum, atot, cdf, ygrid, float(spec.eps), alpha, comp, checkpoints, out, max_steps)
        if r < 0:
            aborted += 1
            continue
        samples[i] = out
        njumps[i] = r
    if aborted:
        log.warning("%d of %d paths aborted (blow-up or step budget)", aborted, paths)
    if aborted > MAX_ABORTED_FRACTION * paths:
        raise SimulationError(f"{aborted} of {paths} paths aborted")
    edges = np.linspace(bins[0], bins[1], int(bins[2]) + 1)
    pooled = samples[np.isfinite(samples[:, 0])].ravel()
    counts, under, over = _histogram(pooled, edges)
    return EmpiricalDistribution(edges, counts, under, over, int(pooled.size), 0.5 * T, int(seed),
                                 int(paths), int(aborted), samples, checkpoints, njumps)


# ----------------------------------------------------------------- compare

def _solution_cdf(v):
    """CDF of the cell-constant grid density of a solution, normalised to its grid mass."""
    x, eta, h = np.asarray(v.x), np.asarray(v.eta), float(v.h)
    edges = np.concatenate([x - 0.5 * h, [x[-1] + 0.5 * h]])
    cum = np.concatenate([[0.0], np.cumsum(eta * h)])
    total = cum[-1]

    def F(t):
        return np.interp(t, edges, cum, left=0.0, right=total) / total
    return F


def compare(e: EmpiricalDistribution, v) -> dict:
    """L1 distance of bin probabilities and KS distance of the cumulative functions.

    The solution's cell-constant grid density is integrated over each
    histogram bin; the two overflow bins take part in the L1 sum.  Both
    cumulative functions are piecewise linear, so the KS supremum is
    attained on the union of bin edges and solution cell edges inside the
    histogram range (outside it the empirical function is not resolved).
    """
    F = _solution_cdf(v)
    n = e.n_samples
    Fe = F(e.edges)
    p_sol = np.concatenate([[Fe[0]], np.diff(Fe), [1.0 - Fe[-1]]])
    p_emp = np.concatenate([[e.underflow], e.counts, [e.overflow]]) / n
    l1 = float(np.sum(np.abs(p_emp - p_sol)))
    h = float(v.h)
    cells = np.concatenate([np.asarray(v.x) - 0.5 * h, [v.x[-1] + 0.5 * h]])
    pts = np.union1d(e.edges, cells)
    pts = pts[(pts >= e.edges[0]) & (pts <= e.edges[-1])]
    cum_e = (e.underflow + np.concatenate([[0], np.cumsum(e.counts)])) / n
    ks = float(np.max(np.abs(np.interp(pts, e.edges, cum_e) - F(pts))))
    return {"l1": l1, "ks": ks}


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov distance."""
    a = np.sort(np.asarray(a)[np.isfinite(a)])
    b = np.sort(np.asarray(b)[np.isfinite(b)])
    pts = np.concatenate([a, b])
    Fa = np.searchsorted(a, pts, side="right") / a.size
    Fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(Fa - Fb)))
