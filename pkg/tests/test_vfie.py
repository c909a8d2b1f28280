import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sint

from levyinv import cli, operator, vfie
from levyinv.levy import (ConstantKernel, Decomposition, LevyMeasureSpec, _one, _zero,
                          default_decomposition)
from levyinv.operator import CharTriplet

ATOM = LevyMeasureSpec([(1.0, 1.0)], None, "finite")
ALL_SMALL = Decomposition("all_small", _zero, _zero, _one)
SOLUTION_TOL = 1e-3     # level at which solved densities are accepted


# ---------------------------------------------------------------- kernels

def test_kappa2_examples():
    t = CharTriplet("-x", "2", None)
    d = default_decomposition("standard")
    for z in (-1.5, 0.2, 3.0):
        assert vfie.kappa2(t, d, 0.7, z) == pytest.approx(-z, abs=1e-15)
    t = CharTriplet("0", "0", ConstantKernel(ATOM))
    d = default_decomposition("all_large", t.kernel)
    x = np.array([-1.0, 0.5, 2.0])
    assert np.allclose(vfie.kappa2(t, d, x, 0.3), x - 0.3, rtol=0, atol=1e-15)


def test_kappa2_half_derivative_of_diffusion():
    t = CharTriplet("0", "(1 + x^4)^2", None)
    d = default_decomposition("standard")
    phi2 = lambda z: (1 + z ** 4) ** 2  # noqa: E731
    for z in (-1.2, 0.4, 0.9):
        h = 1e-6
        fd = (phi2(z + h) - phi2(z - h)) / (2 * h)
        assert vfie.kappa2(t, d, 1.0, z) == pytest.approx(0.5 * fd, rel=1e-8)


def test_kappa1_examples():
    t = CharTriplet("-x", "1", None)
    x = np.linspace(-2, 2, 9)
    assert np.all(vfie.kappa1(t, default_decomposition("standard"), x, 0.3) == 0)
    t = CharTriplet("0", "0", ConstantKernel(ATOM))
    z = 0.25
    x = np.array([0.3, 0.5, 1.0, 1.2, 1.25, 2.0])
    got = vfie.kappa1(t, ALL_SMALL, x, z)
    # minus the integrated tail of delta_1 at x - z, by quadrature of its tail 1{0<s<1}
    want = np.array([-sint.quad(lambda s: 1.0 if s < 1 else 0.0, u, 2.0, points=[1.0])[0] for u in x - z])
    assert np.allclose(got, want, rtol=0, atol=1e-12)
    assert np.allclose(got, -np.maximum(0.0, 1 - (x - z)), rtol=0, atol=1e-15)


def test_kappa2_without_large_jumps_ignores_x(config):
    cfg = config("superlinear")
    t = cli.build_triplet(cfg)
    d = cli.build_decomposition(cfg, t)
    for z in (-0.5, 0.3, 1.5):
        k = vfie.kappa2(t, d, np.array([-2.0, 0.1, 3.0]), z)
        assert np.ptp(k) == 0


# --------------------------------------------------------------- assembly

def test_assemble_pure_diffusion():
    s = vfie.assemble(CharTriplet("0", "1", None), default_decomposition("standard"), 3.0, 32)
    assert np.all(s.fredholm == 0) and np.all(s.F1 == 0.5)
    assert np.allclose(s.affine[:, 0], s.x) and np.all(s.affine[:, 1] == 1)
    with pytest.raises(ValueError):
        vfie.assemble(CharTriplet("0", "1", None), default_decomposition("standard"), 3.0, 33)


def test_volterra_sign_and_structure():
    t = CharTriplet("1 + x^2", "1", None)
    s = vfie.assemble(t, default_decomposition("standard"), 2.0, 40)
    x, h = s.x, s.h
    for i in range(s.N):
        for j in range(s.N):
            z = x[j]
            inside = (0 < z <= x[i]) if x[i] > 0 else (x[i] <= z < 0)
            if not inside:
                assert s.volterra[i, j] == 0
            elif i != j:
                sign = 1.0 if x[i] > 0 else -1.0
                assert s.volterra[i, j] == pytest.approx(sign * (1 + z * z) * h, rel=1e-14)
            else:
                # the cell containing x_i contributes its inner half
                assert s.volterra[i, i] == pytest.approx(0.5 * np.sign(x[i]) * (1 + z * z) * h, rel=1e-14)


def test_assembly_midpoint_order():
    t = CharTriplet("-x", "1", None)
    d = default_decomposition("standard")
    errs = []
    for N in (64, 128, 256):
        s = vfie.assemble(t, d, 5.0, N)
        eta = np.exp(-s.x ** 2) / math.sqrt(math.pi)
        # the exact density solves the integrated equation with c1 = 0, c2 = 1/(2 sqrt(pi))
        errs.append(np.max(np.abs(s.apply(eta, 0.0, 0.5 / math.sqrt(math.pi)))))
    rate = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rate > 1.8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 63), st.floats(0, 1), st.booleans())
def test_volterra_causality(k, seed_frac, right):
    t = CharTriplet("-x", "1 + x^2/4", ConstantKernel(LevyMeasureSpec((), "exp(-y)", "finite", (0, math.inf))))
    s = _causal_system(t)
    rng = np.random.default_rng(int(seed_frac * 1e6))
    eta = rng.random(s.N)
    x = s.x
    if right:
        cut = abs(x[k])                     # zero eta on (cut, inf)
        cut_eta = np.where(x > cut, 0.0, eta)
        keep = x <= cut
    else:
        cut = -abs(x[k])                    # zero eta on (-inf, cut)
        cut_eta = np.where(x < cut, 0.0, eta)
        keep = x >= cut
    assert np.array_equal((s.volterra @ eta)[keep], (s.volterra @ cut_eta)[keep])


_SYSTEMS = {}


def _causal_system(t):
    if "s" not in _SYSTEMS:
        _SYSTEMS["s"] = vfie.assemble(t, default_decomposition("standard", t.kernel), 4.0, 64)
    return _SYSTEMS["s"]


def test_assembly_bitwise_reproducible():
    t = CharTriplet("-x", "1", ConstantKernel(LevyMeasureSpec((), "y^(-1.5)", "integrable_jumps", (0, math.inf))))
    d = default_decomposition("standard", t.kernel)
    a = vfie.assemble(t, d, 3.0, 32)
    b = vfie.assemble(t, d, 3.0, 32)
    assert np.array_equal(a.fredholm, b.fredholm) and np.array_equal(a.volterra, b.volterra)


# ------------------------------------------------------------------ solve

def test_ou_solution(solution):
    sol = solution("ou")
    ref = np.exp(-sol.x ** 2) / math.sqrt(math.pi)
    assert np.max(np.abs(sol.eta - ref)) <= 1e-3
    assert abs(sol.c1) <= 1e-6
    assert abs(sol.mass - 1) <= 1e-3
    assert np.all(sol.eta >= 0)
    assert sol.mass_leak < 1e-6


def test_pure_diffusion_is_not_normalizable():
    s = vfie.assemble(CharTriplet("0", "1", None), default_decomposition("standard"), 5.0, 64)
    with pytest.raises(vfie.NonNormalizableError):
        vfie.solve(s)


def test_constraints_required():
    s = vfie.assemble(CharTriplet("-x", "1", None), default_decomposition("standard"), 5.0, 32)
    with pytest.raises(vfie.VfieError):
        vfie.solve(s, normalize=False)


def test_pins_are_honoured():
    s = vfie.assemble(CharTriplet("-x", "1", None), default_decomposition("standard"), 5.0, 256)
    sol = vfie.solve(s, pin_c1=0.0)
    assert sol.c1 == 0.0
    assert sol.c2 == pytest.approx(0.5 / math.sqrt(math.pi), rel=1e-3)


def test_superlinear_tails(solution, config):
    cfg = config("superlinear")
    sol = solution("superlinear")
    M = cfg["expected"]["tail_proportionality"]["M"]
    prod = sol.eta * (1 + sol.x ** 4) ** 2
    for sel in (sol.x > M, sol.x < -M):
        p = prod[sel]
        assert (p.max() - p.min()) / p.mean() <= 0.02


def test_superlinear_identity_sign(solution):
    sol = solution("superlinear")
    phi2 = cli.load_config("superlinear")["expected"]["identity"]["phi2"]
    rel, r, lhs, V = vfie.superlinear_identity_residual(sol, "1 + x^4", phi2)
    assert rel <= 1e-3
    # the form with the opposite orientation of the jump flux is far off
    assert vfie.superlinear_identity_residual(sol, "1 + x^4", phi2, sign=-1.0)[0] > 1.0


def test_jump_flux_average_matches_pointwise():
    x = np.linspace(-3, 3, 601)
    eta = np.exp(-x ** 2) / math.sqrt(math.pi)
    phi2 = "exp(1 - 1/max(1 - x^2, 1e-150))"
    z = np.linspace(-1.5, 1.5, 7)
    V = vfie.jump_flux(x, eta, phi2, z)
    avg = np.array([vfie.jump_flux_average(x, eta, phi2, zz - 1e-3, zz + 1e-3) for zz in z]).ravel()
    assert np.allclose(avg, V, rtol=1e-3, atol=1e-6)


def test_decomposition_invariance_ou(solution):
    a, b = solution("ou", "standard"), solution("ou", "no_medium")
    assert np.sum(np.abs(a.eta - b.eta)) * a.h <= 1e-3


def test_solver_residual_consistency(solution, config):
    for name in ("ou", "superlinear", "stable_drift"):
        cfg = config(name)
        sol = solution(name)
        t = cli.build_triplet(cfg)
        fs, res = cli.run_check(cfg, sol)
        res = np.abs(np.asarray(res))
        scale = max(np.max(np.abs(operator.apply_direct(t, f, np.linspace(*f.support, 201)))) for f in fs)
        assert np.max(res) <= 10 * SOLUTION_TOL * scale, name


# ------------------------------------------------------------- fractional

def test_fractional_zero_solution():
    x = (np.arange(50) + 0.5) * 0.1
    sol = vfie.VfieSolution(x, np.zeros(50), 0.0, 0.0, 0.0, 0.0, 0.1)
    assert vfie.fractional_check(sol, 0.5, "-4*x", 0.0) == 0.0


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_rl_integral_of_constant(alpha):
    x = np.linspace(0.05, 3, 60)
    got = vfie.rl_integral_linear(x, np.ones_like(x), alpha, at=np.array([0.5, 1.0, 2.5]))
    for t, g in zip([0.5, 1.0, 2.5], got):
        # the interpolant rises linearly from (0, 0) to the first node
        ramp = sint.quad(lambda y: y / 0.05 * (t - y) ** -alpha, 0, 0.05, epsabs=0, epsrel=1e-13)[0]
        flat = sint.quad(lambda y: 1.0, 0.05, t, weight="alg", wvar=(0, -alpha), epsabs=0, epsrel=1e-13)[0]
        assert g == pytest.approx((ramp + flat) / alpha, rel=1e-10)
    x0 = np.concatenate([[0.0], x])
    full = vfie.rl_integral_linear(x0, np.ones_like(x0), alpha, at=np.array([1.0, 2.0]))
    assert np.allclose(full, np.array([1.0, 2.0]) ** (1 - alpha) / (alpha * (1 - alpha)), rtol=1e-12)


def test_fractional_weights_against_closed_form():
    s = vfie.assemble_fractional(0.5, "-4*x", 5.0, 100)
    # constant density: alpha^-1 int_0^x (x-y)^-alpha dy
    rl = s.volterra @ np.ones(100) / 0.5
    assert np.allclose(rl, s.x ** 0.5 / (0.5 * 0.5), rtol=1e-12)


def test_stable_fractional_solution(solution, config):
    cfg = config("stable_drift")
    sol = solution("stable_drift")
    fr = cfg["expected"]["fractional"]
    med = np.median(np.abs(-4 * sol.x * sol.eta))
    assert vfie.fractional_check(sol, fr["alpha"], fr["phi_gamma"]) / med <= 1e-3
    assert vfie.fractional_check(sol, fr["alpha"], fr["phi_gamma"], sign=-1.0) / med > 1.0


def test_stable_solution_matches_levy_law(solution):
    sol = solution("stable_drift")
    # eta(x) = x^-3/2 exp(-pi/(4x)) / 2 solves 4x eta = 2 int_0^x eta(y)(x-y)^-1/2 dy
    ref = 0.5 * sol.x ** -1.5 * np.exp(-math.pi / (4 * sol.x))
    ref /= np.sum(ref) * sol.h
    assert np.sum(np.abs(sol.eta - ref)) * sol.h <= 5e-3


def test_levy_law_solves_fractional_equation():
    x = np.linspace(1e-3, 30, 30000)
    eta = 0.5 * x ** -1.5 * np.exp(-math.pi / (4 * x))
    rl = vfie.rl_integral_linear(x, eta, 0.5, at=np.array([0.5, 1.0, 2.0, 5.0]))
    lhs = -4 * np.array([0.5, 1.0, 2.0, 5.0]) * np.interp([0.5, 1.0, 2.0, 5.0], x, eta)
    assert np.allclose(lhs + rl, 0.0, atol=1e-5)


@pytest.mark.parametrize("kind", ["standard", "no_medium", "all_large", "all_medium"])
def test_shot_noise_gamma_density(kind):
    # dX = -X dt + dN with rate-2 Exp(1) jumps is stationary at x exp(-x) on (0, inf);
    # the drift carries the compensator 2 int_0^1 y exp(-y) dy of the truncation convention
    m = LevyMeasureSpec((), "2*exp(-y)", "finite", (0, math.inf))
    t = CharTriplet(f"-x + {2 * (1 - 2 / math.e)!r}", "0", ConstantKernel(m))
    d = default_decomposition(kind, t.kernel)
    errs = []
    for N in (128, 256):
        s = vfie.assemble(t, d, 16.0, N)
        eta = np.where(s.x > 0, s.x * np.exp(-s.x), 0.0)
        rhs = -s.matrix()[:, :N] @ eta
        c, *_ = np.linalg.lstsq(-s.affine, rhs, rcond=None)
        errs.append(np.max(np.abs(s.apply(eta, *c))))
    assert errs[1] <= 2e-3
    assert errs[0] / errs[1] > 3.5
