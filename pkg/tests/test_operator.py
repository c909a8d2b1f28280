import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyinv import cli
from levyinv.levy import ConstantKernel, LevyMeasureSpec, PushforwardKernel, default_decomposition
from levyinv.operator import (BumpFunction, CharTriplet, Measure1D, apply_decomposed, apply_direct,
                              invariance_residual, standard_bumps)

INF = math.inf
ATOM = LevyMeasureSpec([(1.0, 1.0)], None, "finite")


def _psi(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    m = np.abs(u) < 1
    out[m] = np.exp(1 - 1 / (1 - u[m] ** 2))
    return out


# ------------------------------------------------------------------ bumps

def test_bump_values():
    f = BumpFunction(0.3, 0.7)
    assert f(0.3) == 1.0 and f.d1(0.3) == 0.0
    x = np.array([-0.4, -0.5, 1.0, 1.2])
    assert np.all(f(x) == 0) and np.all(f.d1(x) == 0) and np.all(f.d2(x) == 0)
    with pytest.raises(ValueError):
        BumpFunction(0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.2, 3), st.floats(-0.9, 0.9))
def test_bump_derivatives(c, w, u):
    f = BumpFunction(c, w)
    x = c + u * w
    h = 1e-5
    fd1 = (f(x + h) - f(x - h)) / (2 * h)
    fd2 = (f.d1(x + h) - f.d1(x - h)) / (2 * h)
    scale = 1 / w ** 2
    assert f.d1(x) == pytest.approx(fd1, rel=1e-5, abs=1e-8 * scale)
    assert f.d2(x) == pytest.approx(fd2, rel=1e-5, abs=1e-6 * scale)


def test_standard_bumps():
    fs = standard_bumps((-3, 3))
    assert len(fs) == 51
    assert {f.width for f in fs} == {0.5, 1.0, 2.0}


# ----------------------------------------------------------- apply_direct

def test_direct_examples():
    f = BumpFunction(0, 1)
    h = 1e-4
    fd = float((_psi(h) - 2 * _psi(0.0) + _psi(-h)) / h ** 2)
    t = CharTriplet("0", "1", None)
    assert apply_direct(t, f, 0.0) == pytest.approx(0.5 * fd, rel=1e-6)
    assert apply_direct(t, f, 0.0) == pytest.approx(-1.0, rel=1e-12)
    assert apply_direct(CharTriplet("1", "0", None), f, 0.0) == 0.0
    t = CharTriplet("0", "0", ConstantKernel(ATOM))
    assert apply_direct(t, f, 0.0) == pytest.approx(-1.0, abs=1e-15)


def test_decomposed_examples():
    f = BumpFunction(0, 1)
    t = CharTriplet("0", "1", None)
    for kind in ("standard", "no_medium"):
        d = default_decomposition(kind)
        assert apply_decomposed(t, d, f, 0.0) == pytest.approx(apply_direct(t, f, 0.0), rel=1e-12)
    t = CharTriplet("0", "0", ConstantKernel(ATOM))
    assert apply_decomposed(t, default_decomposition("all_large", t.kernel), f, 0.0) == pytest.approx(-1.0, abs=1e-15)


def test_medium_only_uniform():
    t = CharTriplet("0", "0", ConstantKernel(LevyMeasureSpec((), "1", "finite", (0, 1))))
    f = BumpFunction(0, 1)
    d = default_decomposition("all_medium", t.kernel)
    # the mu-term on its own: int_0^1 f'(x+y)(1-y) dy, plus the compensator drift a_pi f'(x)
    x = -0.5
    y = np.linspace(0, 1, 200001)
    g = f.d1(x + y) * (1 - y)
    mu_term = float(np.sum((g[1:] + g[:-1]) / 2) * (y[1] - y[0]))
    want = mu_term - 0.5 * f.d1(x)
    got = apply_decomposed(t, d, f, x)
    assert got == pytest.approx(want, rel=1e-8)
    assert got == pytest.approx(apply_direct(t, f, x), rel=1e-9)


@pytest.mark.parametrize("m, kinds", [
    (LevyMeasureSpec((), "y^(-1.5)", "integrable_jumps", (0, INF)), ["standard", "no_medium", "all_medium"]),
    (LevyMeasureSpec((), "abs(y)^(-2.5)*exp(-abs(y))", "levy"), ["standard", "no_medium"]),
    (LevyMeasureSpec([(-0.3, 0.5), (2.0, 1.0)], "exp(-abs(y))", "finite"),
     ["standard", "no_medium", "all_large", "all_medium"]),
])
def test_representation_equivalence_constant_kernels(m, kinds):
    t = CharTriplet("sin(x)", "1 + x^2", ConstantKernel(m))
    xs = np.linspace(-3, 3, 13)
    for f in (BumpFunction(0.25, 0.5), BumpFunction(-1.0, 1.0), BumpFunction(0.5, 2.0)):
        ref = apply_direct(t, f, xs)
        for kind in kinds:
            got = apply_decomposed(t, default_decomposition(kind, t.kernel), f, xs)
            assert np.all(np.abs(got - ref) <= 1e-6 * (1 + np.abs(ref))), kind


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.sampled_from([0.5, 1.0, 2.0]),
       st.sampled_from(["standard", "no_medium", "all_large"]))
def test_decomposition_independence_pushforward(x, c, w, kind):
    base = LevyMeasureSpec([(1.0, 0.5)], "exp(-y)", "finite", (0, INF))
    t = CharTriplet("-x", "0.5", PushforwardKernel(base, "1 + 0.5*sin(x)"))
    f = BumpFunction(c, w)
    ref = apply_direct(t, f, x)
    got = apply_decomposed(t, default_decomposition(kind, t.kernel), f, x)
    assert abs(got - ref) <= 1e-6 * (1 + abs(ref))


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-2, 2), st.floats(0.2, 2))
def test_support_without_jumps(x, c, w):
    t = CharTriplet("x^2 - 1", "2 + cos(x)", None)
    f = BumpFunction(c, w)
    v = apply_direct(t, f, x)
    if abs(x - c) >= w:
        assert v == 0.0
    else:
        want = float(t.a(x)) * f.d1(x) + 0.5 * (float(t.b(x)) * f.d2(x) + float(t.b.d1(x)) * f.d1(x))
        assert v == pytest.approx(want, rel=1e-12, abs=1e-14)


# ------------------------------------------------------------- residuals

def test_lebesgue_invariant_for_compensated_compound_poisson(config):
    cfg = config("cp_exponential_lebesgue")
    fs, res = cli.run_check(cfg)
    assert max(abs(r) for r in res) <= 1e-6


def test_jump_flip_atoms_exact(config):
    fs, res = cli.run_check(config("jump_flip"))
    assert max(abs(r) for r in res) <= 1e-14


def test_ou_wrong_variance_detected():
    t = CharTriplet("-x", "1", None)
    fs = standard_bumps((-3, 3))
    good = invariance_residual(t, Measure1D("exp(-x^2)/sqrt(pi)"), fs)
    bad = invariance_residual(t, Measure1D("exp(-x^2/2)/sqrt(2*pi)"), fs)
    assert max(abs(r) for r in good) <= 1e-8
    assert max(abs(r) for r in bad) > 1e-3


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.sampled_from([0.5, 1.0, 2.0]))
def test_residual_linearity(c1, c2, c, w):
    t = CharTriplet("-x", "1", ConstantKernel(LevyMeasureSpec((), "exp(-y)", "finite", (0, INF))))
    e1 = Measure1D("exp(-x^2)", atoms=[(0.5, 0.2)])
    e2 = Measure1D("1/(1 + x^2)^2", atoms=[(-1.0, 0.3)])
    both = Measure1D(f"{c1!r}*exp(-x^2) + {c2!r}/(1 + x^2)^2")
    f = [BumpFunction(c, w)]
    r1, r2 = invariance_residual(t, e1, f)[0], invariance_residual(t, e2, f)[0]
    # atoms enter exactly; compare the density parts
    a1 = 0.2 * apply_direct(t, f[0], 0.5)
    a2 = 0.3 * apply_direct(t, f[0], -1.0)
    rb = invariance_residual(t, both, f)[0]
    assert rb == pytest.approx(c1 * (r1 - a1) + c2 * (r2 - a2), abs=1e-8 * (1 + abs(c1) + abs(c2)))


def test_measure_normalization_flag():
    Measure1D("exp(-x^2)/sqrt(pi)", normalized=True)
    with pytest.raises(ValueError):
        Measure1D("exp(-x^2)", normalized=True)
    with pytest.raises(ValueError):
        Measure1D(atoms=[(0.0, -1.0)])
    with pytest.raises(ValueError):
        Measure1D(grid=([0.0, 1.0], [1.0, -1.0]))


def test_grid_residual_converges_for_exact_solution():
    t = CharTriplet("-x", "1", None)
    fs = standard_bumps((-3, 3))
    errs = []
    for n in (601, 1201):
        x = np.linspace(-6, 6, n)
        eta = Measure1D.from_grid(x, np.exp(-x ** 2) / math.sqrt(math.pi))
        errs.append(max(abs(r) for r in invariance_residual(t, eta, fs)))
    assert errs[1] <= 1e-4
    assert errs[0] / errs[1] > 3.5     # second order in the grid step
