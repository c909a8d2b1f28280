import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from levyinv import cli, sde
from levyinv.levy import LevyMeasureSpec

UNIT_ATOM = LevyMeasureSpec([(1.0, 1.0)], None, "finite")


def _ou(x0=0.0):
    return sde.SdeSpec(["-x", "1"], sde.DriverSpec([1, 0], [[0, 0], [0, 1]]), x0)


def test_poisson_jump_count():
    drv = sde.DriverSpec([0, 0], np.zeros((2, 2)), sde.CompoundPoisson(1.0, UNIT_ATOM, 1))
    spec = sde.SdeSpec(["0", "1"], drv)
    e = sde.simulate(spec, 1000.0, 0.5, 4, seed=11)
    assert np.all(np.abs(e.jumps - 1000) <= 3 * math.sqrt(1000))


def test_jump_flip_orbit(config):
    cfg = config("jump_flip")
    spec = cli.build_sde(cfg)
    e = sde.simulate(spec, 20.0, 0.01, 200, seed=3, bins=(-2, 2, 40))
    assert set(np.unique(e.samples)) <= {-1.0, 1.0}
    assert e.underflow == 0 and e.overflow == 0


def test_ou_stationary_variance():
    e = sde.simulate(_ou(), 10.0, 0.01, 4000, seed=5)
    x = e.samples[:, -1]
    # the Euler chain's own stationary variance differs from 1/2 by O(dt)
    var_dt = 1 / (2 - 0.01)
    se = var_dt * math.sqrt(2 / (x.size - 1))
    assert abs(np.var(x, ddof=1) - var_dt) <= 3 * se
    assert abs(var_dt - 0.5) < 3e-3


def test_ou_stationary_ks():
    e = sde.simulate(_ou(), 10.0, 0.01, 4000, seed=6)
    x = e.samples[:, -1]
    assert stats.kstest(x, stats.norm(scale=math.sqrt(0.5)).cdf).pvalue > 1e-3


def test_reproducible_and_seed_sensitive():
    a = sde.simulate(_ou(), 2.0, 0.01, 50, seed=9)
    b = sde.simulate(_ou(), 2.0, 0.01, 50, seed=9)
    c = sde.simulate(_ou(), 2.0, 0.01, 50, seed=10)
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.samples, c.samples)


def test_paths_independent_of_count():
    a = sde.simulate(_ou(), 2.0, 0.01, 10, seed=9)
    b = sde.simulate(_ou(), 2.0, 0.01, 30, seed=9)
    assert np.array_equal(a.samples, b.samples[:10])


def test_checkpoints_after_burn_in():
    e = sde.simulate(_ou(), 8.0, 0.01, 5, seed=1)
    assert e.burn_in == 4.0
    assert np.allclose(e.times, [4.0, 6.0, 8.0])
    assert e.n_samples == 15


def test_stable_truncation_constants():
    j = sde.StableJumps(0.5, 1.0, 1)
    eps = 1e-3
    # tail of y^-1.5 beyond eps and the mean of the jumps below it
    assert j.tail(eps) == pytest.approx(2 / math.sqrt(eps), rel=1e-14)
    assert j.small_mean(eps) == pytest.approx(2 * math.sqrt(eps), rel=1e-14)


def test_validation_errors():
    with pytest.raises(ValueError):
        sde.DriverSpec([0, 0], [[1, 0.5], [0.5, 1]])
    with pytest.raises(ValueError):
        sde.DriverSpec([0, 0], [[1, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        sde.DriverSpec([0, 0], [[-1, 0], [0, 1]])
    with pytest.raises(ValueError):
        sde.CompoundPoisson(1.0, LevyMeasureSpec([(1.0, 0.5)], None, "finite"), 1)
    with pytest.raises(ValueError):
        sde.CompoundPoisson(0.0, UNIT_ATOM, 1)
    with pytest.raises(ValueError):
        sde.SdeSpec(["-x"], sde.DriverSpec([1, 0], np.zeros((2, 2))))
    with pytest.raises(ValueError):
        sde.SdeSpec(["-x", "1"], sde.DriverSpec([1, 0], np.zeros((2, 2))), scheme="milstein")
    with pytest.raises(ValueError):
        sde.SdeSpec(["-x", "1"], sde.DriverSpec([1, 0], np.zeros((2, 2)), sde.StableJumps(0.5, 1.0, 1)))
    with pytest.raises(ValueError):
        sde.StableJumps(1.5)
    with pytest.raises(ValueError):
        sde.simulate(_ou(), 1.0, 0.0, 10, seed=0)


def test_blow_up_raises():
    spec = sde.SdeSpec(["x^3", "0"], sde.DriverSpec([1, 0], np.zeros((2, 2))), x0=2.0)
    with pytest.raises(sde.SimulationError):
        sde.simulate(spec, 10.0, 0.01, 20, seed=0)


def test_lipschitz_probe():
    spec = sde.SdeSpec(["-3*x", "sin(x)"], sde.DriverSpec([1, 0], [[0, 0], [0, 1]]))
    q = spec.lipschitz_probe()
    assert 2.9 < q <= 3.0 + 1e-12


# ----------------------------------------------------------------- compare

def _fake_solution(edges, counts):
    h = edges[1] - edges[0]
    return SimpleNamespace(x=0.5 * (edges[1:] + edges[:-1]), eta=counts / (counts.sum() * h), h=h)


def test_compare_identical_and_disjoint():
    e = sde.simulate(_ou(), 4.0, 0.01, 500, seed=2, bins=(-6, 6, 48))
    assert e.underflow == 0 and e.overflow == 0
    r = sde.compare(e, _fake_solution(e.edges, e.counts.astype(float)))
    assert r["l1"] == pytest.approx(0.0, abs=1e-12) and r["ks"] == pytest.approx(0.0, abs=1e-12)
    far = np.zeros(48)
    far[-1] = 1.0
    shifted = _fake_solution(e.edges + 100.0, far)
    assert sde.compare(e, shifted)["l1"] == pytest.approx(2.0, abs=1e-12)


def test_ks_two_sample_matches_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(0.2, 1.1, size=500)
    assert sde.ks_two_sample(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)
