import csv

import numpy as np
import pytest
from scipy.stats import unitary_group

from demixer.cmps import AssembledState, CmpsPair, CmpsSingle, assemble
from demixer.observables import (FieldParams, correlation_curve, correlation_length, log_grid,
                                 measure, write_correlation_csv)


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def herm(rng, D, scale=1.0):
    m = crandn(rng, D, D)
    return 0.5 * scale * (m + m.conj().T)


def random_single(rng, D):
    return CmpsSingle(herm(rng, D), 0.6 * crandn(rng, D, D))


def random_pair(rng, D):
    return CmpsPair(herm(rng, D), herm(rng, D), 0.6 * crandn(rng, D, D), 0.6 * crandn(rng, D, D),
                    herm(rng, D, 0.4)[None], herm(rng, D, 0.4)[None])


def test_mean_field_scalars():
    c, g, r1, r2 = 1.5, 2.0, 0.3, 0.7
    s = CmpsPair([[0.0]], [[0.0]], [[np.sqrt(r1)]], [[np.sqrt(r2)]], [[[0.0]]], [[[0.0]]])
    obs = measure(assemble(s), FieldParams(c, g, (r1, r2)))
    assert np.allclose(obs.rho, [r1, r2])
    assert np.allclose(obs.kinetic, 0.0)
    assert obs.e0 == pytest.approx(c * r1 ** 2 + c * r2 ** 2 + g * r1 * r2, rel=1e-14)


def test_free_gas_zero_energy():
    s = CmpsSingle([[0.0]], [[np.sqrt(0.8)]])
    obs = measure(assemble(s), FieldParams(0.0, 0.0, 0.8))
    assert obs.e0 == pytest.approx(0.0, abs=1e-15)


def test_decoupled_pair_energy_is_twice_single():
    rng = np.random.default_rng(0)
    s = random_single(rng, 3)
    p = FieldParams(1.5, 0.0, 0.5)
    single = measure(assemble(s), p)
    z = np.zeros((1, 3, 3))
    pair = measure(assemble(CmpsPair(s.K, s.K, s.R, s.R, z, z)), p)
    assert pair.e0 == pytest.approx(2 * single.e0, rel=1e-10)
    assert np.allclose(pair.rho, single.rho[0], rtol=1e-10)


def test_fluct_symmetric_and_nonnegative():
    rng = np.random.default_rng(1)
    obs = measure(assemble(random_pair(rng, 3)), FieldParams(1.0, 1.0, 0.5))
    assert abs(obs.fluct[0, 1] - obs.fluct[1, 0]) <= 1e-10 * abs(obs.fluct).max()
    assert np.all(obs.fluct >= -1e-10)
    assert np.all(obs.rho >= 0)


def test_gauge_invariance():
    rng = np.random.default_rng(2)
    a = assemble(random_pair(rng, 2))
    u = unitary_group.rvs(4, random_state=3)
    b = AssembledState(u @ a.Q @ u.conj().T, tuple(u @ R @ u.conj().T for R in a.Rs))
    p = FieldParams(1.2, 0.7, 0.5)
    oa, ob = measure(a, p), measure(b, p)
    assert oa.e0 == pytest.approx(ob.e0, abs=1e-10)
    for f in ("rho", "kinetic", "interaction_intra", "fluct"):
        assert np.allclose(getattr(oa, f), getattr(ob, f), atol=1e-10)


def test_curve_at_zero_matches_fluct():
    rng = np.random.default_rng(4)
    a = assemble(random_pair(rng, 2))
    obs = measure(a, FieldParams(1.0, 1.0, 0.5))
    curve = correlation_curve(a, log_grid(100.0, 20))
    assert np.allclose(curve.values[0], obs.fluct, atol=1e-10)


def test_decoupled_cross_correlation_is_constant():
    rng = np.random.default_rng(5)
    s1, s2 = random_single(rng, 2), random_single(rng, 2)
    z = np.zeros((1, 2, 2))
    a = assemble(CmpsPair(s1.K, s2.K, s1.R, s2.R, z, z))
    obs = measure(a, FieldParams(1.0, 0.0, 0.5))
    curve = correlation_curve(a, np.linspace(0, 20, 41))
    assert np.allclose(curve.values[:, 0, 1], obs.rho[0] * obs.rho[1], atol=1e-10)


def test_long_distance_factorization_and_decay():
    rng = np.random.default_rng(6)
    a = assemble(random_single(rng, 3))
    rho = measure(a, FieldParams(1.0, 0.0, 0.5)).rho[0]
    xi = correlation_length(a)
    xs = np.linspace(0, 40 * xi, 200)
    dev = np.abs(correlation_curve(a, xs).values[:, 0, 0] - rho ** 2)
    assert dev[-1] < 1e-6
    # bounded by an exponential envelope with the spectral correlation length
    tail = xs > 2 * xi
    amp = np.max(dev[tail] * np.exp(xs[tail] / xi))
    assert np.all(dev[tail] <= amp * np.exp(-xs[tail] / xi) * (1 + 1e-9))
    assert amp < 1e3 * max(dev[0], rho ** 2)


def test_grid_validation():
    a = assemble(random_single(np.random.default_rng(7), 2))
    for bad in ([], [1.0, 0.5], [-1.0, 1.0]):
        with pytest.raises(ValueError):
            correlation_curve(a, bad)
    with pytest.raises(ValueError):
        FieldParams(-1.0)
    with pytest.raises(ValueError):
        FieldParams(1.0, 0.0, 0.0)


def test_log_grid():
    xs = log_grid(1e4, 50)
    assert xs[0] == 0 and xs[-1] == pytest.approx(1e4) and np.all(np.diff(xs) > 0)


def test_csv_export(tmp_path):
    a = assemble(random_pair(np.random.default_rng(8), 2))
    curve = correlation_curve(a, [0.0, 1.0, 2.5])
    path = tmp_path / "c.csv"
    write_correlation_csv(path, curve)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "C11", "C22", "C12", "C21"]
    assert len(rows) == 4
    assert float(rows[2][3]) == curve.values[1, 0, 1]
