import numpy as np
import pytest

from robustdrm.grids import (
    DimensionMismatchError,
    DistortionFunction,
    GridFunction,
    QuantileFunction,
    cvar_distortion,
    distortion_risk,
    empirical_quantile,
    grid_nodes,
    inner_product,
    isotonic_project,
    lower_tail_distortion,
    mean_distortion,
    shift,
    wasserstein2,
)


def test_grid_nodes_are_midpoints():
    u = grid_nodes(4)
    assert np.allclose(u, [0.125, 0.375, 0.625, 0.875])


def test_gridfunction_validation():
    with pytest.raises(ValueError):
        GridFunction(np.array([1.0]))
    with pytest.raises(ValueError):
        GridFunction(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        QuantileFunction(np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        DistortionFunction(np.array([2.0, -1.0]))
    with pytest.raises(ValueError):
        DistortionFunction(np.array([2.0, 1.0]))  # grid mean 1.5


def test_values_are_immutable():
    f = GridFunction(np.arange(4.0))
    with pytest.raises(ValueError):
        f.values[0] = 5.0


def test_inner_product_identity_cases():
    n = 1000
    ones = GridFunction(np.ones(n))
    assert inner_product(ones, ones) == pytest.approx(1.0, abs=1e-14)
    g = cvar_distortion(0.5, n)
    assert inner_product(g, g) == pytest.approx(2.0, abs=1e-12)
    lin = GridFunction(grid_nodes(n))
    assert inner_product(lin, ones) == pytest.approx(0.5, abs=1e-14)


def test_inner_product_is_grid_mean(rng):
    f = GridFunction(rng.normal(size=64))
    ones = GridFunction(np.ones(64))
    assert inner_product(f, ones) == pytest.approx(f.values.mean(), abs=1e-15)


def test_inner_product_dimension_error():
    with pytest.raises(DimensionMismatchError):
        inner_product(GridFunction(np.ones(4)), GridFunction(np.ones(5)))


def test_wasserstein_identity_and_shift(rng):
    n = 256
    f = QuantileFunction(np.sort(rng.normal(size=n)))
    assert wasserstein2(f, f) == 0.0
    g = QuantileFunction(f.values + 0.3)
    assert wasserstein2(f, g) == pytest.approx(0.3, abs=1e-14)


def test_wasserstein_matches_elementwise_loop(rng):
    n = 100
    f = QuantileFunction(np.sort(rng.normal(size=n)))
    g = QuantileFunction(np.sort(rng.normal(size=n)))
    total = 0.0
    for a, b in zip(f.values, g.values):
        total += (a - b) ** 2
    assert wasserstein2(f, g) == pytest.approx(np.sqrt(total / n), abs=1e-14)


def test_wasserstein_triangle_inequality(rng):
    n = 50
    for _ in range(25):
        a = QuantileFunction(np.sort(rng.normal(size=n)))
        b = QuantileFunction(np.sort(rng.normal(size=n)))
        c = QuantileFunction(np.sort(rng.normal(size=n)))
        assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-12


def test_isotonic_identity_on_sorted(rng):
    v = np.sort(rng.normal(size=32))
    out = isotonic_project(GridFunction(v))
    assert np.allclose(out.values, v)


def test_isotonic_two_point_pool():
    out = isotonic_project(GridFunction(np.array([2.0, 1.0])))
    assert np.allclose(out.values, [1.5, 1.5])


def test_isotonic_idempotent(rng):
    f = GridFunction(rng.normal(size=40))
    once = isotonic_project(f)
    twice = isotonic_project(once)
    assert np.allclose(once.values, twice.values)


def test_isotonic_lipschitz(rng):
    n = 64
    for _ in range(20):
        f = rng.normal(size=n)
        g = rng.normal(size=n)
        pf = isotonic_project(GridFunction(f)).values
        pg = isotonic_project(GridFunction(g)).values
        assert np.linalg.norm(pf - pg) <= np.linalg.norm(f - g) + 1e-12


def test_distortion_risk_examples():
    n = 1000
    lin = QuantileFunction(grid_nodes(n))
    assert distortion_risk(mean_distortion(n), lin) == pytest.approx(0.5, abs=1e-12)
    assert distortion_risk(cvar_distortion(0.5, n), lin) == pytest.approx(0.75, abs=1e-12)


def test_cvar_risk_matches_tail_average(rng):
    # Ten costs on a ten-point grid: the tail-mean weights at level 0.1
    # reproduce the plain average of the nine largest values.
    samples = rng.normal(size=10)
    q = empirical_quantile(samples, 10)
    risk = distortion_risk(cvar_distortion(0.1, 10), q)
    top = np.sort(samples)[1:]
    assert risk == pytest.approx(top.mean(), abs=1e-12)


def test_distortion_risk_monotone_in_quantile(rng):
    n = 128
    g = cvar_distortion(0.3, n)
    for _ in range(10):
        f = np.sort(rng.normal(size=n))
        bump = np.abs(rng.normal(size=n))
        lo = QuantileFunction(f)
        hi = QuantileFunction(np.sort(f + bump))
        if np.all(hi.values >= lo.values):
            assert distortion_risk(g, hi) >= distortion_risk(g, lo)


def test_distortion_risk_cash_additive(rng):
    n = 200
    g = cvar_distortion(0.25, n)
    f = QuantileFunction(np.sort(rng.normal(size=n)))
    base = distortion_risk(g, f)
    assert distortion_risk(g, shift(f, 1.7)) == pytest.approx(base + 1.7, abs=1e-10)


def test_empirical_quantile_degenerate_and_two_point():
    q = empirical_quantile(np.array([3.25]), 8)
    assert np.allclose(q.values, 3.25)
    q2 = empirical_quantile(np.array([1.0, 0.0]), 4)
    assert np.allclose(q2.values, [0.0, 0.0, 1.0, 1.0])


def test_empirical_quantile_close_to_uniform_identity():
    rng = np.random.default_rng(777)
    samples = rng.uniform(size=1000)
    q = empirical_quantile(samples, 100)
    assert np.max(np.abs(q.values - grid_nodes(100))) < 0.05


def test_empirical_quantile_empty_errors():
    with pytest.raises(ValueError):
        empirical_quantile(np.array([]), 4)


def test_lower_tail_distortion_mass():
    g = lower_tail_distortion(0.3, 500)
    assert g.values.mean() == pytest.approx(1.0, abs=1e-12)
    assert not g.nondecreasing
