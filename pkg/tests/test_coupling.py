from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from rilt.coupling import (
    CouplingError,
    Mollifier,
    binomial_assemble,
    brownian_path,
    chain_integrals,
    clock_calibration,
    couple,
    embedding_levels,
    mollified_gamma,
    mollifier_constants,
    pair_integral_direct,
)
from rilt.increment_law import LawError, builtin_law
from rilt.coupling import check_product

# c and l(f) of the unit bump, evaluated independently at 30 digits with mpmath
BUMP_C = 17772053.2617890701760181509747
BUMP_L = 0.0911015459689116346261200299507


def test_embedding_levels(law):
    levels, probs = embedding_levels(law)
    np.testing.assert_array_equal(levels, [0, 1, 2])
    np.testing.assert_allclose(probs, [3 / 16, 3 / 4, 1 / 16])


def test_non_product_law_refused():
    with pytest.raises(CouplingError):
        couple(builtin_law("srw"), 16)
    with pytest.raises(LawError):
        check_product(builtin_law("king"))


def test_delta_validation(law):
    with pytest.raises(CouplingError):
        couple(law, 16, delta=0.1)
    with pytest.raises(CouplingError):
        couple(law, 16, delta=2.0**-6 * 0.7)


def test_empty_coupling(law):
    cp = couple(law, 0)
    assert cp.walk.positions.shape == (1, 2)
    assert cp.sup_distance == 0.0


def test_coupled_walk_has_the_law(law):
    cp = couple(law, 20_000, seed=1, measure=False, store_step=1.0)
    steps = cp.walk.increments()
    keys = [tuple(map(int, s)) for s in steps]
    counts = np.array([keys.count(tuple(map(int, pt))) for pt in law.points])
    expected = law.probs * len(keys)
    assert stats.chisquare(counts, expected).pvalue > 1e-3


def test_coupling_is_deterministic(law):
    a = couple(law, 512, seed=3, stream=2)
    b = couple(law, 512, seed=3, stream=2)
    np.testing.assert_array_equal(a.walk.positions, b.walk.positions)
    np.testing.assert_array_equal(a.bm, b.bm)
    assert a.sup_distance == b.sup_distance


def test_stopping_times_increase(law):
    cp = couple(law, 256, seed=5)
    dt = np.diff(cp.embed_times, axis=1)
    # a zero level costs no time; any move does
    assert np.all(dt >= 0)
    assert np.all(dt[cp.walk.increments().T != 0] > 0)
    assert np.all(np.abs(cp.walk.increments()) <= 2)
    assert cp.store_step >= cp.delta


def test_clock_is_calibrated(law):
    clocks = np.array([clock_calibration(couple(law, 8192, seed=7, stream=s, measure=False)) for s in range(4)])
    assert abs(clocks.mean() - 1.0) < 0.03


def test_sup_distance_shrinks_relative_to_scale(law):
    small = np.median([couple(law, 256, seed=2, stream=s).sup_distance for s in range(6)])
    large = np.median([couple(law, 16384, seed=2, stream=s).sup_distance for s in range(6)])
    assert large < small


def test_scaled_views(law):
    cp = couple(law, 1024, seed=1)
    assert cp.scaled_bm().shape[1] == 2
    np.testing.assert_allclose(cp.scaled_walk()[-1], cp.walk.positions[-1] / 32)


def test_mollifier_constants_frozen():
    c, lf = mollifier_constants()
    assert c == pytest.approx(BUMP_C, rel=1e-11)
    assert lf == pytest.approx(BUMP_L, rel=1e-11)


@pytest.mark.parametrize("tau", [1.0, 0.3, 0.05])
def test_mollifier_mass_and_support(tau):
    f = Mollifier(tau)
    mass, _ = integrate.quad(lambda r: 2 * np.pi * r * f(np.array([r, 0.0])), 0.5 * tau, tau, epsabs=1e-14)
    assert mass == pytest.approx(1.0, rel=1e-9)
    assert f(np.array([0.49 * tau, 0.0])) == 0
    assert f(np.array([tau, 0.0])) == 0
    assert f(np.array([0.0, 0.75 * tau])) > 0


@given(st.floats(0.01, 1.0))
def test_l_of_scaled_mollifier(tau):
    f = Mollifier(tau)
    direct, _ = integrate.quad(
        lambda r: 2 * np.pi * r * f(np.array([r, 0.0])) * np.log(1 / r) / np.pi, 0.5 * tau, tau, epsabs=1e-13
    )
    assert f.l == pytest.approx(direct, abs=1e-9)
    assert f.l == pytest.approx(BUMP_L + np.log(1 / tau) / np.pi, abs=1e-12)


def test_mollifier_rejects_bad_tau():
    with pytest.raises(ValueError):
        Mollifier(0.0)
    with pytest.raises(ValueError):
        Mollifier(1.5)


@given(st.integers(0, 10**6), st.floats(0.05, 0.5))
def test_cell_dp_matches_direct_pair_sum(seed, tau):
    pts = brownian_path(400, seed)
    w = 1 / 400
    assert chain_integrals(pts, tau, w, 2)[2] == pytest.approx(pair_integral_direct(pts, tau, w), rel=1e-10, abs=1e-14)


def test_chain_integrals_on_a_triangle():
    tau = 0.4
    f = Mollifier(tau)
    pts = np.array([[0.0, 0.0], [0.3, 0.0], [0.3, 0.3]])
    w = 0.5
    f01, f02, f12 = (float(f(pts[b] - pts[a])) for a, b in ((0, 1), (0, 2), (1, 2)))
    I = chain_integrals(pts, tau, w, 3)
    assert I[1] == 1.0
    assert I[2] == pytest.approx(w * w * (f01 + f02 + f12))
    assert I[3] == pytest.approx(w**3 * f01 * f12)


def test_fast_line_has_no_pairs():
    # consecutive jumps larger than tau: no two samples are within the mollifier's support
    tau = 0.1
    m = 200
    pts = np.stack([np.arange(m + 1) * 1.5 * tau, np.zeros(m + 1)], axis=1)
    I = chain_integrals(pts, tau, 1 / m, 3)
    np.testing.assert_allclose(I[2:], 0.0)
    value, comps = binomial_assemble(I, 0.7, 3)
    # only the j = k-1 term survives: (-c)^(k-1) I_1
    assert value == pytest.approx(0.49)
    np.testing.assert_allclose(comps, [0.0, 0.0, 0.49])


@given(st.integers(1, 5), st.floats(-2, 2))
def test_binomial_top_component(k, c):
    I = np.arange(k + 1, dtype=float) + 1.0
    I[1] = 1.0
    value, comps = binomial_assemble(I, c, k)
    assert comps[-1] == pytest.approx((-c) ** (k - 1))
    assert value == pytest.approx(sum(comb(k - 1, j) * (-c) ** j * I[k - j] for j in range(k)))


def test_mollified_gamma_resolution_guard():
    bm = brownian_path(64, 0)
    with pytest.raises(CouplingError):
        mollified_gamma(bm, 0.5, 2)
    est = mollified_gamma(brownian_path(4096, 0), 0.2, 2)
    assert est.components[1] == pytest.approx(-Mollifier(0.2).l)
    assert est.value == pytest.approx(est.components.sum())


def test_brownian_path_increments():
    bm = brownian_path(1 << 16, 3)
    inc = np.diff(bm, axis=0) * np.sqrt(1 << 16)
    np.testing.assert_allclose(np.cov(inc.T), np.eye(2), atol=0.02)
    assert np.all(bm[0] == 0)
