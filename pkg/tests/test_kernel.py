from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rilt.increment_law import LawError, builtin_law
from rilt.kernel import (
    KernelError,
    PotentialKernelTable,
    build_kernel,
    fit_kappa,
    generator_residual,
    kernel_holder_check,
    kernel_spectral,
    random_pairs,
    return_probabilities,
    round_scaled,
    transition_probabilities,
)

# G values frozen from the time-sum route (exact convolution powers, tail fitted)
TIMESUM_G = {
    (0, 0): 0.032576705361,
    (1, 1): 0.029146214651,
    (2, 0): -0.137627966811,
    (3, 4): -0.422527096333,
}


def test_G_vanishes_at_e1(kernel):
    assert abs(kernel((1, 0))) < 1e-12
    assert abs(kernel((0, 1))) < 1e-12


@pytest.mark.parametrize("x, g", sorted(TIMESUM_G.items()))
def test_table_matches_frozen_timesum(kernel, x, g):
    assert float(kernel(x)) == pytest.approx(g, abs=1e-10)


def test_symmetries(kernel):
    R = kernel.radius
    v = kernel.values
    np.testing.assert_allclose(v, v[::-1, ::-1], atol=1e-13)
    np.testing.assert_allclose(v, v.T, atol=1e-13)
    np.testing.assert_allclose(v, v[::-1, :], atol=1e-13)
    assert v.shape == (2 * R + 1, 2 * R + 1)


def test_generator_identity(kernel):
    g = np.arange(-20, 21)
    Z = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    assert generator_residual(kernel, Z).max() < 1e-10


def test_log_asymptotic(kernel):
    x = np.array([[60, 0], [0, -55], [40, 40]])
    r = np.hypot(*x.T)
    np.testing.assert_allclose(kernel(x), kernel.kappa - np.log(r) / np.pi, atol=1e-4)


def test_off_box_points_use_spectral(kernel):
    x = np.array([[70, 3]])
    assert float(kernel(x)[0]) == pytest.approx(float(kernel_spectral(kernel.law, x)[0]), abs=1e-12)


def test_Gn_shift(kernel):
    n = 1000
    assert float(kernel.Gn(n, (0, 0))) == pytest.approx(float(kernel((0, 0))) - kernel.kappa + np.log(n) / (2 * np.pi))
    with pytest.raises(ValueError):
        kernel.Gn(0, (0, 0))


def test_kappa_needed(kernel):
    t = PotentialKernelTable(kernel.law, kernel.radius, kernel.values, kernel.quadrature_spec)
    with pytest.raises(KernelError):
        t.G_hat_scaled(10)
    with pytest.raises(KernelError):
        fit_kappa(t, 200, 300)


def test_save_load(kernel, tmp_path):
    f = tmp_path / "k.bin"
    kernel.save(f)
    back = PotentialKernelTable.load(f, kernel.law)
    np.testing.assert_array_equal(back.values, kernel.values)
    assert back.kappa == kernel.kappa


def test_periodic_law_refused():
    with pytest.raises(LawError):
        build_kernel(builtin_law("srw"), 8, use_cache=False)


def test_return_probabilities_exact(law):
    rp = return_probabilities(law, 3)
    one_d = [Fraction(1), Fraction(3, 16), Fraction(326, 1024)]
    assert rp[0] == 1
    assert rp[1] == pytest.approx(float(one_d[1] ** 2), abs=1e-15)
    assert rp[2] == pytest.approx(float(one_d[2] ** 2), abs=1e-15)


def test_transition_grid_sums_to_one(law):
    grid = transition_probabilities(law, 6)
    for n in range(1, 7):
        assert grid.slice(n).sum() == pytest.approx(1.0, abs=1e-13)


def test_holder_check_bounded(kernel):
    rep = kernel_holder_check(kernel, random_pairs(32, 500, seed=4))
    assert np.isfinite(rep.max_ratio)
    assert rep.max_ratio < 5


@given(st.floats(-50, 50), st.integers(1, 10_000))
def test_round_scaled_is_nearest(x, n):
    v = x * np.sqrt(n)
    r = int(round_scaled(x, n))
    assert abs(r - v) <= 0.5 + 1e-9


def test_round_scaled_ties_go_down():
    np.testing.assert_array_equal(round_scaled([0.5, -0.5, 1.5], 1), [0, -1, 1])
