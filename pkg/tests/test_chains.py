import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rilt.chains import (
    ChainSpec,
    beta,
    beta2_at_zero,
    count_brute,
    count_chains,
    count_family,
    expected_b2_at_zero,
    renormalize,
    renormalize_powerset,
    renormalized_series,
    subsets,
)
from rilt.kernel import return_probabilities
from rilt.walk import simulate

STEPS = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)])
offset = st.tuples(st.integers(-2, 2), st.integers(-2, 2))


def lazy_path(choices):
    pos = np.zeros((len(choices) + 1, 2), dtype=np.int64)
    if choices:
        np.cumsum(STEPS[list(choices)], axis=0, out=pos[1:])
    return pos


@given(st.lists(st.integers(0, 8), max_size=12), st.integers(1, 4), st.data())
def test_dp_matches_brute_force(choices, k, data):
    pos = lazy_path(choices)
    offs = data.draw(st.lists(offset, min_size=k - 1, max_size=k - 1))
    spec = ChainSpec(k, offs)
    assert count_chains(pos, spec).running[-1] == count_brute(pos, spec)


@given(st.lists(st.integers(0, 8), max_size=10), offset)
def test_running_counts_are_prefix_counts(choices, x):
    pos = lazy_path(choices)
    spec = ChainSpec(2, (x,))
    run = count_chains(pos, spec).running
    for j in range(len(pos)):
        assert run[j] == count_brute(pos[: j + 1], spec)


def test_standing_still_counts_pairs():
    pos = np.zeros((6, 2), dtype=np.int64)
    assert count_chains(pos, ChainSpec(2, ((0, 0),))).running[-1] == 15
    assert count_chains(pos, ChainSpec(3, ((0, 0), (0, 0)))).running[-1] == 20


def test_level_one():
    c = count_chains(np.zeros((5, 2), dtype=np.int64), ChainSpec(1))
    np.testing.assert_array_equal(c.running, np.arange(5))
    np.testing.assert_array_equal(c.chains_ending_at(), np.ones(5))


def test_spec_validation():
    with pytest.raises(ValueError):
        ChainSpec(3, ((0, 0),))
    with pytest.raises(ValueError):
        ChainSpec(0)
    spec = ChainSpec(4, ((1, 0), (0, 1), (2, 2)))
    assert spec.drop((3,)).offsets == ((1, 0), (2, 2))
    assert spec.head().offsets == ((1, 0), (0, 1))
    assert list(subsets(3)) == [(), (2,), (3,), (2, 3)]


def test_renormalize_matches_powerset(law, kernel):
    pos = simulate(law, 300, 6).positions
    spec = ChainSpec(4, ((0, 0), (1, -1), (0, 2)))
    fam = count_family(pos, spec)
    series = renormalize(fam, spec, kernel, 300)
    for j in (0, 17, 150, 300):
        assert series.values[j] == pytest.approx(renormalize_powerset(fam, spec, kernel, 300, j), rel=1e-12, abs=1e-9)


def test_k3_expansion_by_hand(law, kernel):
    pos = simulate(law, 200, 8).positions
    x2, x3 = (1, 0), (0, -1)
    spec = ChainSpec(3, (x2, x3))
    m = 200
    g2, g3 = float(kernel.Gn(m, x2)), float(kernel.Gn(m, x3))
    B = lambda *o: float(count_chains(pos, ChainSpec(len(o) + 1, o)).running[-1])
    expect = B(x2, x3) - g2 * B(x3) - g3 * B(x2) + g2 * g3 * 200
    got = renormalized_series(pos, spec, kernel, m).values[-1]
    assert got == pytest.approx(expect, rel=1e-12)


def test_beta_requires_matching_horizon(law, kernel):
    pos = simulate(law, 64, 1).positions
    s = renormalized_series(pos, ChainSpec(2, ((0, 0),)), kernel, 32)
    with pytest.raises(ValueError):
        beta(s)
    s = renormalized_series(pos, ChainSpec(2, ((0, 0),)), kernel)
    assert beta(s) == pytest.approx(beta2_at_zero(pos, kernel))


def test_expected_b2_small_n(law):
    # E B_2(2, 0) = 2 p(1, 0) + p(2, 0)
    rp = return_probabilities(law, 2)
    assert expected_b2_at_zero(rp, 2) == pytest.approx(2 * rp[1] + rp[2])


def test_missing_subcounter_reported(law, kernel):
    spec = ChainSpec(3, ((0, 0), (1, 0)))
    fam = count_family(np.zeros((3, 2), dtype=np.int64), spec)
    fam.pop(ChainSpec(1))
    with pytest.raises(KeyError):
        renormalize(fam, spec, kernel, 2)
