import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rilt.walk import WalkPath, alias_table, philox, sample_alias, simulate, simulate_many


def test_same_seed_same_path(law):
    a = simulate(law, 500, seed=7, stream=3)
    b = simulate(law, 500, seed=7, stream=3)
    np.testing.assert_array_equal(a.positions, b.positions)
    c = simulate(law, 500, seed=7, stream=4)
    assert not np.array_equal(a.positions, c.positions)


def test_prefix_stability(law):
    # a longer run with the same stream extends the shorter one
    a = simulate(law, 100, 1).positions
    b = simulate(law, 300, 1).positions
    np.testing.assert_array_equal(a, b[:101])


def test_path_shape_and_start(law):
    p = simulate(law, 50, 0)
    assert p.positions.shape == (51, 2)
    assert p.n == 50
    assert np.all(p.positions[0] == 0)
    assert np.all(np.abs(p.increments()) <= 2)
    assert simulate(law, 0, 0).positions.shape == (1, 2)
    with pytest.raises(ValueError):
        simulate(law, -1, 0)


def test_step_frequencies(law):
    steps = simulate(law, 200_000, 2).increments()
    for pt, p in zip(law.points, law.probs):
        freq = np.mean(np.all(steps == pt, axis=1))
        assert abs(freq - p) < 5 * np.sqrt(p * (1 - p) / len(steps))


def test_unit_variance(law):
    steps = simulate(law, 400_000, 9).increments().astype(float)
    cov = np.cov(steps.T)
    np.testing.assert_allclose(cov, np.eye(2), atol=0.01)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12))
def test_alias_table_reproduces_weights(w):
    p = np.array(w) / np.sum(w)
    accept, alias = alias_table(p)
    k = len(p)
    implied = accept / k
    for i in range(k):
        implied[alias[i]] += (1 - accept[i]) / k
    np.testing.assert_allclose(implied, p, atol=1e-12)


def test_sample_alias_bounds():
    accept, alias = alias_table([0.2, 0.3, 0.5])
    u = np.array([0.0, 0.999999999, 0.5])
    assert set(sample_alias(accept, alias, u)) <= {0, 1, 2}


def test_philox_streams_independent():
    a = philox(1, 0).random(4)
    b = philox(1, 1).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, philox(1, 0).random(4))


def test_dump_load_roundtrip(law, tmp_path):
    p = simulate(law, 64, 3)
    f = tmp_path / "walk.bin"
    p.dump(f)
    assert f.stat().st_size == 65 * 8
    np.testing.assert_array_equal(WalkPath.load(f).positions, p.positions)


def test_scaled_position(law):
    p = simulate(law, 100, 4)
    np.testing.assert_allclose(p.scaled_position(0.5), p.positions[50] / 10)
    np.testing.assert_allclose(p.scaled_position(1.0), p.positions[100] / 10)
    with pytest.raises(ValueError):
        p.scaled_position(1.5)


def test_simulate_many(law):
    ps = simulate_many(law, 10, 5, range(3))
    assert [p.stream for p in ps] == [0, 1, 2]
