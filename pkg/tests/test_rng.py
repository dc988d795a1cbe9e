import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from slowstart.errors import ParameterError
from slowstart.rng import (GRID, RngStream, StreamTag, counter_exponentials, quantize, replica_seed,
                           sample_exponential, sample_poisson_points, stream_key)


def test_same_seed_and_tag_reproduce():
    a = RngStream(7, StreamTag("positions-left")).standard_exponential(5)
    b = RngStream(7, StreamTag("positions-left")).standard_exponential(5)
    assert np.array_equal(a, b)


def test_distinct_tags_give_distinct_streams():
    a = RngStream(7, StreamTag("positions-left")).standard_exponential(5)
    b = RngStream(7, StreamTag("positions-right")).standard_exponential(5)
    c = RngStream(7, StreamTag.clocks(1)).standard_exponential(5)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_unknown_tag_kind_rejected():
    with pytest.raises(ParameterError):
        StreamTag("velocity")


def test_exponential_rate_must_be_positive():
    s = RngStream(1, StreamTag("naive"))
    with pytest.raises(ParameterError):
        sample_exponential(s, 0.0)


def test_exponential_mean_over_many_draws():
    s = RngStream(3, StreamTag("naive"))
    x = np.array([sample_exponential(s, 1.0) for _ in range(10_000)])
    assert abs(x.mean() - 1.0) < 3 * 0.01 + 1e-3


def test_poisson_points_empty_interval_rejected():
    with pytest.raises(ParameterError):
        sample_poisson_points(RngStream(1, StreamTag("naive")), (1.0, 1.0), 1.0)


def test_poisson_count_and_spacings():
    counts, spac = [], []
    for r in range(400):
        p = sample_poisson_points(RngStream(replica_seed(9, r), StreamTag("naive")), (0.0, 50.0), 2.0)
        counts.append(p.size)
        spac.extend(np.diff(p))
    counts = np.array(counts)
    assert abs(counts.mean() - 100) < 3 * np.sqrt(100 / 400)
    assert sps.kstest(np.array(spac) * 2.0, "expon").pvalue > 0.01


@given(st.integers(0, 2 ** 32), st.floats(5.0, 600.0))
def test_poisson_prefix_property(seed, b):
    small = sample_poisson_points(RngStream(seed, StreamTag("naive")), (0.0, b), 1.5)
    big = sample_poisson_points(RngStream(seed, StreamTag("naive")), (0.0, 2 * b), 1.5)
    assert np.array_equal(big[:small.size], small)
    assert np.all(big[small.size:] > b)


@given(st.floats(1e-6, 1e3))
def test_quantize_rounds_up_onto_grid(x):
    q = float(quantize(x))
    assert q >= x
    assert q - x < GRID * (1 + abs(x))
    assert (q / GRID) == np.floor(q / GRID)


def test_counter_stream_is_random_access():
    key = stream_key(5, StreamTag.clocks())
    a = counter_exponentials(key, 12, 50)
    b = counter_exponentials(key, 12, 20)
    assert np.array_equal(a[:20], b)
    assert not np.array_equal(a, counter_exponentials(key, 13, 50))
    assert np.all(a > 0)


def test_counter_exponentials_distribution():
    key = stream_key(11, StreamTag.clocks())
    x = np.concatenate([counter_exponentials(key, s, 100) for s in range(100)])
    assert sps.kstest(x, "expon").pvalue > 0.01


def test_replica_seeds_distinct():
    seeds = {replica_seed(0, r) for r in range(1000)}
    assert len(seeds) == 1000
