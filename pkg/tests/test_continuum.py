import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowstart.continuum import (GridParams, extract_functionals, run_coalescing_bm, run_reflected_web,
                                 simulate_coalescing_bm, simulate_reflected_web)
from slowstart.errors import DomainError, ParameterError
from slowstart.model import MarkedPointSet
from slowstart.stats import meeting_probability


def test_resolution_rule():
    with pytest.raises(ParameterError, match="resolution"):
        GridParams((0.0, 1.0), 0.01, 2e-4)
    with pytest.raises(ParameterError):
        GridParams((1.0, 0.0), 0.1, 0.01)


def test_grid_geometry():
    g = GridParams((-1.0, 1.0), 0.1, 0.003)
    assert g.n_starters == 21
    assert g.steps_per_starter == 34
    assert g.dt_eff <= g.dt
    assert g.halved().h == 0.05 and g.halved().dt == 0.0015


def test_single_starter_gives_empty_set():
    g = GridParams((0.0, 0.005), 0.01, 1e-4)
    assert g.n_starters == 1
    assert len(simulate_coalescing_bm(g, 1)) == 0
    assert len(simulate_reflected_web(g, 1)) == 0


def test_extract_functionals_example():
    m = MarkedPointSet(1.0, [-0.5, -0.2, 0.1, 0.4], [1.0, 2.0, 0.5, 3.0], "continuum")
    f = extract_functionals(m, (-0.6, 0.2))
    assert f.count == 3 and f.total_mass == 3.5 and f.max_mass == 2.0
    assert np.allclose(f.spacings, [0.3, 0.3])
    assert extract_functionals(m, (0.5, 0.9)).count == 0


@given(st.integers(0, 2 ** 40))
@settings(max_examples=15)
def test_coalescing_gaps_positive_and_classes_only_merge(seed):
    g = GridParams((-0.5, 0.5), 0.05, 0.0025)
    web = run_coalescing_bm(g, seed, times=[0.05, 0.2, 0.5])
    assert np.all(web.gap[web.alive] > 0)
    # a boundary gone at an earlier time never reappears
    assert np.all(web.alive[1:] <= web.alive[:-1])
    pts = web.points(0)
    assert np.all(np.isin(np.round(pts.positions - g.h / 2, 9), np.round(web.starters, 9)))


@given(st.integers(0, 2 ** 40))
@settings(max_examples=10)
def test_reflected_paths_stay_below_driver(seed):
    g = GridParams((-0.5, 0.0), 0.05, 0.0025, t=0.3)
    web = run_reflected_web(g, seed, keep_driving=True)
    assert web.max_excess <= 0.0
    assert np.all(web.gap[web.alive] > 0)
    assert web.driving is not None and web.driving.size > 0


def test_runs_are_deterministic():
    g = GridParams((-0.5, 0.5), 0.05, 0.0025)
    a, b = simulate_coalescing_bm(g, 7), simulate_coalescing_bm(g, 7)
    assert a == b
    assert a != simulate_coalescing_bm(g, 8)


def test_reflected_domain_check():
    g = GridParams((-1.0, 0.0), 0.05, 0.0025, t=1.0)
    with pytest.raises(DomainError):
        simulate_reflected_web(g, 0, domain_hi=0.5)
    simulate_reflected_web(g, 0, domain_hi=1.0)


def test_level_coupling_keeps_counts_close():
    """A grid driven by the increments of its halving stays close to it."""
    g = GridParams((-0.5, 0.5), 0.04, 0.0008)
    close = 0
    for s in range(40):
        a = run_coalescing_bm(g, s, level=1).points(0)
        b = run_coalescing_bm(g.halved(), s).points(0)
        close += abs(len(a) - len(b)) <= 1
    assert close >= 30


def test_meeting_closed_forms_agree():
    for c, t in [(0.3, 1.0), (1.0, 1.0), (2.0, 0.5)]:
        _, erf_form, cdf_form = meeting_probability(c, t, 0, 0)
        assert erf_form == pytest.approx(cdf_form, abs=1e-12)
        assert erf_form == pytest.approx(math.erf(c / (2 * math.sqrt(t))))


def test_meeting_probability_matches_closed_form():
    est, closed, _ = meeting_probability(1.0, 1.0, 1500, 11, dt=1e-3)
    assert abs(est.estimate - closed) < 0.06
