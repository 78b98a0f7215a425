import math

import numpy as np
import pytest

from config import settings
from pipelines import kmc
from pipelines.chains import Distribution
from pipelines.configuration import compute_energy, ground_energy, square_config
from pipelines.errors import ParameterError
from pipelines.lattice import Torus


@pytest.fixture
def square(torus, small):
    n, _ = small
    return square_config((0, 0), n, torus)


def test_total_rate_from_the_square(square, small):
    n, _ = small
    beta = 2.5
    sim = kmc.KawasakiSimulator(square, beta, seed=1)
    expected = 8 * math.exp(-2 * beta) + 4 * (n - 2) * math.exp(-3 * beta)
    assert sim.total_rate() == pytest.approx(expected, rel=1e-12)


def test_beta_must_be_positive(square):
    with pytest.raises(ParameterError):
        kmc.KawasakiSimulator(square, 0.0, seed=1)


def test_same_seed_same_events(square):
    a = kmc.simulate(square, 1.5, seed=42, max_events=2000)
    b = kmc.simulate(square, 1.5, seed=42, max_events=2000)
    assert np.array_equal(a.moves, b.moves)
    assert np.array_equal(a.times, b.times)
    c = kmc.simulate(square, 1.5, seed=43, max_events=2000)
    assert not np.array_equal(a.moves, c.moves)


def test_trajectory_bookkeeping(square, small):
    n, L = small
    traj = kmc.simulate(square, 1.0, seed=5, max_events=5000)
    traj.check()
    assert len(traj.times) == 5000
    assert not traj.truncated
    assert traj.final.K == n * n
    for _, bits, energy in list(traj.states())[::250]:
        assert bin(bits).count("1") == n * n
        assert compute_energy(L, bits) == energy


def test_max_time_stops_the_clock(square):
    traj = kmc.simulate(square, 1.0, seed=8, max_time=50.0)
    assert traj.end_time == 50.0
    assert np.all(traj.times < 50.0)


def test_unmet_stop_rule_is_flagged(square):
    traj = kmc.simulate(square, 1.0, seed=3, max_events=100, stop=lambda sim: False)
    assert traj.truncated
    assert len(traj.times) == 100


def test_stop_rule(square):
    traj = kmc.simulate(square, 1.0, seed=3, max_events=10_000, stop=lambda sim: sim.events >= 7)
    assert len(traj.times) == 7
    assert not traj.truncated


def test_frame_columns(square, small):
    n, _ = small
    frame = kmc.simulate(square, 1.0, seed=2, max_events=50).to_frame()
    assert list(frame.columns) == settings.TRAJECTORY_COLUMNS
    assert frame["event_index"].tolist() == list(range(1, 51))
    assert frame["level"].min() >= 0


def test_trace_on_everything_is_the_path(square):
    traj = kmc.simulate(square, 1.0, seed=11, max_events=300)
    trace = kmc.trace_on(traj, lambda bits, energy: True)
    assert trace.total_time == pytest.approx(traj.end_time)
    assert np.allclose(trace.times, np.concatenate([[0.0], traj.times]))
    assert len(trace.states) == len(traj.times) + 1


def test_trace_time_is_time_spent_in_the_set(square, small):
    n, _ = small
    traj = kmc.simulate(square, 2.0, seed=4, max_events=2000)
    member = kmc.ground_member(n)
    trace = kmc.trace_on(traj, member)
    entries = list(traj.states())
    leave = [t for t, _, _ in entries[1:]] + [traj.end_time]
    inside = sum(b - a for (a, bits, e), b in zip(entries, leave) if member(bits, e))
    assert trace.total_time == pytest.approx(inside)
    assert all(compute_energy(9, s) == ground_energy(n) for s in trace.states)
    assert all(a != b for a, b in zip(trace.states, trace.states[1:]))


def test_holding_time_in_the_square(square):
    beta = 5.0
    samples = []
    for seed in range(1000):
        sim = kmc.KawasakiSimulator(square, beta, seed=seed)
        dt, _, _, delta = sim.step()
        assert delta in (2, 3)
        samples.append(dt)
    samples = np.array(samples)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - math.exp(2 * beta) / 8) < 4 * se


def test_ks_needs_enough_samples():
    with pytest.raises(ParameterError):
        kmc.ks_exponentiality([1.0] * (settings.KS_MIN_SAMPLES - 1))


def test_ks_on_exponential_and_constant_samples():
    rng = np.random.default_rng(0)
    exp = rng.exponential(3.0, size=10_000)
    assert kmc.ks_exponentiality(exp) < kmc.ks_critical_value(10_000, 0.01)
    assert kmc.ks_exponentiality(np.ones(100)) > 0.6


def test_tv_distance():
    p = Distribution.from_mapping({"a": 0.5, "b": 0.5})
    q = Distribution.from_mapping({"c": 1.0})
    assert kmc.tv_distance(p, p) == 0.0
    assert kmc.tv_distance(p, q) == pytest.approx(1.0)
    r = Distribution.from_mapping({"a": 0.25, "b": 0.75})
    assert kmc.tv_distance(p, r) == pytest.approx(0.25)


def test_jump_balance_is_finite(square):
    traj = kmc.simulate(square, 0.5, seed=9, max_events=3000)
    assert kmc.jump_balance(traj, min_count=1) >= 0.0


def test_ground_changes_stop_rule(small):
    n, L = small
    with pytest.raises(ParameterError):
        kmc.GroundChanges(n, L, 0)


def test_excursion_budget_is_flagged(small):
    n, L = small
    report = kmc.excursion_stats(n, L, 3.0, excursions=2, seed=1, budget=10)
    assert report.truncated
    with pytest.raises(ParameterError):
        kmc.ExcursionReport(n, L, 3.0, 1, [], 0.0, 0.0).empirical_kernel()


def test_excursions_move_between_ground_states(small, torus):
    n, L = small
    report = kmc.excursion_stats(n, L, 3.0, excursions=4, seed=12, budget=2_000_000, replicas=2)
    assert not report.truncated
    assert len(report.records) == 4
    for r in report.records:
        assert r.end != r.start
        assert r.duration > 0
        assert r.max_level >= 2
        assert r.entered_delta1
    kernel = report.empirical_kernel()
    assert kernel.weights.sum() == pytest.approx(1.0)
    assert 0 not in kernel.support
    assert 0.0 <= report.outside_fraction() <= 1.0


def test_replicas_are_reproducible(small):
    n, L = small
    a = kmc.excursion_stats(n, L, 3.0, excursions=2, seed=5, budget=2_000_000, replicas=2)
    b = kmc.excursion_stats(n, L, 3.0, excursions=2, seed=5, budget=2_000_000, replicas=2)
    assert [r.duration for r in a.records] == [r.duration for r in b.records]


def test_excursion_parameters_are_checked(small):
    n, L = small
    with pytest.raises(ParameterError):
        kmc.excursion_stats(n, L, 3.0, excursions=0, seed=1)
    with pytest.raises(ParameterError):
        kmc.excursion_stats(n, 8, 3.0, excursions=1, seed=1)


@pytest.mark.slow
def test_detailed_balance_in_equilibrium(square):
    traj = kmc.simulate(square, 0.7, seed=21, max_events=500_000)
    assert kmc.jump_balance(traj, min_count=200) < 5.0


@pytest.mark.slow
def test_landscape_trends():
    n, L = 4, 12
    reports = [kmc.excursion_stats(n, L, beta, excursions=200, seed=7) for beta in (5.0, 6.0, 7.0)]
    delta2 = [r.delta2_fraction() for r in reports]
    outside = [r.outside_fraction() for r in reports]
    assert delta2[0] > delta2[1] > delta2[2]
    assert outside[0] > outside[1] > outside[2]


@pytest.mark.slow
def test_corner_band_exits(small):
    from pipelines.rates import valley_rates
    from pipelines.valleys import ValleyId
    n, L = 4, 12
    beta = 7.0
    v = ValleyId.corner_band((0, 0), 2, 2)
    report = kmc.valley_exit_stats(n, L, beta, runs=500, seed=3, valley=v)
    assert report.attractor_first.mean() >= 0.95
    assert kmc.ks_exponentiality(report.exit_times) < kmc.ks_critical_value(len(report.exit_times))
    exact = valley_rates(v, n, L)
    freq = report.target_frequencies()
    for u, p in exact.Q.as_dict().items():
        se = math.sqrt(p * (1 - p) / len(report.targets))
        assert abs(freq.get(u.label(), 0.0) - p) < 3 * se + 1e-3
