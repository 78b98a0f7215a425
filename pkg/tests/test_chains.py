import numpy as np
import pytest
import scipy.sparse as sp

from config import settings
from pipelines.chains import (Distribution, FiniteChain, absorption_distribution, capacity,
                              expected_hitting_time, mean_hitting_times, sample_absorption,
                              solve_linear, stationary, trace_chain)
from pipelines.errors import ParameterError, SolverError


def path_chain(N, reflect_rate=1.0):
    """Unit-rate walk on 0..N."""
    rows, cols, vals = [], [], []
    for i in range(N):
        rows += [i, i + 1]
        cols += [i + 1, i]
        vals += [reflect_rate if i == 0 else 1.0, 1.0]
    return FiniteChain(list(range(N + 1)), sp.csr_matrix((vals, (rows, cols)), shape=(N + 1, N + 1)))


def test_distribution_mass_is_checked():
    with pytest.raises(SolverError):
        Distribution(["a", "b"], np.array([0.5, 0.6]))
    with pytest.raises(ParameterError):
        Distribution(["a"], np.array([0.5, 0.5]))


def test_pushforward_merges_labels():
    d = Distribution.from_mapping({1: 0.25, 2: 0.25, 3: 0.5})
    image = d.pushforward(lambda k: k % 2)
    assert image.as_dict() == pytest.approx({1: 0.75, 0: 0.25})


def test_from_mapping_drops_zero():
    d = Distribution.from_mapping({"a": 1.0, "b": 0.0})
    assert d.support == ["a"]
    assert d.mass("b") == 0.0


def test_gamblers_ruin():
    c = path_chain(4)
    d = absorption_distribution(c, 1, [[4], [0]])
    assert d.weights == pytest.approx([0.25, 0.75], abs=1e-12)
    assert absorption_distribution(c, 4, [[4], [0]]).weights == pytest.approx([1.0, 0.0])


def test_overlapping_parts_are_rejected():
    with pytest.raises(ParameterError):
        absorption_distribution(path_chain(4), 1, [[4, 0], [0]])


def test_unreachable_absorption_raises():
    # state 2 is a trap
    m = sp.csr_matrix(([1.0, 1.0], ([0, 1], [1, 2])), shape=(4, 4))
    c = FiniteChain([0, 1, 2, 3], m)
    with pytest.raises(SolverError):
        absorption_distribution(c, 0, [[3]])


@pytest.mark.parametrize("N", [2, 3, 6])
def test_reflected_walk_hitting_time(N):
    c = path_chain(N)
    assert expected_hitting_time(c, 0, [N]) == pytest.approx(N * (N + 1) / 2, rel=1e-10)
    times = mean_hitting_times(c, [N])
    assert times[N] == 0.0
    assert times[0] == pytest.approx(N * (N + 1) / 2, rel=1e-10)
    assert np.all(np.diff(times) < 0)


def test_stationary_of_a_cycle_is_uniform():
    m = sp.csr_matrix((np.ones(5), (np.arange(5), (np.arange(5) + 1) % 5)), shape=(5, 5))
    pi = stationary(FiniteChain(list("abcde"), m))
    assert pi.weights == pytest.approx(np.full(5, 0.2))


def test_stationary_rejects_reducible_chain():
    m = sp.csr_matrix(([1.0], ([0], [1])), shape=(2, 2))
    with pytest.raises(SolverError):
        stationary(FiniteChain(["a", "b"], m))


def test_detailed_balance_is_checked():
    m = sp.csr_matrix(([2.0, 1.0], ([0, 1], [1, 0])), shape=(2, 2))
    FiniteChain(["a", "b"], m, pi=[1 / 3, 2 / 3])
    with pytest.raises(ParameterError):
        FiniteChain(["a", "b"], m, pi=[0.5, 0.5])


def test_two_state_capacity():
    m = sp.csr_matrix(([2.0, 1.0], ([0, 1], [1, 0])), shape=(2, 2))
    c = FiniteChain(["a", "b"], m, pi=[1 / 3, 2 / 3])
    assert capacity(c, ["a"], ["b"]) == pytest.approx(2 / 3)


def test_trace_chain_on_path_ends():
    c = path_chain(2)
    t = trace_chain(c, [0, 2])
    assert t.states == [0, 2]
    assert t.rates[0, 1] == pytest.approx(0.5)
    assert t.rates[1, 0] == pytest.approx(0.5)


def test_iterative_solver_branch(monkeypatch):
    monkeypatch.setattr(settings, "DIRECT_SOLVE_MAX_UNKNOWNS", 1)
    n = 30
    A = sp.diags([-np.ones(n - 1), 4 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    b = np.arange(n, dtype=float)
    x = solve_linear(A, b, symmetric=True)
    assert np.abs(A @ x - b).max() < 1e-9
    y = solve_linear(A, b)
    assert y == pytest.approx(x, abs=1e-9)


def test_sampled_absorption_matches_exact():
    c = path_chain(4)
    hits = sample_absorption(c, 1, [0, 4], n_samples=20_000, seed=3)
    p = np.mean(hits == 4)
    se = np.sqrt(0.25 * 0.75 / len(hits))
    assert abs(p - 0.25) < 4 * se
