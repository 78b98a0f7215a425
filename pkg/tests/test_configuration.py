import math

import numpy as np
import pytest

from pipelines.configuration import (Configuration, SwapMove, apply_swap, audit_saddle_path,
                                     bottleneck_log_weight, compute_energy, energy_delta,
                                     ground_energy, log_weight, moves, rate, saddle_path,
                                     square_config)
from pipelines.errors import ContractViolation, ParameterError
from pipelines.lattice import Symmetry, Torus


@pytest.mark.parametrize("n", range(4, 11))
def test_square_energy(n):
    cfg = square_config((0, 0), n, Torus(2 * n + 1))
    assert cfg.energy == -2 * n * (n - 1) == ground_energy(n)
    assert cfg.level == 0


@pytest.mark.parametrize("h", [1, 2, 3])
def test_strip_energy(h):
    torus = Torus(9)
    cfg = Configuration.from_sites(torus, ((x, y) for x in range(9) for y in range(h)))
    assert cfg.energy == -(2 * h - 1) * torus.L


def test_particle_count_is_checked():
    with pytest.raises(ParameterError):
        Configuration.from_sites(Torus(9), [(0, 0), (1, 0)], n=4)


def test_square_exit_moves():
    n = 4
    cfg = square_config((2, 3), n, Torus(9))
    deltas = sorted(d for _, d in moves(cfg))
    assert deltas == [2] * 8 + [3] * (4 * (n - 2))


def test_incremental_energy_matches_recomputation():
    rng = np.random.default_rng(7)
    torus = Torus(9)
    cfg = square_config((0, 0), 4, torus)
    for _ in range(300):
        options = list(moves(cfg))
        m, delta = options[int(rng.integers(len(options)))]
        assert energy_delta(cfg, m) == delta
        cfg = apply_swap(cfg, m)
        assert cfg.energy == compute_energy(torus.L, cfg.bits)
        assert cfg.K == 16


def test_swap_between_empty_sites_is_identity():
    torus = Torus(9)
    cfg = square_config((0, 0), 4, torus)
    m = SwapMove.between(torus, (6, 6), (7, 6))
    assert apply_swap(cfg, m) is cfg


def test_swap_requires_neighbours():
    with pytest.raises(ParameterError):
        SwapMove.between(Torus(9), (0, 0), (2, 0))


def test_rates_and_log_weight():
    torus = Torus(9)
    cfg = square_config((0, 0), 4, torus)
    corner_out = SwapMove.between(torus, (3, 3), (3, 4))
    assert rate(cfg, corner_out, 2.0) == pytest.approx(math.exp(-4.0))
    assert log_weight(cfg, 1.5) == pytest.approx(1.5 * 24)
    with pytest.raises(ParameterError):
        rate(cfg, corner_out, 0.0)


def test_transformed_keeps_energy():
    torus = Torus(9)
    cfg = Configuration.from_sites(torus, [(0, 0), (1, 0), (1, 1), (5, 5)])
    image = cfg.transformed(Symmetry(3, (4, 2)))
    assert image.energy == cfg.energy == compute_energy(9, image.bits)


def test_dict_round_trip():
    cfg = square_config((1, 2), 4, Torus(9))
    assert Configuration.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("direction", [(1, 0), (0, 1)])
def test_saddle_path(direction):
    torus = Torus(9)
    path = saddle_path((0, 0), direction, 4, torus)
    assert path[0] == square_config((0, 0), 4, torus)
    assert path[-1] == square_config(direction, 4, torus)
    assert max(c.level for c in path) == 2
    assert bottleneck_log_weight(path, 3.0) == pytest.approx(-6.0)


def test_saddle_path_rejects_long_steps():
    with pytest.raises(ParameterError):
        saddle_path((0, 0), (1, 1), 4, Torus(9))


def test_audit_catches_broken_path():
    torus = Torus(9)
    path = saddle_path((0, 0), (1, 0), 4, torus)
    with pytest.raises(ContractViolation):
        audit_saddle_path(path[:2] + path[3:], 4)
