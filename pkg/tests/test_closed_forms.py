import math

import numpy as np
import pytest

from pipelines import closed_forms, geometry, kmc
from pipelines.absorption import hitting_measure
from pipelines.chains import Distribution
from pipelines.configuration import Configuration
from pipelines.elementary import elementary_table
from pipelines.rates import escape_masses
from pipelines.valleys import ValleyId


def assert_same_measure(a, b, tol=1e-9):
    da, db = a.as_dict(), b.as_dict()
    for k in set(da) | set(db):
        assert da.get(k, 0.0) == pytest.approx(db.get(k, 0.0), abs=tol), k


@pytest.mark.parametrize("n, L", [(4, 9), (4, 12), (5, 11)])
def test_ground_exit_mass_on_the_square(n, L):
    tab = elementary_table(n, L)
    m1, m2 = closed_forms.ground_m1_m2(n, L)
    expected = 1.0 / (4.0 + tab.q + tab.r.total - tab.walk.a_total)
    home = ValleyId.ground((0, 0))
    assert m1.mass(home) == pytest.approx(expected, abs=1e-10)
    assert m2.mass(home) == pytest.approx(expected, abs=1e-10)
    assert m1.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert m2.weights.sum() == pytest.approx(1.0, abs=1e-10)


def test_ground_exits_agree_with_engine(taxonomy, small):
    n, L = small
    stars = closed_forms.ground_star_configs(n, L)
    for star, m in zip(stars, closed_forms.ground_m1_m2(n, L)):
        assert_same_measure(m, hitting_measure(star, taxonomy))


def test_every_ground_exit_is_covered(taxonomy):
    v = ValleyId.ground((2, 3))
    for xi in taxonomy.neighborhood(v):
        m = closed_forms.closed_form_measure(xi, v)
        assert m is not None
        assert_same_measure(m, hitting_measure(xi, taxonomy))


def test_corner_band_exit_groups(small):
    n, _ = small
    groups = closed_forms.corner_band_neighbors(n)
    assert sum(len(g) for g in groups.values()) == 3 * n
    assert len(groups["free"]) == n + 1


@pytest.mark.parametrize("anchor", [(0, 0), (4, 7)])
def test_corner_band_measures_agree_with_engine(taxonomy, anchor):
    v = ValleyId.corner_band(anchor, 2, 2)
    for xi in taxonomy.neighborhood(v):
        assert_same_measure(closed_forms.closed_form_measure(xi, v), hitting_measure(xi, taxonomy))


def test_corner_band_is_transported_by_symmetry(taxonomy):
    v = ValleyId.corner_band((1, 1), 1, 1)
    assert closed_forms.reference_valley(v) == ValleyId.corner_band((1, 1), 2, 2)
    for xi in taxonomy.neighborhood(v):
        assert_same_measure(closed_forms.closed_form_measure(xi, v), hitting_measure(xi, taxonomy))


def test_far_side_corner_bands_have_no_formula():
    assert closed_forms.reference_valley(ValleyId.corner_band((0, 0), 2, 0)) is None


def test_rect_band_measures_agree_with_engine(taxonomy):
    v = ValleyId.rect_band((0, 0), "s", 0)
    for xi in taxonomy.neighborhood(v):
        assert_same_measure(closed_forms.closed_form_measure(xi, v), hitting_measure(xi, taxonomy))


def test_decorated_measures_agree_with_engine(taxonomy):
    for v in taxonomy.base:
        if v.family not in ("perimeter", "wide_rect"):
            continue
        for xi in taxonomy.neighborhood(v):
            assert_same_measure(closed_forms.closed_form_measure(xi, v), hitting_measure(xi, taxonomy))


def test_z_closed_forms_are_positive(small):
    n, L = small
    assert closed_forms.corner_band_z_closed_form(n, L) > 1.0
    assert closed_forms.rect_band_z_closed_form(n, L) > 0.0


def test_top_row_walk_ends(taxonomy, small):
    n, _ = small
    _, ends = closed_forms.top_row_chain(taxonomy, (0, 0))
    # a corner slides in under an empty top site: the lifted-corner ground exits
    assert isinstance(ends[("end", 0, 0)], Distribution)
    assert isinstance(ends[("end", n - 1, n - 1)], Distribution)
    assert ends[("end", n - 1, 0)] == ValleyId.corner_band((0, 0), 2, 2)
    assert all(e[1] in (0, n - 1) for e in ends)


def test_trapped_hole_exits_can_leave_the_band(taxonomy, small):
    n, _ = small
    v = ValleyId.corner_band((0, 0), 2, 2)
    w2 = geometry.corners(n)[2]
    for k in range(n - 2):
        sites = (geometry.square(n) - {geometry.shift(w2, (1, 0), -1)}) | {(k, n)}
        xi = Configuration.from_sites(taxonomy.torus, sites, n)
        assert xi.level == 2
        m = closed_forms.closed_form_measure(xi, v)
        assert m.mass(v) < 1.0
        assert_same_measure(m, hitting_measure(xi, taxonomy))


def test_corner_band_z_matches_engine(small):
    n, L = small
    engine, _ = escape_masses(ValleyId.corner_band((0, 0), 2, 2), n, L)
    assert closed_forms.corner_band_z_closed_form(n, L) == pytest.approx(engine, abs=1e-10)


def simulated_exit_law(taxonomy, xi, beta, runs, seed):
    """Empirical law of the valley first reached at level <= 1 by the full dynamics from xi."""
    counts = {}
    for s in np.random.SeedSequence(seed).generate_state(runs):
        traj = kmc.simulate(xi, beta, int(s), max_events=200_000, stop=lambda sim: sim.level <= 1)
        assert not traj.truncated
        found = taxonomy.classify(traj.final).valley
        counts[found] = counts.get(found, 0) + 1
    return {v: c / runs for v, c in counts.items()}


def assert_within_three_se(exact, empirical, runs):
    for v in set(exact.as_dict()) | set(empirical):
        p = exact.mass(v)
        se = math.sqrt(p * (1.0 - p) / runs)
        assert abs(empirical.get(v, 0.0) - p) <= 3.0 * se + 2.0 / runs, v


def exit_configs(taxonomy, n, L):
    """One exit per formula group: both ground exits and every corner-band group."""
    out = dict(zip(("ground_e2", "ground_e1"), closed_forms.ground_star_configs(n, L)))
    for group, exits in closed_forms.corner_band_neighbors(n).items():
        removed, added = exits[0]
        sites = (geometry.square(n) - set(removed)) | set(added)
        out[group] = Configuration.from_sites(taxonomy.torus, sites, n)
    return out


@pytest.mark.slow
@pytest.mark.parametrize("group", ["ground_e2", "ground_e1", "free", "hole", "trapped", "pinned", "column"])
def test_exit_law_matches_simulation(taxonomy, small, group):
    n, L = small
    xi = exit_configs(taxonomy, n, L)[group]
    v = ValleyId.ground((0, 0)) if group.startswith("ground") else ValleyId.corner_band((0, 0), 2, 2)
    exact = closed_forms.closed_form_measure(xi, v)
    assert_same_measure(exact, hitting_measure(xi, taxonomy))
    runs = 600
    assert_within_three_se(exact, simulated_exit_law(taxonomy, xi, 8.0, runs, seed=len(group)), runs)
