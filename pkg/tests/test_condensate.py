import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipsim.condensate import (
    ATYPICAL,
    AtypicalJump,
    CondensedView,
    LabeledState,
    LabeledTraceTracker,
    classify,
    label_update,
    neighbors,
    project,
    subclass,
    tube_membership,
)
from sipsim.model import Configuration, ModelParams


def make_params(N, L, k, d_N=1e-4):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ModelParams(N=N, L=L, d_N=d_N, k=k)


P76 = make_params(7, 6, 2)


def cfg(L, *piles):
    return Configuration.from_sites(L, list(piles))


# classify ------------------------------------------------------------------


def test_classify_two_pile_example():
    view = classify(P76, cfg(6, (0, 3), (2, 4)))
    assert view is not None
    assert view.ell == 2
    assert view.positions == (0, 2)
    assert view.masses == (3, 4)


def test_classify_rejects_adjacent_occupied_sites():
    assert classify(P76, cfg(6, (0, 2), (1, 1), (2, 4))) is None


def test_classify_single_pile_always_condensed():
    p = make_params(9, 8, 1)
    view = classify(p, cfg(8, (5, 9)))
    assert view is not None and view.ell == 1
    assert view.positions == (5,)


def test_classify_rejects_too_many_piles():
    p = make_params(6, 12, 2)
    assert classify(p, cfg(12, (0, 2), (3, 2), (6, 2))) is None


# subclass ------------------------------------------------------------------


@pytest.mark.parametrize(
    "piles,expected",
    [
        (((0, 3), (2, 4)), "K"),
        (((0, 3), (3, 4)), "J"),
        (((0, 7),), "J"),
    ],
)
def test_subclass(piles, expected):
    view = classify(P76, cfg(6, *piles))
    assert subclass(P76, view) == expected


# neighbors ------------------------------------------------------------------


def test_neighbor_set_of_distance_two_pair():
    view = classify(P76, cfg(6, (0, 3), (2, 4)))
    targets = {tuple(c.occupancy) for c in neighbors(P76, view)}
    merges = {
        (7, 0, 0, 0, 0, 0),
        (0, 7, 0, 0, 0, 0),
        (0, 0, 7, 0, 0, 0),
    }
    exchanges = {(m, 0, 7 - m, 0, 0, 0) for m in (1, 2, 4, 5, 6)}
    shifts = {(0, 0, 0, 0, 0, 3) | set(), }
    shifts = {
        (0, 0, 4, 0, 0, 3),  # pile at 0 steps to 5
        (3, 0, 0, 4, 0, 0),  # pile at 2 steps to 3
    }
    assert targets == merges | exchanges | shifts
    assert len(targets) == 10


def test_neighbors_single_pile():
    p = make_params(9, 8, 1)
    view = classify(p, cfg(8, (3, 9)))
    targets = {tuple(c.occupancy) for c in neighbors(p, view)}
    assert targets == {
        tuple(cfg(8, (2, 9)).occupancy),
        tuple(cfg(8, (4, 9)).occupancy),
    }


def test_isolated_views_have_two_moves_per_pile():
    p = make_params(9, 12, 2)
    view = classify(p, cfg(12, (0, 4), (6, 5)))
    assert subclass(p, view) == "J"
    assert len(neighbors(p, view)) == 4


@given(st.integers(min_value=0, max_value=11), st.integers(min_value=3, max_value=9))
@settings(max_examples=40, deadline=None)
def test_neighbors_are_condensed_and_conserve_mass(shift, gap):
    L = 16
    n1, n2 = 5, 6
    p = make_params(n1 + n2, L, 2)
    x1 = shift
    x2 = (shift + max(gap, 2)) % L
    if (x2 - x1) % L < 2 or (x1 - x2) % L < 2:
        return
    view = classify(p, cfg(L, (x1, n1), (x2, n2)))
    assert view is not None
    for target in neighbors(p, view):
        assert target.total == p.N
        tview = classify(p, target)
        assert tview is not None
        assert tuple(target.occupancy) != tuple(cfg(L, (x1, n1), (x2, n2)).occupancy)


# tube membership -------------------------------------------------------------


def test_tube_two_site_slab():
    p = make_params(9, 8, 1)
    origin = classify(p, cfg(8, (2, 9)))
    assert tube_membership(p, origin, cfg(8, (2, 4), (3, 5)))
    assert tube_membership(p, origin, cfg(8, (2, 9)))
    assert not tube_membership(p, origin, cfg(8, (2, 8), (5, 1)))


def test_tube_three_site_slab_for_pair():
    origin = classify(P76, cfg(6, (0, 3), (2, 4)))
    assert tube_membership(P76, origin, cfg(6, (0, 2), (1, 1), (2, 4)))
    assert not tube_membership(P76, origin, cfg(6, (0, 2), (2, 4), (4, 1)))


# label updates ---------------------------------------------------------------


def start_state():
    return LabeledState(positions=(0, 2), masses=(3, 4))


def test_label_merge_assigns_shared_position_and_mass():
    nxt = classify(P76, cfg(6, (1, 7)))
    jump = label_update(P76, start_state(), nxt)
    assert not isinstance(jump, AtypicalJump)
    assert jump.kind == "merge"
    assert jump.state.positions == (1, 1)
    assert jump.state.masses == (7, 7)


def test_label_exchange_keeps_positions():
    nxt = classify(P76, cfg(6, (0, 5), (2, 2)))
    jump = label_update(P76, start_state(), nxt)
    assert jump.kind == "exchange"
    assert jump.state.positions == (0, 2)
    assert jump.state.masses == (5, 2)


def test_label_shift_moves_whole_block():
    p = make_params(7, 6, 2)
    merged = LabeledState(positions=(1, 1), masses=(7, 7))
    nxt = classify(p, cfg(6, (2, 7)))
    jump = label_update(p, merged, nxt)
    assert jump.kind == "shift"
    assert jump.state.positions == (2, 2)
    assert jump.label_moves == (1, 1)


def test_label_update_flags_non_neighbor_as_atypical():
    nxt = classify(P76, cfg(6, (0, 3), (4, 4)))  # pile teleported 2 -> 4
    assert label_update(P76, start_state(), nxt) is ATYPICAL


def test_label_update_flags_pile_count_increase():
    p = make_params(7, 12, 2)
    merged = LabeledState(positions=(1, 1), masses=(7, 7))
    nxt = classify(p, cfg(12, (1, 4), (4, 3)))
    assert label_update(p, merged, nxt) is ATYPICAL


def test_label_update_rejects_unchanged_view():
    with pytest.raises(ValueError):
        label_update(P76, start_state(), classify(P76, cfg(6, (0, 3), (2, 4))))


def test_project_collapses_shared_positions():
    p = make_params(7, 6, 2)
    merged = LabeledState(positions=(1, 1), masses=(7, 7))
    assert tuple(project(p, merged).occupancy) == (0, 7, 0, 0, 0, 0)


def test_classify_project_roundtrip():
    view = classify(P76, project(P76, start_state()))
    assert view.positions == (0, 2)
    assert view.masses == (3, 4)


# trace tracking --------------------------------------------------------------


def test_tracker_accumulates_displacements_and_merges():
    p = make_params(8, 10, 2)
    start = LabeledState(positions=(0, 5), masses=(4, 4))
    tracker = LabeledTraceTracker(p, start)
    assert tracker.update(0.1, classify(p, cfg(10, (1, 4), (5, 4))))
    assert tracker.update(0.2, classify(p, cfg(10, (2, 4), (5, 4))))
    assert tracker.update(0.3, classify(p, cfg(10, (3, 4), (5, 4))))
    assert tracker.update(0.4, classify(p, cfg(10, (4, 8))))
    assert tracker.merge_times == [0.4]
    assert tracker.state.positions == (4, 4)
    # label 1 walked 0 -> 4, label 2 merged one site left of 5
    assert tracker.displacements == [4, -1]
    assert tracker.unwrapped(start) == [0.4, 0.4]
    assert not tracker.atypical


def test_tracker_stops_at_atypical():
    p = make_params(8, 10, 2)
    start = LabeledState(positions=(0, 5), masses=(4, 4))
    tracker = LabeledTraceTracker(p, start)
    assert not tracker.update(0.05, classify(p, cfg(10, (2, 4), (7, 4))))
    assert tracker.atypical
    assert tracker.atypical_t == 0.05
    # further updates are ignored
    assert not tracker.update(0.06, classify(p, cfg(10, (2, 4), (5, 4))))


def test_labeled_state_validation():
    p = make_params(8, 10, 2)
    with pytest.raises(ValueError):
        LabeledState(positions=(0, 1), masses=(4, 4)).validate(p)
    with pytest.raises(ValueError):
        LabeledState(positions=(0, 5), masses=(4, 3)).validate(p)
    LabeledState(positions=(0, 5), masses=(4, 4)).validate(p)
