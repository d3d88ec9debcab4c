import pytest
from hypothesis import given, settings, strategies as st

from cavfeas.errors import LayoutError, UnknownPath
from cavfeas.geometry import DEFAULT_LAYOUT_NAME, conflicting_crossings, four_leg_12path, load_layout


def crossing(length_a=100.0, length_b=100.0):
    return {
        "paths": [
            {"path_id": 1, "length": length_a, "conflicts": [{"conflict_id": 0, "position": 50.0}]},
            {"path_id": 2, "length": length_b, "conflicts": [{"conflict_id": 0, "position": 50.0}]},
        ]
    }


def test_minimal_crossing():
    lay = load_layout(crossing())
    assert lay.conflict_map == {0: ((1, 50.0), (2, 50.0))}
    assert conflicting_crossings(lay, 1) == [(0, 50.0, [(2, 50.0)])]


def test_default_layout():
    lay = load_layout(DEFAULT_LAYOUT_NAME)
    assert len(lay.paths) == 12
    for p in lay.paths:
        assert p.length == 100.0
        assert [pos for _, pos in p.conflict_positions] == [40.0, 50.0, 60.0]
        assert len(conflicting_crossings(lay, p.path_id)) == 3
    assert all(len(v) == 2 for v in lay.conflict_map.values())
    assert len(lay.conflict_map) == 18


def test_conflict_beyond_length():
    section = crossing()
    section["paths"][0]["conflicts"][0]["position"] = 120.0
    with pytest.raises(LayoutError, match="outside"):
        load_layout(section)


def test_path_without_conflicts():
    section = crossing()
    section["paths"].append({"path_id": 3, "length": 80.0})
    assert conflicting_crossings(load_layout(section), 3) == []


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda s: s["paths"].append(dict(s["paths"][0])), "duplicate"),
        (lambda s: s["paths"][1]["conflicts"].__setitem__(0, {"conflict_id": 9, "position": 50.0}), "at least two"),
        (lambda s: s["paths"][0]["conflicts"].append({"conflict_id": 5, "position": 30.0}), "increasing"),
        (lambda s: s["paths"][0].__setitem__("length", 0.0), "length"),
        (lambda s: s["paths"][0].pop("length"), "malformed"),
    ],
)
def test_layout_errors(mutate, message):
    section = crossing()
    mutate(section)
    with pytest.raises(LayoutError, match=message):
        load_layout(section)


def test_unknown_layout_name_and_path():
    with pytest.raises(LayoutError):
        load_layout("roundabout")
    with pytest.raises(UnknownPath):
        conflicting_crossings(load_layout(crossing()), 7)


@st.composite
def layouts(draw):
    """Random valid layouts: conflicts are shared by pairs of paths."""
    n_paths = draw(st.integers(2, 6))
    lengths = [draw(st.floats(20, 300)) for _ in range(n_paths)]
    members: dict[int, list[int]] = {i: [] for i in range(n_paths)}
    n_conf = draw(st.integers(0, 8))
    for cid in range(n_conf):
        a, b = draw(st.lists(st.integers(0, n_paths - 1), min_size=2, max_size=2, unique=True))
        members[a].append(cid)
        members[b].append(cid)
    paths = []
    for i in range(n_paths):
        k = len(members[i])
        fracs = sorted(draw(st.lists(st.floats(0.05, 0.95), min_size=k, max_size=k, unique=True)))
        if any(b - a < 1e-6 for a, b in zip(fracs, fracs[1:])):
            fracs = [(j + 1) / (k + 1) for j in range(k)]
        paths.append({
            "path_id": i + 1,
            "length": lengths[i],
            "conflicts": [{"conflict_id": c, "position": f * lengths[i]} for c, f in zip(members[i], fracs)],
        })
    return {"paths": paths}


@settings(max_examples=100, deadline=None)
@given(layouts())
def test_round_trip_and_ordering(section):
    lay = load_layout(section)
    assert load_layout(lay.to_dict()) == lay
    for pid in lay.path_ids:
        positions = [pos for _, pos, _ in conflicting_crossings(lay, pid)]
        assert positions == sorted(positions) and len(set(positions)) == len(positions)
    for cid, entries in lay.conflict_map.items():
        assert len(entries) >= 2
        for pid, pos in entries:
            assert (cid, pos) in lay.path(pid).conflict_positions


def test_default_layout_round_trip():
    lay = four_leg_12path()
    assert load_layout(lay.to_dict()) == lay
