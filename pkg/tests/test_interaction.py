import math

import numpy as np
import pytest

from insyn.interaction import (
    EMPTY_SLOT,
    LARGE_D,
    DegenerateGeometry,
    InteractionState,
    Region,
    RegionSlot,
    classify_step,
    extract_walking_states,
    format_walking_states,
    nearest_in_regions,
    nearest_overall,
    parse_walking_states,
    region_of,
)
from insyn.scene import AgentNotPresent, Position, Scene
from insyn.synth import Kind, ScenarioSpec, generate

from conftest import straight_scene

NO, SYNC, CONF = InteractionState


@pytest.mark.parametrize("other,region", [
    ((-1, 1), Region.LU), ((0, 1), Region.RU), ((1, 1), Region.RU), ((1, 0), Region.RD),
    ((1, -1), Region.RD), ((0, -1), Region.LD), ((-1, -1), Region.LD), ((-1, 0), Region.LU),
])
def test_region_eight_directions(other, region):
    assert region_of(Position(0, 0), Position(*other)) == region


def test_region_coincident_points():
    with pytest.raises(DegenerateGeometry):
        region_of(Position(2.5, -1), Position(2.5, -1))


def test_region_random_pairs_match_angle_oracle(rng):
    # Oracle: quadrant from the half-open angle sector, independent of the sign rules.
    pts = rng.normal(size=(100_000, 2))
    pts[::7, 0] = 0.0
    pts[::11, 1] = 0.0
    sectors = [Region.RU, Region.LU, Region.LD, Region.RD]
    for dx, dy in pts:
        if dx == 0 and dy == 0:
            continue
        ang = math.atan2(dy, dx) % (2 * math.pi)
        # RU owns (0, pi/2], LU (pi/2, pi], LD (pi, 3pi/2], RD (3pi/2, 2pi] and angle 0
        idx = 3 if ang == 0 else int(math.ceil(ang / (math.pi / 2))) - 1
        assert region_of((0.0, 0.0), (dx, dy)) == sectors[idx]


def test_nearest_examples():
    s = Scene.from_tracks({1: {0: Position(0, 0)}, 2: {0: Position(-1, 1)}})
    occ = nearest_in_regions(s, 0, 1, 2.0)
    assert occ[Region.LU][0] == 2 and occ[Region.LU][1] == pytest.approx(math.sqrt(2))
    assert all(occ[r] is None for r in (Region.RU, Region.LD, Region.RD))
    s2 = Scene.from_tracks({1: {0: Position(0, 0)}, 2: {0: Position(-1, 1)}, 3: {0: Position(-0.5, 0.5)}})
    assert nearest_in_regions(s2, 0, 1, 2.0)[Region.LU][0] == 3
    lone = Scene.from_tracks({1: {0: Position(0, 0)}})
    assert all(v is None for v in nearest_in_regions(lone, 0, 1, 2.0).values())


def test_nearest_ignores_coincident_neighbor():
    s = Scene.from_tracks({1: {0: Position(0, 0)}, 2: {0: Position(0, 0)}})
    assert all(v is None for v in nearest_in_regions(s, 0, 1, 2.0).values())


def _brute(pts, a, radius):
    best = {r: None for r in Region}
    for j, p in enumerate(pts):
        dx, dy = p[0] - pts[a][0], p[1] - pts[a][1]
        d = math.hypot(dx, dy)
        if j == a or d == 0 or d > radius:
            continue
        if dx < 0 and dy >= 0:
            r = Region.LU
        elif dx >= 0 and dy > 0:
            r = Region.RU
        elif dx <= 0 and dy < 0:
            r = Region.LD
        else:
            r = Region.RD
        if best[r] is None or (d, j) < (best[r][1], best[r][0]):
            best[r] = (j, d)
    return best


def test_nearest_matches_brute_force_on_1000_scenes(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        pts = rng.uniform(-2.5, 2.5, size=(n, 2)).round(1)
        scene = Scene.from_tracks({i: {0: Position(*p)} for i, p in enumerate(pts)})
        a = int(rng.integers(n))
        assert nearest_in_regions(scene, 0, a, 2.0) == _brute(pts, a, 2.0)


def test_nearest_overall_uses_first_slot():
    s = Scene.from_tracks({1: {0: Position(0, 0)}, 2: {0: Position(1, 1)}, 3: {0: Position(0, -0.5)}})
    occ = nearest_overall(s, 0, 1, 2.0)
    assert occ[Region.LU] == (3, 0.5)
    assert occ[Region.RU] is None and occ[Region.LD] is None and occ[Region.RD] is None


def test_classify_examples():
    info = classify_step({Region.LU: (7, 1.0)}, {Region.LU: (7, 0.9)})
    assert info[Region.LU] == RegionSlot(SYNC, 0.9, 7)
    info = classify_step({Region.LU: None}, {Region.LU: (9, 1.5)})
    assert info[Region.LU].state == CONF
    info = classify_step({Region.LU: (7, 1.0)}, {Region.LU: (8, 1.0)})
    assert info[Region.LU].state == CONF
    empty = classify_step(None, {r: None for r in Region})
    assert empty.states == (0, 0, 0, 0) and empty.distances == (LARGE_D,) * 4


def test_region_slot_invariant():
    with pytest.raises(ValueError):
        RegionSlot(NO, 1.0, None)
    with pytest.raises(ValueError):
        RegionSlot(SYNC, LARGE_D, 3)
    with pytest.raises(ValueError):
        RegionSlot(CONF, 1.0, None)


def test_lone_agent_all_no_neighbor():
    scene = straight_scene({1: (0, 8, (0, 0), (0.5, 0))})
    states = extract_walking_states(scene, 1, range(8))
    assert len(states) == 8
    assert all(ws.interaction.states == (0, 0, 0, 0) for ws in states)


def test_parallel_walkers_in_sync_after_first_step():
    scene = straight_scene({1: (0, 8, (0, 0), (0.5, 0)), 2: (0, 8, (0, 0.5), (0.5, 0))})
    states = extract_walking_states(scene, 1, range(8))
    assert states[0].interaction[Region.RU].state == CONF
    assert all(ws.interaction[Region.RU].state == SYNC for ws in states[1:])
    assert all(ws.interaction[Region.RU].distance == pytest.approx(0.5) for ws in states)


def test_lookback_uses_pre_window_step():
    scene = straight_scene({1: (0, 10, (0, 0), (0.5, 0)), 2: (0, 10, (0, 0.5), (0.5, 0))})
    states = extract_walking_states(scene, 1, range(2, 10))
    assert states[0].interaction[Region.RU].state == SYNC


def test_head_on_conflict_at_entry_step():
    ls = generate(ScenarioSpec(kind=Kind.HEAD_ON, entry_step=5))
    states = extract_walking_states(ls.scene, 1, range(20))
    first = next(t for t, ws in enumerate(states) if CONF in ws.interaction.states)
    assert first == 5


def test_identity_persistence_no_conflict_after_first_step():
    scene = straight_scene({1: (0, 12, (0, 0), (0.3, 0.1)), 2: (0, 12, (1, 1), (0.3, 0.1)),
                            3: (0, 12, (-0.5, -0.4), (0.3, 0.1))})
    for pid in (1, 2, 3):
        states = extract_walking_states(scene, pid, range(12))
        assert all(CONF not in ws.interaction.states for ws in states[1:])


def test_extract_requires_presence():
    scene = straight_scene({1: (0, 5, (0, 0), (1, 0))})
    with pytest.raises(AgentNotPresent):
        extract_walking_states(scene, 1, range(3, 7))


def test_walking_state_text_round_trip():
    scene = straight_scene({1: (0, 4, (0, 0), (0.5, 0)), 2: (0, 4, (-1, 0.5), (0.5, 0))})
    states = extract_walking_states(scene, 1, range(4))
    text = format_walking_states(states, first_step=3)
    rows = parse_walking_states(text)
    assert [r[0] for r in rows] == [3, 4, 5, 6]
    for ws, (_, pos, slots) in zip(states, rows):
        assert pos == ws.position
        assert [s for s, _ in slots] == list(ws.interaction.states)
        assert [d for _, d in slots] == pytest.approx(list(ws.interaction.distances), abs=1e-6)
    assert text.splitlines()[0].startswith("3 0.000000 0.000000 | 2:1.118034 0:1000.000000")


def test_slot_invariant_holds_for_every_produced_slot(mixed_windows):
    for w in mixed_windows:
        for ws in w.walking_states():
            for sl in ws.interaction.slots:
                assert (sl.state == NO) == (sl.distance == LARGE_D) == (sl.occupant is None)
                if sl.state != NO:
                    assert 0 < sl.distance <= 2.0
