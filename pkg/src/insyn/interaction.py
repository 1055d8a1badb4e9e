"""Directional interaction states around each agent.

Every agent's neighborhood is split into four world-frame quadrants. For each
quadrant we track the nearest neighbor within the radius and label it
``IN_SYNC`` if it is the same pedestrian as on the previous step, ``CONFLICT``
if it is new, and ``NO_NEIGHBOR`` if the quadrant is empty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Tuple

from .scene import AgentNotPresent, Position, Scene, SceneError

LARGE_D = 1000.0
DEFAULT_RADIUS = 2.0


class Region(IntEnum):
    LU = 0
    RU = 1
    LD = 2
    RD = 3


class InteractionState(IntEnum):
    NO_NEIGHBOR = 0
    IN_SYNC = 1
    CONFLICT = 2


REGIONS = tuple(Region)

# region index after one 90 degree counter-clockwise turn
ROTATE_CCW = {Region.RU: Region.LU, Region.LU: Region.LD, Region.LD: Region.RD, Region.RD: Region.RU}

Occupancy = Dict[Region, Optional[Tuple[int, float]]]


class DegenerateGeometry(SceneError):
    pass


@dataclass(frozen=True)
class RegionSlot:
    state: InteractionState
    distance: float
    occupant: Optional[int] = None

    def __post_init__(self):
        empty = self.state == InteractionState.NO_NEIGHBOR
        if empty != (self.occupant is None) or empty != (self.distance == LARGE_D):
            raise ValueError(f"inconsistent region slot {self}")


EMPTY_SLOT = RegionSlot(InteractionState.NO_NEIGHBOR, LARGE_D, None)


@dataclass(frozen=True)
class InteractionInfo:
    slots: Tuple[RegionSlot, RegionSlot, RegionSlot, RegionSlot]

    def __post_init__(self):
        if len(self.slots) != 4:
            raise ValueError("interaction info needs exactly four region slots")

    def __getitem__(self, region: Region) -> RegionSlot:
        return self.slots[region]

    @property
    def states(self) -> Tuple[int, ...]:
        return tuple(int(s.state) for s in self.slots)

    @property
    def distances(self) -> Tuple[float, ...]:
        return tuple(s.distance for s in self.slots)


@dataclass(frozen=True)
class WalkingState:
    position: Position
    interaction: InteractionInfo


def region_of(agent: Position, other: Position) -> Region:
    """Quadrant of ``other`` relative to ``agent``.

    Each quadrant owns one half-axis (RU owns +y, LU owns -x, LD owns -y,
    RD owns +x) so axis-sitting neighbors land in exactly one region.
    """
    dx = other[0] - agent[0]
    dy = other[1] - agent[1]
    if dx == 0 and dy == 0:
        raise DegenerateGeometry("coincident points have no region")
    if dx < 0 and dy >= 0:
        return Region.LU
    if dx >= 0 and dy > 0:
        return Region.RU
    if dx <= 0 and dy < 0:
        return Region.LD
    return Region.RD


def nearest_in_regions(scene: Scene, step: int, agent: int, radius: float) -> Occupancy:
    me = scene.position(agent, step)
    best: Occupancy = {r: None for r in REGIONS}
    for pid, p in scene.frames[step].items():
        if pid == agent:
            continue
        d = math.hypot(p.x - me.x, p.y - me.y)
        if d > radius or d == 0.0:
            continue
        r = region_of(me, p)
        cur = best[r]
        if cur is None or (d, pid) < (cur[1], cur[0]):
            best[r] = (pid, d)
    return best


def nearest_overall(scene: Scene, step: int, agent: int, radius: float) -> Occupancy:
    """Single-region variant: the nearest neighbor regardless of direction is
    stored in the first slot, the rest stay empty."""
    occ = nearest_in_regions(scene, step, agent, radius)
    present = [v for v in occ.values() if v is not None]
    out: Occupancy = {r: None for r in REGIONS}
    if present:
        out[Region.LU] = min(present, key=lambda v: (v[1], v[0]))
    return out


def classify_step(prev: Optional[Occupancy], curr: Occupancy) -> InteractionInfo:
    slots = []
    for r in REGIONS:
        now = curr.get(r)
        if now is None:
            slots.append(EMPTY_SLOT)
            continue
        before = prev.get(r) if prev else None
        same = before is not None and before[0] == now[0]
        state = InteractionState.IN_SYNC if same else InteractionState.CONFLICT
        slots.append(RegionSlot(state, float(now[1]), now[0]))
    return InteractionInfo(tuple(slots))


def _lookback(scene: Scene, agent: int, step: int, radius: float, partition: bool) -> Optional[Occupancy]:
    # one pre-window step when the agent was already there, else unknown history
    if step - 1 in scene.frames and scene.present(agent, step - 1):
        occupancy = nearest_in_regions if partition else nearest_overall
        return occupancy(scene, step - 1, agent, radius)
    return None


def extract_walking_states(scene: Scene, agent: int, steps: Iterable[int],
                           radius: float = DEFAULT_RADIUS, partition: bool = True) -> List[WalkingState]:
    steps = list(steps)
    for s in steps:
        if not scene.present(agent, s):
            raise AgentNotPresent(f"ped {agent} missing at step {s}")
    occupancy = nearest_in_regions if partition else nearest_overall
    out: List[WalkingState] = []
    prev = _lookback(scene, agent, steps[0], radius, partition) if steps else None
    last_step = None
    for s in steps:
        if last_step is not None and s != last_step + 1:
            prev = _lookback(scene, agent, s, radius, partition)
        curr = occupancy(scene, s, agent, radius)
        out.append(WalkingState(scene.position(agent, s), classify_step(prev, curr)))
        prev, last_step = curr, s
    return out


def format_walking_states(states: Iterable[WalkingState], first_step: int = 0) -> str:
    """Serialize one line per step: ``step x y | state:dist state:dist ...``."""
    lines = []
    for i, ws in enumerate(states):
        slots = " ".join(f"{int(sl.state)}:{sl.distance:.6f}" for sl in ws.interaction.slots)
        lines.append(f"{first_step + i} {ws.position.x:.6f} {ws.position.y:.6f} | {slots}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_walking_states(text: str) -> List[Tuple[int, Position, List[Tuple[int, float]]]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        head, sep, tail = line.partition("|")
        fields = head.split()
        pairs = tail.split()
        if not sep or len(fields) != 3 or len(pairs) != 4:
            raise ValueError(f"line {lineno}: malformed walking-state record")
        slots = []
        for pair in pairs:
            st, _, d = pair.partition(":")
            slots.append((int(st), float(d)))
        rows.append((int(fields[0]), Position(float(fields[1]), float(fields[2])), slots))
    return rows
