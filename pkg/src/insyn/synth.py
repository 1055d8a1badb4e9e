"""Scripted crowd scenarios with analytically known interaction labels.

Every scenario is built from independent groups of at most two pedestrians,
placed far enough apart that groups never see each other. Within a pair the
only possible neighbor is the partner, so the expected labels follow from the
pair geometry alone: present iff within the radius, region from the angle of
the relative vector, in sync iff the partner was already in that same region
on the previous step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .interaction import (
    DEFAULT_RADIUS,
    EMPTY_SLOT,
    LARGE_D,
    InteractionInfo,
    InteractionState,
    Region,
    RegionSlot,
    extract_walking_states,
)
from .scene import DEFAULT_DT, Position, Scene

GROUP_SPACING = 100.0
AVOID_AMPLITUDE = 0.5
AVOID_STEPS = 5


class Kind(str, Enum):
    LONE = "lone"
    IN_SYNC_PAIR = "insync"
    HEAD_ON = "headon"
    CROSSING = "crossing"
    MIXED = "mixed"


@dataclass
class ScenarioSpec:
    kind: Kind = Kind.LONE
    steps: int = 20
    speed: float = 1.2
    noise: float = 0.0
    seed: int = 0
    radius: float = DEFAULT_RADIUS
    dt: float = DEFAULT_DT
    offset: Tuple[float, float] = (0.0, 0.5)
    entry_step: int = 5
    heading: float = 0.0
    groups: int = 4
    kinds: Tuple[str, ...] = ("lone", "insync", "headon", "crossing")

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if self.steps < 20:
            raise ValueError("scenarios need at least 20 steps")
        if self.noise < 0 or self.speed <= 0 or self.radius <= 0 or self.dt <= 0:
            raise ValueError("noise must be >= 0; speed, radius and dt > 0")
        if self.kind == Kind.IN_SYNC_PAIR and not 0 < math.hypot(*self.offset) < self.radius:
            raise ValueError("in-sync offset must be non-zero and inside the radius")
        if self.kind in (Kind.HEAD_ON, Kind.CROSSING) and not 1 <= self.entry_step < self.steps:
            raise ValueError("entry_step must fall inside the scenario")
        if self.kind == Kind.MIXED and self.groups < 1:
            raise ValueError("mixed scenarios need at least one group")


@dataclass
class LabeledScene:
    scene: Scene
    expected: Dict[int, List[InteractionInfo]]
    spec: ScenarioSpec
    group_kinds: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class Mismatch:
    ped: int
    step: int
    region: Region
    expected: RegionSlot
    actual: RegionSlot


# -- construction ------------------------------------------------------------

def _ramp(t: int, start: int) -> float:
    """Cosine ramp from 0 to 1 over AVOID_STEPS steps beginning at ``start``."""
    if t < start:
        return 0.0
    u = min(1.0, (t - start) / AVOID_STEPS)
    return 0.5 * (1.0 - math.cos(math.pi * u))


def _place(local: np.ndarray, heading: float, base: Tuple[float, float]) -> np.ndarray:
    if heading == 0.0:
        out = local.copy()
    else:
        c, s = math.cos(heading), math.sin(heading)
        out = np.stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1]], axis=1)
    return out + np.asarray(base, dtype=np.float64) + 0.0


def _lone(steps, u):
    t = np.arange(steps, dtype=np.float64)
    return [np.stack([u * t, np.zeros(steps)], axis=1)]


def _insync(steps, u, offset):
    a = _lone(steps, u)[0]
    return [a, a + np.asarray(offset, dtype=np.float64)]


def _headon(steps, u, entry, radius):
    lateral = 0.6
    dx_entry = math.sqrt((radius - 0.25) ** 2 - lateral ** 2)
    x0 = dx_entry + 2.0 * u * entry
    t = np.arange(steps, dtype=np.float64)
    swerve = AVOID_AMPLITUDE * np.array([_ramp(int(k), entry) for k in t])
    a = np.stack([u * t, -swerve], axis=1)
    b = np.stack([x0 - u * t, lateral + swerve], axis=1)
    return [a, b]


def _crossing(steps, u, entry, radius):
    # B crosses A's path 2.5 steps after A; solve for A's arrival so the
    # separation first drops to radius - 0.1 at ``entry``
    delta = 2.5
    target = ((radius - 0.1) / u) ** 2
    s = (-2.0 * delta + math.sqrt(4.0 * delta ** 2 - 8.0 * (delta ** 2 - target))) / 4.0
    t_a = entry + s
    t = np.arange(steps, dtype=np.float64)
    swerve = 0.3 * np.array([_ramp(int(k), entry) for k in t])
    a = np.stack([u * t, swerve], axis=1)
    b = np.stack([np.full(steps, u * t_a), u * (t - t_a - delta)], axis=1)
    return [a, b]


def _group_tracks(kind: Kind, steps: int, u: float, spec: ScenarioSpec, offset, entry) -> List[np.ndarray]:
    if kind == Kind.LONE:
        return _lone(steps, u)
    if kind == Kind.IN_SYNC_PAIR:
        return _insync(steps, u, offset)
    if kind == Kind.HEAD_ON:
        return _headon(steps, u, entry, spec.radius)
    if kind == Kind.CROSSING:
        return _crossing(steps, u, entry, spec.radius)
    raise ValueError(f"not a group kind: {kind}")


def _quadrant(dx: float, dy: float) -> Region:
    angle = math.atan2(dy, dx)
    if angle > math.pi / 2:
        return Region.LU
    if angle > 0:
        return Region.RU
    if angle > -math.pi / 2:
        return Region.RD
    return Region.LD


def _pair_labels(me: np.ndarray, other: np.ndarray, other_id: int, radius: float) -> List[InteractionInfo]:
    labels = []
    prev_region: Optional[Region] = None
    for t in range(len(me)):
        dx, dy = other[t, 0] - me[t, 0], other[t, 1] - me[t, 1]
        d = math.hypot(dx, dy)
        slots = [EMPTY_SLOT] * 4
        region = None
        if d <= radius:
            region = _quadrant(dx, dy)
            state = InteractionState.IN_SYNC if region == prev_region else InteractionState.CONFLICT
            slots[region] = RegionSlot(state, d, other_id)
        labels.append(InteractionInfo(tuple(slots)))
        prev_region = region
    return labels


def generate(spec: ScenarioSpec) -> LabeledScene:
    rng = np.random.default_rng(spec.seed)
    u = spec.speed * spec.dt
    groups = []
    if spec.kind == Kind.MIXED:
        for g in range(spec.groups):
            kind = Kind(spec.kinds[int(rng.integers(len(spec.kinds)))])
            speed = float(rng.uniform(0.8, 1.6))
            heading = float(rng.uniform(0.0, 2.0 * math.pi))
            mag, ang = float(rng.uniform(0.4, 1.6)), float(rng.uniform(0.0, 2.0 * math.pi))
            offset = (mag * math.cos(ang), mag * math.sin(ang))
            entry = int(rng.integers(4, 8))
            tracks = _group_tracks(kind, spec.steps, speed * spec.dt, spec, offset, entry)
            groups.append((kind, [_place(tr, heading, (g * GROUP_SPACING, 0.0)) for tr in tracks]))
    else:
        tracks = _group_tracks(spec.kind, spec.steps, u, spec, spec.offset, spec.entry_step)
        groups.append((spec.kind, [_place(tr, spec.heading, (0.0, 0.0)) for tr in tracks]))

    positions: Dict[int, np.ndarray] = {}
    expected: Dict[int, List[InteractionInfo]] = {}
    pid = 1
    for _, tracks in groups:
        ids = list(range(pid, pid + len(tracks)))
        pid += len(tracks)
        for i, tr in zip(ids, tracks):
            positions[i] = tr
        if len(tracks) == 1:
            expected[ids[0]] = [InteractionInfo((EMPTY_SLOT,) * 4)] * spec.steps
        else:
            a, b = ids
            expected[a] = _pair_labels(positions[a], positions[b], b, spec.radius)
            expected[b] = _pair_labels(positions[b], positions[a], a, spec.radius)

    if spec.noise > 0:
        noise_rng = np.random.default_rng([spec.seed, 1])
        positions = {i: p + noise_rng.normal(0.0, spec.noise, p.shape) for i, p in positions.items()}
    tracks = {i: {t: Position(float(p[t, 0]), float(p[t, 1])) for t in range(spec.steps)}
              for i, p in positions.items()}
    scene = Scene.from_tracks(tracks, dt=spec.dt, name=f"synth-{spec.kind.value}-{spec.seed}")
    return LabeledScene(scene, expected, spec, [k.value for k, _ in groups])


def verify_labels(ls: LabeledScene, radius: Optional[float] = None, dist_tol: float = 1e-9) -> List[Mismatch]:
    """Diff the interaction module's labels against the construction's labels."""
    if ls.spec.noise != 0:
        raise ValueError("exact label verification needs a noise-free scenario")
    radius = ls.spec.radius if radius is None else radius
    out = []
    for pid, labels in ls.expected.items():
        steps = [s for s, _ in ls.scene.track(pid)]
        actual = extract_walking_states(ls.scene, pid, steps, radius)
        for step, exp, act in zip(steps, labels, actual):
            for r in Region:
                e, a = exp[r], act.interaction[r]
                if (e.state != a.state or e.occupant != a.occupant
                        or abs(e.distance - a.distance) > dist_tol):
                    out.append(Mismatch(pid, step, r, e, a))
    return out


def mixed_scenes(count: int, seed: int = 0, steps: int = 20, groups: int = 4,
                 kinds: Sequence[str] = ("lone", "insync", "headon", "crossing"),
                 noise: float = 0.0) -> List[LabeledScene]:
    return [generate(ScenarioSpec(kind=Kind.MIXED, steps=steps, seed=seed * 100_003 + i, groups=groups,
                                  kinds=tuple(kinds), noise=noise))
            for i in range(count)]
