"""Raw trajectory ingestion, time-grid resampling and neighbor queries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Sequence, TextIO, Tuple

SCENE_FORMAT = "insyn-scene"
SCENE_VERSION = 1
DEFAULT_DT = 0.4


class SceneError(ValueError):
    pass


class ParseError(SceneError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AgentNotPresent(SceneError):
    pass


class Position(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class RawRecord:
    frame_id: int
    ped_id: int
    x: float
    y: float


@dataclass
class Scene:
    """Pedestrian positions on a uniform time grid.

    ``frames`` maps step -> {ped_id: Position}; ``ped_index`` maps
    ped_id -> [(step, Position), ...] with contiguous steps.
    """

    dt: float
    frames: Dict[int, Dict[int, Position]] = field(default_factory=dict)
    ped_index: Dict[int, List[Tuple[int, Position]]] = field(default_factory=dict)
    name: str = "scene"

    @classmethod
    def from_tracks(cls, tracks: Dict[int, Dict[int, Position]], dt: float = DEFAULT_DT,
                    name: str = "scene") -> "Scene":
        """Build from ``{ped_id: {step: position}}``; tracks must already be contiguous."""
        if dt <= 0:
            raise SceneError("dt must be positive")
        frames: Dict[int, Dict[int, Position]] = {}
        ped_index: Dict[int, List[Tuple[int, Position]]] = {}
        for pid in sorted(tracks):
            steps = sorted(tracks[pid])
            if not steps:
                continue
            if steps[-1] - steps[0] + 1 != len(steps):
                raise SceneError(f"track {pid} is not contiguous")
            ped_index[pid] = []
            for s in steps:
                p = Position(float(tracks[pid][s][0]), float(tracks[pid][s][1]))
                if not (math.isfinite(p.x) and math.isfinite(p.y)):
                    raise SceneError(f"non-finite position for ped {pid} at step {s}")
                ped_index[pid].append((s, p))
                frames.setdefault(s, {})[pid] = p
        frames = {s: frames[s] for s in sorted(frames)}
        return cls(dt=dt, frames=frames, ped_index=ped_index, name=name)

    @property
    def steps(self) -> List[int]:
        return list(self.frames)

    @property
    def num_steps(self) -> int:
        return (max(self.frames) + 1) if self.frames else 0

    def present(self, ped_id: int, step: int) -> bool:
        return ped_id in self.frames.get(step, {})

    def position(self, ped_id: int, step: int) -> Position:
        try:
            return self.frames[step][ped_id]
        except KeyError:
            raise AgentNotPresent(f"ped {ped_id} not present at step {step}") from None

    def track(self, ped_id: int) -> List[Tuple[int, Position]]:
        return self.ped_index[ped_id]

    def transformed(self, fn) -> "Scene":
        """Copy with every position mapped through ``fn(x, y) -> (x, y)``."""
        tracks = {pid: {s: fn(p.x, p.y) for s, p in tr} for pid, tr in self.ped_index.items()}
        return Scene.from_tracks(tracks, dt=self.dt, name=self.name)


def parse_dataset(stream: TextIO | Iterable[str],
                  columns: Sequence[int] = (0, 1, 2, 3)) -> List[RawRecord]:
    """Parse whitespace-delimited trajectory lines.

    ``columns`` gives the indices of the frame, pedestrian id, x and y fields.
    Blank lines and lines starting with ``#`` are skipped.
    """
    if len(columns) != 4:
        raise ValueError("columns must name frame, id, x, y")
    fc, ic, xc, yc = columns
    need = max(columns) + 1
    records: List[RawRecord] = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < need:
            raise ParseError(f"expected at least {need} fields, got {len(parts)}", lineno)
        try:
            frame_f = float(parts[fc])
            pid_f = float(parts[ic])
            x = float(parts[xc])
            y = float(parts[yc])
        except ValueError as exc:
            raise ParseError(f"malformed number ({exc})", lineno) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("non-finite coordinate", lineno)
        if not (frame_f.is_integer() and pid_f.is_integer()):
            raise ParseError("frame and id must be integral", lineno)
        frame, pid = int(frame_f), int(pid_f)
        if (frame, pid) in seen:
            raise ParseError(f"duplicate record for frame {frame}, ped {pid}", lineno)
        seen.add((frame, pid))
        records.append(RawRecord(frame, pid, x, y))
    return records


def build_scene(records: Sequence[RawRecord], frame_stride: int = 1, dt: float = DEFAULT_DT,
                name: str = "scene") -> Scene:
    """Keep frames divisible by ``frame_stride``, renumber them as steps and
    repair tracks: a single missing step is linearly interpolated, longer gaps
    split the track and the tail gets a fresh pedestrian id."""
    if frame_stride < 1:
        raise SceneError("frame_stride must be >= 1")
    if dt <= 0:
        raise SceneError("dt must be positive")
    kept = [r for r in records if r.frame_id % frame_stride == 0]
    if not kept:
        raise SceneError("empty-scene: no records after stride filtering")
    first = min(r.frame_id for r in kept)

    raw_tracks: Dict[int, Dict[int, Position]] = {}
    for r in kept:
        raw_tracks.setdefault(r.ped_id, {})[(r.frame_id - first) // frame_stride] = Position(r.x, r.y)

    next_id = max(raw_tracks) + 1
    tracks: Dict[int, Dict[int, Position]] = {}
    for pid in sorted(raw_tracks):
        pts = raw_tracks[pid]
        steps = sorted(pts)
        current_id = pid
        current = {steps[0]: pts[steps[0]]}
        for prev, s in zip(steps, steps[1:]):
            gap = s - prev
            if gap == 2:
                a, b = pts[prev], pts[s]
                current[prev + 1] = Position((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
            elif gap > 2:
                tracks[current_id] = current
                current_id = next_id
                next_id += 1
                current = {}
            current[s] = pts[s]
        tracks[current_id] = current
    return Scene.from_tracks(tracks, dt=dt, name=name)


def scene_records(scene: Scene) -> List[RawRecord]:
    """Flatten a scene back to records (frame_id == step), step-major order."""
    return [RawRecord(s, pid, p.x, p.y) for s, peds in scene.frames.items()
            for pid, p in sorted(peds.items())]


def neighbors_at(scene: Scene, step: int, agent: int, radius: float) -> List[Tuple[int, Position]]:
    """Other pedestrians within ``radius`` of ``agent`` at ``step``, nearest first
    (ties by id)."""
    me = scene.position(agent, step)
    found = []
    for pid, p in scene.frames[step].items():
        if pid == agent:
            continue
        d = math.hypot(p.x - me.x, p.y - me.y)
        if d <= radius:
            found.append((d, pid, p))
    found.sort(key=lambda t: (t[0], t[1]))
    return [(pid, p) for _, pid, p in found]


def format_float(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_scene(scene: Scene, stream: TextIO) -> None:
    stream.write(f"#{SCENE_FORMAT} v{SCENE_VERSION}\n")
    stream.write(f"#name {scene.name}\n")
    stream.write(f"#dt {format_float(scene.dt)}\n")
    stream.write(f"#steps {scene.num_steps}\n")
    for r in scene_records(scene):
        stream.write(f"{r.frame_id} {r.ped_id} {format_float(r.x)} {format_float(r.y)}\n")


def read_scene(stream: TextIO) -> Scene:
    header: Dict[str, str] = {}
    tracks: Dict[int, Dict[int, Position]] = {}
    first = True
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if first:
            if line != f"#{SCENE_FORMAT} v{SCENE_VERSION}":
                raise ParseError(f"not an {SCENE_FORMAT} v{SCENE_VERSION} file", lineno)
            first = False
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            header[key] = value
            continue
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError("expected 'step ped_id x y'", lineno)
        try:
            step, pid, x, y = int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        tracks.setdefault(pid, {})[step] = Position(x, y)
    if first:
        raise ParseError("empty scene file")
    try:
        dt = float(header["dt"])
    except (KeyError, ValueError):
        raise ParseError("missing or invalid #dt header") from None
    scene = Scene.from_tracks(tracks, dt=dt, name=header.get("name", "scene"))
    if "steps" in header and int(header["steps"]) != scene.num_steps:
        raise ParseError("step count in header does not match body")
    return scene
