"""Sample windows: slicing, origin shift, augmentation and feature scaling."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, TextIO

import numpy as np

from .interaction import (
    DEFAULT_RADIUS,
    LARGE_D,
    ROTATE_CCW,
    REGIONS,
    InteractionInfo,
    InteractionState,
    RegionSlot,
    WalkingState,
    extract_walking_states,
)
from .scene import AgentNotPresent, Position, Scene

OBS_LEN = 8
PRED_LEN = 12
SEQ_LEN = OBS_LEN + PRED_LEN

SAMPLES_FORMAT = "insyn-samples"
SAMPLES_VERSION = 1

# slot permutation per quarter turn: new_slots[PERM[k][r]] = old_slots[r]
_PERMS = [np.arange(4)]
for _ in range(3):
    _PERMS.append(np.array([ROTATE_CCW[REGIONS[int(_PERMS[-1][r])]] for r in range(4)]))


@dataclass(frozen=True, eq=False)
class SampleWindow:
    """One 8+12 step example for a single agent.

    Positions are origin-shifted so ``obs[0] == (0, 0)``. Interaction arrays are
    ``(8, 4)`` over regions LU, RU, LD, RD; ``*_flat`` hold the direction-free
    variant (nearest neighbor overall in slot 0). ``features`` is filled in by
    :func:`apply_stats`.
    """

    scene: str
    agent: int
    start: int
    obs: np.ndarray
    future: np.ndarray
    origin: np.ndarray
    states: np.ndarray
    distances: np.ndarray
    occupants: np.ndarray
    states_flat: np.ndarray
    distances_flat: np.ndarray
    occupants_flat: np.ndarray
    features: Optional[np.ndarray] = None
    features_flat: Optional[np.ndarray] = None

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([self.obs, self.future], axis=0)

    @property
    def goal(self) -> np.ndarray:
        return self.future[-1]

    def walking_states(self) -> List[WalkingState]:
        out = []
        for t in range(OBS_LEN):
            slots = []
            for r in range(4):
                occ = int(self.occupants[t, r])
                slots.append(RegionSlot(InteractionState(int(self.states[t, r])),
                                        float(self.distances[t, r]), None if occ < 0 else occ))
            out.append(WalkingState(Position(*map(float, self.obs[t])), InteractionInfo(tuple(slots))))
        return out


def windows_equal(a: SampleWindow, b: SampleWindow, atol: float = 0.0) -> bool:
    if (a.scene, a.agent, a.start) != (b.scene, b.agent, b.start):
        return False
    for name in ("obs", "future", "origin", "distances", "distances_flat", "features", "features_flat"):
        x, y = getattr(a, name), getattr(b, name)
        if (x is None) != (y is None):
            return False
        if x is not None and not np.allclose(x, y, rtol=0.0, atol=atol):
            return False
    return all(np.array_equal(getattr(a, n), getattr(b, n))
               for n in ("states", "occupants", "states_flat", "occupants_flat"))


def _slot_arrays(states: Sequence[WalkingState]):
    st = np.array([[int(sl.state) for sl in ws.interaction.slots] for ws in states], dtype=np.int64)
    d = np.array([[sl.distance for sl in ws.interaction.slots] for ws in states], dtype=np.float64)
    occ = np.array([[-1 if sl.occupant is None else sl.occupant for sl in ws.interaction.slots]
                    for ws in states], dtype=np.int64)
    return st, d, occ


def _build_window(scene: Scene, pid: int, track, i: int, radius: float, length: int) -> SampleWindow:
    start = track[i][0]
    obs_steps = range(start, start + OBS_LEN)
    full = extract_walking_states(scene, pid, obs_steps, radius, partition=True)
    flat = extract_walking_states(scene, pid, obs_steps, radius, partition=False)
    pts = np.full((SEQ_LEN, 2), np.nan)
    pts[:length] = [track[i + j][1] for j in range(length)]
    origin = pts[0].copy()
    pts = pts - origin
    st, d, occ = _slot_arrays(full)
    stf, df, occf = _slot_arrays(flat)
    return SampleWindow(scene.name, pid, start, pts[:OBS_LEN], pts[OBS_LEN:], origin,
                        st, d, occ, stf, df, occf)


def window_scene(scene: Scene, radius: float = DEFAULT_RADIUS) -> List[SampleWindow]:
    """Every 20-step stretch of every track, stride 1."""
    windows = []
    for pid, track in scene.ped_index.items():
        for i in range(len(track) - SEQ_LEN + 1):
            windows.append(_build_window(scene, pid, track, i, radius, SEQ_LEN))
    return windows


def window_at(scene: Scene, agent: int, start: int, radius: float = DEFAULT_RADIUS) -> SampleWindow:
    """The window of ``agent`` beginning at ``start``.

    Only the 8 observed steps are required; future steps the track does not
    cover are NaN, so callers can predict without ground truth.
    """
    if agent not in scene.ped_index:
        raise AgentNotPresent(f"no pedestrian {agent} in scene {scene.name}")
    track = scene.track(agent)
    steps = [s for s, _ in track]
    if start not in steps:
        raise ValueError(f"agent {agent} is not present at step {start}")
    i = steps.index(start)
    length = min(SEQ_LEN, len(track) - i)
    if length < OBS_LEN:
        raise ValueError(f"agent {agent} has fewer than {OBS_LEN} steps from step {start}")
    return _build_window(scene, agent, track, i, radius, length)


def count_windows(scene: Scene) -> int:
    return sum(max(0, len(track) - SEQ_LEN + 1) for track in scene.ped_index.values())


def rotate_points(points: np.ndarray, k: int) -> np.ndarray:
    """Rotate by ``k`` quarter turns counter-clockwise; exact in floating point."""
    p = np.asarray(points, dtype=np.float64)
    for _ in range(k % 4):
        p = np.stack([-p[..., 1], p[..., 0]], axis=-1)
    return p + 0.0


def rotate_window(w: SampleWindow, k: int) -> SampleWindow:
    if k not in (0, 1, 2, 3):
        raise ValueError("k must be one of 0, 1, 2, 3")
    if k == 0:
        return w
    perm = _PERMS[k]

    def permute(a):
        if a is None:
            return None
        out = np.empty_like(a)
        out[:, perm] = a
        return out

    return replace(w, obs=rotate_points(w.obs, k), future=rotate_points(w.future, k),
                   origin=rotate_points(w.origin, k), states=permute(w.states),
                   distances=permute(w.distances), occupants=permute(w.occupants),
                   features=permute(w.features))


def scale_window(w: SampleWindow, factor: float) -> SampleWindow:
    """Spatial scaling; the empty-slot sentinel distance is left untouched."""
    if not factor > 0:
        raise ValueError("scale factor must be positive")

    def scale_d(d, st):
        return np.where(st == InteractionState.NO_NEIGHBOR, LARGE_D, d * factor)

    return replace(w, obs=w.obs * factor, future=w.future * factor, origin=w.origin * factor,
                   distances=scale_d(w.distances, w.states),
                   distances_flat=scale_d(w.distances_flat, w.states_flat),
                   features=None, features_flat=None)


def augment(windows: Iterable[SampleWindow], rotate: bool = True, scale: bool = True,
            scale_factor: float = 2.0) -> List[SampleWindow]:
    out = []
    ks = (0, 1, 2, 3) if rotate else (0,)
    for w in windows:
        bases = [w, scale_window(w, scale_factor)] if scale else [w]
        for b in bases:
            out.extend(rotate_window(b, k) for k in ks)
    return out


def distance_feature(d):
    """Reciprocal distance, so far neighbors contribute little."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("distance must be positive")
    out = 1.0 / arr
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class FeatureStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if np.any(self.min > self.max):
            raise ValueError("min must not exceed max")

    def normalize(self, values: np.ndarray, pooled: bool = False) -> np.ndarray:
        lo, hi = (self.min.min(), self.max.max()) if pooled else (self.min, self.max)
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (values - lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


def fit_stats(train: Sequence[SampleWindow]) -> FeatureStats:
    if len(train) == 0:
        raise ValueError("cannot fit feature statistics on an empty training set")
    feats = np.concatenate([distance_feature(w.distances) for w in train], axis=0)
    return FeatureStats(feats.min(axis=0), feats.max(axis=0))


def apply_stats(w: SampleWindow, stats: FeatureStats) -> SampleWindow:
    return replace(w, features=stats.normalize(distance_feature(w.distances)),
                   features_flat=stats.normalize(distance_feature(w.distances_flat), pooled=True))


# -- processed-sample file ---------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v: .17e}"


def write_samples(windows: Sequence[SampleWindow], stats: Optional[FeatureStats], stream: TextIO,
                  config_hash: str = "") -> None:
    stream.write(f"#{SAMPLES_FORMAT} v{SAMPLES_VERSION}\n")
    stream.write(f"#config {config_hash}\n")
    stream.write(f"#count {len(windows)}\n")
    if stats is not None:
        stream.write("#stats_min " + " ".join(_fmt(v) for v in stats.min) + "\n")
        stream.write("#stats_max " + " ".join(_fmt(v) for v in stats.max) + "\n")
    for w in windows:
        head = f"{w.scene.replace(' ', '_')} {w.agent:8d} {w.start:8d}"
        floats = np.concatenate([w.origin, w.obs.ravel(), w.future.ravel(),
                                 w.distances.ravel(), w.distances_flat.ravel()])
        ints = np.concatenate([w.states.ravel(), w.occupants.ravel(),
                               w.states_flat.ravel(), w.occupants_flat.ravel()])
        stream.write(head + " " + " ".join(_fmt(v) for v in floats) + " "
                     + " ".join(f"{int(v):8d}" for v in ints) + "\n")


_N_FLOAT = 2 + 2 * OBS_LEN + 2 * PRED_LEN + 4 * OBS_LEN * 2
_N_INT = 4 * OBS_LEN * 4


def read_samples(stream: TextIO):
    """Returns ``(windows, stats, header)``; windows come back un-normalized."""
    header = {}
    windows = []
    first = stream.readline().rstrip("\n")
    if first != f"#{SAMPLES_FORMAT} v{SAMPLES_VERSION}":
        raise ValueError(f"not an {SAMPLES_FORMAT} v{SAMPLES_VERSION} file")
    for lineno, line in enumerate(stream, start=2):
        if line.startswith("#"):
            key, _, value = line[1:].rstrip("\n").partition(" ")
            header[key] = value
            continue
        parts = line.split()
        if len(parts) != 3 + _N_FLOAT + _N_INT:
            raise ValueError(f"line {lineno}: malformed sample record")
        fl = np.array([float(v) for v in parts[3:3 + _N_FLOAT]])
        it = np.array([int(v) for v in parts[3 + _N_FLOAT:]], dtype=np.int64)
        o = 2
        obs = fl[o:o + 2 * OBS_LEN].reshape(OBS_LEN, 2); o += 2 * OBS_LEN
        fut = fl[o:o + 2 * PRED_LEN].reshape(PRED_LEN, 2); o += 2 * PRED_LEN
        dist = fl[o:o + 4 * OBS_LEN].reshape(OBS_LEN, 4); o += 4 * OBS_LEN
        distf = fl[o:].reshape(OBS_LEN, 4)
        st, occ, stf, occf = (it[i * 32:(i + 1) * 32].reshape(OBS_LEN, 4) for i in range(4))
        windows.append(SampleWindow(parts[0], int(parts[1]), int(parts[2]), obs, fut, fl[:2].copy(),
                                    st, dist, occ, stf, distf, occf))
    if "count" in header and int(header["count"]) != len(windows):
        raise ValueError("sample count in header does not match body")
    stats = None
    if "stats_min" in header:
        stats = FeatureStats(np.array([float(v) for v in header["stats_min"].split()]),
                             np.array([float(v) for v in header["stats_max"].split()]))
    return windows, stats, header
