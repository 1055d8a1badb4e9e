import numpy as np
import pytest
import torch

from insyn import preprocess as pp
from insyn.scene import Position, Scene

torch.set_num_threads(1)


def straight_scene(tracks, dt=0.4, name="toy"):
    """``tracks``: {pid: (start_step, length, (x0, y0), (vx, vy))}."""
    out = {}
    for pid, (start, length, p0, v) in tracks.items():
        out[pid] = {start + t: Position(p0[0] + v[0] * t, p0[1] + v[1] * t) for t in range(length)}
    return Scene.from_tracks(out, dt=dt, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mixed_windows():
    from insyn.synth import mixed_scenes
    ws = []
    for ls in mixed_scenes(6, seed=3):
        ws += pp.window_scene(ls.scene)
    stats = pp.fit_stats(ws)
    return [pp.apply_stats(w, stats) for w in ws]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
