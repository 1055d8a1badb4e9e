"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .interaction import InteractionState
from .preprocess import OBS_LEN, PRED_LEN, SampleWindow


def check_window(w) -> SampleWindow:
    if not isinstance(w, SampleWindow):
        raise TypeError(f"expected SampleWindow, got {type(w).__name__}")
    if w.obs.shape != (OBS_LEN, 2) or w.future.shape != (PRED_LEN, 2):
        raise ValueError(f"window {w.scene}/{w.agent}/{w.start}: bad trajectory shape")
    for name in ("states", "distances", "occupants", "states_flat", "distances_flat", "occupants_flat"):
        if getattr(w, name).shape != (OBS_LEN, 4):
            raise ValueError(f"window {w.scene}/{w.agent}/{w.start}: {name} must be ({OBS_LEN}, 4)")
    if not (np.isfinite(w.obs).all() and np.isfinite(w.future).all() and np.isfinite(w.distances).all()):
        raise ValueError(f"window {w.scene}/{w.agent}/{w.start}: non-finite values")
    if w.states.min() < 0 or w.states.max() > max(InteractionState):
        raise ValueError(f"window {w.scene}/{w.agent}/{w.start}: invalid interaction state")
    return w


def check_windows(X) -> List[SampleWindow]:
    if isinstance(X, SampleWindow):
        raise TypeError("expected a sequence of windows, got a single window")
    X = list(X)
    if not X:
        raise ValueError("no windows given")
    return [check_window(w) for w in X]
