"""Displacement metrics and the best-of-K evaluation harness."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np
import torch

from .model import Ablation, InSyn, collate, generator_decode, seqcvae_sample
from .nn import make_generator
from .preprocess import PRED_LEN, SampleWindow


def _check_pair(pred: np.ndarray, truth: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def ade(pred, truth) -> float:
    """Mean Euclidean distance over all predicted steps."""
    pred, truth = _check_pair(pred, truth)
    return float(np.linalg.norm(pred - truth, axis=-1).mean())


def fde(pred_final, truth_final) -> float:
    pred, truth = _check_pair(pred_final, truth_final)
    return float(np.linalg.norm(pred - truth))


def ide(pred_first, truth_first) -> float:
    pred, truth = _check_pair(pred_first, truth_first)
    return float(np.linalg.norm(pred - truth))


@dataclass
class PredictionSet:
    scene: str
    agent: int
    start: int
    goals: np.ndarray         # (K, 2)
    trajectories: np.ndarray  # (K, 12, 2)

    def __post_init__(self):
        if len(self.goals) != len(self.trajectories):
            raise ValueError("goal and trajectory counts differ")

    @property
    def k(self) -> int:
        return len(self.goals)


@dataclass
class BestOfK:
    """Metrics of the ADE-selected sample plus each metric's own minimum."""

    index: int
    ade: float
    fde: float
    ide: float
    min_fde: float
    min_ide: float


def best_of_k(trajectories: np.ndarray, truth: np.ndarray) -> BestOfK:
    trajectories = np.asarray(trajectories, dtype=np.float64)
    if trajectories.ndim != 3 or len(trajectories) < 1:
        raise ValueError("expected (K, steps, 2) trajectories with K >= 1")
    ades = [ade(t, truth) for t in trajectories]
    fdes = [fde(t[-1], truth[-1]) for t in trajectories]
    ides = [ide(t[0], truth[0]) for t in trajectories]
    i = int(np.argmin(ades))
    return BestOfK(i, ades[i], fdes[i], ides[i], min(fdes), min(ides))


@dataclass
class WindowResult:
    scene: str
    agent: int
    start: int
    best: BestOfK


@dataclass
class MetricReport:
    ade: float
    fde: float
    ide: float
    min_fde: float
    min_ide: float
    rows: List[WindowResult] = field(default_factory=list)
    per_scene: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: List[WindowResult]) -> "MetricReport":
        if not rows:
            raise ValueError("no windows evaluated")

        def mean(rs, attr):
            return float(np.mean([getattr(r.best, attr) for r in rs]))

        per_scene = {}
        for scene in sorted({r.scene for r in rows}):
            rs = [r for r in rows if r.scene == scene]
            per_scene[scene] = {"count": len(rs), **{m: mean(rs, m) for m in ("ade", "fde", "ide")}}
        return cls(mean(rows, "ade"), mean(rows, "fde"), mean(rows, "ide"),
                   mean(rows, "min_fde"), mean(rows, "min_ide"), rows, per_scene)


def window_latents(seed: int, index: int, k: int, latent_dim: int) -> torch.Tensor:
    """Per-window latent draws, independent of batching."""
    g = make_generator(seed * 1_000_003 + index)
    return torch.randn((k, latent_dim), generator=g, dtype=torch.float64)


@torch.no_grad()
def predict_windows(model: InSyn, windows: Sequence[SampleWindow], k: int = 20, seed: int = 0,
                    ablation: Ablation = Ablation(), oracle: bool = False,
                    batch_size: int = 512, goals: Optional[np.ndarray] = None) -> List[PredictionSet]:
    """Sample ``k`` goals per window and roll out one trajectory per goal.

    ``goals`` of shape (N, K, 2) bypasses the sampler. ``oracle`` replaces the
    first sample by the ground truth, a sanity mode for the harness.
    """
    if k < 1:
        raise ValueError("K must be at least 1")
    model.eval()
    dtype = next(model.parameters()).dtype
    data = collate(windows, ablation, dtype=dtype)
    n = len(windows)
    if goals is None:
        z = torch.stack([window_latents(seed, i, k, model.cvae.latent_dim) for i in range(n)]).to(dtype)
        _, c_dec = model.cvae.conditions(data["obs"])
        sampled = model.cvae.decode(z, c_dec, data["obs"])
    else:
        sampled = torch.as_tensor(np.asarray(goals), dtype=dtype)
        if sampled.shape[:2] != (n, k):
            raise ValueError("goals must have shape (N, K, 2)")
    flat_goals = sampled.reshape(n * k, 2)
    rep = {key: v.repeat_interleave(k, dim=0) for key, v in data.items()}
    trajs = []
    for i in range(0, n * k, batch_size):
        sl = slice(i, i + batch_size)
        trajs.append(generator_decode(model, rep["obs"][sl], rep["states"][sl], rep["feats"][sl],
                                      flat_goals[sl], use_ssos=ablation.use_ssos))
    trajs = torch.cat(trajs).reshape(n, k, PRED_LEN, 2).double().numpy()
    goals_np = sampled.double().numpy()
    out = []
    for i, w in enumerate(windows):
        t, g = trajs[i].copy(), goals_np[i].copy()
        if oracle:
            t[0] = w.future
            g[0] = w.goal
        out.append(PredictionSet(w.scene, w.agent, w.start, g, t))
    return out


def evaluate_split(model: InSyn, windows: Sequence[SampleWindow], k: int = 20, seed: int = 0,
                   ablation: Ablation = Ablation(), oracle: bool = False,
                   goals: Optional[np.ndarray] = None):
    """Best-of-K metrics over ``windows``; returns ``(MetricReport, prediction sets)``."""
    psets = predict_windows(model, windows, k, seed, ablation, oracle, goals=goals)
    rows = [WindowResult(w.scene, w.agent, w.start, best_of_k(p.trajectories, w.future))
            for w, p in zip(windows, psets)]
    return MetricReport.from_rows(rows), psets


def write_report(report: MetricReport, stream: TextIO, config_hash: str = "") -> None:
    stream.write(f"# config {config_hash}\n")
    stream.write(f"# ade {report.ade:.6f} fde {report.fde:.6f} ide {report.ide:.6f} "
                 f"min_fde {report.min_fde:.6f} min_ide {report.min_ide:.6f}\n")
    for scene, m in report.per_scene.items():
        stream.write(f"# scene {scene} count {m['count']} ade {m['ade']:.6f} "
                     f"fde {m['fde']:.6f} ide {m['ide']:.6f}\n")
    stream.write("scene,agent,start,ade,fde,ide,min_fde,min_ide\n")
    for r in report.rows:
        b = r.best
        stream.write(f"{r.scene},{r.agent},{r.start},{b.ade:.6f},{b.fde:.6f},{b.ide:.6f},"
                     f"{b.min_fde:.6f},{b.min_ide:.6f}\n")


def write_plot_dump(psets: Sequence[PredictionSet], stream: TextIO, origins=None) -> None:
    """One CSV record per sample: goal then the 12 trajectory points.

    Coordinates are window-local unless ``origins`` (one per set) is given.
    """
    cols = ",".join(f"x{t},y{t}" for t in range(1, PRED_LEN + 1))
    stream.write(f"scene,agent,start,sample,goal_x,goal_y,{cols}\n")
    for j, p in enumerate(psets):
        shift = np.zeros(2) if origins is None else np.asarray(origins[j])
        for s in range(p.k):
            g = p.goals[s] + shift
            pts = ",".join(f"{v:.6f}" for v in (p.trajectories[s] + shift).ravel())
            stream.write(f"{p.scene},{p.agent},{p.start},{s},{g[0]:.6f},{g[1]:.6f},{pts}\n")
