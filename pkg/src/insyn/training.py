"""Training loops for the encoder-generator pair and for the goal sampler."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import torch

from .model import (
    Ablation,
    DivergedError,
    InSyn,
    LossWeights,
    collate,
    cvae_loss,
    generator_loss,
)
from .nn import make_generator
from .preprocess import SampleWindow

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_generator: float = 1e-4
    lr_cvae: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: Ablation = field(default_factory=Ablation)
    clip_norm: Optional[float] = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr_generator <= 0 or self.lr_cvae <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: List[torch.Tensor]
    v: List[torch.Tensor]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[torch.Tensor], **kw) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params], **kw)


@torch.no_grad()
def adam_step(params: Sequence[torch.Tensor], grads: Sequence[Optional[torch.Tensor]],
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must align")
    for g in grads:
        if g is not None and not torch.isfinite(g).all():
            raise DivergedError("non-finite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != m.shape:
            raise ValueError("moment shape does not match parameter")
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))


class Adam:
    def __init__(self, params: Sequence[torch.Tensor], lr: float, clip_norm: Optional[float] = None):
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm
        self.state = AdamState.zeros_like(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update from ``p.grad``; returns the pre-clip gradient norm."""
        grads = [p.grad for p in self.params]
        norm = clip_gradients(grads, self.clip_norm)
        adam_step(self.params, grads, self.state, self.lr)
        return norm


@torch.no_grad()
def clip_gradients(grads: Sequence[Optional[torch.Tensor]], max_norm: Optional[float]) -> float:
    present = [g for g in grads if g is not None]
    if not present:
        return 0.0
    norm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in present))
    if not math.isfinite(norm):
        raise DivergedError("non-finite gradient norm")
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in present:
            g.mul_(scale)
    return norm


# -- loops -------------------------------------------------------------------

@dataclass
class LossRecord:
    epoch: int
    component: str
    term: str
    value: float


@dataclass
class TrainResult:
    model: InSyn
    curve: List[LossRecord]

    def series(self, component: str, term: str) -> List[float]:
        return [r.value for r in self.curve if r.component == component and r.term == term]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield torch.as_tensor(order[i:i + batch_size])


def _run_epochs(component: str, n: int, config: TrainConfig, lr: float, params,
                loss_fn: Callable[[torch.Tensor], Tuple[torch.Tensor, Dict[str, torch.Tensor]]],
                epochs: Optional[int], on_epoch) -> List[LossRecord]:
    opt = Adam(params, lr, config.clip_norm)
    rng = np.random.default_rng(config.seed)
    curve: List[LossRecord] = []
    for epoch in range(1, (epochs or config.epochs) + 1):
        sums: Dict[str, float] = {}
        for idx in _batches(n, config.batch_size, rng):
            opt.zero_grad()
            total, terms = loss_fn(idx)
            total.backward()
            opt.step()
            for key, val in {"total": total, **terms}.items():
                sums[key] = sums.get(key, 0.0) + float(val.detach()) * len(idx)
        for key, val in sums.items():
            curve.append(LossRecord(epoch, component, key, val / n))
        log.debug("%s epoch %d loss %.6f", component, epoch, sums["total"] / n)
        if on_epoch is not None:
            on_epoch(epoch)
    return curve


def train_generator(windows: Sequence[SampleWindow], config: TrainConfig, model: InSyn,
                    epochs: Optional[int] = None, on_epoch=None) -> TrainResult:
    """Teacher-forced training of the interaction encoder and trajectory generator."""
    if len(windows) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(config.seed)
    data = collate(windows, config.ablation, dtype=config.torch_dtype)
    ssos = config.ablation.use_ssos

    def loss_fn(idx):
        batch = {k: v[idx] for k, v in data.items()}
        total, recon, pred = generator_loss(model, batch, config.weights, use_ssos=ssos)
        return total, {"recon": recon, "pred": pred}

    model.train()
    curve = _run_epochs("generator", len(windows), config, config.lr_generator,
                        model.generator_parameters(), loss_fn, epochs, on_epoch)
    model.eval()
    return TrainResult(model, curve)


def train_seqcvae(windows: Sequence[SampleWindow], config: TrainConfig, model: InSyn,
                  epochs: Optional[int] = None, on_epoch=None) -> TrainResult:
    if len(windows) == 0:
        raise ValueError("empty training set")
    dtype = config.torch_dtype
    obs = torch.tensor(np.stack([w.obs for w in windows]), dtype=dtype)
    goal = torch.tensor(np.stack([w.goal for w in windows]), dtype=dtype)
    noise = make_generator(config.seed + 7919)

    def loss_fn(idx):
        total, recon, kl = cvae_loss(model, obs[idx], goal[idx], config.weights.kl, generator=noise)
        return total, {"recon": recon, "kl": kl}

    model.train()
    curve = _run_epochs("cvae", len(windows), config, config.lr_cvae, model.cvae_parameters(),
                        loss_fn, epochs, on_epoch)
    model.eval()
    return TrainResult(model, curve)


def write_curve(records: Sequence[LossRecord], stream: TextIO) -> None:
    stream.write("epoch,component,term,value\n")
    for r in records:
        stream.write(f"{r.epoch},{r.component},{r.term},{r.value:.10e}\n")
