"""InSyn network: interaction encoder, trajectory generator and goal sampler."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .nn import (
    Dense,
    DecoderBlock,
    Embedding,
    EncoderBlock,
    LSTMCell,
    MLP,
    ShapeError,
    Tensor,
    make_generator,
    maxpool_axis,
    positional_encoding,
)
from .preprocess import OBS_LEN, PRED_LEN, SEQ_LEN, SampleWindow

NUM_STATES = 3
GOAL_INDEX = SEQ_LEN - 1


class DivergedError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    model_dim: int = 128
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ff_dim: int = 256
    neighbor_dim: int = 128
    cvae_hidden: int = 256
    latent_dim: int = 256
    cvae_condition_dim: int = 64
    cvae_expand: Tuple[int, ...] = (64, 256)
    cvae_posterior: Tuple[int, ...] = (256,)
    cvae_decoder: Tuple[int, ...] = (256, 64)
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = cls.__dataclass_fields__
        unknown = set(d) - set(fields)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class LossWeights:
    recon: float = 1.0
    pred: float = 1.0
    kl: float = 5.0

    def __post_init__(self):
        if min(self.recon, self.pred, self.kl) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class Ablation:
    use_region_partition: bool = True
    use_interaction_state: bool = True
    use_ssos: bool = True

    @classmethod
    def named(cls, name: Optional[str]) -> "Ablation":
        table = {None: cls(), "none": cls(), "full": cls(),
                 "wo-rp": cls(use_region_partition=False),
                 "wo-is": cls(use_interaction_state=False),
                 "sos": cls(use_ssos=False)}
        if name not in table:
            raise ValueError(f"unknown ablation {name!r}")
        return table[name]


# -- batching ----------------------------------------------------------------

def collate(windows: Sequence[SampleWindow], ablation: Ablation = Ablation(),
            dtype=torch.float32) -> Dict[str, Tensor]:
    """Stack windows into tensors, applying the interaction ablations."""
    if any(w.features is None for w in windows):
        raise ValueError("windows must be normalized with apply_stats first")
    if ablation.use_region_partition:
        states = np.stack([w.states for w in windows])
        feats = np.stack([w.features for w in windows])
    else:
        states = np.stack([w.states_flat for w in windows])
        feats = np.stack([w.features_flat for w in windows])
    if not ablation.use_interaction_state:
        states = np.zeros_like(states)
    return {
        "obs": torch.tensor(np.stack([w.obs for w in windows]), dtype=dtype),
        "future": torch.tensor(np.stack([w.future for w in windows]), dtype=dtype),
        "states": torch.tensor(states, dtype=torch.int64),
        "feats": torch.tensor(feats, dtype=dtype),
    }


# -- components --------------------------------------------------------------

class NeighborEncoder(nn.Module):
    """State embedding times a sigmoid distance gate, max-pooled over regions."""

    def __init__(self, dim: int, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.embedding = Embedding(NUM_STATES, dim, generator, dtype=dtype)
        self.gate = Dense(1, dim, generator, dtype=dtype)

    def region_vectors(self, states: Tensor, feats: Tensor) -> Tensor:
        if states.shape[-1] != 4 or feats.shape[-1] != 4:
            raise ShapeError("expected four region slots")
        return self.embedding(states) * torch.sigmoid(self.gate(feats.unsqueeze(-1)))

    def forward(self, states: Tensor, feats: Tensor) -> Tensor:
        return maxpool_axis(self.region_vectors(states, feats), axis=-2)[0]


class InteractionEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        d = cfg.model_dim
        self.neighbor = NeighborEncoder(cfg.neighbor_dim, generator, dtype=dtype)
        self.lstm = LSTMCell(cfg.neighbor_dim, cfg.neighbor_dim, generator, dtype=dtype)
        self.token = Dense(3, d, generator, dtype=dtype)
        self.fuse = Dense(d + cfg.neighbor_dim, d, generator, dtype=dtype)
        self.blocks = nn.ModuleList(EncoderBlock(d, cfg.heads, cfg.ff_dim, generator, dtype=dtype)
                                    for _ in range(cfg.encoder_layers))
        self.register_buffer("pe", positional_encoding(SEQ_LEN, d, dtype=dtype), persistent=False)

    def interaction_summary(self, states: Tensor, feats: Tensor) -> Tensor:
        return self.lstm.run(self.neighbor(states, feats))[1]

    @staticmethod
    def layout(obs: Tensor, goal: Tensor) -> Tensor:
        """Tokens ``(B, 20, 3)`` of ``(x, y, is_pad)``: observations, pads, goal last."""
        b = obs.shape[0]
        tokens = obs.new_zeros(b, SEQ_LEN, 3)
        tokens[:, :OBS_LEN, :2] = obs
        tokens[:, OBS_LEN:GOAL_INDEX, 2] = 1.0
        tokens[:, GOAL_INDEX, :2] = goal
        return tokens

    def forward(self, obs: Tensor, states: Tensor, feats: Tensor, goal: Tensor) -> Tensor:
        if obs.shape[1] != OBS_LEN or states.shape[1] != OBS_LEN or feats.shape[1] != OBS_LEN:
            raise ShapeError(f"expected {OBS_LEN} observed steps")
        h = self.interaction_summary(states, feats)
        x = self.token(self.layout(obs, goal)) + self.pe
        x = self.fuse(torch.cat([x, h[:, None, :].expand(-1, SEQ_LEN, -1)], dim=-1))
        for block in self.blocks:
            x = block(x)
        return x


class TrajectoryGenerator(nn.Module):
    """Causal decoder; each output slot is the next position (residual on its input)."""

    def __init__(self, cfg: ModelConfig, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        d = cfg.model_dim
        self.token = Dense(2, d, generator, dtype=dtype)
        self.blocks = nn.ModuleList(DecoderBlock(d, cfg.heads, cfg.ff_dim, generator, dtype=dtype)
                                    for _ in range(cfg.decoder_layers))
        self.head = Dense(d, 2, generator, dtype=dtype)
        self.register_buffer("pe", positional_encoding(SEQ_LEN, d, dtype=dtype), persistent=False)

    def forward(self, inputs: Tensor, first_step: int, memory: Tensor) -> Tensor:
        n = inputs.shape[1]
        if first_step + n > SEQ_LEN:
            raise ShapeError("decoder input runs past the sequence horizon")
        x = self.token(inputs) + self.pe[first_step:first_step + n]
        for block in self.blocks:
            x = block(x, memory)
        return inputs + self.head(x)


class SeqCVAE(nn.Module):
    """Goal sampler conditioned on a recurrent summary of the observed track."""

    def __init__(self, cfg: ModelConfig, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.latent_dim = cfg.latent_dim
        self.condition = LSTMCell(2, cfg.cvae_hidden, generator, dtype=dtype)
        self.reduce = Dense(cfg.cvae_hidden, cfg.cvae_condition_dim, generator, dtype=dtype)
        self.expand = MLP([2, *cfg.cvae_expand], generator, dtype=dtype, final_activation=True)
        post_in = cfg.cvae_expand[-1] + cfg.cvae_condition_dim
        self.posterior = MLP([post_in, *cfg.cvae_posterior], generator, dtype=dtype, final_activation=True)
        self.mu = Dense(cfg.cvae_posterior[-1], cfg.latent_dim, generator, dtype=dtype)
        self.log_sigma = Dense(cfg.cvae_posterior[-1], cfg.latent_dim, generator, dtype=dtype)
        self.decoder = MLP([cfg.latent_dim + cfg.cvae_hidden, *cfg.cvae_decoder, 2], generator, dtype=dtype)

    @staticmethod
    def baseline(obs: Tensor) -> Tensor:
        """Constant-velocity extrapolation of the observation to the final step.

        Goals are encoded and decoded as offsets from this point.
        """
        return obs[:, -1] + (obs[:, -1] - obs[:, 0]) * (PRED_LEN / (OBS_LEN - 1))

    def conditions(self, obs: Tensor) -> Tuple[Tensor, Tensor]:
        """``(c_encoder, c_decoder)`` from the LSTM run over per-step displacements."""
        c_dec = self.condition.run(obs[:, 1:] - obs[:, :-1])[1]
        return self.reduce(c_dec), c_dec

    def encode(self, obs: Tensor, goal: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        c_enc, c_dec = self.conditions(obs)
        hidden = self.posterior(torch.cat([self.expand(goal - self.baseline(obs)), c_enc], dim=-1))
        return self.mu(hidden), self.log_sigma(hidden), c_dec

    def decode(self, z: Tensor, c_dec: Tensor, obs: Tensor) -> Tensor:
        """Goals for latents ``z`` of shape (B, latent) or (B, K, latent)."""
        base = self.baseline(obs)
        if z.dim() == 3:
            c_dec = c_dec[:, None, :].expand(-1, z.shape[1], -1)
            base = base[:, None, :]
        return base + self.decoder(torch.cat([z, c_dec], dim=-1))


class InSyn(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), dtype=torch.float32):
        super().__init__()
        self.config = cfg
        # separate streams so each component's initialization is independent
        self.encoder = InteractionEncoder(cfg, make_generator(cfg.seed), dtype=dtype)
        self.generator = TrajectoryGenerator(cfg, make_generator(cfg.seed + 1), dtype=dtype)
        self.cvae = SeqCVAE(cfg, make_generator(cfg.seed + 2), dtype=dtype)

    def generator_parameters(self):
        return list(self.encoder.parameters()) + list(self.generator.parameters())

    def cvae_parameters(self):
        return list(self.cvae.parameters())

    def section(self, name: str) -> nn.Module:
        return {"encoder": self.encoder, "generator": self.generator, "cvae": self.cvae}[name]


# -- losses and inference ----------------------------------------------------

def _mse(a: Tensor, b: Tensor) -> Tensor:
    return ((a - b) ** 2).mean()


def generator_outputs(model: InSyn, batch: Dict[str, Tensor], use_ssos: bool = True,
                      memory: Optional[Tensor] = None) -> Tensor:
    """Teacher-forced decoder outputs: 19 slots with SSOS, 12 with a single start token."""
    obs, future = batch["obs"], batch["future"]
    if memory is None:
        memory = model.encoder(obs, batch["states"], batch["feats"], future[:, -1])
    positions = torch.cat([obs, future], dim=1)
    if use_ssos:
        return model.generator(positions[:, :SEQ_LEN - 1], 0, memory)
    return model.generator(positions[:, OBS_LEN - 1:SEQ_LEN - 1], OBS_LEN - 1, memory)


def generator_loss(model: InSyn, batch: Dict[str, Tensor], weights: LossWeights = LossWeights(),
                   use_ssos: bool = True) -> Tuple[Tensor, Tensor, Tensor]:
    """``(total, recon, pred)``. The final slot, whose target is the goal, is not scored."""
    positions = torch.cat([batch["obs"], batch["future"]], dim=1)
    out = generator_outputs(model, batch, use_ssos)
    pred_target = positions[:, OBS_LEN:SEQ_LEN - 1]
    if use_ssos:
        recon = _mse(out[:, :OBS_LEN - 1], positions[:, 1:OBS_LEN])
        pred = _mse(out[:, OBS_LEN - 1:SEQ_LEN - 2], pred_target)
    else:
        recon = out.new_zeros(())
        pred = _mse(out[:, :PRED_LEN - 1], pred_target)
    return weights.recon * recon + weights.pred * pred, recon, pred


@torch.no_grad()
def generator_decode(model: InSyn, obs: Tensor, states: Tensor, feats: Tensor, goal: Tensor,
                     use_ssos: bool = True) -> Tensor:
    """Autoregressive rollout ``(B, 12, 2)``; the last step is the goal itself."""
    memory = model.encoder(obs, states, feats, goal)
    if use_ssos:
        seq, first = obs, 0
    else:
        seq, first = obs[:, OBS_LEN - 1:], OBS_LEN - 1
    for _ in range(PRED_LEN - 1):
        out = model.generator(seq, first, memory)
        seq = torch.cat([seq, out[:, -1:]], dim=1)
    pred = torch.cat([seq[:, -(PRED_LEN - 1):], goal[:, None, :]], dim=1)
    if not torch.isfinite(pred).all():
        raise DivergedError("decoder produced non-finite positions")
    return pred


def kl_divergence(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, averaged over the batch."""
    kl = 0.5 * (mu ** 2 + torch.exp(2 * log_sigma) - 1.0 - 2 * log_sigma).sum(dim=-1)
    return kl.mean()


def cvae_loss(model: InSyn, obs: Tensor, goal: Tensor, beta: float = 5.0,
              eps: Optional[Tensor] = None,
              generator: Optional[torch.Generator] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """``(total, recon, kl)`` with the reparameterization trick; pass ``eps`` to fix the noise."""
    mu, log_sigma, c_dec = model.cvae.encode(obs, goal)
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    z = mu + torch.exp(log_sigma) * eps
    recon = _mse(model.cvae.decode(z, c_dec, obs), goal)
    kl = kl_divergence(mu, log_sigma)
    return recon + beta * kl, recon, kl


@torch.no_grad()
def cvae_reconstruct(model: InSyn, obs: Tensor, goal: Tensor) -> Tensor:
    """Goal decoded from the posterior mean."""
    mu, _, c_dec = model.cvae.encode(obs, goal)
    return model.cvae.decode(mu, c_dec, obs)


@torch.no_grad()
def seqcvae_sample(model: InSyn, obs: Tensor, k: int, seed: int = 0,
                   zero_latent: bool = False) -> Tensor:
    """``(B, K, 2)`` goals from z ~ N(0, I); deterministic given ``seed``."""
    if k < 1:
        raise ValueError("K must be at least 1")
    _, c_dec = model.cvae.conditions(obs)
    b = obs.shape[0]
    shape = (b, k, model.cvae.latent_dim)
    if zero_latent:
        z = obs.new_zeros(shape)
    else:
        z = torch.randn(shape, generator=make_generator(seed), dtype=torch.float64).to(obs.dtype)
    return model.cvae.decode(z, c_dec, obs)
