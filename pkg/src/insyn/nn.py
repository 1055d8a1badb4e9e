"""Small differentiable building blocks on top of torch tensors.

Backward passes come from torch autograd; :func:`grad_check` verifies them
against central finite differences. All parameter initialization draws from an
explicit ``torch.Generator`` so a seed fully determines the weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import torch
from torch import nn

Tensor = torch.Tensor


class ShapeError(ValueError):
    pass


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def _uniform(shape, bound: float, generator: torch.Generator, dtype) -> nn.Parameter:
    w = (torch.rand(shape, generator=generator, dtype=torch.float64) * 2.0 - 1.0) * bound
    return nn.Parameter(w.to(dtype))


# -- functional ops ----------------------------------------------------------

def dense(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"dense: input dim {x.shape[-1]} != weight in-dim {W.shape[1]}")
    y = x @ W.transpose(0, 1)
    return y if b is None else y + b


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def embed(table: Tensor, index: Tensor) -> Tensor:
    index = torch.as_tensor(index)
    if index.dtype not in (torch.int64, torch.int32):
        raise ShapeError("embedding index must be integral")
    if index.numel() and (int(index.min()) < 0 or int(index.max()) >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    return table[index.long()]


def maxpool_axis(x: Tensor, axis: int) -> Tuple[Tensor, Tensor]:
    """Max over ``axis``; the gradient flows only to the arg-max entries."""
    values, argmax = torch.max(x, dim=axis)
    return values, argmax


def positional_encoding(seq_len: int, model_dim: int, dtype=torch.float64) -> Tensor:
    """Sinusoid table, shape ``(seq_len, model_dim)``."""
    if model_dim % 2:
        raise ShapeError("positional encoding needs an even model dimension")
    pos = torch.arange(seq_len, dtype=torch.float64)[:, None]
    rates = torch.exp(-math.log(10000.0) * torch.arange(0, model_dim, 2, dtype=torch.float64) / model_dim)
    table = torch.zeros(seq_len, model_dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * rates)
    table[:, 1::2] = torch.cos(pos * rates)
    return table.to(dtype)


def causal_mask(length: int) -> Tensor:
    """Boolean ``(length, length)``; True where attention is allowed."""
    return torch.ones(length, length, dtype=torch.bool).tril()


# -- modules -----------------------------------------------------------------

class Dense(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, generator: torch.Generator, bias: bool = True,
                 dtype=torch.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = _uniform((out_dim, in_dim), bound, generator, dtype)
        self.bias = _uniform((out_dim,), bound, generator, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)


class Embedding(nn.Module):
    def __init__(self, rows: int, dim: int, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.table = _uniform((rows, dim), 1.0, generator, dtype)

    def forward(self, index: Tensor) -> Tensor:
        return embed(self.table, index)


class MLP(nn.Module):
    """Dense layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], generator: torch.Generator, dtype=torch.float32,
                 final_activation: bool = False):
        super().__init__()
        self.layers = nn.ModuleList(Dense(a, b, generator, dtype=dtype) for a, b in zip(sizes, sizes[1:]))
        self.final_activation = final_activation

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_activation:
                x = torch.relu(x)
        return x


class LSTMCell(nn.Module):
    """Gated recurrent cell; gate order in the stacked weights is i, f, g, o."""

    def __init__(self, in_dim: int, hidden: int, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        self.w_x = _uniform((4 * hidden, in_dim), bound, generator, dtype)
        self.w_h = _uniform((4 * hidden, hidden), bound, generator, dtype)
        self.bias = _uniform((4 * hidden,), bound, generator, dtype)

    def forward(self, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        if h.shape[-1] != self.hidden or c.shape[-1] != self.hidden:
            raise ShapeError("recurrent state size mismatch")
        z = dense(x, self.w_x) + dense(h, self.w_h) + self.bias
        i, f, g, o = z.chunk(4, dim=-1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return h_new, c_new

    def run(self, xs: Tensor) -> Tuple[Tensor, Tensor]:
        """Unroll over ``xs`` of shape (B, T, in); returns all hidden states and the last one."""
        b = xs.shape[0]
        h = xs.new_zeros(b, self.hidden)
        c = xs.new_zeros(b, self.hidden)
        hs = []
        for t in range(xs.shape[1]):
            h, c = self(xs[:, t], h, c)
            hs.append(h)
        return torch.stack(hs, dim=1), h


class MultiHeadAttention(nn.Module):
    def __init__(self, model_dim: int, heads: int, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        if model_dim % heads:
            raise ShapeError("head count must divide the model dimension")
        self.heads = heads
        self.head_dim = model_dim // heads
        self.q = Dense(model_dim, model_dim, generator, dtype=dtype)
        self.k = Dense(model_dim, model_dim, generator, dtype=dtype)
        self.v = Dense(model_dim, model_dim, generator, dtype=dtype)
        self.out = Dense(model_dim, model_dim, generator, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, query: Tensor, key: Tensor, value: Tensor,
                mask: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        if key.shape[1] != value.shape[1]:
            raise ShapeError("key and value lengths differ")
        q, k, v = self._split(self.q(query)), self._split(self.k(key)), self._split(self.v(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            if mask.dtype != torch.bool or mask.shape[-2:] != scores.shape[-2:]:
                raise ShapeError("attention mask must be boolean (Lq, Lk)")
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        b, _, n, _ = q.shape
        out = (weights @ v).transpose(1, 2).reshape(b, n, self.heads * self.head_dim)
        return self.out(out), weights


class FeedForward(nn.Module):
    def __init__(self, model_dim: int, ff_dim: int, generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.mlp = MLP([model_dim, ff_dim, model_dim], generator, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.mlp(x)


class EncoderBlock(nn.Module):
    """Post-norm self-attention block."""

    def __init__(self, model_dim: int, heads: int, ff_dim: int, generator: torch.Generator,
                 dtype=torch.float32):
        super().__init__()
        self.attn = MultiHeadAttention(model_dim, heads, generator, dtype=dtype)
        self.ff = FeedForward(model_dim, ff_dim, generator, dtype=dtype)
        self.norm1 = nn.LayerNorm(model_dim, dtype=dtype)
        self.norm2 = nn.LayerNorm(model_dim, dtype=dtype)

    def forward(self, x: Tensor, mask: Optional[Tensor] = None) -> Tensor:
        x = self.norm1(x + self.attn(x, x, x, mask)[0])
        return self.norm2(x + self.ff(x))


class DecoderBlock(nn.Module):
    """Causal self-attention, cross-attention to the encoder memory, feed-forward."""

    def __init__(self, model_dim: int, heads: int, ff_dim: int, generator: torch.Generator,
                 dtype=torch.float32):
        super().__init__()
        self.self_attn = MultiHeadAttention(model_dim, heads, generator, dtype=dtype)
        self.cross_attn = MultiHeadAttention(model_dim, heads, generator, dtype=dtype)
        self.ff = FeedForward(model_dim, ff_dim, generator, dtype=dtype)
        self.norm1 = nn.LayerNorm(model_dim, dtype=dtype)
        self.norm2 = nn.LayerNorm(model_dim, dtype=dtype)
        self.norm3 = nn.LayerNorm(model_dim, dtype=dtype)

    def forward(self, x: Tensor, memory: Tensor) -> Tensor:
        mask = causal_mask(x.shape[1])
        x = self.norm1(x + self.self_attn(x, x, x, mask)[0])
        x = self.norm2(x + self.cross_attn(x, memory, memory)[0])
        return self.norm3(x + self.ff(x))


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckResult:
    max_abs_err: float
    max_rel_err: float
    checked: int
    worst_excess: float  # max of |a - n| - (atol + rtol |n|) at the tolerances used

    def ok(self) -> bool:
        return self.worst_excess <= 0.0


def grad_check(fn: Callable[[], Tensor], tensors: Iterable[Tensor], epsilon: float = 1e-6,
               rtol: float = 1e-3, atol: float = 1e-6, max_per_tensor: Optional[int] = None,
               seed: int = 0) -> GradCheckResult:
    """Compare autograd gradients of ``fn()`` w.r.t. ``tensors`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection. Tensors must be
    float64 leaves with ``requires_grad``. ``max_per_tensor`` subsamples entries.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    tensors = list(tensors)
    for t in tensors:
        if t.dtype != torch.float64:
            raise TypeError("grad_check needs float64 tensors")
    gen = make_generator(seed)
    probe: List[Optional[Tensor]] = [None]

    def scalar() -> Tensor:
        out = fn()
        if out.dim() == 0:
            return out
        if probe[0] is None:
            probe[0] = torch.randn(out.shape, generator=gen, dtype=torch.float64)
        return (out * probe[0]).sum()

    value = scalar()
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    max_abs = max_rel = 0.0
    worst = -math.inf
    checked = 0
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            idx = range(flat.numel())
            if max_per_tensor is not None and flat.numel() > max_per_tensor:
                idx = torch.randperm(flat.numel(), generator=gen)[:max_per_tensor].tolist()
            gflat = g.reshape(-1)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + epsilon
                up = scalar().item()
                flat[i] = orig - epsilon
                down = scalar().item()
                flat[i] = orig
                num = (up - down) / (2.0 * epsilon)
                ana = gflat[i].item()
                err = abs(ana - num)
                max_abs = max(max_abs, err)
                if err > atol:
                    max_rel = max(max_rel, err / max(abs(ana), abs(num)))
                worst = max(worst, err - (atol + rtol * abs(num)))
                checked += 1
    return GradCheckResult(max_abs, max_rel, checked, worst)
