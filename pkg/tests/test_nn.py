import math

import pytest
import torch

from insyn import nn as core

F64 = torch.float64


def gen(seed=0):
    return core.make_generator(seed)


def leaf(*shape, seed=0, scale=1.0):
    return (torch.randn(*shape, generator=gen(seed), dtype=F64) * scale).requires_grad_(True)


def test_closed_form_examples():
    assert core.sigmoid(torch.tensor(0.0)).item() == 0.5
    vals, arg = core.maxpool_axis(torch.tensor([[1.0, 3.0], [2.0, 0.0]]), 0)
    assert vals.tolist() == [2.0, 3.0] and arg.tolist() == [1, 0]
    x = torch.randn(4, 3, generator=gen(), dtype=F64)
    assert torch.equal(core.dense(x, torch.eye(3, dtype=F64), torch.zeros(3, dtype=F64)), x)


def test_shape_errors():
    with pytest.raises(core.ShapeError):
        core.dense(torch.zeros(2, 3), torch.zeros(4, 5))
    with pytest.raises(core.ShapeError):
        core.positional_encoding(20, 7)
    with pytest.raises(core.ShapeError):
        core.MultiHeadAttention(10, 3, gen())
    with pytest.raises(IndexError):
        core.embed(torch.zeros(3, 2), torch.tensor([3]))
    with pytest.raises(core.ShapeError):
        core.embed(torch.zeros(3, 2), torch.tensor([0.0]))


def test_maxpool_routes_gradient_to_argmax_only():
    x = torch.tensor([[1.0, 3.0], [2.0, 0.0]], requires_grad=True)
    core.maxpool_axis(x, 0)[0].sum().backward()
    assert x.grad.tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_positional_encoding_table():
    pe = core.positional_encoding(20, 16)
    assert pe.shape == (20, 16)
    assert (pe[0, 0::2] == 0).all() and (pe[0, 1::2] == 1).all()
    assert torch.equal(pe, core.positional_encoding(20, 16))
    assert pe[5, 2].item() == pytest.approx(math.sin(5 / 10000 ** (2 / 16)))


def test_lstm_zero_weights_zero_state():
    cell = core.LSTMCell(3, 4, gen(), dtype=F64)
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    h, c = cell(torch.randn(2, 3, dtype=F64), torch.zeros(2, 4, dtype=F64), torch.zeros(2, 4, dtype=F64))
    assert (h == 0).all() and (c == 0).all()


def test_lstm_saturated_forget_gate_preserves_cell():
    cell = core.LSTMCell(3, 4, gen(), dtype=F64)
    with torch.no_grad():
        cell.w_x.zero_()
        cell.w_h.zero_()
        cell.bias.zero_()
        cell.bias[4:8] = 20.0      # forget gate
        cell.bias[0:4] = -20.0     # input gate closed
    c_prev = torch.randn(2, 4, generator=gen(1), dtype=F64)
    _, c = cell(torch.randn(2, 3, dtype=F64), torch.randn(2, 4, dtype=F64), c_prev)
    assert torch.allclose(c, c_prev, atol=1e-6, rtol=0)


def test_attention_single_position_and_row_sums():
    mha = core.MultiHeadAttention(8, 2, gen(), dtype=F64)
    x = torch.randn(3, 1, 8, generator=gen(2), dtype=F64)
    out, w = mha(x, x, x)
    assert torch.allclose(out, mha.out(mha.v(x)))
    y = torch.randn(3, 6, 8, generator=gen(3), dtype=F64)
    _, w = mha(y, y, y, core.causal_mask(6))
    assert torch.allclose(w.sum(-1), torch.ones(3, 2, 6, dtype=F64), atol=1e-6)
    assert (w.triu(1) == 0).all()
    with pytest.raises(core.ShapeError):
        mha(y, y, y, torch.ones(6, 6))


def test_decoder_block_is_causal():
    block = core.DecoderBlock(8, 2, 16, gen(), dtype=F64)
    x = torch.randn(1, 6, 8, generator=gen(4), dtype=F64)
    mem = torch.randn(1, 5, 8, generator=gen(5), dtype=F64)
    base = block(x, mem)
    for i in range(6):
        x2 = x.clone()
        x2[:, i + 1:] += torch.randn(1, 5 - i, 8, generator=gen(6 + i), dtype=F64)
        assert torch.allclose(block(x2, mem)[:, :i + 1], base[:, :i + 1], atol=1e-12)


def test_decoder_block_zero_gradient_from_future_inputs():
    block = core.DecoderBlock(8, 2, 16, gen(), dtype=F64)
    x = leaf(1, 6, 8, seed=7)
    mem = torch.randn(1, 5, 8, generator=gen(5), dtype=F64)
    for i in range(6):
        (g,) = torch.autograd.grad(block(x, mem)[0, i].sum(), x)
        assert (g[0, i + 1:] == 0).all()


def test_same_seed_same_init_and_forward():
    a = core.EncoderBlock(8, 2, 16, gen(11))
    b = core.EncoderBlock(8, 2, 16, gen(11))
    x = torch.randn(2, 5, 8, generator=gen(1))
    assert torch.equal(a(x), b(x))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


# -- gradient checks, 64-bit, rtol 1e-3, atol 1e-6 ---------------------------

def check(fn, tensors, **kw):
    res = core.grad_check(fn, tensors, **kw)
    assert res.ok(), res
    return res


def test_grad_check_dense():
    layer = core.Dense(4, 3, gen(), dtype=F64)
    x = leaf(5, 4)
    res = check(lambda: layer(x), [x, *layer.parameters()])
    assert res.max_rel_err < 1e-4


def test_grad_check_sigmoid_and_maxpool():
    x = leaf(3, 4, 5, seed=1)
    check(lambda: core.sigmoid(x), [x])
    check(lambda: core.maxpool_axis(x, 1)[0], [x])


def test_grad_check_embedding_parameter_only():
    emb = core.Embedding(3, 6, gen(), dtype=F64)
    idx = torch.tensor([[0, 2, 1, 2]])
    res = check(lambda: emb(idx), [emb.table])
    assert res.max_rel_err < 1e-4


def test_grad_check_lstm():
    cell = core.LSTMCell(3, 5, gen(), dtype=F64)
    xs = leaf(2, 4, 3, seed=2)
    check(lambda: cell.run(xs)[1], [xs, *cell.parameters()])


def test_grad_check_attention_and_blocks():
    mha = core.MultiHeadAttention(8, 2, gen(), dtype=F64)
    q, kv = leaf(1, 4, 8, seed=3), leaf(1, 5, 8, seed=4)
    check(lambda: mha(q, kv, kv)[0], [q, kv, *mha.parameters()], max_per_tensor=20)
    enc = core.EncoderBlock(8, 2, 16, gen(1), dtype=F64)
    x = leaf(1, 5, 8, seed=5)
    check(lambda: enc(x), [x, *enc.parameters()], max_per_tensor=20)
    dec = core.DecoderBlock(8, 2, 16, gen(2), dtype=F64)
    y, mem = leaf(1, 4, 8, seed=6), leaf(1, 5, 8, seed=7)
    check(lambda: dec(y, mem), [y, mem, *dec.parameters()], max_per_tensor=20)


def test_grad_check_detects_wrong_gradient():
    x = leaf(4, seed=8)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, v):
            ctx.save_for_backward(v)
            return v ** 2

        @staticmethod
        def backward(ctx, g):
            (v,) = ctx.saved_tensors
            return g * 3 * v

    assert not core.grad_check(lambda: Wrong.apply(x).sum(), [x]).ok()


def test_grad_check_argument_validation():
    with pytest.raises(TypeError):
        core.grad_check(lambda: torch.zeros(()), [torch.zeros(2, requires_grad=True)])
    with pytest.raises(ValueError):
        core.grad_check(lambda: torch.zeros(()), [], epsilon=1e-2)
