import io

import pytest
import torch

from insyn.checkpoint import (
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    load_sections,
    save_checkpoint,
    section_tensors,
)
from insyn.model import InSyn, ModelConfig

from test_model import SMALL


def _model(seed):
    return InSyn(ModelConfig(seed=seed, **SMALL))


def test_round_trip_restores_sections():
    src, dst = _model(1), _model(2)
    tensors = section_tensors(src, ["encoder", "cvae"])
    blob = checkpoint_bytes(tensors, {"note": "x"})
    loaded, meta = load_checkpoint(io.BytesIO(blob))
    assert meta == {"note": "x"}
    assert load_sections(dst, loaded) == ["cvae", "encoder"]
    for a, b in zip(src.encoder.parameters(), dst.encoder.parameters()):
        assert torch.equal(a, b)
    assert not all(torch.equal(a, b) for a, b in zip(src.generator.parameters(), dst.generator.parameters()))


def test_bytes_are_deterministic():
    t = section_tensors(_model(4), ["generator"])
    assert checkpoint_bytes(t, {"b": 1, "a": 2}) == checkpoint_bytes(dict(reversed(t.items())), {"a": 2, "b": 1})


def test_scalar_and_empty_meta():
    buf = io.BytesIO()
    save_checkpoint(buf, {"x.s": torch.tensor(3.5)}, {})
    buf.seek(0)
    tensors, meta = load_checkpoint(buf)
    assert tensors["x.s"].item() == 3.5 and meta == {}


@pytest.mark.parametrize("mangle", [
    lambda b: b"NOTACKPT" + b[8:],
    lambda b: b[:-3],
    lambda b: b[:8] + (99).to_bytes(4, "little") + b[12:],
])
def test_corrupt_files_rejected(mangle):
    blob = checkpoint_bytes(section_tensors(_model(0), ["cvae"]), {})
    with pytest.raises(CheckpointError):
        load_checkpoint(io.BytesIO(mangle(blob)))


def test_mismatched_architecture_rejected():
    tensors = section_tensors(_model(0), ["encoder"])
    other = InSyn(ModelConfig(**{**SMALL, "model_dim": 24, "heads": 2}))
    with pytest.raises(CheckpointError):
        load_sections(other, tensors)
    tensors.pop(next(iter(tensors)))
    with pytest.raises(CheckpointError):
        load_sections(_model(0), tensors)
