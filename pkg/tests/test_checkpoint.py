import json
import struct

import numpy as np
import pytest

from mobileunetr.autodiff import Tensor
from mobileunetr.checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from mobileunetr.errors import CheckpointFormatError, ConfigMismatchError, ShapeMismatchError
from mobileunetr.model import build_model
from mobileunetr.optim import OptimState, adamw_step, decay_mask


@pytest.fixture
def trained(rng):
    model = build_model("tiny", 3)
    model(Tensor(rng.random((2, 3, 64, 64))), training=True)  # move BN running stats
    params = model.parameters()
    state = OptimState.for_params(params, decay_mask(params))
    adamw_step(params, [rng.standard_normal(p.shape) for p in params], state, 1e-3)
    return model, state


def test_round_trip_is_bit_exact(tmp_path, trained):
    model, state = trained
    path = save_checkpoint(model, state, tmp_path / "m.mutr")
    loaded, st = load_checkpoint(path)
    for (n, a), (m, b) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n == m and a.data.tobytes() == b.data.tobytes()
    for (n, a), (m, b) in zip(model.named_buffers(), loaded.named_buffers()):
        assert n == m and a.tobytes() == b.tobytes()
    assert st.t == state.t and st.decay == state.decay
    assert all(a.tobytes() == b.tobytes() for a, b in zip(state.m + state.v, st.m + st.v))


def test_resave_is_byte_identical(tmp_path, trained):
    model, state = trained
    a = save_checkpoint(model, state, tmp_path / "a.mutr")
    loaded, st = load_checkpoint(a)
    b = save_checkpoint(loaded, st, tmp_path / "b.mutr")
    assert a.read_bytes() == b.read_bytes()


def test_file_layout(tmp_path, trained):
    model, _ = trained
    raw = save_checkpoint(model, None, tmp_path / "m.mutr").read_bytes()
    assert raw.startswith(MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header = json.loads(raw[len(MAGIC) + 8:len(MAGIC) + 8 + hlen])
    assert header["version"] == 1 and header["optimizer"] is None
    first = header["tensors"][0]
    start = len(MAGIC) + 8 + hlen + first["byte_offset"]
    name, p = model.named_parameters()[0]
    assert first["name"] == name
    assert raw[start:start + 4 * p.size] == p.data.astype("<f4").tobytes()


def test_corrupted_magic(tmp_path, trained):
    path = save_checkpoint(trained[0], None, tmp_path / "m.mutr")
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_truncated_blob(tmp_path, trained):
    path = save_checkpoint(trained[0], None, tmp_path / "m.mutr")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointFormatError):
        read_checkpoint(path)


def test_config_mismatch_names_field(tmp_path, trained):
    model, _ = trained
    path = save_checkpoint(model, None, tmp_path / "m.mutr")
    other = model.config.to_dict()
    other["image_size"] = 128
    with pytest.raises(ConfigMismatchError, match="image_size") as info:
        load_checkpoint(path, config=other)
    assert info.value.field == "image_size"
    loaded, _ = load_checkpoint(path, config=other, allow_shape_compatible=True)
    assert loaded.config.image_size == 128


def test_shape_incompatible_override_is_rejected(tmp_path, trained):
    path = save_checkpoint(trained[0], None, tmp_path / "m.mutr")
    other = trained[0].config.to_dict()
    other["head"]["hidden_channels"] += 4
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(path, config=other, allow_shape_compatible=True)


def test_tampered_shape_is_rejected(tmp_path, trained):
    path = save_checkpoint(trained[0], None, tmp_path / "m.mutr")
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header = json.loads(raw[len(MAGIC) + 8:len(MAGIC) + 8 + hlen])
    body = raw[len(MAGIC) + 8 + hlen:]
    header["tensors"][0]["shape"] = [1] + header["tensors"][0]["shape"][1:]
    head = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<Q", len(head)) + head + body)
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(path)
