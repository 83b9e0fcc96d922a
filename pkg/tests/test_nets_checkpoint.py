"""Backbone forward contract and checkpoint serialization."""

import hashlib
import json

import numpy as np
import pytest
import torch

from davi.checkpoint import Checkpoint, file_digest, load_checkpoint, save_checkpoint, sidecar_path
from davi.errors import MissingArtifactError, ValidationError
from davi.nets import ARCHITECTURES, build_model


def _batch(seed, shape=(2, 3, 8, 8)):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g), torch.rand(shape, generator=g)


def test_forward_shape_and_range():
    torch.manual_seed(0)
    model = build_model("siamdiff-micro")
    pre, post = _batch(1)
    out = model(pre, post)
    assert out.shape == (2, 8, 8)
    assert torch.all(out >= 0.0)
    assert torch.all(out <= 1.0)


def test_identical_inputs_give_image_independent_response():
    torch.manual_seed(0)
    model = build_model("siamdiff-micro").eval()
    pre, _ = _batch(2)
    other = torch.rand_like(pre)
    with torch.no_grad():
        same_a = model(pre, pre.clone())
        same_b = model(other, other.clone())
        diff = model(pre, other)
    # Squared feature differencing zeroes all evidence when pre == post, so
    # the response is a pure bias pattern independent of the image content.
    assert torch.allclose(same_a, same_b, atol=1e-6)
    assert not torch.allclose(diff, same_a, atol=1e-3)


def test_forward_rejects_bad_spatial_dims():
    model = build_model("siamdiff-micro")
    pre = torch.rand(1, 3, 6, 8)
    with pytest.raises(ValidationError):
        model(pre, pre)
    with pytest.raises(ValidationError):
        model(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 12))


def test_build_model_rejects_unknown_arch():
    with pytest.raises(ValidationError):
        build_model("resnet-50")
    assert set(ARCHITECTURES) == {"siamdiff-small", "siamdiff-tiny", "siamdiff-micro"}


def test_checkpoint_roundtrip_preserves_tensors(tmp_path):
    torch.manual_seed(3)
    model = build_model("siamdiff-micro")
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, "siamdiff-micro", model.state_dict(), metadata={"seed": 3})

    ckpt = load_checkpoint(path)
    assert isinstance(ckpt, Checkpoint)
    assert ckpt.arch_id == "siamdiff-micro"
    assert ckpt.metadata["seed"] == 3
    assert ckpt.metadata["arch"] == "siamdiff-micro"
    assert set(ckpt.state) == set(model.state_dict())
    for name, tensor in model.state_dict().items():
        assert torch.equal(ckpt.state[name], tensor)

    # Loaded weights drive an identical forward pass.
    clone = build_model("siamdiff-micro")
    clone.load_state_dict(ckpt.state)
    pre, post = _batch(4)
    with torch.no_grad():
        assert torch.equal(model.eval()(pre, post), clone.eval()(pre, post))


def test_checkpoint_resave_is_byte_identical(tmp_path):
    torch.manual_seed(5)
    model = build_model("siamdiff-micro")
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, "siamdiff-micro", model.state_dict(), metadata={"seed": 5})
    save_checkpoint(b, "siamdiff-micro", load_checkpoint(a).state, metadata={"seed": 5})
    assert a.read_bytes() == b.read_bytes()
    assert sidecar_path(a).read_text() == sidecar_path(b).read_text()


def test_checkpoint_sidecar_content(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, "siamdiff-tiny", {"w": torch.zeros(2, 2)}, metadata={"epochs": 7})
    doc = json.loads(sidecar_path(path).read_text())
    assert doc["format"] == "davi-checkpoint/1"
    assert doc["arch"] == "siamdiff-tiny"
    assert doc["epochs"] == 7


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, "siamdiff-tiny", {"w": torch.ones(3)})
    data = path.read_bytes()

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + data[4:])
    with pytest.raises(ValidationError):
        load_checkpoint(bad)

    bad.write_bytes(data + b"\x00")
    with pytest.raises(ValidationError):
        load_checkpoint(bad)

    with pytest.raises(MissingArtifactError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_file_digest_matches_sha256(tmp_path):
    path = tmp_path / "blob.bin"
    path.write_bytes(b"davi")
    assert file_digest(path) == hashlib.sha256(b"davi").hexdigest()
    with pytest.raises(MissingArtifactError):
        file_digest(tmp_path / "absent.bin")


def test_checkpoint_handles_scalar_and_int64_tensors(tmp_path):
    state = {
        "scalar": torch.tensor(2.5),
        "steps": torch.tensor([1, 2, 3], dtype=torch.int64),
    }
    path = tmp_path / "mixed.ckpt"
    save_checkpoint(path, "siamdiff-micro", state)
    back = load_checkpoint(path).state
    assert torch.equal(back["scalar"], state["scalar"])
    assert back["steps"].dtype == torch.int64
    assert torch.equal(back["steps"], state["steps"])


def test_checkpoint_bytes_do_not_depend_on_time(tmp_path, monkeypatch):
    state = {"w": torch.full((2,), 0.5)}
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, "siamdiff-micro", state)
    save_checkpoint(b, "siamdiff-micro", state)
    assert np.frombuffer(a.read_bytes(), dtype=np.uint8).tobytes() == b.read_bytes()
