import json
import struct

import numpy as np
import pytest

from cflow.checkpoint import load_checkpoint, save_checkpoint
from cflow.data import FormatError
from cflow.flows import GlowStep
from cflow.nets import ModelConfig, build_model

RNG_STATE = {"bit_generator": "PCG64", "state": {"state": 123, "inc": 5},
             "has_uint32": 0, "uinteger": 0}


def make_bundle(kind="planar", steps=2, seed=0):
    cfg = ModelConfig(latent_dim=3, context_dim=4, flow_steps=steps,
                      flow_kind=kind, image_dims=(4, 4), hidden=(8,))
    return build_model(cfg, np.random.default_rng(seed))


def test_round_trip_is_bit_exact(tmp_path):
    b = make_bundle("glow", 2, seed=5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, b, {"lr": 1e-4}, 12.5, 7, RNG_STATE)
    loaded, meta = load_checkpoint(path)

    assert loaded.config == b.config
    assert all(isinstance(s, GlowStep) for s in loaded.steps)
    for (na, ta), (nb, tb) in zip(b.named_parameters(),
                                  loaded.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    assert meta["best_val_loss"] == 12.5
    assert meta["epoch"] == 7
    assert meta["train"] == {"lr": 1e-4}
    assert meta["rng_state"] == RNG_STATE


def test_save_is_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, make_bundle(seed=3), {}, 1.0, 1, RNG_STATE)
    save_checkpoint(p2, make_bundle(seed=3), {}, 1.0, 1, RNG_STATE)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_bundle(), {}, 0.0, 0, RNG_STATE)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(blob)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_version_mismatch_rejected_not_coerced(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_bundle(), {}, 0.0, 0, RNG_STATE)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 2)
    path.write_bytes(blob)
    with pytest.raises(FormatError, match="version 2"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_bundle(), {}, 0.0, 0, RNG_STATE)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_bundle(), {}, 0.0, 0, RNG_STATE)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


def _rewrite_header(path, mutate):
    blob = path.read_bytes()
    magic, version, head_len = struct.unpack_from("<4sII", blob, 0)
    header = json.loads(blob[12:12 + head_len].decode())
    mutate(header)
    head = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(struct.pack("<4sII", magic, version, len(head))
                     + head + blob[12 + head_len:])


def test_parameter_name_mismatch_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_bundle(), {}, 0.0, 0, RNG_STATE)

    def mutate(h):
        h["params"][0]["name"] = "encoder.0.wrong"

    _rewrite_header(path, mutate)
    with pytest.raises(FormatError, match="names"):
        load_checkpoint(path)


def test_shape_mismatch_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_bundle(), {}, 0.0, 0, RNG_STATE)

    def mutate(h):
        h["params"][0]["shape"] = [2, 2]

    _rewrite_header(path, mutate)
    with pytest.raises(FormatError, match="shape"):
        load_checkpoint(path)
