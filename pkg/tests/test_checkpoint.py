"""Checkpoint format: round trips, integrity, precision refusal."""

import numpy as np
import pytest

import tinyvogue.policy as pol
from tinyvogue.checkpoint import (
    MAGIC,
    load_checkpoint,
    restore_train_state,
    save_checkpoint,
)
from tinyvogue.config import default_config, config_from_dict, config_to_dict
from tinyvogue.errors import CheckpointError
from tinyvogue.rng import RngStream
from tinyvogue.tasks import EOS
from tinyvogue.vogue import TrainStreams, init_state, vogue_train_step


def trained_state(seed=0, steps=2):
    d = config_to_dict(default_config())
    d["batch_inputs"] = 2
    d["grpo"]["group_size"] = 2
    d["policy"].update(embed_dim=8, mlp_hidden=16, k_img=2)
    d["env"]["max_response_len"] = 6
    cfg = config_from_dict(d)
    streams = TrainStreams.from_seed(seed)
    state = init_state(cfg, streams)
    for _ in range(steps):
        vogue_train_step(state, cfg, streams)
    return cfg, state


def test_round_trip_restores_every_tensor_bitwise(tmp_path):
    cfg, state = trained_state()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, state, cfg.policy, extra={"note": "x"})
    ck = load_checkpoint(path)
    assert ck.step == state.step
    assert ck.opt_t == state.opt.state.t
    assert ck.dtype == "float64"
    assert ck.extra == {"note": "x"}
    for name, t in state.params.items():
        assert ck.tensors["param"][name].tobytes() == t.data.tobytes()
    for name, arr in state.old.items():
        assert ck.tensors["old"][name].tobytes() == arr.tobytes()
    for name in state.params:
        assert ck.tensors["adam_m"][name].tobytes() == state.opt.state.m[name].tobytes()
        assert ck.tensors["adam_v"][name].tobytes() == state.opt.state.v[name].tobytes()


def test_restored_state_produces_identical_policy_outputs(tmp_path):
    cfg, state = trained_state(seed=4)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, state, cfg.policy)
    restored = restore_train_state(load_checkpoint(path), cfg.optim)

    img = np.clip(np.random.default_rng(0).random((15, 15, 3)), 0, 1)
    a = pol.sample_response(pol.as_arrays(state.params), cfg.policy, img, [0, 22, 16],
                            max_len=8, eos_id=EOS, stream=RngStream(1).derive("s"))
    b = pol.sample_response(pol.as_arrays(restored.params), cfg.policy, img, [0, 22, 16],
                            max_len=8, eos_id=EOS, stream=RngStream(1).derive("s"))
    assert a.tokens == b.tokens
    assert a.logps.tobytes() == b.logps.tobytes()
    assert a.entropies.tobytes() == b.entropies.tobytes()


def test_restored_state_continues_training_deterministically(tmp_path):
    cfg, state = trained_state(seed=6, steps=1)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, state, cfg.policy)
    restored = restore_train_state(load_checkpoint(path), cfg.optim)
    # both copies take the same next step from the same stream position
    s1 = TrainStreams.from_seed(99)
    s2 = TrainStreams.from_seed(99)
    r1 = vogue_train_step(state, cfg, s1)
    r2 = vogue_train_step(restored, cfg, s2)
    assert r1 == r2
    for name, t in state.params.items():
        assert t.data.tobytes() == restored.params[name].data.tobytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    cfg, state = trained_state()
    save_checkpoint(path, state, cfg.policy)
    raw = bytearray(path.read_bytes())
    raw[:2] = b"XX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_flipped_bit_fails_checksum(tmp_path):
    path = tmp_path / "ck.bin"
    cfg, state = trained_state()
    save_checkpoint(path, state, cfg.policy)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="sha256"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    cfg, state = trained_state()
    save_checkpoint(path, state, cfg.policy)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(raw[:10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_unsupported_version_named_in_refusal(tmp_path):
    import hashlib
    import json
    import struct

    header = {"format_version": 99, "dtype": "float64", "step": 0, "opt_t": 0,
              "policy_config": {}, "tensors": [], "extra": {}}
    payload = json.dumps(header).encode()
    body = MAGIC + struct.pack("<I", len(payload)) + payload
    path = tmp_path / "v99.bin"
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="99"):
        load_checkpoint(path)


def test_cross_precision_load_refused_not_cast(tmp_path):
    path = tmp_path / "ck.bin"
    cfg, state = trained_state()
    save_checkpoint(path, state, cfg.policy)
    with pytest.raises(CheckpointError, match="float32"):
        load_checkpoint(path, expected_dtype="float32")
    # matching precision loads fine
    ck = load_checkpoint(path, expected_dtype="float64")
    assert ck.dtype == "float64"


def test_missing_moments_rejected_on_restore(tmp_path):
    cfg, state = trained_state()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, state, cfg.policy)
    ck = load_checkpoint(path)
    victim = sorted(ck.tensors["adam_m"])[0]
    del ck.tensors["adam_m"][victim]
    with pytest.raises(CheckpointError, match=victim):
        restore_train_state(ck, cfg.optim)
