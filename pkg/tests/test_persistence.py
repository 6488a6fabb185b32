import struct

import numpy as np
import pytest

from dadskit.persistence import (
    FORMAT_VERSION,
    MAGIC,
    ChecksumError,
    VersionMismatch,
    load_checkpoint,
    save_checkpoint,
)
from dadskit.trainer import Trainer
from conftest import tiny_config


def _arrays():
    rng = np.random.default_rng(0)
    return {"a/w": rng.normal(size=(3, 4)), "a/b": rng.normal(size=4), "count": np.array(7), "ids": np.arange(5)}


def test_round_trip_is_bit_identical(tmp_path):
    arrays, meta = _arrays(), {"iteration": 3, "config": {"seed": "1"}}
    save_checkpoint(tmp_path / "x.ckpt", arrays, meta)
    got, got_meta = load_checkpoint(tmp_path / "x.ckpt")
    assert got_meta == meta
    assert got.keys() == arrays.keys()
    for k in arrays:
        assert got[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(got[k], arrays[k])


def test_truncated_file_is_a_checksum_error(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, _arrays(), {})
    raw = p.read_bytes()
    for cut in (10, len(raw) // 2, len(raw) - 1):
        p.write_bytes(raw[:cut])
        with pytest.raises(ChecksumError):
            load_checkpoint(p)


def test_flipped_byte_is_a_checksum_error(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, _arrays(), {})
    raw = bytearray(p.read_bytes())
    raw[-20] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_checkpoint(p)


def test_version_mismatch_names_both(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, _arrays(), {})
    raw = bytearray(p.read_bytes())
    raw[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch) as info:
        load_checkpoint(p)
    assert info.value.found == 99 and info.value.expected == FORMAT_VERSION
    assert "99" in str(info.value) and str(FORMAT_VERSION) in str(info.value)


def test_atomic_write_leaves_no_temporaries(tmp_path):
    save_checkpoint(tmp_path / "x.ckpt", _arrays(), {})
    save_checkpoint(tmp_path / "x.ckpt", _arrays(), {"v": 2})
    assert [p.name for p in tmp_path.iterdir()] == ["x.ckpt"]


def test_reserved_name_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.ckpt", {"__meta__": np.zeros(1)}, {})


def test_trainer_checkpoint_restores_evaluation_behaviour(tmp_path):
    tr = Trainer(tiny_config())
    tr.iterate()
    tr.save(tmp_path / "t.ckpt")
    back = Trainer.from_checkpoint(tmp_path / "t.ckpt")
    obs, z = np.random.default_rng(0).normal(size=(5, 2)), np.random.default_rng(1).uniform(-1, 1, (5, 2))
    np.testing.assert_array_equal(tr.policy.act(obs, z, deterministic=True)[0], back.policy.act(obs, z, deterministic=True)[0])
    s = np.random.default_rng(2).normal(size=(5, 4))
    np.testing.assert_array_equal(tr.dynamics.predict_next(s, z), back.dynamics.predict_next(s, z))
    for k, g in tr.rngs.items():
        assert g.bit_generator.state == back.rngs[k].bit_generator.state
    assert back.iteration == 1 and back.env_steps == tr.env_steps
