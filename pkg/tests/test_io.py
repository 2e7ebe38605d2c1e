"""Episode-log and checkpoint containers."""
import struct

import numpy as np
import pytest
import torch

from electrofish.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from electrofish.config import SensorLayout
from electrofish.episode_log import (LogVersionError, export_text, from_bytes, read_episode_log, to_bytes,
                                     write_episode_log)
from electrofish.errors import (CheckpointError, ContractError, HashMismatchError, LogFormatError,
                                LogTruncatedError)
from electrofish.policy import PolicyParams
from electrofish.runner import RandomController, run_episode

from conftest import sim_config


@pytest.fixture(scope="module")
def log():
    lg, _ = run_episode(sim_config(n_agents=3, episode_len=40), RandomController(np.random.default_rng(0)),
                        seed=4, config_hash="abc", record_obs=True)
    return lg


def test_log_round_trip(log, tmp_path):
    back = read_episode_log(write_episode_log(log, tmp_path / "x.eflog"))
    assert back == log
    assert back.header == log.header
    assert back.rows.tobytes() == log.rows.tobytes() and back.obs.tobytes() == log.obs.tobytes()
    assert to_bytes(back) == to_bytes(log)


def test_log_truncated_last_row(log):
    data = to_bytes(log)
    with pytest.raises(LogTruncatedError):
        from_bytes(data[:-1])
    with pytest.raises(LogTruncatedError):
        from_bytes(data[:10])


def test_log_bad_magic_and_version(log):
    data = to_bytes(log)
    with pytest.raises(LogFormatError, match="magic"):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(LogVersionError):
        from_bytes(data[:4] + struct.pack("<H", 99) + data[6:])


def test_log_content_and_config_hash_checks(log):
    data = bytearray(to_bytes(log))
    data[-5] ^= 0xFF
    with pytest.raises(HashMismatchError):
        from_bytes(bytes(data))
    with pytest.raises(HashMismatchError, match="expected other"):
        from_bytes(to_bytes(log), expected_config_hash="other")
    assert from_bytes(to_bytes(log), expected_config_hash="abc") == log


def test_text_export_rows(log):
    lines = export_text(log).splitlines()
    assert len(lines) - 1 == log.n_steps * log.n_agents
    assert lines[0].split("\t")[:2] == ["step", "agent"]


def _params(obs_dim=49, seed=0):
    return PolicyParams(obs_dim, 16, seed=seed)


def test_checkpoint_round_trip(tmp_path):
    layout = SensorLayout()
    p = _params()
    path = save_checkpoint(tmp_path / "p.efck", p, layout, "h1", extra={"update": 3})
    q, header = load_checkpoint(path, layout=layout, config_hash="h1")
    for (n, a), (_, b) in zip(p.named_parameters(), q.named_parameters()):
        assert torch.equal(a, b), n
    assert header["extra"] == {"update": 3}
    assert checkpoint_bytes(q, layout, "h1", {"update": 3}) == path.read_bytes()


def test_checkpoint_layout_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "p.efck", _params(), SensorLayout())
    with pytest.raises(ContractError):
        load_checkpoint(path, layout=SensorLayout(knollenorgan_enabled=False))


def test_checkpoint_corruption(tmp_path):
    path = save_checkpoint(tmp_path / "p.efck", _params(), SensorLayout(), "h1")
    data = path.read_bytes()
    with pytest.raises(HashMismatchError):
        load_checkpoint(path, config_hash="h2")
    for bad in (data[:-2], data[:-4], b"NOPE" + data[4:], data[:4] + struct.pack("<H", 7) + data[6:], data[:5]):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
