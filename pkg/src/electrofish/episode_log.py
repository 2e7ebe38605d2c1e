"""Binary episode-log container and its text export.

Layout (all integers little-endian)::

    magic   4 bytes  b"EFLG"
    version u16
    hlen    u32      length of the JSON header that follows
    header  hlen bytes, UTF-8 JSON (sorted keys)
    rows    n_steps * n_agents fixed-width records (ROW_DTYPE)
    obs     optional float32 block, n_steps * n_agents * obs_dim

Rows are ordered by (step, agent). The header carries the generating config
hash and a sha256 over the row (and observation) bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import HashMismatchError, LogFormatError, LogTruncatedError

MAGIC = b"EFLG"
VERSION = 1
LAYOUT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")

ROW_DTYPE = np.dtype([
    ("step", "<u4"), ("agent", "<u2"),
    ("x", "<f8"), ("y", "<f8"), ("heading", "<f8"), ("speed", "<f8"),
    ("thrust", "<f8"), ("turn", "<f8"),
    ("eod", "u1"), ("bite", "u1"), ("food", "<u2"),
    ("reward", "<f8"),
])
OBS_DTYPE = np.dtype("<f4")


class LogVersionError(LogFormatError):
    pass


class EpisodeLog:
    """One episode: a JSON-able ``header`` dict plus structured ``rows``."""

    def __init__(self, header, rows, obs=None):
        self.header = dict(header)
        self.rows = np.asarray(rows, dtype=ROW_DTYPE)
        self.obs = None if obs is None else np.asarray(obs, dtype=OBS_DTYPE)

    @property
    def n_agents(self):
        return int(self.header["n_agents"])

    @property
    def n_steps(self):
        return int(self.header["n_steps"])

    @property
    def dt(self):
        return float(self.header["dt"])

    def column(self, name):
        """Column reshaped to (n_steps, n_agents)."""
        return self.rows[name].reshape(self.n_steps, self.n_agents)

    def positions(self):
        return np.stack([self.column("x"), self.column("y")], axis=-1)

    def eods(self):
        return self.column("eod").astype(bool)

    def food_totals(self):
        return self.column("food").astype(np.int64).sum(axis=0)

    def condition(self):
        h = self.header
        return (h["competition_mode"], bool(h["knollenorgan_enabled"]), bool(h["collective_sensing_enabled"]))

    def __eq__(self, other):
        if not isinstance(other, EpisodeLog):
            return NotImplemented
        same_obs = (self.obs is None and other.obs is None) or (
            self.obs is not None and other.obs is not None and self.obs.tobytes() == other.obs.tobytes())
        return self.header == other.header and self.rows.tobytes() == other.rows.tobytes() and same_obs

    def content_digest(self):
        h = hashlib.sha256(self.rows.tobytes())
        if self.obs is not None:
            h.update(self.obs.tobytes())
        return h.hexdigest()


def make_header(sim_cfg, config_hash, seed, n_steps, obs_dim=None):
    arena, sensors = sim_cfg.arena, sim_cfg.sensors
    return {
        "config_hash": config_hash,
        "seed": int(seed) if seed is not None else None,
        "dt": arena.dt_s,
        "n_agents": arena.n_agents,
        "n_steps": int(n_steps),
        "layout_version": LAYOUT_VERSION,
        "layout": sensors.layout_dict(),
        "competition_mode": arena.competition_mode,
        "knollenorgan_enabled": sensors.knollenorgan_enabled,
        "collective_sensing_enabled": sensors.collective_sensing_enabled,
        "arena": [arena.width_m, arena.height_m],
        "episode_len": arena.episode_len,
        "has_obs": obs_dim is not None,
        "obs_dim": obs_dim,
    }


def to_bytes(log):
    header = dict(log.header)
    header["n_rows"] = int(len(log.rows))
    header["has_obs"] = log.obs is not None
    header["content_sha256"] = log.content_digest()
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
    buf.write(hbytes)
    buf.write(log.rows.tobytes())
    if log.obs is not None:
        buf.write(log.obs.tobytes())
    return buf.getvalue()


def write_episode_log(log, path):
    path = Path(path)
    path.write_bytes(to_bytes(log))
    return path


def from_bytes(data, expected_config_hash=None):
    if len(data) < _PREFIX.size:
        raise LogTruncatedError("file shorter than the container prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise LogFormatError(f"bad magic {magic!r}; not an episode log")
    if version != VERSION:
        raise LogVersionError(f"unsupported episode-log version {version} (this build reads {VERSION})")
    off = _PREFIX.size
    if len(data) < off + hlen:
        raise LogTruncatedError("header is truncated")
    try:
        header = json.loads(data[off:off + hlen])
    except ValueError as exc:
        raise LogFormatError(f"header is not valid JSON: {exc}") from exc
    off += hlen
    n_rows = int(header.pop("n_rows"))
    digest = header.pop("content_sha256")
    rows_end = off + n_rows * ROW_DTYPE.itemsize
    obs_len = 0
    if header.get("has_obs"):
        obs_len = n_rows * int(header["obs_dim"]) * OBS_DTYPE.itemsize
    if len(data) < rows_end + obs_len:
        raise LogTruncatedError(
            f"expected {rows_end + obs_len} bytes for {n_rows} rows, file has {len(data)}")
    if len(data) > rows_end + obs_len:
        raise LogFormatError("trailing bytes after the last record")
    rows = np.frombuffer(data, dtype=ROW_DTYPE, count=n_rows, offset=off).copy()
    obs = None
    if obs_len:
        obs = np.frombuffer(data, dtype=OBS_DTYPE, offset=rows_end).copy().reshape(
            int(header["n_steps"]), int(header["n_agents"]), int(header["obs_dim"]))
    log = EpisodeLog(header, rows, obs)
    if log.content_digest() != digest:
        raise HashMismatchError("record content does not match the embedded sha256")
    if expected_config_hash is not None and header.get("config_hash") != expected_config_hash:
        raise HashMismatchError(
            f"log was generated by config {header.get('config_hash')}, expected {expected_config_hash}")
    return log


def read_episode_log(path, expected_config_hash=None):
    return from_bytes(Path(path).read_bytes(), expected_config_hash)


def export_text(log, path=None, sep="\t"):
    """Delimited-text table with one line per (step, agent) row."""
    names = ROW_DTYPE.names
    lines = [sep.join(names)]
    for row in log.rows:
        lines.append(sep.join(repr(float(row[n])) if ROW_DTYPE[n].kind == "f" else str(int(row[n]))
                              for n in names))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


class EpisodeRecorder:
    def __init__(self, sim_cfg, config_hash, seed, record_obs=False):
        self.sim_cfg = sim_cfg
        self.config_hash = config_hash
        self.seed = seed
        self.record_obs = record_obs
        self._rows = []
        self._obs = []

    def record(self, step, state, commands, rewards, events):
        n = state.n_agents
        rec = np.zeros(n, dtype=ROW_DTYPE)
        rec["step"] = step
        rec["agent"] = np.arange(n)
        rec["x"], rec["y"] = state.pos[:, 0], state.pos[:, 1]
        rec["heading"] = state.heading
        rec["speed"] = state.speed
        rec["thrust"], rec["turn"] = commands[:, 0], commands[:, 1]
        rec["eod"] = events.eods
        rec["bite"] = state.bite_now
        rec["food"] = [len(e) for e in events.eaten]
        rec["reward"] = rewards
        self._rows.append(rec)
        if self.record_obs:
            self._obs.append(state.obs.astype(OBS_DTYPE))

    def finish(self):
        n_steps = len(self._rows)
        obs_dim = self.sim_cfg.sensors.obs_dim if self.record_obs else None
        header = make_header(self.sim_cfg, self.config_hash, self.seed, n_steps, obs_dim)
        rows = np.concatenate(self._rows) if self._rows else np.zeros(0, dtype=ROW_DTYPE)
        obs = np.stack(self._obs) if self.record_obs and self._obs else None
        return EpisodeLog(header, rows, obs)


def log_from_arrays(eods, positions=None, food=None, dt=0.04, seed=0, config_hash="synthetic",
                    condition=("NoCompetition", True, True), heading=None, speed=None, rewards=None):
    """Build an EpisodeLog from (T, n) arrays; unspecified columns are zero."""
    eods = np.asarray(eods).astype(bool)
    if eods.ndim == 1:
        eods = eods[:, None]
    T, n = eods.shape
    rows = np.zeros(T * n, dtype=ROW_DTYPE)
    rows["step"] = np.repeat(np.arange(T), n)
    rows["agent"] = np.tile(np.arange(n), T)
    rows["eod"] = eods.ravel()
    if positions is not None:
        p = np.asarray(positions, dtype=float).reshape(T * n, 2)
        rows["x"], rows["y"] = p[:, 0], p[:, 1]
    for name, val in (("food", food), ("heading", heading), ("speed", speed), ("reward", rewards)):
        if val is not None:
            rows[name] = np.asarray(val).ravel()
    header = {
        "config_hash": config_hash, "seed": seed, "dt": dt, "n_agents": n, "n_steps": T,
        "layout_version": LAYOUT_VERSION, "layout": {}, "competition_mode": condition[0],
        "knollenorgan_enabled": condition[1], "collective_sensing_enabled": condition[2],
        "arena": [1.0, 1.0], "episode_len": T, "has_obs": False, "obs_dim": None,
    }
    return EpisodeLog(header, rows)
