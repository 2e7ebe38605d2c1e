"""Policy checkpoint container.

    magic   4 bytes  b"EFCK"
    version u16
    hlen    u32
    header  JSON: obs layout, obs_dim, hidden_dim, head config, manifest of
            (name, shape) in blob order, config hash, optional extras
    blob    flat little-endian float32 parameters, manifest order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, ContractError, HashMismatchError
from .policy import PolicyParams

MAGIC = b"EFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
HEAD_CONFIG = {"thrust": "squashed_gaussian_01", "turn": "squashed_gaussian_pm1",
               "eod": "bernoulli", "bite": "bernoulli"}


def checkpoint_bytes(params, layout, config_hash="", extra=None):
    manifest = params.manifest()
    header = {
        "obs_dim": params.obs_dim,
        "hidden_dim": params.hidden_dim,
        "layout": layout.layout_dict() if hasattr(layout, "layout_dict") else layout,
        "heads": HEAD_CONFIG,
        "manifest": [[n, list(s)] for n, s in manifest],
        "config_hash": config_hash,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with torch.no_grad():
        blob = np.concatenate([p.detach().cpu().numpy().astype("<f4").ravel()
                               for _, p in params.named_parameters()]) if manifest else np.zeros(0, "<f4")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + blob.tobytes()


def save_checkpoint(path, params, layout, config_hash="", extra=None):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params, layout, config_hash, extra))
    tmp.replace(path)
    return path


def load_checkpoint(path, layout=None, config_hash=None, dtype=torch.float32):
    """Read a checkpoint; returns ``(params, header)``.

    If ``layout`` is given, its observation layout must equal the stored one
    (ContractError otherwise). ``config_hash`` mismatches raise HashMismatchError.
    """
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError("checkpoint file is truncated")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a policy checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
    except ValueError as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from exc
    if layout is not None:
        want = layout.layout_dict() if hasattr(layout, "layout_dict") else layout
        if want != header["layout"]:
            raise ContractError(f"observation layout {want} does not match checkpoint layout {header['layout']}")
    if config_hash is not None and header["config_hash"] != config_hash:
        raise HashMismatchError(f"checkpoint built from config {header['config_hash']}, expected {config_hash}")
    params = PolicyParams(header["obs_dim"], header["hidden_dim"], seed=None, dtype=dtype)
    if [[n, list(s)] for n, s in params.manifest()] != header["manifest"]:
        raise CheckpointError("checkpoint manifest does not match this policy architecture")
    expected = sum(int(np.prod(s)) for _, s in header["manifest"])
    n_bytes = len(data) - _PREFIX.size - hlen
    if n_bytes != 4 * expected:
        raise CheckpointError(f"parameter blob has {n_bytes} bytes, manifest needs {4 * expected}")
    blob = np.frombuffer(data, dtype="<f4", offset=_PREFIX.size + hlen)
    off = 0
    with torch.no_grad():
        for _, p in params.named_parameters():
            k = p.numel()
            p.copy_(torch.from_numpy(blob[off:off + k].astype(np.float32).reshape(p.shape)))
            off += k
    return params, header
