"""Versioned binary container for parameters and training state.

Layout (all integers little-endian)::

    8 bytes   magic b"FADNETCK"
    u32       format version
    u64       manifest length in bytes
    manifest  UTF-8 JSON: {"version", "network", "state", "tensors": [
                  {"name", "shape", "precision", "offset", "nbytes"}, ...]}
    payload   raw little-endian scalars; offsets are relative to payload start

The manifest is written with sorted keys and no insignificant whitespace,
so saving what was just loaded reproduces the same bytes.
"""

import json
import struct

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"FADNETCK"
VERSION = 1
_PRECISION = {"float32": "<f4", "float64": "<f8"}


def _precision_name(arr):
    name = np.dtype(arr.dtype).name
    if name not in _PRECISION:
        raise FormatError(f"unsupported tensor precision {name}")
    return name


def pack(tensors, network=None, state=None):
    """Serialize ``{name: array}`` plus JSON-able network config and state."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        prec = _precision_name(arr)
        raw = np.ascontiguousarray(arr, dtype=_PRECISION[prec]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "precision": prec, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"version": VERSION, "network": network, "state": state or {}, "tensors": entries}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob + b"".join(chunks)


def unpack(data):
    """Inverse of :func:`pack`: returns ``(tensors, network, state)``."""
    data = bytes(data)
    if len(data) < 20 or data[:8] != MAGIC:
        raise FormatError("not a checkpoint: bad magic", 0)
    version, mlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {VERSION})", 8)
    start = 20
    if start + mlen > len(data):
        raise FormatError("truncated checkpoint manifest", len(data))
    try:
        manifest = json.loads(data[start : start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint manifest: {exc}", start) from None
    if not isinstance(manifest, dict) or manifest.get("version") != version or "tensors" not in manifest:
        raise FormatError("corrupt checkpoint manifest: missing fields", start)
    payload = start + mlen
    tensors = {}
    for entry in manifest["tensors"]:
        try:
            name, shape, prec = entry["name"], tuple(entry["shape"]), entry["precision"]
            off, nbytes = entry["offset"], entry["nbytes"]
            dtype = np.dtype(_PRECISION[prec])
        except (KeyError, TypeError):
            raise FormatError(f"corrupt checkpoint manifest entry {entry!r}", start) from None
        if int(np.prod(shape)) * dtype.itemsize != nbytes:
            raise FormatError(f"tensor {name}: shape {shape} does not match {nbytes} bytes", start)
        begin = payload + off
        if begin + nbytes > len(data):
            raise FormatError(f"tensor {name}: payload truncated", len(data))
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=begin).reshape(shape)
        tensors[name] = arr.astype(dtype.newbyteorder("="))
    return tensors, manifest.get("network"), manifest.get("state", {})


def save_model(model, state=None, extra=None):
    tensors = dict(model.state_dict())
    if extra:
        tensors.update(extra)
    return pack(tensors, model.cfg.to_dict(), state)


def load_model(data, model_cls=None, cfg=None):
    """Rebuild (or fill) a model from checkpoint bytes.

    With ``cfg`` given, a checkpoint written for another configuration is
    rejected with :class:`ConfigError`.
    """
    from .network import FADNet, NetworkConfig

    tensors, network, state = unpack(data)
    if network is None:
        raise FormatError("checkpoint carries no network configuration")
    try:
        saved_cfg = NetworkConfig.from_dict(network)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint network configuration is invalid: {exc}") from None
    if cfg is not None and cfg != saved_cfg:
        raise ConfigError(f"checkpoint was written for a different network configuration: {_diff(cfg, saved_cfg)}")
    model = (model_cls or FADNet)(saved_cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    try:
        model.load_state_dict(params)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint parameters do not fit the network: {exc}") from None
    return model, tensors, state


def _diff(a, b):
    da, db = a.to_dict(), b.to_dict()
    fields = [k for k in sorted(set(da) | set(db)) if da.get(k) != db.get(k)]
    return ", ".join(f"{k}: {da.get(k)!r} != {db.get(k)!r}" for k in fields)
