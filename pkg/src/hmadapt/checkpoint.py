"""Versioned checkpoint container.

A checkpoint is a zip archive of ``.npy`` members plus ``meta.json``.  Member
order and timestamps are fixed so identical contents give identical bytes.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np

from .adapt import SpotTuneNet
from .errors import ImageIOError
from .nn.model import NetConfig, NetParams
from .nn.optim import AdamState

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _put(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _net_arrays(prefix: str, net: NetParams) -> dict:
    out = {f"{prefix}params/{k}": v for k, v in net.params.items()}
    out.update({f"{prefix}buffers/{k}": v for k, v in net.buffers.items()})
    return out


def save_checkpoint(path, model, optimizer: AdamState | None = None, meta: dict | None = None) -> None:
    """Write a :class:`NetParams` or :class:`SpotTuneNet` (plus optimiser state)."""
    arrays = {}
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}}
    if isinstance(model, SpotTuneNet):
        header["kind"] = "spottune"
        header["config"] = model.frozen.config.to_dict()
        header["temperature"] = model.temperature
        header["straight_through"] = model.straight_through
        arrays.update(_net_arrays("frozen/", model.frozen))
        arrays.update(_net_arrays("tuned/", model.tuned))
        arrays.update({f"policy/{k}": v for k, v in model.policy.items()})
    else:
        header["kind"] = "net"
        header["config"] = model.config.to_dict()
        arrays.update(_net_arrays("", model))
    if optimizer is not None:
        header["optimizer"] = {**optimizer.hyper(), "t": optimizer.t}
        arrays.update({f"adam/m/{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam/v/{k}": v for k, v in optimizer.v.items()})
    header["arrays"] = sorted(arrays)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _put(zf, "meta.json", json.dumps(header, indent=2, sort_keys=True).encode())
        for name in sorted(arrays):
            _put(zf, name + ".npy", _npy_bytes(arrays[name]))
    os.replace(tmp, path)


def _split(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def load_checkpoint(path):
    """Return ``(model, optimizer_or_None, meta)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in header["arrays"]:
                with zf.open(name + ".npy") as fh:
                    arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise ImageIOError(f"{path}: unreadable checkpoint ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ImageIOError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    config = NetConfig(**header["config"])

    def net(prefix):
        return NetParams(config, _split(arrays, prefix + "params/"), _split(arrays, prefix + "buffers/"))

    if header["kind"] == "spottune":
        frozen = net("frozen/")
        for arr in list(frozen.params.values()) + list(frozen.buffers.values()):
            arr.setflags(write=False)
        model = SpotTuneNet(frozen, net("tuned/"), _split(arrays, "policy/"),
                            header["temperature"], header["straight_through"])
    else:
        model = net("")
    optimizer = None
    if "optimizer" in header:
        hyper = dict(header["optimizer"])
        t = hyper.pop("t")
        optimizer = AdamState(**hyper, t=t, m=_split(arrays, "adam/m/"), v=_split(arrays, "adam/v/"))
    return model, optimizer, header["meta"]
