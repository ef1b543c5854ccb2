"""Versioned little-endian checkpoint container.

Layout::

    b"SGSC" | version u32 | G u32 | feature_dim u32 | latent_dim u32 | n_blobs u32
    means f32[3G] | log_scales f32[3G] | quats f32[4G] | opacity_logits f32[G]
    features f32[72G] | latents f32[6G] | colors f32[3G]
    n_blobs × (name_len u16 | name utf8 | ndim u32 | dims u32[ndim] | f32[prod(dims)])
    config_len u32 | RunConfig JSON (utf8)
    state_len u32 | training-state JSON (utf8)

``colors`` holds the direct-RGB logits used only by the baseline pathway.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SGSC"
VERSION = 1
_F32 = np.dtype("<f4")
_GROUPS = (("means", 3), ("log_scales", 3), ("quats", 4), ("opacity_logits", 1),
           ("features", None), ("latents", None), ("colors", 3))


class VersionMismatch(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict          # cloud arrays, float64
    blobs: dict           # "phi.W0" -> array, ...
    config: dict
    state: dict


def _write_u32(f, *vals):
    f.write(struct.pack("<" + "I" * len(vals), *vals))


def _read_u32(f, n=1):
    vals = struct.unpack("<" + "I" * n, f.read(4 * n))
    return vals if n > 1 else vals[0]


def dumps(arrays: dict, blobs: dict, config: dict, state: dict) -> bytes:
    G = len(arrays["means"])
    fdim = arrays["features"].shape[1]
    ldim = arrays["latents"].shape[1]
    f = io.BytesIO()
    f.write(MAGIC)
    _write_u32(f, VERSION, G, fdim, ldim, len(blobs))
    for name, _ in _GROUPS:
        f.write(np.ascontiguousarray(arrays[name], dtype=_F32).tobytes())
    for name in sorted(blobs):
        arr = np.ascontiguousarray(blobs[name], dtype=_F32)
        nb = name.encode()
        f.write(struct.pack("<H", len(nb)))
        f.write(nb)
        _write_u32(f, arr.ndim)
        if arr.ndim:
            _write_u32(f, *arr.shape)
        f.write(arr.tobytes())
    for doc in (config, state):
        raw = json.dumps(doc, sort_keys=True).encode()
        _write_u32(f, len(raw))
        f.write(raw)
    return f.getvalue()


def loads(data: bytes) -> Checkpoint:
    f = io.BytesIO(data)
    if f.read(4) != MAGIC:
        raise ValueError("not a checkpoint file")
    version = _read_u32(f)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    G, fdim, ldim, n_blobs = _read_u32(f, 4)
    widths = {"features": fdim, "latents": ldim}
    arrays = {}
    for name, w in _GROUPS:
        w = w or widths[name]
        arr = np.frombuffer(f.read(4 * G * w), dtype=_F32).astype(np.float64)
        arrays[name] = arr.reshape(G) if name == "opacity_logits" else arr.reshape(G, w)
    blobs = {}
    for _ in range(n_blobs):
        (nlen,) = struct.unpack("<H", f.read(2))
        name = f.read(nlen).decode()
        ndim = _read_u32(f)
        shape = ()
        if ndim:
            shape = _read_u32(f, ndim)
            shape = shape if isinstance(shape, tuple) else (shape,)
        size = int(np.prod(shape)) if shape else 1
        blobs[name] = np.frombuffer(f.read(4 * size), dtype=_F32).astype(np.float64).reshape(shape)
    docs = []
    for _ in range(2):
        n = _read_u32(f)
        docs.append(json.loads(f.read(n).decode()))
    return Checkpoint(arrays, blobs, docs[0], docs[1])


def save(path, state, extra: dict | None = None) -> None:
    """Write a :class:`~sunsplat.trainer.TrainState`; ``extra`` is merged into
    the training-state JSON."""
    blobs = {f"phi.{k}": v for k, v in state.mlps.phi.params.items()}
    blobs.update({f"psi.{k}": v for k, v in state.mlps.psi.params.items()})
    meta = {"round": state.round, "step": state.step, "frames_consumed": state.frames_consumed,
            "window_ids": state.window.ids, "window_version": state.window.version,
            "scene_radius": state.scene_radius, "gaussian_count": len(state.cloud),
            "rng": state.rng.bit_generator.state, **(extra or {})}
    Path(path).write_bytes(dumps(state.cloud.arrays(), blobs, state.config.to_dict(), meta))


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())


def restore(ckpt: Checkpoint):
    """Rebuild ``(cloud, mlps, RunConfig)`` from a loaded checkpoint."""
    from .appearance import MlpParams
    from .config import RunConfig
    from .model import GaussianCloud

    cloud = GaussianCloud(**{k: v.copy() for k, v in ckpt.arrays.items()})
    mlps = MlpParams.create(np.random.default_rng(0))
    for name, arr in ckpt.blobs.items():
        net, key = name.split(".", 1)
        getattr(mlps, net).params[key] = arr.copy()
    return cloud, mlps, RunConfig.from_dict(ckpt.config)
