"""Binary tensor and checkpoint files.

Tensor file: magic "VDT1", version u16, dtype code u8, ndim u8, dims (u32
each), then the row-major little-endian payload.

Checkpoint file: magic "VDC1", version u16, tensor count u32, then for each
named tensor: name length u16 + UTF-8 name, dtype code u8, ndim u8, dims
(u32 each), payload. Entries are sorted by name, so identical parameter sets
produce byte-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

TENSOR_MAGIC = b"VDT1"
CKPT_MAGIC = b"VDC1"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8", 3: "|u1"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    code = _CODES.get(arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<BB", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype(_DTYPES[code]).tobytes())


def _read_array(fh) -> np.ndarray:
    code, ndim = struct.unpack("<BB", fh.read(2))
    if code not in _DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    count = int(np.prod(dims)) if dims else 1
    dt = np.dtype(_DTYPES[code])
    payload = fh.read(count * dt.itemsize)
    if len(payload) != count * dt.itemsize:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def write_tensor(path, tensor) -> None:
    arr = tensor.detach().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<H", VERSION))
        _write_array(fh, arr)


def read_tensor(path) -> torch.Tensor:
    with open(path, "rb") as fh:
        if fh.read(4) != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a tensor file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        return torch.from_numpy(_read_array(fh))


def write_named_tensors(path, tensors: dict[str, np.ndarray | torch.Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            t = tensors[name]
            arr = t.detach().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
            _write_array(fh, arr)


def read_named_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            out[name] = _read_array(fh)
        return out


def save_checkpoint(model: torch.nn.Module, path) -> None:
    write_named_tensors(path, dict(model.named_parameters()))


def load_checkpoint(model: torch.nn.Module, path) -> None:
    tensors = read_named_tensors(path)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise ValueError(
            f"checkpoint/model mismatch; missing={missing[:5]}, extra={extra[:5]}"
        )
    with torch.no_grad():
        for name, p in params.items():
            arr = tensors[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ValueError(f"{name}: shape {arr.shape} != {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))


def write_ppm(path, frame: torch.Tensor, lo: float = -3.0, hi: float = 3.0) -> None:
    """8-bit binary PPM of one latent frame (C, H, W), mapping [lo, hi] to
    [0, 255]. The first three channels become RGB; fewer channels repeat."""
    if hi <= lo:
        raise ValueError("need hi > lo")
    c = frame.shape[0]
    chans = [frame[min(i, c - 1)] for i in range(3)]
    rgb = torch.stack(chans, dim=-1)  # (H, W, 3)
    scaled = ((rgb - lo) / (hi - lo) * 255.0).clamp(0, 255).round().to(torch.uint8)
    h, w = scaled.shape[0], scaled.shape[1]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(scaled.numpy().tobytes())
