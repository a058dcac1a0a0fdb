"""Binary checkpoint format (little-endian throughout).

====================  ==========================================
field                 encoding
====================  ==========================================
magic                 4 bytes ``b"IDPO"``
version               u32, currently 1
schedule.T            u32
schedule.alpha        (T + 1) x f64
model.data_dim        u32
model.time_dim        u32
model.n_conditions    u32
model.n_layers        u32 (always 3)
model.dims            (n_layers + 1) x u32
params                W1, b1, W2, b2, W3, b3 as f64, row-major,
                      W stored (fan_in, fan_out)
====================  ==========================================

Nothing may follow the last parameter.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .denoiser import Denoiser
from .errors import FormatError
from .schedule import NoiseSchedule

MAGIC = b"IDPO"
VERSION = 1


def checkpoint_bytes(model: Denoiser, schedule: NoiseSchedule) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<I", schedule.T))
    parts.append(np.ascontiguousarray(schedule.alpha, dtype="<f8").tobytes())
    dims = model.layer_dims
    parts.append(struct.pack("<4I", model.data_dim, model.time_dim, model.n_conditions, len(dims) - 1))
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for p in model.params:
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Denoiser, schedule: NoiseSchedule, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, schedule))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, section: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(
                f"truncated checkpoint: need {n} bytes, {len(self.buf) - self.off} left",
                offset=self.off,
                section=section,
            )
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, count: int, section: str):
        return struct.unpack(f"<{count}I", self.take(4 * count, section))

    def f64(self, count: int, section: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, section), dtype="<f8").astype(np.float64)


def parse_checkpoint(buf: bytes) -> tuple[Denoiser, NoiseSchedule]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0, section="magic")
    (version,) = r.u32(1, "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, section="version")
    (T,) = r.u32(1, "schedule")
    if T < 1:
        raise FormatError("schedule has T=0", offset=r.off - 4, section="schedule")
    alpha = r.f64(T + 1, "schedule")
    try:
        schedule = NoiseSchedule(T=T, alpha=alpha)
    except ValueError as exc:
        raise FormatError(f"invalid schedule: {exc}", offset=r.off, section="schedule") from exc
    start = r.off
    data_dim, time_dim, n_cond, n_layers = r.u32(4, "layer dims")
    if n_layers != 3:
        raise FormatError(f"expected 3 layers, got {n_layers}", offset=start + 12, section="layer dims")
    dims = r.u32(n_layers + 1, "layer dims")
    if dims[0] != data_dim + time_dim + n_cond or dims[-1] != data_dim or dims[1] != dims[2]:
        raise FormatError(f"inconsistent layer dims {dims}", offset=start, section="layer dims")
    model = Denoiser(data_dim=data_dim, n_conditions=n_cond, hidden=dims[1], time_dim=time_dim)
    params = []
    for name, sh in zip(("W1", "b1", "W2", "b2", "W3", "b3"), model.param_shapes()):
        params.append(r.f64(int(np.prod(sh)), f"params.{name}").reshape(sh))
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes", offset=r.off, section="trailer")
    model.params = params
    return model, schedule


def load_checkpoint(path) -> tuple[Denoiser, NoiseSchedule]:
    return parse_checkpoint(Path(path).read_bytes())
