"""Mono12p packing and the on-disk cube container.

Mono12p (GenICam PFNC) stores two 12-bit samples in three bytes::

    byte0 = p0[7:0]
    byte1 = p1[3:0] << 4 | p0[11:8]
    byte2 = p1[11:4]

A trailing odd sample takes two bytes, the high nibble of the second one
being zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError

MAX12 = 4095
HSI_CHANNELS = 224

PACKINGS = ("mono12p", "u8", "u16", "f32")


@dataclass(frozen=True)
class Mono12pBuffer:
    data: bytes
    pixel_count: int

    def __post_init__(self):
        if self.pixel_count < 0:
            raise FormatError("pixel_count must be non-negative")
        if len(self.data) != packed_size(self.pixel_count):
            raise FormatError(
                f"buffer holds {len(self.data)} bytes, {packed_size(self.pixel_count)} expected "
                f"for {self.pixel_count} pixels"
            )


def packed_size(n: int) -> int:
    """Number of bytes needed for ``n`` mono12p samples: ceil(3n/2)."""
    return (3 * n + 1) // 2


def pack_mono12p(values) -> Mono12pBuffer:
    v = np.asarray(values)
    if v.size and not np.issubdtype(v.dtype, np.integer):
        if not np.all(np.equal(np.mod(v, 1), 0)):
            raise ValueError("mono12p values must be integers")
    v = v.reshape(-1).astype(np.int64)
    bad = np.flatnonzero((v < 0) | (v > MAX12))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"value {int(v[i])} at index {i} outside 12-bit range [0, 4095]")

    n = v.size
    out = np.zeros(packed_size(n), dtype=np.uint8)
    npairs = n // 2
    p0 = v[0 : 2 * npairs : 2]
    p1 = v[1 : 2 * npairs : 2]
    out[0 : 3 * npairs : 3] = p0 & 0xFF
    out[1 : 3 * npairs : 3] = ((p0 >> 8) & 0x0F) | ((p1 & 0x0F) << 4)
    out[2 : 3 * npairs : 3] = p1 >> 4
    if n % 2:
        last = v[-1]
        out[-2] = last & 0xFF
        out[-1] = (last >> 8) & 0x0F
    return Mono12pBuffer(out.tobytes(), n)


def unpack_mono12p(buf: Mono12pBuffer | bytes, pixel_count: int | None = None) -> np.ndarray:
    """Decode a mono12p buffer into a ``uint16`` array.

    ``buf`` may be raw bytes, in which case ``pixel_count`` defaults to the
    largest count consistent with the length (an even count when the length
    is a multiple of three).
    """
    if isinstance(buf, Mono12pBuffer):
        data, n = buf.data, buf.pixel_count
    else:
        data = bytes(buf)
        if pixel_count is None:
            nbytes = len(data)
            pixel_count = (nbytes // 3) * 2 + (1 if nbytes % 3 == 2 else 0)
            if nbytes % 3 == 1:
                raise FormatError(f"{nbytes} bytes is not a valid mono12p length")
        n = pixel_count
    if len(data) != packed_size(n):
        raise FormatError(f"buffer holds {len(data)} bytes, {packed_size(n)} expected for {n} pixels")

    b = np.frombuffer(data, dtype=np.uint8).astype(np.uint16)
    out = np.empty(n, dtype=np.uint16)
    npairs = n // 2
    b0 = b[0 : 3 * npairs : 3]
    b1 = b[1 : 3 * npairs : 3]
    b2 = b[2 : 3 * npairs : 3]
    out[0 : 2 * npairs : 2] = b0 | ((b1 & 0x0F) << 8)
    out[1 : 2 * npairs : 2] = (b1 >> 4) | (b2 << 4)
    if n % 2:
        if b[-1] & 0xF0:
            raise FormatError("non-zero padding nibble in trailing mono12p sample")
        out[-1] = b[-2] | ((b[-1] & 0x0F) << 8)
    return out


@dataclass
class ImageCube:
    """An H x W x C intensity volume.

    Raw frames hold integer counts (8-bit RGB, 12-bit HSI). Corrected
    plates set ``reflectance`` and hold real-valued data.
    """

    data: np.ndarray
    modality: str = "RGB"
    bit_depth: int = 8
    reflectance: bool = False
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise FormatError(f"cube data must be 3-D, got shape {self.data.shape}")
        if self.modality not in ("RGB", "HSI"):
            raise FormatError(f"unknown modality {self.modality!r}")
        if self.bit_depth not in (8, 12):
            raise FormatError(f"unsupported bit depth {self.bit_depth}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def validate(self) -> None:
        if self.reflectance:
            if not np.all(np.isfinite(self.data)):
                raise FormatError("reflectance cube contains non-finite values")
            return
        d = self.data
        if np.issubdtype(d.dtype, np.floating) and not np.all(np.equal(np.mod(d, 1), 0)):
            raise FormatError("integer cube contains fractional values")
        if d.size and (d.min() < 0 or d.max() >= 2**self.bit_depth):
            raise FormatError(f"values outside [0, {2**self.bit_depth - 1}]")


def _header_path(path: str | Path) -> Path:
    p = Path(path)
    if p.name.endswith(".cube.json"):
        return p
    return p.with_name(p.name + ".cube.json")


def _default_packing(cube: ImageCube) -> str:
    if cube.reflectance:
        return "f32"
    return "mono12p" if cube.bit_depth == 12 else "u8"


def write_cube(cube: ImageCube, path: str | Path, packing: str | None = None) -> Path:
    """Write ``cube`` as ``<name>.cube.json`` plus a raw payload file.

    Returns the header path.
    """
    cube.validate()
    packing = packing or _default_packing(cube)
    if packing not in PACKINGS:
        raise FormatError(f"unknown packing {packing!r}")
    header_path = _header_path(path)
    stem = header_path.name[: -len(".cube.json")]
    payload_name = f"{stem}.{packing}.raw"

    flat = cube.data.reshape(-1)
    if packing == "mono12p":
        if cube.bit_depth != 12 or cube.reflectance:
            raise FormatError("mono12p packing requires a 12-bit integer cube")
        payload = pack_mono12p(flat.astype(np.int64)).data
    elif packing == "u8":
        if cube.bit_depth != 8 or cube.reflectance:
            raise FormatError("u8 packing requires an 8-bit integer cube")
        payload = flat.astype(np.uint8).tobytes()
    elif packing == "u16":
        if cube.reflectance:
            raise FormatError("u16 packing requires an integer cube")
        payload = flat.astype("<u2").tobytes()
    else:
        payload = flat.astype("<f4").tobytes()

    header = {
        "height": cube.height,
        "width": cube.width,
        "channels": cube.channels,
        "bit_depth": cube.bit_depth,
        "modality": cube.modality,
        "payload_file": payload_name,
        "packing": packing,
        "reflectance": bool(cube.reflectance),
    }
    if cube.meta:
        header["meta"] = cube.meta
    header_path.parent.mkdir(parents=True, exist_ok=True)
    (header_path.parent / payload_name).write_bytes(payload)
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header_path


def read_cube(path: str | Path, header: dict | None = None) -> ImageCube:
    """Read a cube container; ``header`` overrides the JSON sidecar if given."""
    header_path = _header_path(path)
    if header is None:
        try:
            header = json.loads(header_path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{header_path}: invalid header JSON ({exc})") from exc
    try:
        h, w, c = int(header["height"]), int(header["width"]), int(header["channels"])
        bit_depth = int(header["bit_depth"])
        packing = header["packing"]
        modality = header["modality"]
        payload_file = header["payload_file"]
    except KeyError as exc:
        raise FormatError(f"{header_path}: header missing {exc.args[0]!r}") from exc
    if bit_depth not in (8, 12):
        raise FormatError(f"{header_path}: unknown bit depth {bit_depth}")
    if packing not in PACKINGS:
        raise FormatError(f"{header_path}: unknown packing {packing!r}")

    raw = (header_path.parent / payload_file).read_bytes()
    n = h * w * c
    if packing == "mono12p":
        if len(raw) != packed_size(n):
            raise FormatError(f"{header_path}: payload has {len(raw)} bytes, expected {packed_size(n)}")
        flat = unpack_mono12p(Mono12pBuffer(raw, n))
    else:
        dtype = {"u8": np.uint8, "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}[packing]
        itemsize = np.dtype(dtype).itemsize
        if len(raw) != n * itemsize:
            raise FormatError(f"{header_path}: payload has {len(raw)} bytes, expected {n * itemsize}")
        flat = np.frombuffer(raw, dtype=dtype).copy()
        if packing == "u16":
            flat = flat.astype(np.uint16)
        elif packing == "f32":
            flat = flat.astype(np.float32)
    cube = ImageCube(
        flat.reshape(h, w, c),
        modality=modality,
        bit_depth=bit_depth,
        reflectance=bool(header.get("reflectance", packing == "f32")),
        meta=dict(header.get("meta", {})),
    )
    cube.validate()
    return cube


def convert_file(src: str | Path, dst: str | Path, to: str) -> Path:
    """Convert between mono12p and uint16.

    Cube containers are rewritten with the requested packing; any other file
    is treated as a bare sample stream (mono12p bytes or little-endian u16).
    """
    if to not in ("u16", "mono12p"):
        raise ValueError(f"unsupported target {to!r}")
    src, dst = Path(src), Path(dst)
    if src.name.endswith(".cube.json") or (not src.exists() and _header_path(src).exists()):
        return write_cube(read_cube(src), dst, packing=to)
    raw = src.read_bytes()
    if to == "u16":
        values = unpack_mono12p(raw)
        dst.write_bytes(values.astype("<u2").tobytes())
    else:
        if len(raw) % 2:
            raise FormatError(f"{src}: odd byte count for a u16 stream")
        values = np.frombuffer(raw, dtype="<u2")
        dst.write_bytes(pack_mono12p(values).data)
    return dst
