"""The STNS binary tensor format and STNS archives.

Layout: magic ``STNS``, u8 version (1), u8 dtype code (1=f32, 2=f64),
u8 rank, one zero byte, then rank little-endian u32 dims, then the
row-major payload, little-endian. Readers and writers are bit-exact.

An archive is an uncompressed zip of ``<name>.stns`` entries plus a
line-based ``key=value`` manifest, written with fixed timestamps so
identical contents produce identical bytes.
"""

from __future__ import annotations

import io
import struct
import zipfile

import numpy as np

MAGIC = b"STNS"
VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
MAX_RANK = 5


class StnsFormatError(ValueError):
    """Corrupt or unsupported STNS data."""


def dumps(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _CODE_OF:
        raise StnsFormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if not 1 <= arr.ndim <= MAX_RANK:
        raise StnsFormatError(f"rank must be in [1, {MAX_RANK}], got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise StnsFormatError(f"dims must be >= 1, got {arr.shape}")
    head = MAGIC + struct.pack("<BBBB", VERSION, _CODE_OF[arr.dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    return head + dims + payload


def loads(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise StnsFormatError("bad magic; not an STNS tensor")
    version, code, rank, pad = struct.unpack("<BBBB", data[4:8])
    if version != VERSION:
        raise StnsFormatError(f"unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise StnsFormatError(f"unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK or pad != 0:
        raise StnsFormatError(f"corrupt header (rank={rank}, pad={pad})")
    if len(data) < 8 + 4 * rank:
        raise StnsFormatError("truncated dims")
    dims = struct.unpack(f"<{rank}I", data[8 : 8 + 4 * rank])
    if any(d < 1 for d in dims):
        raise StnsFormatError(f"dims must be >= 1, got {dims}")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims))
    body = data[8 + 4 * rank :]
    if len(body) != count * dtype.itemsize:
        raise StnsFormatError(f"payload size {len(body)} != expected {count * dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arr))


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())


# ---------------------------------------------------------------------------
# Archives

_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed so archives are byte-deterministic


def format_manifest(entries: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in entries.items())


def parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise StnsFormatError(f"bad manifest line: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_archive(path, tensors: dict[str, np.ndarray], manifest: dict[str, str]) -> None:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(tensors):
            info = zipfile.ZipInfo(name + ".stns", date_time=_EPOCH)
            zf.writestr(info, dumps(tensors[name]))
        info = zipfile.ZipInfo("manifest.txt", date_time=_EPOCH)
        zf.writestr(info, format_manifest(manifest))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_archive(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if not zipfile.is_zipfile(path):
        raise StnsFormatError(f"{path} is not an STNS archive")
    tensors: dict[str, np.ndarray] = {}
    manifest: dict[str, str] = {}
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            data = zf.read(name)
            if name == "manifest.txt":
                manifest = parse_manifest(data.decode("utf-8"))
            elif name.endswith(".stns"):
                tensors[name[: -len(".stns")]] = loads(data)
            else:
                raise StnsFormatError(f"unexpected archive member {name!r}")
    return tensors, manifest
