"""Self-describing binary container for named arrays.

Layout: a uint64 little-endian length prefix, a UTF-8 JSON header, then raw
little-endian row-major array payloads at 64-byte-aligned absolute offsets.
The header carries the magic string "MRFB1", one entry per array (name,
dtype, shape, offset) and an optional free-form metadata object.
"""

import json

import numpy as np

MAGIC = "MRFB1"
ALIGNMENT = 64

# canonical on-disk dtypes, all little-endian
_DTYPES = {
    "float32": np.dtype("<f4"),
    "complex64": np.dtype("<c8"),
    "uint8": np.dtype("<u1"),
    "int32": np.dtype("<i4"),
}


class BundleError(Exception):
    """Base class for bundle I/O failures."""

    code = "bundle"


class HeaderError(BundleError):
    """Missing magic, unparseable JSON, or inconsistent header entries."""

    code = "corrupt-header"


class TruncatedError(BundleError):
    """Payload shorter than the header promises."""

    code = "truncated-payload"


class DtypeError(BundleError):
    """Array dtype not representable in the container."""

    code = "dtype-mismatch"


def _canonical_dtype(arr: np.ndarray) -> str:
    kind = arr.dtype.kind
    if kind == "f":
        return "float32"
    if kind == "c":
        return "complex64"
    if kind == "b" or (kind == "u" and arr.dtype.itemsize == 1):
        return "uint8"
    if kind in ("i", "u"):
        return "int32"
    raise DtypeError(f"cannot store dtype {arr.dtype}")


def _align(offset: int) -> int:
    return (offset + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def write_bundle(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus metadata; round-trips bitwise through read_bundle.

    Floating arrays are stored as float32/complex64, boolean as uint8 and
    integer as int32; pass arrays already in a canonical dtype for exact
    element round-trips.
    """
    converted = {}
    for name, arr in arrays.items():
        if not isinstance(name, str) or not name:
            raise ValueError("array names must be non-empty strings")
        a = np.asarray(arr)
        a = np.ascontiguousarray(a.astype(_DTYPES[_canonical_dtype(a)], copy=False))
        converted[name] = a

    # offsets depend on the header length, which depends on the offset digits;
    # iterate to a fixed point (grows monotonically, converges in a few passes)
    header_len = 0
    for _ in range(8):
        entries = []
        offset = _align(8 + header_len)
        for name, a in converted.items():
            offset = _align(offset)
            entries.append(
                {
                    "name": name,
                    "dtype": _canonical_dtype(a),
                    "shape": list(a.shape),
                    "offset": offset,
                }
            )
            offset += a.nbytes
        header = {"magic": MAGIC, "arrays": entries, "meta": meta or {}}
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        if len(blob) == header_len:
            break
        header_len = len(blob)
    else:
        raise RuntimeError("header layout did not converge")

    with open(path, "wb") as fh:
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        pos = 8 + len(blob)
        for entry, a in zip(entries, converted.values()):
            fh.write(b"\0" * (entry["offset"] - pos))
            fh.write(a.tobytes())
            pos = entry["offset"] + a.nbytes


def read_bundle(path) -> tuple[dict, dict]:
    """Read a bundle; returns (arrays, meta). Validates magic, offsets, shapes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    size = len(raw)
    if size < 8:
        raise HeaderError("file too short for a length prefix")
    header_len = int.from_bytes(raw[:8], "little")
    if 8 + header_len > size:
        raise HeaderError("header length exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise HeaderError("bad magic")

    entries = header.get("arrays")
    if not isinstance(entries, list):
        raise HeaderError("missing array table")
    arrays = {}
    spans = []
    for entry in entries:
        try:
            name = entry["name"]
            dtype_name = entry["dtype"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderError(f"malformed array entry: {exc}") from exc
        if dtype_name not in _DTYPES:
            raise DtypeError(f"unknown dtype {dtype_name!r}")
        dtype = _DTYPES[dtype_name]
        count = 1
        for s in shape:
            if s < 0:
                raise HeaderError("negative dimension")
            count *= s
        nbytes = count * dtype.itemsize
        if offset < 8 + header_len or offset % ALIGNMENT:
            raise HeaderError(f"bad offset {offset} for array {name!r}")
        if offset + nbytes > size:
            raise TruncatedError(
                f"array {name!r} needs bytes [{offset}, {offset + nbytes}) "
                f"but the file has {size}"
            )
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()

    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise HeaderError(f"overlapping payloads: {name_a!r} and {name_b!r}")

    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise HeaderError("meta must be an object")
    return arrays, meta
