"""MetaImage (``.mhd`` + ``.raw``) reader and writer for B-mode images.

Only uncompressed, detached-data images are produced. Besides the standard
keys the header carries ``Timestamp`` (frame timestamp in nanoseconds), which
other readers ignore. A mask that is not all true is stored next to the image
as ``<stem>_mask.mhd`` with unsigned-char elements.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..frames import BModeImage

logger = logging.getLogger(__name__)

ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_CHAR": np.dtype("<i1"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_UINT": np.dtype("<u4"),
    "MET_INT": np.dtype("<i4"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}
_TYPE_NAMES = {v.newbyteorder("="): k for k, v in ELEMENT_TYPES.items()}
REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementDataFile")


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _element_type(dtype: np.dtype) -> str:
    try:
        return _TYPE_NAMES[np.dtype(dtype).newbyteorder("=")]
    except KeyError:
        raise FormatError(f"no MetaImage element type for {dtype}") from None


def _write_pair(path: Path, data: np.ndarray, image: BModeImage, timestamp: bool):
    raw_path = path.with_suffix(".raw")
    ndim = image.ndim
    eye = " ".join("1" if i == j else "0" for i in range(ndim) for j in range(ndim))
    lines = [
        "ObjectType = Image",
        f"NDims = {ndim}",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"TransformMatrix = {eye}",
        f"Offset = {_fmt(image.origin)}",
        f"ElementSpacing = {_fmt([image.spacing] * ndim)}",
        # MetaImage lists the fastest axis first, array axes are [z, (y,) x]
        f"DimSize = {' '.join(str(n) for n in data.shape[::-1])}",
        f"ElementType = {_element_type(data.dtype)}",
    ]
    if timestamp:
        lines.append(f"Timestamp = {int(image.timestamp)}")
    lines.append(f"ElementDataFile = {raw_path.name}")
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(raw_path, "wb") as fh:
            fh.write(np.ascontiguousarray(data).astype(data.dtype.newbyteorder("<"), copy=False).tobytes())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write MetaImage {path}: {exc.strerror}") from exc


def mask_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_mask.mhd")


def write_mhd(image: BModeImage, path) -> Path:
    """Write ``image`` to ``path`` (``.mhd``) plus its ``.raw`` payload.

    Output is deterministic: equal images give byte-identical files.
    """
    path = Path(path)
    if path.suffix.lower() != ".mhd":
        path = path.with_suffix(".mhd")
    _write_pair(path, image.intensities, image, timestamp=True)
    mpath = mask_path(path)
    if not image.mask.all():
        _write_pair(mpath, image.mask.astype(np.uint8), image, timestamp=False)
    else:
        # a stale mask from an earlier write would otherwise be picked up on read
        mpath.unlink(missing_ok=True)
        mpath.with_suffix(".raw").unlink(missing_ok=True)
    return path


def read_header(path) -> dict[str, str]:
    """Parse ``key = value`` lines; malformed lines raise with their byte offset."""
    return _parse_header(Path(path))[0]


def _parse_header(path: Path):
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read MetaImage {path}: {exc.strerror}") from exc
    header: dict[str, str] = {}
    offsets: dict[str, int] = {}
    pos = 0
    for raw_line in blob.splitlines(keepends=True):
        start = pos
        pos += len(raw_line)
        try:
            line = raw_line.decode("ascii").strip()
        except UnicodeDecodeError:
            raise FormatError("header is not ASCII text", path, start) from None
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"expected 'key = value', got {line[:40]!r}", path, start)
        key = key.strip()
        header[key] = value.strip()
        offsets[key] = start
        if key == "ElementDataFile":
            break
    return header, offsets


def _numbers(header, offsets, key, path, conv, count):
    try:
        vals = [conv(v) for v in header[key].split()]
    except ValueError:
        raise FormatError(f"{key} has non-numeric entries: {header[key]!r}", path, offsets[key]) from None
    if len(vals) != count:
        raise FormatError(f"{key} needs {count} values, got {len(vals)}", path, offsets[key])
    return vals


def _read_pair(path: Path):
    header, offsets = _parse_header(path)
    for key in REQUIRED_KEYS:
        if key not in header:
            raise FormatError(f"header is missing required key {key}", path, path.stat().st_size)
    if header.get("ObjectType", "Image") != "Image":
        raise FormatError(f"unsupported ObjectType {header['ObjectType']!r}", path, offsets["ObjectType"])
    try:
        ndim = int(header["NDims"])
    except ValueError:
        ndim = 0
    if ndim not in (2, 3):
        raise FormatError(f"NDims must be 2 or 3, got {header['NDims']!r}", path, offsets["NDims"])
    dims = _numbers(header, offsets, "DimSize", path, int, ndim)
    if any(d < 1 for d in dims):
        raise FormatError(f"DimSize entries must be positive, got {dims}", path, offsets["DimSize"])
    spacing = _numbers(header, offsets, "ElementSpacing", path, float, ndim) if "ElementSpacing" in header else [1.0] * ndim
    origin = _numbers(header, offsets, "Offset", path, float, ndim) if "Offset" in header else [0.0] * ndim
    if header.get("CompressedData", "False").lower() == "true":
        raise FormatError("compressed MetaImage data is not supported", path, offsets["CompressedData"])
    etype = header["ElementType"]
    if etype not in ELEMENT_TYPES:
        raise FormatError(f"unsupported ElementType {etype}", path, offsets["ElementType"])
    dtype = ELEMENT_TYPES[etype]
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        dtype = dtype.newbyteorder(">")
    data_name = header["ElementDataFile"]
    if data_name.upper() == "LOCAL":
        raise FormatError("inline (LOCAL) data is not supported", path, offsets["ElementDataFile"])
    data_path = path.parent / data_name
    expected = int(np.prod(dims)) * dtype.itemsize
    try:
        payload = data_path.read_bytes()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read MetaImage data {data_path}: {exc.strerror}") from exc
    if len(payload) != expected:
        raise FormatError(f"payload holds {len(payload)} bytes, expected {expected}", data_path, 0)
    data = np.frombuffer(payload, dtype=dtype).reshape(dims[::-1]).astype(dtype.newbyteorder("="))
    ts = header.get("Timestamp")
    try:
        timestamp = int(ts) if ts is not None else 0
    except ValueError:
        raise FormatError(f"Timestamp must be an integer, got {ts!r}", path, offsets["Timestamp"]) from None
    return data, spacing, origin, timestamp


def read_mhd(path) -> BModeImage:
    """Read an image written by :func:`write_mhd` (or any 2-D/3-D detached MetaImage).

    Raises
    ------
    FormatError
        For malformed headers (with the byte offset of the offending line),
        anisotropic spacing or payload size mismatches.
    """
    path = Path(path)
    data, spacing, origin, timestamp = _read_pair(path)
    if any(s != spacing[0] for s in spacing):
        raise FormatError(f"only isotropic spacing is supported, got {spacing}", path)
    mask = None
    mpath = mask_path(path)
    if mpath.exists():
        mdata, _, _, _ = _read_pair(mpath)
        if mdata.shape != data.shape:
            raise FormatError(f"mask shape {mdata.shape} does not match image {data.shape}", mpath)
        mask = mdata.astype(bool)
    return BModeImage(data, spacing[0], tuple(origin), mask=mask, timestamp=timestamp)
