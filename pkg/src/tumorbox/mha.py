"""Uncompressed MetaImage (.mha/.mhd) reading and writing.

Covers exactly the subset BraTS 2015 ships: NDims=3, binary uncompressed
payload, stored inline (``ElementDataFile = LOCAL``) or in a sibling raw
file. Anything else is rejected rather than guessed at.
"""

import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedDataError, UnsupportedFeatureError
from .volume import KIND_INTENSITY, KIND_LABEL, Volume

log = logging.getLogger(__name__)

ELEMENT_DTYPES = {
    "MET_SHORT": np.int16,
    "MET_USHORT": np.uint16,
    "MET_FLOAT": np.float32,
}

# Keys we act on. BinaryData/CompressedData are parsed to reject what we
# cannot handle; everything else is ignored with a warning.
_KNOWN_KEYS = {
    "ObjectType",
    "NDims",
    "DimSize",
    "ElementType",
    "ElementByteOrderMSB",
    "BinaryDataByteOrderMSB",
    "ElementSpacing",
    "ElementDataFile",
    "BinaryData",
    "CompressedData",
}


def _parse_bool(key: str, text: str) -> bool:
    if text == "True":
        return True
    if text == "False":
        return False
    raise FormatError(f"unparseable header key {key}: expected True/False, got {text!r}")


def _read_header(fh) -> dict:
    """Parse 'Key = Value' lines up to and including ElementDataFile."""
    header = {}
    while True:
        raw = fh.readline()
        if not raw:
            raise FormatError("missing header key ElementDataFile: header ended early")
        try:
            line = raw.decode("ascii").rstrip("\r\n")
        except UnicodeDecodeError as exc:
            raise FormatError(f"header is not ASCII text: {exc}") from exc
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"unparseable header line: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            log.warning("ignoring MetaImage header key %s", key)
            continue
        header[key] = value
        if key == "ElementDataFile":
            return header


def read_mha(path, kind: str = KIND_INTENSITY) -> Volume:
    """Read an uncompressed 3-D MetaImage file into a Volume.

    ``kind`` selects the in-memory representation: "intensity" converts the
    payload to float64, "label" to int16 (and validates the BraTS label set).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh)

        if header.get("ObjectType", "Image") != "Image":
            raise UnsupportedFeatureError(
                f"ObjectType {header['ObjectType']!r} not supported (only Image)"
            )
        if "NDims" in header:
            try:
                ndims = int(header["NDims"])
            except ValueError as exc:
                raise FormatError(f"unparseable header key NDims: {header['NDims']!r}") from exc
            if ndims != 3:
                raise UnsupportedFeatureError(f"NDims={ndims} not supported (only 3)")
        else:
            raise FormatError("missing header key NDims")

        if header.get("BinaryData", "True") != "True":
            raise UnsupportedFeatureError("ASCII MetaImage payload not supported")
        if "CompressedData" in header and _parse_bool("CompressedData", header["CompressedData"]):
            raise UnsupportedFeatureError("compressed MetaImage data not supported")

        if "DimSize" not in header:
            raise FormatError("missing header key DimSize")
        try:
            dims = tuple(int(tok) for tok in header["DimSize"].split())
        except ValueError as exc:
            raise FormatError(f"unparseable header key DimSize: {header['DimSize']!r}") from exc
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise FormatError(f"DimSize must be three positive integers, got {header['DimSize']!r}")
        width, height, depth = dims

        if "ElementType" not in header:
            raise FormatError("missing header key ElementType")
        element_type = header["ElementType"]
        if element_type not in ELEMENT_DTYPES:
            raise UnsupportedFeatureError(
                f"ElementType {element_type} not supported "
                f"(one of {sorted(ELEMENT_DTYPES)})"
            )

        msb = False
        for key in ("BinaryDataByteOrderMSB", "ElementByteOrderMSB"):
            if key in header:
                msb = _parse_bool(key, header[key])

        spacing = (1.0, 1.0, 1.0)
        if "ElementSpacing" in header:
            try:
                parts = tuple(float(tok) for tok in header["ElementSpacing"].split())
            except ValueError as exc:
                raise FormatError(
                    f"unparseable header key ElementSpacing: {header['ElementSpacing']!r}"
                ) from exc
            if len(parts) == 3:
                spacing = parts

        data_file = header["ElementDataFile"]
        if data_file in ("LIST",) or "%" in data_file:
            raise UnsupportedFeatureError(
                f"ElementDataFile {data_file!r} not supported (only LOCAL or a raw file)"
            )
        if data_file == "LOCAL":
            payload = fh.read()
        else:
            raw_path = path.parent / data_file
            with open(raw_path, "rb") as raw:
                payload = raw.read()

    dtype = np.dtype(ELEMENT_DTYPES[element_type]).newbyteorder(">" if msb else "<")
    expected = width * height * depth * dtype.itemsize
    if len(payload) < expected:
        raise TruncatedDataError(
            f"payload has {len(payload)} bytes, {expected} expected for "
            f"{width}x{height}x{depth} {element_type}"
        )
    if len(payload) > expected:
        log.warning("ignoring %d trailing payload bytes in %s", len(payload) - expected, path)

    flat = np.frombuffer(payload[:expected], dtype=dtype)
    grid = flat.reshape(depth, height, width)
    if kind == KIND_LABEL:
        data = grid.astype(np.int16)
    else:
        data = grid.astype(np.float64)
    return Volume(
        data=data,
        kind=kind,
        element_type=element_type,
        byte_order_msb=msb,
        spacing=spacing,
    )


def _element_type_for(volume: Volume) -> str:
    if volume.element_type is not None:
        return volume.element_type
    return "MET_SHORT" if volume.kind == KIND_LABEL else "MET_FLOAT"


def write_mha(volume: Volume, path) -> None:
    """Write ``volume`` as an uncompressed MetaImage with inline payload.

    The write is atomic (temp file + rename). Reading the result back with
    :func:`read_mha` reproduces dims and data; intensity values must be
    float32-representable for the round trip to be exact, which everything
    this package produces is.
    """
    path = Path(path)
    element_type = _element_type_for(volume)
    if element_type not in ELEMENT_DTYPES:
        raise UnsupportedFeatureError(f"cannot write ElementType {element_type}")
    dtype = np.dtype(ELEMENT_DTYPES[element_type]).newbyteorder(
        ">" if volume.byte_order_msb else "<"
    )
    width, height, depth = volume.dims
    spacing = " ".join(f"{s:g}" for s in volume.spacing)
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        f"BinaryDataByteOrderMSB = {volume.byte_order_msb}\n"
        "CompressedData = False\n"
        f"ElementSpacing = {spacing}\n"
        f"DimSize = {width} {height} {depth}\n"
        f"ElementType = {element_type}\n"
        "ElementDataFile = LOCAL\n"
    )
    payload = np.ascontiguousarray(volume.data, dtype=dtype).tobytes()

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
