"""
Weights Container.

Binary layout, all fields little-endian:

    header   magic b"NNW1" | version u16 | n_layers u16 | payload_length u64
    payload  layer table, n_layers x (kind u8 | activation u8 | reserved u16 |
             input_width u32 | output_width u32)
             normalization block, 18 x f64 (input offset, input scale,
             output offset, output scale)
             parameter block, parameter_count x f64 (NetworkWeights.to_vector order)
    trailer  CRC32 of header + payload, u32

Loading reports each failure mode with its own exception: bad magic, unsupported
version, truncated file, checksum mismatch. A JSON export with repr-precision
floats is provided for diffing; it round-trips bit-exactly as well.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from os import PathLike
from pathlib import Path

import numpy as np

from lstm_nmpc.errors import (
    WeightsChecksumError,
    WeightsFileError,
    WeightsMagicError,
    WeightsTruncatedError,
    WeightsVersionError,
)
from lstm_nmpc.nn_core import (
    ACTIVATIONS,
    LAYER_KINDS,
    LayerSpec,
    NetworkSpec,
    NetworkWeights,
    Normalization,
)

logger = logging.getLogger(__name__)

MAGIC = b"NNW1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHQ")
LAYER_ENTRY = struct.Struct("<BBHII")
TRAILER = struct.Struct("<I")
NORMALIZATION_SIZE = 18


def encode_weights(weights: NetworkWeights) -> bytes:
    """Serialise weights into the binary container format."""
    table = b"".join(
        LAYER_ENTRY.pack(
            LAYER_KINDS.index(layer.kind),
            ACTIVATIONS.index(layer.activation),
            0,
            layer.input_width,
            layer.output_width,
        )
        for layer in weights.spec.layers
    )
    block = np.concatenate([weights.normalization.as_vector(), weights.to_vector()])
    payload = table + block.astype("<f8").tobytes()
    header = HEADER.pack(MAGIC, FORMAT_VERSION, len(weights.spec.layers), len(payload))
    body = header + payload
    return body + TRAILER.pack(zlib.crc32(body))


def decode_weights(data: bytes) -> NetworkWeights:
    """
    Parse a binary weights container.

    Raises:
        WeightsTruncatedError: If the data ends before the declared contents.
        WeightsMagicError: If the magic is wrong.
        WeightsVersionError: If the format version is unsupported.
        WeightsChecksumError: If the CRC32 trailer does not match.
        WeightsFileError: If the contents are internally inconsistent.
    """
    if len(data) < HEADER.size:
        raise WeightsTruncatedError(f"{len(data)} bytes is shorter than the header")
    magic, version, n_layers, payload_length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WeightsMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WeightsVersionError(
            f"format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    expected = HEADER.size + payload_length + TRAILER.size
    if len(data) < expected:
        raise WeightsTruncatedError(f"expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise WeightsFileError(f"{len(data) - expected} unexpected trailing bytes")
    body = data[: HEADER.size + payload_length]
    (stored_crc,) = TRAILER.unpack_from(data, len(body))
    if zlib.crc32(body) != stored_crc:
        raise WeightsChecksumError("CRC32 mismatch")

    offset = HEADER.size
    layers = []
    for _ in range(n_layers):
        kind, activation, _, input_width, output_width = LAYER_ENTRY.unpack_from(data, offset)
        offset += LAYER_ENTRY.size
        try:
            layers.append(
                LayerSpec(LAYER_KINDS[kind], input_width, output_width, ACTIVATIONS[activation])
            )
        except IndexError as exc:
            raise WeightsFileError(f"unknown layer code in table: {exc}") from exc
    spec = NetworkSpec(tuple(layers))
    block = np.frombuffer(body, dtype="<f8", offset=offset).astype(float)
    if block.size != NORMALIZATION_SIZE + spec.parameter_count:
        raise WeightsFileError(
            f"parameter block holds {block.size - NORMALIZATION_SIZE} values, "
            f"architecture needs {spec.parameter_count}"
        )
    normalization = Normalization.from_vector(block[:NORMALIZATION_SIZE])
    return NetworkWeights.from_vector(spec, block[NORMALIZATION_SIZE:], normalization)


def save_weights(weights: NetworkWeights, destination: str | PathLike) -> Path:
    """Write weights to `destination` in the binary container format."""
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(weights))
    logger.info("Saved %d parameters to %s", weights.parameter_count, path)
    return path


def load_weights(source: str | PathLike) -> NetworkWeights:
    """Read weights written by `save_weights`."""
    path = Path(source)
    weights = decode_weights(path.read_bytes())
    logger.info("Loaded %d parameters from %s", weights.parameter_count, path)
    return weights


def export_weights_json(weights: NetworkWeights, destination: str | PathLike) -> Path:
    """Write a human-readable, lossless JSON copy of the weights."""
    document = {
        "format": "nnw-json",
        "version": FORMAT_VERSION,
        "layers": [
            {
                "kind": layer.kind,
                "input_width": layer.input_width,
                "output_width": layer.output_width,
                "activation": layer.activation,
            }
            for layer in weights.spec.layers
        ],
        "normalization": {
            "input_offset": weights.normalization.input_offset.tolist(),
            "input_scale": weights.normalization.input_scale.tolist(),
            "output_offset": weights.normalization.output_offset.tolist(),
            "output_scale": weights.normalization.output_scale.tolist(),
        },
        "params": [[array.tolist() for array in group] for group in weights.params],
    }
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=1), encoding="utf-8")
    return path


def import_weights_json(source: str | PathLike) -> NetworkWeights:
    """Read weights written by `export_weights_json`."""
    document = json.loads(Path(source).read_text(encoding="utf-8"))
    if document.get("format") != "nnw-json":
        raise WeightsMagicError("not a weights JSON export")
    if document.get("version") != FORMAT_VERSION:
        raise WeightsVersionError(f"JSON export version {document.get('version')}")
    spec = NetworkSpec(tuple(LayerSpec(**entry) for entry in document["layers"]))
    normalization = Normalization(**document["normalization"])
    groups = tuple(
        tuple(np.array(array, dtype=float) for array in group) for group in document["params"]
    )
    return NetworkWeights(spec, groups, normalization)
