"""Weights container: layout, round trips and the four distinct failure modes."""

import struct
import zlib

import numpy as np
import pytest
from conftest import make_random_weights

from lstm_nmpc.errors import (
    WeightsChecksumError,
    WeightsFileError,
    WeightsMagicError,
    WeightsTruncatedError,
    WeightsVersionError,
)
from lstm_nmpc.nn_core import NetworkSpec
from lstm_nmpc.weights_io import (
    HEADER,
    decode_weights,
    encode_weights,
    export_weights_json,
    import_weights_json,
    load_weights,
    save_weights,
)


@pytest.fixture
def default_weights():
    return make_random_weights(NetworkSpec.default(), seed=9)


def test_save_then_load_is_parameter_wise_equal(tmp_path, default_weights):
    path = save_weights(default_weights, tmp_path / "model" / "weights.nnw")
    loaded = load_weights(path)
    assert loaded == default_weights
    np.testing.assert_array_equal(loaded.to_vector(), default_weights.to_vector())
    assert loaded.parameter_count == 2300


def test_header_layout(default_weights):
    data = encode_weights(default_weights)
    magic, version, n_layers, payload_length = HEADER.unpack_from(data)
    assert (magic, version, n_layers) == (b"NNW1", 1, len(default_weights.spec.layers))
    assert len(data) == HEADER.size + payload_length + 4
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    assert crc == zlib.crc32(data[:-4])


def test_corrupted_parameter_byte_fails_checksum(default_weights):
    data = bytearray(encode_weights(default_weights))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(WeightsChecksumError):
        decode_weights(bytes(data))


def test_bad_magic(default_weights):
    data = bytearray(encode_weights(default_weights))
    data[0] = ord("X")
    with pytest.raises(WeightsMagicError):
        decode_weights(bytes(data))


def test_unsupported_version(default_weights):
    data = bytearray(encode_weights(default_weights))
    struct.pack_into("<H", data, 4, 2)
    with pytest.raises(WeightsVersionError):
        decode_weights(bytes(data))


@pytest.mark.parametrize("keep", [0, 10, -1, -200])
def test_truncated_file(default_weights, keep):
    data = encode_weights(default_weights)
    with pytest.raises(WeightsTruncatedError):
        decode_weights(data[:keep])


def test_trailing_bytes_rejected(default_weights):
    with pytest.raises(WeightsFileError):
        decode_weights(encode_weights(default_weights) + b"\x00")


def test_failure_modes_are_distinct():
    errors = {WeightsMagicError, WeightsVersionError, WeightsChecksumError, WeightsTruncatedError}
    assert len(errors) == 4
    assert all(issubclass(error, WeightsFileError) for error in errors)


def test_json_export_is_lossless(tmp_path, default_weights):
    path = export_weights_json(default_weights, tmp_path / "weights.json")
    assert import_weights_json(path) == default_weights


def test_json_import_rejects_foreign_document(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"format": "something-else"}', encoding="utf-8")
    with pytest.raises(WeightsMagicError):
        import_weights_json(path)
