import struct

import numpy as np
import pytest

from engines.backbone import ModelConfig, ablation_flags
from engines.detector import build_model
from engines.nn import parameter_census
from engines.weights import (
    MAGIC,
    WeightsFormatError,
    WeightsMismatchError,
    load_weights,
    read_weights,
    save_weights,
)


def tiny_model(name: str = "m6", seed: int = 0, dtype=np.float32):
    config = ModelConfig(image_size=64, stem_channels=4, widths=(8, 8, 8), csp_depth=1, flags=ablation_flags(name))
    return build_model(config, seed=seed, dtype=dtype)


def test_round_trip_is_bit_exact(tmp_path):
    model = tiny_model(seed=1)
    path = save_weights(model, tmp_path / "w.bdrn")
    restored = load_weights(tiny_model(seed=2), path)
    for (name, a), (other, b) in zip(model.named_parameters(), restored.named_parameters()):
        assert name == other
        assert a.data.dtype == b.data.dtype == np.float32
        assert a.data.tobytes() == b.data.tobytes()


def test_file_follows_census_order(tmp_path):
    model = tiny_model()
    path = save_weights(model, tmp_path / "w.bdrn")
    layers = read_weights(path)
    census = parameter_census(model)
    assert list(layers) == list(census)
    assert all(layers[name].shape == shape for name, shape in census.items())


def test_header_layout(tmp_path):
    model = tiny_model()
    data = save_weights(model, tmp_path / "w.bdrn").read_bytes()
    assert data[:5] == MAGIC
    (count,) = struct.unpack("<I", data[5:9])
    assert count == len(parameter_census(model))
    (name_length,) = struct.unpack("<I", data[9:13])
    first_name = next(iter(parameter_census(model)))
    assert data[13 : 13 + name_length].decode("utf-8") == first_name


def test_float64_model_loads_stored_float32_values(tmp_path):
    source = tiny_model(dtype=np.float64, seed=4)
    path = save_weights(source, tmp_path / "w.bdrn")
    target = load_weights(tiny_model(dtype=np.float64, seed=5), path)
    for (_, a), (_, b) in zip(source.named_parameters(), target.named_parameters()):
        assert b.data.dtype == np.float64
        np.testing.assert_array_equal(b.data, a.data.astype(np.float32).astype(np.float64))


def test_architecture_mismatch_reports_census_diff(tmp_path):
    path = save_weights(tiny_model("m1"), tmp_path / "m1.bdrn")
    with pytest.raises(WeightsMismatchError) as excinfo:
        load_weights(tiny_model("m6"), path)
    assert excinfo.value.missing
    assert not excinfo.value.unexpected


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bdrn"
    path.write_bytes(b"BDRN2" + b"\x00" * 8)
    with pytest.raises(WeightsFormatError, match="not a BDRN1"):
        read_weights(path)


def test_truncated_file(tmp_path):
    data = save_weights(tiny_model(), tmp_path / "w.bdrn").read_bytes()
    path = tmp_path / "cut.bdrn"
    path.write_bytes(data[:-3])
    with pytest.raises(WeightsFormatError, match="truncated"):
        read_weights(path)


def test_trailing_bytes(tmp_path):
    path = save_weights(tiny_model(), tmp_path / "w.bdrn")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(WeightsFormatError, match="trailing"):
        read_weights(path)
