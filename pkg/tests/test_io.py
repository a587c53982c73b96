import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvforge.exceptions import LookupMissError, ParseError
from uvforge.io import (decode_femb, decode_lvec, encode_femb, encode_lvec, read_direction, read_femb, read_jsonl,
                        read_lvec, read_png, write_direction, write_femb, write_jsonl, write_lvec, write_png)
from uvforge.latent import AttributeDirection, LatentVec, Space


def test_lvec_layout():
    data = encode_lvec(LatentVec(np.array([1.0, -2.5]), Space.W))
    assert data == b"LVEC" + struct.pack("<IIB", 1, 2, 1) + struct.pack("<2f", 1.0, -2.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2.0 ** 100, 2.0 ** 100, width=32), min_size=1, max_size=64),
       st.sampled_from([Space.Z, Space.W]))
def test_lvec_bit_exact_round_trip(values, space):
    vec = LatentVec(np.array(values, dtype=np.float32).astype(np.float64), space)
    data = encode_lvec(vec)
    back = decode_lvec(data)
    assert back.space_tag == space
    assert back.values.astype(np.float32).tobytes() == np.array(values, dtype=np.float32).tobytes()
    assert encode_lvec(back) == data


def test_lvec_file_round_trip(tmp_path):
    vec = LatentVec(np.random.default_rng(0).standard_normal(512).astype(np.float32).astype(np.float64), Space.Z)
    write_lvec(tmp_path / "a.lvec", vec)
    assert read_lvec(tmp_path / "a.lvec") == vec


@pytest.mark.parametrize("mutate", [
    lambda d: b"LVEX" + d[4:],
    lambda d: d[:4] + struct.pack("<I", 2) + d[8:],
    lambda d: d[:-1],
    lambda d: d + b"\0",
    lambda d: d[:12] + b"\x07" + d[13:],
    lambda d: d[:5],
])
def test_lvec_strict(mutate):
    data = encode_lvec(LatentVec(np.ones(3)))
    with pytest.raises(ParseError):
        decode_lvec(mutate(data))


def test_femb_round_trip(tmp_path):
    feats = np.random.default_rng(1).standard_normal((5, 7)).astype(np.float32)
    ids = [f"s{i:06d}" for i in range(5)]
    write_femb(tmp_path / "x.femb", feats, ids)
    got, got_ids = read_femb(tmp_path / "x.femb")
    assert got.astype(np.float32).tobytes() == feats.tobytes() and got_ids == ids
    raw = (tmp_path / "x.femb").read_bytes()
    assert raw[:4] == b"FEMB" and struct.unpack_from("<III", raw, 4) == (1, 5, 7)
    assert json.loads(raw[16 + 4 * 35:]) == {str(i): s for i, s in enumerate(ids)}
    assert encode_femb(got, got_ids) == raw


def test_femb_strict():
    data = encode_femb(np.zeros((2, 3)), ["a", "b"])
    for bad in (b"XEMB" + data[4:], data[:20], data[:16 + 24] + b"{not json"):
        with pytest.raises(ParseError):
            decode_femb(bad)


def test_direction_round_trip(tmp_path):
    d = AttributeDirection(np.array([3.0, 4.0]), 0.25, "beard", {"n_samples": 10, "accuracy": 0.9})
    write_direction(tmp_path / "d.json", d)
    back = read_direction(tmp_path / "d.json")
    assert np.array_equal(back.normal, d.normal) and back.bias == 0.25 and back.attribute_name == "beard"
    assert back.train_meta == {"n_samples": 10, "accuracy": 0.9}
    obj = json.loads((tmp_path / "d.json").read_text())
    del obj["bias"]
    (tmp_path / "e.json").write_text(json.dumps(obj))
    with pytest.raises(ParseError):
        read_direction(tmp_path / "e.json")
    obj["bias"], obj["dim"] = 0.0, 3
    (tmp_path / "e.json").write_text(json.dumps(obj))
    with pytest.raises(ParseError):
        read_direction(tmp_path / "e.json")


def test_png_round_trip_and_determinism(tmp_path):
    px = np.random.default_rng(2).integers(0, 256, (20, 30, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", px)
    write_png(tmp_path / "b.png", px)
    assert np.array_equal(read_png(tmp_path / "a.png"), px)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    with pytest.raises(LookupMissError):
        read_png(tmp_path / "missing.png")


def test_jsonl(tmp_path):
    write_jsonl(tmp_path / "r.jsonl", [{"b": 1, "a": 2}, {"c": None}])
    assert (tmp_path / "r.jsonl").read_text() == '{"a":2,"b":1}\n{"c":null}\n'
    assert read_jsonl(tmp_path / "r.jsonl") == [{"a": 2, "b": 1}, {"c": None}]
    (tmp_path / "bad.jsonl").write_text('{"a": 1}\n\n{oops\n')
    with pytest.raises(ParseError) as exc:
        read_jsonl(tmp_path / "bad.jsonl")
    assert exc.value.line == 3
