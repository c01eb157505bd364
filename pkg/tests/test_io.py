import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ccg.errors import FormatError, InvalidArgumentError
from ccg.graph import ConceptGraph
from ccg.io import (atomic_write, ccga_bytes, config_hash, fmt, json_text, parse_ccga,
                    read_ccgm, read_csv_rows, read_graph, read_json, read_matrix, write_ccga,
                    write_ccgm, write_csv_matrix, write_edges, write_graph, write_json)
from ccg.sae import init_model

f32_vals = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=f32_vals))
def test_ccga_round_trip_is_exact_for_float32(a):
    np.testing.assert_array_equal(parse_ccga(ccga_bytes(a)), a.astype(np.float64))


def test_ccga_file_round_trip(tmp_path, rng):
    a = rng.normal(size=(7, 3))
    write_ccga(tmp_path / "a.ccga", a)
    np.testing.assert_array_equal(read_matrix(tmp_path / "a.ccga"), a.astype(np.float32))
    assert (tmp_path / "a.ccga").stat().st_size == 14 + 4 * 21


def test_ccga_errors(tmp_path):
    buf = ccga_bytes(np.ones((2, 2)))
    with pytest.raises(FormatError, match="bad magic.*offset 0"):
        parse_ccga(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="offset 14"):
        parse_ccga(buf[:-1])
    with pytest.raises(FormatError, match="truncated header"):
        parse_ccga(buf[:5])
    bad = bytearray(buf)
    bad[14 + 4:14 + 8] = np.float32(np.nan).tobytes()
    with pytest.raises(FormatError, match="non-finite value at offset 18"):
        parse_ccga(bytes(bad))
    with pytest.raises(InvalidArgumentError):
        ccga_bytes(np.array([[np.inf]]))
    (tmp_path / "junk.ccga").write_bytes(b"\x00\x01garbage")
    with pytest.raises(FormatError, match="bad magic"):
        read_matrix(tmp_path / "junk.ccga")
    with pytest.raises(FormatError, match="not found"):
        read_matrix(tmp_path / "missing.ccga")


def test_csv_matrix_round_trip_and_errors(tmp_path):
    a = np.array([[1.5, -2.0], [0.25, 3e-7]])
    write_csv_matrix(tmp_path / "a.csv", a)
    np.testing.assert_array_equal(read_matrix(tmp_path / "a.csv"), a)
    (tmp_path / "b.csv").write_text("1,2\n3,x\n")
    with pytest.raises(FormatError, match="b.csv:2: non-numeric"):
        read_matrix(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("1,2\n3\n")
    with pytest.raises(FormatError, match="c.csv:2: expected 2 columns"):
        read_matrix(tmp_path / "c.csv")


def test_ccgm_round_trip(tmp_path):
    model = init_model(np.random.default_rng(1).normal(size=(20, 5)), 12, 3, np.random.default_rng(0))
    write_ccgm(tmp_path / "m.ccgm", model)
    back = read_ccgm(tmp_path / "m.ccgm")
    assert back.k == 3
    for name in ("w_enc", "w_dec", "b_pre", "b_enc"):
        np.testing.assert_array_equal(getattr(back, name),
                                      getattr(model, name).astype(np.float32))
    raw = (tmp_path / "m.ccgm").read_bytes()
    (tmp_path / "short.ccgm").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="expected"):
        read_ccgm(tmp_path / "short.ccgm")
    (tmp_path / "bad.ccgm").write_bytes(b"CCGA" + raw[4:])
    with pytest.raises(FormatError, match="bad magic"):
        read_ccgm(tmp_path / "bad.ccgm")


def test_fmt_rounding():
    assert fmt(2.5, 1) == "2"        # exact tie rounds to even
    assert fmt(3.5, 1) == "4"
    assert fmt(0.125, 2) == "0.12"
    assert fmt(1234567.5) == "1.23457e+06"
    assert fmt(1 / 3) == "0.333333"
    assert fmt(float("inf")) == "inf" and fmt(-float("inf")) == "-inf"
    assert fmt(float("nan")) == "nan"


def test_json_text_is_deterministic_and_rounded():
    obj = {"b": 1 / 3, "a": [np.float64(2.0), np.int64(3), float("inf"), True, None]}
    text = json_text(obj)
    assert text == json_text(obj)
    back = json.loads(text)
    assert back == {"b": 0.333333, "a": [2.0, 3, "inf", True, None]}
    assert json.loads(json_text({"x": 1 / 3}, digits=None))["x"] == 1 / 3
    with pytest.raises(InvalidArgumentError):
        json_text({"x": object()})


def test_read_json_errors(tmp_path):
    (tmp_path / "a.json").write_text('{"a": 1,,}')
    with pytest.raises(FormatError, match="offset 8"):
        read_json(tmp_path / "a.json")


def test_graph_json_round_trip(tmp_path, rng):
    w = rng.uniform(0, 1, size=(4, 4)) * (rng.random((4, 4)) < 0.5)
    np.fill_diagonal(w, 0)
    g = ConceptGraph(w, node_ids=[10, 3, 7, 1])
    g.compute_stats()
    write_graph(tmp_path / "g.json", g)
    back = read_graph(tmp_path / "g.json")
    np.testing.assert_array_equal(back.w, g.w)
    assert back.node_ids.tolist() == [10, 3, 7, 1]
    assert back.stats == g.stats
    (tmp_path / "bad.json").write_text(json.dumps({"m": 3, "w": [0.0], "node_ids": [0, 1, 2],
                                                   "edge_threshold": 0.01}))
    with pytest.raises(FormatError):
        read_graph(tmp_path / "bad.json")


def test_edges_csv_uses_node_ids(tmp_path):
    w = np.zeros((3, 3))
    w[0, 2] = 0.75
    write_edges(tmp_path / "e.csv", ConceptGraph(w, node_ids=[5, 6, 9]))
    header, rows = read_csv_rows(tmp_path / "e.csv")
    assert header == ["source", "target", "weight"]
    assert rows == [["5", "9", "0.75"]]


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "sub" / "x.txt", "hello")
    atomic_write(tmp_path / "sub" / "x.txt", b"world")
    assert (tmp_path / "sub" / "x.txt").read_bytes() == b"world"
    assert os.listdir(tmp_path / "sub") == ["x.txt"]


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_write_json_round_trip(tmp_path):
    write_json(tmp_path / "x.json", {"v": [0.1, 0.2]})
    assert read_json(tmp_path / "x.json") == {"v": [0.1, 0.2]}
