import json
import struct

import numpy as np
import pytest

from concgram import io
from concgram.exceptions import ContractError


@pytest.fixture
def mat():
    return np.random.default_rng(0).standard_normal((3, 5))


@pytest.mark.parametrize("name", ["m.csv", "m.rmtx"])
def test_matrix_round_trip(tmp_path, mat, name):
    path = tmp_path / name
    io.write_matrix(path, mat)
    np.testing.assert_array_equal(io.read_matrix(path), mat)


def test_rmtx_layout(mat):
    data = io.rmtx_bytes(mat)
    magic, version, rows, cols = struct.unpack_from("<4sBQQ", data)
    assert (magic, version, rows, cols) == (b"RMTX", 1, 3, 5)
    assert len(data) == 4 + 1 + 16 + 8 * 15
    np.testing.assert_array_equal(np.frombuffer(data[21:], "<f8").reshape(3, 5), mat)


def test_csv_layout(mat):
    lines = io.csv_matrix_text(mat).splitlines()
    assert lines[0] == "3,5" and len(lines) == 4
    assert [float(x) for x in lines[1].split(",")] == mat[0].tolist()


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("a,b\n", "header"),
    ("2,2\n1,2\n3\n", ":3: expected 2 values"),
    ("2,2\n1,2\n", "promises 2 rows"),
    ("1,2\n1,x\n", ":2:"),
    ("1,2\n1,nan\n", "non-finite"),
    ("1,1\n1\n2\n", "more than 1"),
])
def test_csv_errors(tmp_path, text, match):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(io.FormatError, match=match):
        io.read_matrix(path)


def test_rmtx_errors(tmp_path, mat):
    good = io.rmtx_bytes(mat)
    cases = {
        "short": good[:10],
        "truncated": good[:-8],
        "version": good[:4] + b"\x02" + good[5:],
    }
    for name, data in cases.items():
        path = tmp_path / f"{name}.rmtx"
        path.write_bytes(data)
        with pytest.raises(io.FormatError):
            io.read_rmtx(path)
    path = tmp_path / "magic.rmtx"
    path.write_bytes(b"XMTX" + good[4:])
    with pytest.raises(io.FormatError, match="magic"):
        io.read_rmtx(path)


def test_labels_round_trip_and_errors(tmp_path):
    path = tmp_path / "y.txt"
    io.write_labels(path, [0, 2, 1, 1])
    assert path.read_text() == "0\n2\n1\n1\n"
    np.testing.assert_array_equal(io.read_labels(path), [0, 2, 1, 1])
    for text, match in [("0\nx\n", ":2:"), ("0\n-1\n", "negative"), ("\n", "no labels")]:
        path.write_text(text)
        with pytest.raises(io.FormatError, match=match):
            io.read_labels(path)


def test_format_error_is_contract_error():
    assert issubclass(io.FormatError, ContractError)


def test_json_text_is_canonical():
    text = io.json_text({"b": np.float64(np.nan), "a": np.arange(2), "c": 1 + 2j})
    assert json.loads(text) == {"a": [0, 1], "b": None, "c": {"re": 1.0, "im": 2.0}}
    assert text.index('"a"') < text.index('"b"')


def test_csv_text_formats():
    text = io.csv_text(["x", "ok"], [(0.1, True), (np.int64(2), False)])
    assert text == "x,ok\n0.1,true\n2,false\n"


def test_atomic_dir_commit(tmp_path):
    out = io.AtomicDir(tmp_path / "run")
    out.add_csv("a.csv", ["v"], [(1,)])
    out.add_json("s.json", {"k": 1})
    assert out.names == ["a.csv", "s.json"]
    assert not (tmp_path / "run").exists()
    out.commit()
    assert (tmp_path / "run" / "a.csv").read_text() == "v\n1\n"
    assert not [p for p in (tmp_path / "run").iterdir() if p.name.startswith(".")]


def test_atomic_dir_rolls_back(tmp_path, monkeypatch):
    out = io.AtomicDir(tmp_path)
    out.add_bytes("a.txt", b"1")
    out.add_bytes("b.txt", b"2")
    real = io.atomic_write

    def failing(path, data):
        if path.name == "b.txt":
            raise OSError("disk full")
        real(path, data)

    monkeypatch.setattr(io, "atomic_write", failing)
    with pytest.raises(OSError):
        out.commit()
    assert not (tmp_path / "a.txt").exists()
