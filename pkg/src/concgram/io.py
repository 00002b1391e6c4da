"""Matrix, labels and result files.

Matrix files come in two flavours:

* CSV: first line ``rows,cols``, then one comma-separated row per line.
* RMTX: the bytes ``RMTX``, a version byte (1), unsigned 64-bit
  little-endian ``rows`` and ``cols``, then ``rows*cols`` little-endian
  float64 values in row-major order.

Labels files hold one integer class index per line. Every writer goes
through :class:`AtomicDir`/:func:`atomic_write` so a crash never leaves a
half-written result behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import ContractError

RMTX_MAGIC = b"RMTX"
RMTX_VERSION = 1
_HEADER = struct.Struct("<4sBQQ")


class FormatError(ContractError):
    """A matrix or labels file does not follow its declared format."""


# -- matrices -----------------------------------------------------------------

def _check_matrix(a, path):
    if a.ndim != 2:
        raise FormatError(f"{path}: expected a 2-D matrix")
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise FormatError(f"{path}: non-finite entry at row {bad[0]}, col {bad[1]}")
    return a


def read_csv_matrix(path) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        try:
            rows, cols = (int(x) for x in header)
        except ValueError:
            raise FormatError(f"{path}:1: header must be 'rows,cols'") from None
        out = np.empty((rows, cols))
        r = -1
        for r, line in enumerate(reader):
            if r >= rows:
                raise FormatError(f"{path}:{r + 2}: more than {rows} data rows")
            if len(line) != cols:
                raise FormatError(
                    f"{path}:{r + 2}: expected {cols} values, found {len(line)}"
                )
            try:
                out[r] = [float(x) for x in line]
            except ValueError as exc:
                raise FormatError(f"{path}:{r + 2}: {exc}") from None
        if r + 1 != rows:
            raise FormatError(f"{path}: header promises {rows} rows, found {r + 1}")
    return _check_matrix(out, path)


def read_rmtx(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated RMTX header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != RMTX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != RMTX_VERSION:
        raise FormatError(f"{path}: unsupported RMTX version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise FormatError(
            f"{path}: {len(data)} bytes, expected {expected} for {rows}x{cols}"
        )
    arr = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return _check_matrix(arr.astype(float), path)


def read_matrix(path) -> np.ndarray:
    """Read a CSV or RMTX matrix, detected from the leading bytes."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == RMTX_MAGIC:
        return read_rmtx(path)
    return read_csv_matrix(path)


def rmtx_bytes(a) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim != 2:
        raise ContractError("RMTX holds 2-D matrices only")
    return _HEADER.pack(RMTX_MAGIC, RMTX_VERSION, a.shape[0], a.shape[1]) + a.tobytes()


def csv_matrix_text(a) -> str:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ContractError("CSV matrices must be 2-D")
    buf = io.StringIO()
    buf.write(f"{a.shape[0]},{a.shape[1]}\n")
    for row in a:
        buf.write(",".join(repr(float(x)) for x in row))
        buf.write("\n")
    return buf.getvalue()


def write_matrix(path, a, fmt: str | None = None):
    """Write ``a`` as CSV or RMTX (``fmt`` defaults from the suffix)."""
    path = Path(path)
    fmt = fmt or ("rmtx" if path.suffix.lower() in (".rmtx", ".bin") else "csv")
    if fmt == "rmtx":
        atomic_write(path, rmtx_bytes(a))
    elif fmt == "csv":
        atomic_write(path, csv_matrix_text(a).encode())
    else:
        raise ContractError(f"unknown matrix format {fmt!r}")


# -- labels -------------------------------------------------------------------

def read_labels(path) -> np.ndarray:
    path = Path(path)
    out = []
    with path.open() as fh:
        for i, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise FormatError(f"{path}:{i}: not an integer label: {text!r}") from None
            if value < 0:
                raise FormatError(f"{path}:{i}: negative label {value}")
            out.append(value)
    if not out:
        raise FormatError(f"{path}: no labels")
    return np.asarray(out, dtype=np.int64)


def write_labels(path, labels):
    text = "".join(f"{int(l)}\n" for l in np.asarray(labels).reshape(-1))
    atomic_write(Path(path), text.encode())


# -- result files -------------------------------------------------------------

def atomic_write(path, data: bytes):
    """Write ``data`` to a sibling temp file, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


class AtomicDir:
    """Stage result files in memory and publish them only on success.

    ``add_csv``/``add_json``/``add_bytes`` queue files; :meth:`commit`
    writes each through :func:`atomic_write`. If any write fails, files
    already published by this commit are removed, so the output directory
    never holds a partial result set.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._files: dict[str, bytes] = {}

    def add_bytes(self, name, data: bytes):
        self._files[name] = data

    def add_csv(self, name, header, rows):
        self.add_bytes(name, csv_text(header, rows).encode())

    def add_json(self, name, obj):
        self.add_bytes(name, json_text(obj).encode())

    @property
    def names(self):
        return sorted(self._files)

    def commit(self):
        written = []
        try:
            for name in sorted(self._files):
                path = self.root / name
                atomic_write(path, self._files[name])
                written.append(path)
        except BaseException:
            for path in written:
                path.unlink(missing_ok=True)
            raise
        return written
