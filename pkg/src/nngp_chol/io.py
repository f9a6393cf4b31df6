"""CSV, edge-list and manifest I/O for the command-line drivers."""
import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import NNGPError

FLOAT_FMT = "%.17g"


class DataFormatError(NNGPError, ValueError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_matrix(path, mat, prefix="c"):
    mat = np.asarray(mat, dtype=float)
    header = [f"{prefix}{j}" for j in range(mat.shape[1])]
    return write_csv(path, header, mat.tolist())


def read_table(path):
    """Header plus a float matrix; errors name the offending line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(path, 0, f"cannot read file: {exc.strerror}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataFormatError(path, 1, "file is empty")
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = next(csv.reader([line]))
        if len(fields) != len(header):
            raise DataFormatError(
                path, lineno, f"expected {len(header)} fields, found {len(fields)}"
            )
        try:
            rows.append([float(x) for x in fields])
        except ValueError:
            raise DataFormatError(path, lineno, f"non-numeric value in {fields!r}") from None
    if not rows:
        raise DataFormatError(path, 2, "no data rows")
    values = np.array(rows)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
        raise DataFormatError(path, bad + 2, "missing or non-finite value")
    return header, values


_XCOL = re.compile(r"^x(\d+)$")


def read_data_csv(path, y_column="y"):
    """Read a geospatial data file with columns ``sx, sy, y, x1..xp``.

    Returns ``(coords, y, X)`` where ``X`` holds the ``x*`` columns in
    numeric order (possibly zero columns).
    """
    header, values = read_table(path)
    col = {name: j for j, name in enumerate(header)}
    for name in ("sx", "sy", y_column):
        if name not in col:
            raise DataFormatError(path, 1, f"missing column {name!r} in header {header}")
    xcols = sorted(
        (int(_XCOL.match(h).group(1)), j) for h, j in col.items() if _XCOL.match(h)
    )
    coords = values[:, [col["sx"], col["sy"]]]
    X = values[:, [j for _, j in xcols]] if xcols else np.empty((len(values), 0))
    return coords, values[:, col[y_column]], X


def write_data_csv(path, coords, y, X=None):
    X = np.empty((len(y), 0)) if X is None else np.asarray(X, dtype=float).reshape(len(y), -1)
    header = ["sx", "sy", "y"] + [f"x{j + 1}" for j in range(X.shape[1])]
    rows = np.column_stack([coords, y, X]).tolist()
    return write_csv(path, header, rows)


def read_edge_list(path):
    """Whitespace-separated ``i j`` pairs, 0-indexed, one undirected edge per line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(path, 0, f"cannot read file: {exc.strerror}") from exc
    edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataFormatError(path, lineno, f"expected two vertex ids, got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(path, lineno, f"vertex ids must be integers: {line!r}") from None
        if i < 0 or j < 0:
            raise DataFormatError(path, lineno, "vertex ids must be nonnegative")
        edges.append((i, j))
    if not edges:
        raise DataFormatError(path, 1, "edge list is empty")
    return np.array(edges, dtype=np.intp)


def write_edge_list(path, edges):
    path = Path(path)
    path.write_text("".join(f"{i} {j}\n" for i, j in edges))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
