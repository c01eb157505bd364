"""On-disk formats: CCGA matrices, CCGM checkpoints, graph/report JSON and CSV exports.

Binary layouts (all little-endian)::

    CCGA  magic "CCGA" | u16 version=1 | u32 rows | u32 cols | f32[rows*cols]
    CCGM  magic "CCGM" | u16 version=1 | u32 K | u32 d | u32 k |
          f32 w_enc[K*d] | f32 w_dec[d*K] | f32 b_pre[d] | f32 b_enc[K]

Every writer goes through :func:`atomic_write`, so a crashed run never leaves a
half-written file behind. Report floats are written with 6 significant digits.
"""

import csv
import hashlib
import io as _io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .graph import ConceptGraph, GraphStats, edges
from .intervene import report_from_dict
from .sae import SaeModel

CCGA_MAGIC = b"CCGA"
CCGM_MAGIC = b"CCGM"
FORMAT_VERSION = 1
_CCGA_HEADER = struct.Struct("<4sHII")
_CCGM_HEADER = struct.Struct("<4sHIII")
REPORT_DIGITS = 6


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read_bytes(path):
    path = Path(path)
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except IsADirectoryError:
        raise FormatError(f"{path}: is a directory, expected a file") from None


# ---- matrices --------------------------------------------------------------

def ccga_bytes(matrix):
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError("CCGA stores 2-D matrices only")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("refusing to write non-finite values")
    header = _CCGA_HEADER.pack(CCGA_MAGIC, FORMAT_VERSION, a.shape[0], a.shape[1])
    return header + a.astype("<f4").tobytes(order="C")


def write_ccga(path, matrix):
    return atomic_write(path, ccga_bytes(matrix))


def parse_ccga(buf, name="<buffer>"):
    if len(buf) < _CCGA_HEADER.size:
        raise FormatError(f"{name}: truncated header ({len(buf)} bytes, need {_CCGA_HEADER.size}) at offset 0")
    magic, version, rows, cols = _CCGA_HEADER.unpack_from(buf, 0)
    if magic != CCGA_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r} at offset 0, expected {CCGA_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: unsupported version {version} at offset 4")
    need = rows * cols * 4
    have = len(buf) - _CCGA_HEADER.size
    if have != need:
        raise FormatError(f"{name}: payload is {have} bytes at offset {_CCGA_HEADER.size}, "
                          f"expected {need} for a {rows}x{cols} matrix")
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=_CCGA_HEADER.size)
    out = data.astype(np.float64).reshape(rows, cols)
    bad = np.flatnonzero(~np.isfinite(out.ravel()))
    if bad.size:
        raise FormatError(f"{name}: non-finite value at offset {_CCGA_HEADER.size + 4 * int(bad[0])}")
    return out


def parse_csv_matrix(text, name="<buffer>"):
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError:
            raise FormatError(f"{name}:{lineno}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in row):
            raise FormatError(f"{name}:{lineno}: non-finite cell")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"{name}:{lineno}: expected {width} columns, found {len(row)}")
        rows.append(row)
    if not rows:
        raise FormatError(f"{name}: no data rows")
    return np.array(rows, dtype=np.float64)


def read_matrix(path):
    """Load a CCGA or headerless CSV matrix, detected by the leading magic bytes."""
    buf = _read_bytes(path)
    if buf[:4] == CCGA_MAGIC:
        return parse_ccga(buf, str(path))
    if buf and not (buf[:1].isdigit() or buf[:1] in b"-+. \t\r\n"):
        # not a number and not our magic: most likely a corrupted binary header
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at offset 0, expected {CCGA_MAGIC!r} or CSV")
    try:
        text = buf.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 CSV (offset {exc.start})") from None
    return parse_csv_matrix(text, str(path))


def write_csv_matrix(path, matrix, header=None):
    a = np.asarray(matrix, dtype=np.float64)
    lines = []
    if header is not None:
        lines.append(",".join(header))
    lines.extend(",".join(fmt(v) for v in row) for row in a)
    return atomic_write(path, "\n".join(lines) + "\n")


# ---- SAE checkpoint ----------------------------------------------------------

def ccgm_bytes(model):
    header = _CCGM_HEADER.pack(CCGM_MAGIC, FORMAT_VERSION, model.n_concepts, model.d, model.k)
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                    for a in (model.w_enc, model.w_dec, model.b_pre, model.b_enc))
    return header + body


def write_ccgm(path, model):
    return atomic_write(path, ccgm_bytes(model))


def read_ccgm(path):
    buf = _read_bytes(path)
    name = str(path)
    if len(buf) < _CCGM_HEADER.size:
        raise FormatError(f"{name}: truncated header at offset 0")
    magic, version, n_concepts, d, k = _CCGM_HEADER.unpack_from(buf, 0)
    if magic != CCGM_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r} at offset 0, expected {CCGM_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: unsupported version {version} at offset 4")
    sizes = [n_concepts * d, d * n_concepts, d, n_concepts]
    need = _CCGM_HEADER.size + 4 * sum(sizes)
    if len(buf) != need:
        raise FormatError(f"{name}: file is {len(buf)} bytes, expected {need} for K={n_concepts}, d={d}")
    arrays = []
    offset = _CCGM_HEADER.size
    for size in sizes:
        arrays.append(np.frombuffer(buf, dtype="<f4", count=size, offset=offset).astype(np.float64))
        offset += 4 * size
    try:
        return SaeModel(arrays[0].reshape(n_concepts, d), arrays[1].reshape(d, n_concepts),
                        arrays[2], arrays[3], k)
    except InvalidArgumentError as exc:
        raise FormatError(f"{name}: {exc}") from None


# ---- number formatting and JSON -------------------------------------------------

def fmt(x, digits=REPORT_DIGITS):
    """Fixed significant-digit rendering; ties round half to even on the binary value."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{digits}g}"


def _round_floats(obj, digits):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return fmt(x)
        return float(fmt(x, digits)) if digits else x
    if isinstance(obj, dict):
        return {str(k): _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round_floats(v, digits) for v in obj]
    raise InvalidArgumentError(f"cannot serialise {type(obj).__name__}")


def json_text(obj, digits=REPORT_DIGITS):
    """Deterministic JSON: rounded floats, non-finite values as strings, fixed indent."""
    return json.dumps(_round_floats(obj, digits), indent=2) + "\n"


def write_json(path, obj, digits=REPORT_DIGITS):
    return atomic_write(path, json_text(obj, digits))


def read_json(path):
    buf = _read_bytes(path)
    try:
        return json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", getattr(exc, "start", 0))
        raise FormatError(f"{path}: invalid JSON at offset {pos}") from None


def write_csv_rows(path, header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write(path, buf.getvalue())


def read_csv_rows(path):
    buf = _read_bytes(path)
    rows = list(csv.reader(_io.StringIO(buf.decode("utf-8"))))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


# ---- SAE log -------------------------------------------------------------------

def write_train_log(path, log):
    return write_json(path, log.to_list())


# ---- graphs --------------------------------------------------------------------

def graph_to_dict(g):
    stats = g.stats.to_dict() if g.stats is not None else None
    return {"m": g.m, "node_ids": g.node_ids.tolist(), "edge_threshold": g.edge_threshold,
            "w": g.w.ravel().tolist(), "stats": stats}


def graph_from_dict(d, name="<graph>"):
    try:
        m = int(d["m"])
        w = np.asarray(d["w"], dtype=np.float64)
        if w.size != m * m:
            raise FormatError(f"{name}: w has {w.size} entries, expected {m * m}")
        g = ConceptGraph(w.reshape(m, m), d["node_ids"], float(d["edge_threshold"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{name}: malformed graph JSON ({exc})") from None
    if d.get("stats"):
        g.stats = GraphStats(**d["stats"])
    return g


def write_graph(path, g):
    # weights are a checkpoint, so they keep full precision
    return write_json(path, graph_to_dict(g), digits=None)


def read_graph(path):
    return graph_from_dict(read_json(path), str(path))


def write_edges(path, g):
    rows = [(int(g.node_ids[i]), int(g.node_ids[j]), w) for i, j, w in edges(g)]
    return write_csv_rows(path, ["source", "target", "weight"], rows)


def write_graph_log(path, log):
    rows = [(e.epoch, e.lr, e.objective, e.sem_loss, e.l1, e.dag_violation) for e in log]
    return write_csv_rows(path, ["epoch", "lr", "objective", "sem_loss", "l1", "dag_violation"], rows)


# ---- CFS reports -------------------------------------------------------------------

def write_cfs_report(path, report):
    return write_json(path, report.to_dict())


def read_cfs_report(path):
    d = read_json(path)
    try:
        return report_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed CFS report ({exc})") from None


def write_delta_histogram(path, reports, dataset=""):
    """Every ablation effect, tagged by selection method, seed and role."""
    rows = []
    for r in reports:
        for role, recs in (("causal", r.causal_records), ("random", r.random_records)):
            for rec in recs:
                rows.append((dataset, r.method, r.seed, role, rec.target_node,
                             rec.downstream_set_size, float(rec.delta_value)))
    return write_csv_rows(path, ["dataset", "method", "seed", "role", "node", "out_degree", "delta"],
                          rows)


# ---- statistics --------------------------------------------------------------

STATS_COLUMNS = ["comparison", "t_stat", "p_raw", "p_corrected", "significant", "cohens_d",
                 "ci_low", "ci_high", "n", "replicates"]


def write_stats(path_json, path_csv, results):
    dicts = [r.to_dict() for r in results]
    if path_json is not None:
        write_json(path_json, dicts)
    if path_csv is not None:
        rows = [(r.comparison, r.t_stat, r.p_raw, r.p_corrected, str(r.significant).lower(),
                 r.cohens_d, r.ci_low, r.ci_high, r.n, r.replicates) for r in results]
        write_csv_rows(path_csv, STATS_COLUMNS, rows)


def write_corr_csv(path, r, labels=None):
    labels = labels if labels is not None else [str(i) for i in range(r.shape[0])]
    return write_csv_matrix(path, r, header=[str(x) for x in labels])


# ---- hashing / manifests -----------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()
