"""File formats: PLY clouds, correspondence lists, transforms, result reports.

Readers reject inputs that violate type invariants rather than repairing
them; writers emit deterministic byte streams (fixed field order, floats
printed with %.17g so values round-trip exactly).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .correspondences import CorrespondenceSet
from .exceptions import InvalidCloud, ParseError, UnsupportedFormat, WrongArity
from .geometry import RigidTransform
from .metrics import EvalResult

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def read_ply(path):
    """Read vertex x/y/z from an ascii or binary_little_endian PLY file.

    Other elements and properties are ignored. Returns an (n, 3) float64
    array.
    """
    with open(path, "rb") as handle:
        magic = handle.readline()
        if magic.strip() != b"ply":
            raise ParseError("not a PLY file (missing 'ply' magic)", line=1)
        fmt = None
        elements = []  # (name, count, [(prop_name, prop_type or 'list'), ...])
        line_no = 1
        while True:
            raw = handle.readline()
            line_no += 1
            if not raw:
                raise ParseError("unexpected end of header", line=line_no)
            tokens = raw.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if tokens[1] == "ascii":
                    fmt = "ascii"
                elif tokens[1] == "binary_little_endian":
                    fmt = "binary"
                elif tokens[1] == "binary_big_endian":
                    raise UnsupportedFormat("big-endian PLY is not supported", line=line_no)
                else:
                    raise ParseError(f"unknown PLY format {tokens[1]!r}", line=line_no)
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise ParseError("property before any element", line=line_no)
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[-1], "list"))
                else:
                    elements[-1][2].append((tokens[-1], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt is None:
            raise ParseError("header has no format line", line=line_no)
        header_end = handle.tell()

        vertex_pos = next(
            (k for k, (name, _, _) in enumerate(elements) if name == "vertex"), None
        )
        if vertex_pos is None:
            raise ParseError("no vertex element", line=line_no)

        if fmt == "ascii":
            return _read_ply_ascii(handle, elements, vertex_pos, line_no)
        return _read_ply_binary(handle, elements, vertex_pos, header_end)


def _xyz_columns(props):
    names = [name for name, _ in props]
    try:
        cols = [names.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x/y/z properties")
    for c in cols:
        if props[c][1] not in ("float", "float32", "double", "float64"):
            raise ParseError(f"vertex {props[c][0]} has non-float type {props[c][1]!r}")
    return cols


def _read_ply_ascii(handle, elements, vertex_pos, line_no):
    points = None
    for k, (name, count, props) in enumerate(elements):
        if k > vertex_pos:
            break
        if name != "vertex":
            for _ in range(count):
                handle.readline()
                line_no += 1
            continue
        cols = _xyz_columns(props)
        points = np.empty((count, 3))
        for i in range(count):
            raw = handle.readline()
            line_no += 1
            if not raw:
                raise ParseError("unexpected end of file", line=line_no)
            tokens = raw.split()
            if len(tokens) < len(props):
                raise ParseError(
                    f"vertex row has {len(tokens)} fields, expected {len(props)}",
                    line=line_no,
                )
            try:
                for axis, c in enumerate(cols):
                    points[i, axis] = float(tokens[c])
            except ValueError:
                raise ParseError("non-numeric vertex coordinate", line=line_no)
    return points


def _read_ply_binary(handle, elements, vertex_pos, header_end):
    offset = header_end
    for k, (name, count, props) in enumerate(elements):
        if any(t == "list" for _, t in props):
            if k <= vertex_pos and name != "vertex":
                raise UnsupportedFormat(
                    "cannot skip a variable-length element before vertices",
                    offset=offset,
                )
            break
        dtype = np.dtype([(p_name, "<" + _PLY_TYPES[p_type]) for p_name, p_type in props])
        if name != "vertex":
            if k < vertex_pos:
                handle.seek(count * dtype.itemsize, 1)
                offset += count * dtype.itemsize
            continue
        cols = _xyz_columns(props)
        need = count * dtype.itemsize
        buf = handle.read(need)
        if len(buf) < need:
            raise ParseError(
                f"truncated vertex data: expected {need} bytes, got {len(buf)}",
                offset=offset + len(buf),
            )
        records = np.frombuffer(buf, dtype=dtype, count=count)
        names = [p_name for p_name, _ in props]
        return np.column_stack(
            [records[names[c]].astype(np.float64) for c in cols]
        ) if count else np.empty((0, 3))
    raise ParseError("no vertex element data", offset=offset)


def write_ply(path, points):
    """Write an ascii PLY with x/y/z as 17-significant-digit doubles."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise InvalidCloud("cloud contains non-finite coordinates")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    for row in pts:
        lines.append(f"{_fmt(row[0])} {_fmt(row[1])} {_fmt(row[2])}")
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def read_correspondences(path) -> CorrespondenceSet:
    """Read 'px py pz qx qy qz' rows; '#' comments and blank lines are skipped.
    ``source_index`` follows data-row order."""
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 6:
                raise WrongArity(
                    f"expected 6 fields, got {len(tokens)}", line=line_no
                )
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError("non-numeric field", line=line_no)
    if not rows:
        return CorrespondenceSet(np.empty((0, 3)), np.empty((0, 3)))
    return CorrespondenceSet.from_pairs(np.asarray(rows))


def write_correspondences(path, corr: CorrespondenceSet):
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        for p_row, q_row in zip(corr.p, corr.q):
            handle.write(" ".join(_fmt(v) for v in (*p_row, *q_row)) + "\n")


def read_transform(path) -> RigidTransform:
    """Read a 4x4 row-major homogeneous matrix (4 lines of 4 decimals)."""
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 4:
                raise WrongArity(f"expected 4 fields, got {len(tokens)}", line=line_no)
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError("non-numeric field", line=line_no)
    if len(rows) != 4:
        raise ParseError(f"expected 4 matrix rows, got {len(rows)}")
    return RigidTransform.from_matrix(np.asarray(rows), atol=1e-4)


def write_transform(path, transform: RigidTransform):
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        for row in transform.matrix():
            handle.write(" ".join(_fmt(v) for v in row) + "\n")


@dataclass
class ResultReport:
    """End-to-end registration record, serialized as a single JSON object.

    Key names are frozen; downstream tooling greps them.
    """

    transform_coarse: np.ndarray
    transform_fine: np.ndarray
    timings_ms: dict
    counts: dict
    eval: EvalResult | None = None
    status: list = field(default_factory=list)


def write_report(path, report: ResultReport):
    eval_obj = None
    if report.eval is not None:
        eval_obj = {
            "re_deg": float(report.eval.re_deg),
            "te_cm": float(report.eval.te_m) * 100.0,
            "success": bool(report.eval.success),
        }
    payload = {
        "transform_coarse": [float(v) for v in np.asarray(report.transform_coarse).ravel()],
        "transform_fine": [float(v) for v in np.asarray(report.transform_fine).ravel()],
        "timings_ms": {
            "coarse": float(report.timings_ms["coarse"]),
            "fine": float(report.timings_ms["fine"]),
            "total": float(report.timings_ms["total"]),
        },
        "counts": {
            "c1": int(report.counts["c1"]),
            "k_opt": int(report.counts["k_opt"]),
            "c2": int(report.counts["c2"]),
            "c3": int(report.counts["c3"]),
            "planes": int(report.counts["planes"]),
        },
        "eval": eval_obj,
        "status": [str(s) for s in report.status],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def read_report(path) -> ResultReport:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    try:
        coarse = np.asarray(payload["transform_coarse"], dtype=float).reshape(4, 4)
        fine = np.asarray(payload["transform_fine"], dtype=float).reshape(4, 4)
        timings = payload["timings_ms"]
        counts = payload["counts"]
        eval_obj = payload["eval"]
        status = list(payload["status"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed report: {exc}") from exc
    # Transforms must still be rigid when parsed back.
    RigidTransform.from_matrix(coarse, atol=1e-6)
    RigidTransform.from_matrix(fine, atol=1e-6)
    eval_result = None
    if eval_obj is not None:
        te_m = float(eval_obj["te_cm"]) / 100.0
        eval_result = EvalResult(
            float(eval_obj["re_deg"]), te_m, bool(eval_obj["success"]), ()
        )
    return ResultReport(coarse, fine, dict(timings), dict(counts), eval_result, status)
