"""Sparse triplet dump and free-format MPS export."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..errors import MissingFile
from .model import SparseLP


def _fmt(v: float) -> str:
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return repr(float(v))


def write_triplets(lp: SparseLP, directory, row_tags=None) -> None:
    """Write ``matrix.csv`` (row,col,value), ``rows.csv``, ``columns.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    coo = lp.A.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(d / "matrix.csv", "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for k in order:
            w.writerow([int(coo.row[k]), int(coo.col[k]), _fmt(coo.data[k])])
    with open(d / "rows.csv", "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "name", "sense", "rhs", "tag"])
        for i in range(lp.num_rows):
            name = lp.row_names[i] if lp.row_names else f"r{i}"
            tag = row_tags[i] if row_tags is not None else ""
            w.writerow([i, name, lp.senses[i], _fmt(lp.b[i]), tag])
    with open(d / "columns.csv", "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["col", "name", "cost", "lb", "ub", "integer"])
        for j in range(lp.num_cols):
            name = lp.col_names[j] if lp.col_names else f"c{j}"
            w.writerow([j, name, _fmt(lp.c[j]), _fmt(lp.lb[j]), _fmt(lp.ub[j]), int(lp.integrality[j])])


def read_triplets(directory) -> SparseLP:
    d = Path(directory)
    for f in ("matrix.csv", "rows.csv", "columns.csv"):
        if not (d / f).exists():
            raise MissingFile(d / f)
    with open(d / "rows.csv") as fh:
        rows = list(csv.DictReader(fh))
    with open(d / "columns.csv") as fh:
        cols = list(csv.DictReader(fh))
    with open(d / "matrix.csv") as fh:
        trip = list(csv.DictReader(fh))
    m, n = len(rows), len(cols)
    A = sp.coo_matrix(([float(t["value"]) for t in trip],
                       ([int(t["row"]) for t in trip], [int(t["col"]) for t in trip])), shape=(m, n))
    return SparseLP(
        c=[float(c["cost"]) for c in cols], A=A.tocsc(),
        senses=[r["sense"] for r in rows], b=[float(r["rhs"]) for r in rows],
        lb=[float(c["lb"]) for c in cols], ub=[float(c["ub"]) for c in cols],
        integrality=[c["integer"] == "1" for c in cols],
        row_names=[r["name"] for r in rows], col_names=[c["name"] for c in cols],
    )


def write_mps(lp: SparseLP, path, name: str = "MODEL") -> None:
    """Free-format MPS; names are replaced by R<i>/C<j> to stay whitespace-free."""
    A = lp.A.tocsc()
    lines = [f"NAME {name}", "ROWS", " N OBJ"]
    for i, s in enumerate(lp.senses):
        lines.append(f" {s} R{i}")
    lines.append("COLUMNS")
    in_int = False
    for j in range(lp.num_cols):
        if lp.integrality[j] and not in_int:
            lines.append(" MARKER 'MARKER' 'INTORG'")
            in_int = True
        elif not lp.integrality[j] and in_int:
            lines.append(" MARKER 'MARKER' 'INTEND'")
            in_int = False
        if lp.c[j] != 0:
            lines.append(f" C{j} OBJ {float(lp.c[j])!r}")
        for k in range(A.indptr[j], A.indptr[j + 1]):
            lines.append(f" C{j} R{A.indices[k]} {float(A.data[k])!r}")
        if lp.c[j] == 0 and A.indptr[j] == A.indptr[j + 1]:
            lines.append(f" C{j} OBJ 0.0")
    if in_int:
        lines.append(" MARKER 'MARKER' 'INTEND'")
    lines.append("RHS")
    for i, v in enumerate(lp.b):
        if v != 0:
            lines.append(f" RHS R{i} {float(v)!r}")
    lines.append("BOUNDS")
    for j in range(lp.num_cols):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isneginf(lo) and np.isposinf(hi):
            lines.append(f" FR BND C{j}")
            continue
        if lo == hi:
            lines.append(f" FX BND C{j} {float(lo)!r}")
            continue
        if np.isneginf(lo):
            lines.append(f" MI BND C{j}")
        elif lo != 0:
            lines.append(f" LO BND C{j} {float(lo)!r}")
        if np.isfinite(hi):
            lines.append(f" UP BND C{j} {float(hi)!r}")
    lines.append("ENDATA")
    Path(path).write_text("\n".join(lines) + "\n")
