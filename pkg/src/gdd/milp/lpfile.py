"""CPLEX-style LP text format: writer and a reader for the subset it writes."""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .model import MilpModel, ModelError, Relation, VarKind

_REL_TEXT = {Relation.LE: "<=", Relation.EQ: "=", Relation.GE: ">="}


def _num(v: float) -> str:
    return format(float(v), ".12g")


def _expr(coefs, names) -> str:
    terms = []
    for j, v in enumerate(coefs):
        if v == 0.0:
            continue
        sign = "-" if v < 0 else "+"
        mag = abs(v)
        body = names[j] if mag == 1.0 else f"{_num(mag)} {names[j]}"
        terms.append(f"{sign} {body}")
    if not terms:
        return "0"
    text = " ".join(terms)
    return text[2:] if text.startswith("+ ") else "-" + text[1:]


def format_lp(model: MilpModel) -> str:
    model.validate()
    names = model.names
    lines = ["\\ written by gdd", "Minimize", f" obj: {_expr(model.objective, names)}",
             "Subject To"]
    for i in range(model.num_rows):
        rel = _REL_TEXT[model.relations[i]]
        lines.append(f" {model.row_names[i]}: {_expr(model.A[i], names)} {rel} "
                     f"{_num(model.rhs[i])}")
    lines.append("Bounds")
    for j, name in enumerate(names):
        lo, up = model.lb[j], model.ub[j]
        if model.kinds[j] is VarKind.BINARY and lo == 0.0 and up == 1.0:
            continue
        if lo == -math.inf and up == math.inf:
            lines.append(f" {name} free")
        elif up == math.inf:
            lines.append(f" {name} >= {_num(lo)}")
        elif lo == -math.inf:
            lines.append(f" -inf <= {name} <= {_num(up)}")
        else:
            lines.append(f" {_num(lo)} <= {name} <= {_num(up)}")
    binaries = [n for n, k in zip(names, model.kinds) if k is VarKind.BINARY]
    generals = [n for n, k in zip(names, model.kinds) if k is VarKind.INTEGER]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    if generals:
        lines.append("Generals")
        lines.append(" " + " ".join(generals))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp_file(model: MilpModel, path) -> None:
    """Write ``model`` as an LP file; I/O failures propagate as ``OSError``."""
    Path(path).write_text(format_lp(model))


_TERM = re.compile(r"([+-]?)\s*([0-9.eE+-]*[0-9.])?\s*([A-Za-z_][\w.\[\]]*)")


def _parse_expr(text: str) -> dict:
    text = text.strip()
    out: dict = {}
    if text == "0":
        return out
    tokens = re.findall(r"[+-]|[^\s+-]+(?:[eE][+-]?\d+)?", text)
    sign, coef = 1.0, None
    for tok in tokens:
        if tok == "+":
            continue
        if tok == "-":
            sign = -sign
            continue
        try:
            coef = float(tok)
            continue
        except ValueError:
            pass
        value = sign * (1.0 if coef is None else coef)
        out[tok] = out.get(tok, 0.0) + value
        sign, coef = 1.0, None
    return out


def parse_lp(text: str) -> MilpModel:
    section = None
    obj_text = ""
    rows = []
    bounds = {}
    binaries, generals = [], []
    order: list[str] = []

    def note(names):
        for nm in names:
            if nm not in order:
                order.append(nm)

    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        low = line.lower()
        if low in ("minimize", "minimise", "min"):
            section = "obj"
            continue
        if low in ("subject to", "st", "s.t."):
            section = "rows"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("binaries", "binary"):
            section = "bin"
            continue
        if low in ("generals", "general"):
            section = "gen"
            continue
        if low == "end":
            break
        if section == "obj":
            obj_text += " " + line.split(":", 1)[-1]
        elif section == "rows":
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)\s*$", body)
            if not m:
                raise ModelError(f"cannot parse row {line!r}")
            coefs = _parse_expr(m.group(1))
            note(coefs)
            rows.append((name.strip(), coefs, Relation.parse(m.group(2)), float(m.group(3))))
        elif section == "bounds":
            parts = line.split()
            if len(parts) == 2 and parts[1] == "free":
                bounds[parts[0]] = (-math.inf, math.inf)
                note([parts[0]])
            elif len(parts) == 3 and parts[1] == ">=":
                bounds[parts[0]] = (float(parts[2]), math.inf)
                note([parts[0]])
            elif len(parts) == 5:
                bounds[parts[2]] = (float(parts[0]), float(parts[4]))
                note([parts[2]])
            else:
                raise ModelError(f"cannot parse bound {line!r}")
        elif section == "bin":
            binaries.extend(line.split())
        elif section == "gen":
            generals.extend(line.split())
    objective = _parse_expr(obj_text)
    # keep declaration order: objective first, then rows, bounds and sections
    full_order = []
    for nm in list(objective) + order + binaries + generals:
        if nm not in full_order:
            full_order.append(nm)
    index = {nm: j for j, nm in enumerate(full_order)}
    n = len(full_order)
    c = np.zeros(n)
    for nm, v in objective.items():
        c[index[nm]] = v
    A = np.zeros((len(rows), n))
    for i, (_, coefs, _, _) in enumerate(rows):
        for nm, v in coefs.items():
            A[i, index[nm]] = v
    lb = np.zeros(n)
    ub = np.full(n, math.inf)
    kinds = [VarKind.CONTINUOUS] * n
    for nm in binaries:
        kinds[index[nm]] = VarKind.BINARY
        ub[index[nm]] = 1.0
    for nm in generals:
        kinds[index[nm]] = VarKind.INTEGER
    for nm, (lo, up) in bounds.items():
        lb[index[nm]], ub[index[nm]] = lo, up
    return MilpModel(c, A, [r[2] for r in rows], np.array([r[3] for r in rows]), lb, ub,
                     kinds, full_order, [r[0] for r in rows])


def read_lp_file(path) -> MilpModel:
    return parse_lp(Path(path).read_text())
