"""File formats: CSV datasets, the predicate mini-language and JSONL transcripts.

Predicates are JSON values:

* ``{"col": "age", "op": "ge", "value": 40}``: 1 if the comparison holds, else 0
  (``op`` is one of ``eq, ge, le, gt, lt``);
* a list of such comparisons, or ``{"all": [...]}``: their conjunction
  (an empty conjunction is the counting query);
* ``{"col": "income", "scale": 1e-5, "clamp": true}``: ``scale * x``, clipped to
  ``[0, 1]`` when ``clamp`` is set (otherwise out-of-range values are errors);
* ``{"const": c}`` with ``c`` in ``[0, 1]``.
"""

from __future__ import annotations

import csv
import json
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .mechanisms import Dataset, LinearQuery

_OPS = {
    "eq": operator.eq,
    "ge": operator.ge,
    "le": operator.le,
    "gt": operator.gt,
    "lt": operator.lt,
}


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _parse_number(text: str):
    try:
        value = float(text)
    except ValueError:
        return None
    return value


def read_csv(path) -> tuple[Dataset, tuple]:
    """Read a header-rowed CSV into ``(dataset, columns)``.

    A column is numeric when every value parses as a number.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: missing header row")
        rows = list(reader)
    columns = list(reader.fieldnames)
    numeric = {c: all(_parse_number(r[c]) is not None for r in rows) for c in columns}
    records = []
    for r in rows:
        records.append({c: (float(r[c]) if numeric[c] else r[c]) for c in columns})
    return Dataset(tuple(records)), tuple(columns)


def load_csv(path) -> Dataset:
    return read_csv(path)[0]


def write_csv(path, records: Iterable[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(r)


@dataclass(frozen=True)
class CompiledPredicate:
    fn: Callable[[dict], float]
    source: str

    def __call__(self, record: dict) -> float:
        return self.fn(record)


def _comparison(spec: dict, columns) -> Callable[[dict], bool]:
    missing = {"col", "op", "value"} - set(spec)
    if missing:
        raise FormatError(f"comparison needs keys {sorted(missing)}")
    col, op, value = spec["col"], spec["op"], spec["value"]
    if columns is not None and col not in columns:
        raise FormatError(f"unknown column {col!r}")
    if op not in _OPS:
        raise FormatError(f"unknown op {op!r}; expected one of {sorted(_OPS)}")
    if op != "eq" and not isinstance(value, (int, float)):
        raise FormatError(f"op {op!r} needs a numeric value, got {value!r}")
    cmp = _OPS[op]

    def test(record):
        x = record[col]
        if isinstance(value, (int, float)) and not isinstance(x, (int, float)):
            return False
        return bool(cmp(x, value))

    return test


def compile_predicate(spec: Any, columns=None) -> CompiledPredicate:
    """Compile a predicate spec into a function ``record -> [0, 1]``."""
    source = json.dumps(spec, sort_keys=True)
    if isinstance(spec, dict) and "const" in spec:
        c = spec["const"]
        if not isinstance(c, (int, float)) or not (0 <= c <= 1):
            raise FormatError(f"const must be a number in [0, 1], got {c!r}")
        return CompiledPredicate(lambda r, c=float(c): c, source)
    if isinstance(spec, dict) and "scale" in spec:
        col, scale, clamp = spec.get("col"), spec["scale"], bool(spec.get("clamp", False))
        if columns is not None and col not in columns:
            raise FormatError(f"unknown column {col!r}")
        if not isinstance(scale, (int, float)):
            raise FormatError(f"scale must be numeric, got {scale!r}")

        def weighted(record):
            x = record[col]
            if not isinstance(x, (int, float)):
                raise FormatError(f"column {col!r} is not numeric")
            v = scale * x
            return min(1.0, max(0.0, v)) if clamp else v

        return CompiledPredicate(weighted, source)
    if isinstance(spec, dict) and "all" in spec:
        spec = spec["all"]
    if isinstance(spec, dict):
        spec = [spec]
    if not isinstance(spec, list):
        raise FormatError(f"cannot parse predicate {spec!r}")
    tests = []
    for part in spec:
        if not isinstance(part, dict):
            raise FormatError(f"conjunct must be an object, got {part!r}")
        tests.append(_comparison(part, columns))
    return CompiledPredicate(lambda r: 1.0 if all(t(r) for t in tests) else 0.0, source)


def compile_query(spec: Any, threshold: float = 0.0, columns=None) -> LinearQuery:
    pred = compile_predicate(spec, columns)
    return LinearQuery(pred, float(threshold), pred.source)


@dataclass(frozen=True)
class TranscriptOp:
    op: str
    params: dict
    line: int
    id: str | None = None


OP_NAMES = (
    "above_threshold",
    "between_thresholds",
    "cr",
    "revise",
    "top_k",
    "above_threshold_release",
    "sweep",
    "wrap",
    "run_twice",
    "svt_query",
    "exp_choice",
)


def parse_transcript(text: str) -> list[TranscriptOp]:
    """Parse JSONL, one op per non-blank line; errors carry the line number."""
    ops = []
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", n) from None
        if not isinstance(obj, dict) or "op" not in obj:
            raise FormatError("each line must be an object with an 'op' key", n)
        name = obj.pop("op")
        if name not in OP_NAMES:
            raise FormatError(f"unknown op {name!r}", n)
        ident = obj.pop("id", None)
        if ident is not None and not isinstance(ident, str):
            raise FormatError("'id' must be a string", n)
        ops.append(TranscriptOp(name, obj, n, ident))
    return ops


def load_transcript(path) -> list[TranscriptOp]:
    return parse_transcript(Path(path).read_text())
