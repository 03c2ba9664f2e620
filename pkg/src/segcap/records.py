"""JSON Lines ingestion, schema checks and atomic output."""
from __future__ import annotations

import json
import os
import sys
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

from jsonschema import Draft7Validator

from .errors import DuplicateKey, IdMismatch, MalformedRecord, SegcapError

_STR = {"type": "string", "minLength": 1}
_PROP = {"type": "array", "minItems": 1, "maxItems": 3, "items": _STR}

SCHEMAS = {
    "units": {
        "type": "object",
        "required": ["id", "units"],
        "properties": {
            "id": _STR,
            "units": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "frame_shift_ms": {"type": "integer", "exclusiveMinimum": 0},
            "duration_s": {"type": "number", "minimum": 0},
            "speaker": {"type": "string"},
            "text": {"type": "string"},
            "image_id": _STR,
        },
    },
    "references": {
        "type": "object",
        "required": ["image_id", "caption"],
        "properties": {"image_id": _STR, "caption": {"type": "string"}},
    },
    "candidates": {
        "type": "object",
        "required": ["image_id", "candidate_id", "caption"],
        "properties": {
            "image_id": _STR,
            "candidate_id": {"type": "integer", "minimum": 0},
            "caption": {"type": "string"},
            "score": {"type": ["number", "null"]},
        },
    },
    "props": {
        "type": "object",
        "required": ["image_id", "kind", "props"],
        "properties": {
            "image_id": _STR,
            "kind": {"enum": ["reference", "candidate"]},
            "candidate_id": {"type": "integer", "minimum": 0},
            "props": {"type": "array", "items": _PROP},
        },
        "if": {"properties": {"kind": {"const": "candidate"}}},
        "then": {"required": ["candidate_id"]},
    },
    "points": {
        "type": "object",
        "required": ["method", "n", "metric", "value"],
        "properties": {
            "method": _STR,
            "n": {"type": "integer", "minimum": 1},
            "metric": _STR,
            "value": {"type": "number"},
        },
    },
    "contexts": {
        "type": "object",
        "required": ["image_id"],
        "properties": {"image_id": _STR},
    },
}
_VALIDATORS = {k: Draft7Validator(v) for k, v in SCHEMAS.items()}


@dataclass(frozen=True)
class Record:
    line: int
    data: dict


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: Optional[int]
    kind: str
    message: str

    def as_dict(self):
        return {"path": self.path, "line": self.line, "kind": self.kind, "message": self.message}


def _lines(path):
    # utf-8 is mandatory; universal newlines make CRLF input read like LF
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        try:
            for lineno, raw in enumerate(fh, 1):
                yield lineno, raw
        except UnicodeDecodeError as exc:
            raise MalformedRecord(path, "?", f"not valid UTF-8 ({exc.reason})") from exc


def read_jsonl(path, schema: Optional[str] = None) -> list[Record]:
    """Parse a JSON Lines file; the first bad line raises ``MalformedRecord``."""
    records, diags = _scan(path, schema, stop_at_first=True)
    if diags:
        d = diags[0]
        raise MalformedRecord(d.path, d.line, d.message)
    return records


def _scan(path, schema, stop_at_first=False):
    validator = _VALIDATORS[schema] if schema else None
    records, diags = [], []
    for lineno, raw in _lines(path):
        text = raw.strip()
        if not text:
            continue
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            diags.append(Diagnostic(str(path), lineno, "MalformedRecord", f"invalid JSON: {exc.msg}"))
        else:
            if not isinstance(data, dict):
                diags.append(Diagnostic(str(path), lineno, "MalformedRecord", "record is not an object"))
            elif validator is not None:
                err = next(iter(sorted(validator.iter_errors(data), key=lambda e: list(e.path))), None)
                if err is not None:
                    where = "/".join(str(p) for p in err.path) or "record"
                    diags.append(Diagnostic(str(path), lineno, "MalformedRecord", f"{where}: {err.message}"))
                else:
                    records.append(Record(lineno, data))
            else:
                records.append(Record(lineno, data))
        if stop_at_first and diags:
            break
    return records, diags


def check_unique(records: Iterable[Record], key_fields, path="") -> None:
    seen = defaultdict(list)
    for r in records:
        seen[tuple(r.data.get(k) for k in key_fields)].append(r.line)
    for key, lines in seen.items():
        if len(lines) > 1:
            raise DuplicateKey(key if len(key) > 1 else key[0], lines)


def check_same_ids(left: Iterable[str], right: Iterable[str]) -> None:
    left, right = set(left), set(right)
    if left != right:
        raise IdMismatch(left - right, right - left)


def validate_inputs(files: Mapping[str, str | Path]) -> list[Diagnostic]:
    """Line-numbered diagnostics for a set of input files keyed by schema name.

    When both ``candidates`` and ``references`` are given their image-id sets
    must match; a ``props`` file must have the same ids on both sides.
    """
    diags = []
    parsed = {}
    for schema, path in files.items():
        if schema not in SCHEMAS:
            raise SegcapError(f"unknown schema {schema!r}")
        records, d = _scan(path, schema)
        diags.extend(d)
        parsed[schema] = records
        keys = {"candidates": ("image_id", "candidate_id"), "units": ("id",),
                "references": None, "contexts": ("image_id",),
                "props": ("image_id", "candidate_id")}.get(schema)
        if keys:
            keyed = records
            if schema == "props":
                # several reference rows per image are expected
                keyed = [r for r in records if r.data["kind"] == "candidate"]
            try:
                check_unique(keyed, keys)
            except DuplicateKey as exc:
                diags.append(Diagnostic(str(path), exc.lines[1], "DuplicateKey", str(exc)))
    pairs = []
    if "candidates" in parsed and "references" in parsed:
        pairs.append((files["candidates"],
                      {r.data["image_id"] for r in parsed["candidates"]},
                      {r.data["image_id"] for r in parsed["references"]}))
    if "props" in parsed:
        recs = parsed["props"]
        pairs.append((files["props"],
                      {r.data["image_id"] for r in recs if r.data["kind"] == "candidate"},
                      {r.data["image_id"] for r in recs if r.data["kind"] == "reference"}))
    for path, cand_ids, ref_ids in pairs:
        try:
            check_same_ids(cand_ids, ref_ids)
        except IdMismatch as exc:
            diags.append(Diagnostic(str(path), None, "IdMismatch", str(exc)))
    return diags


def write_output(path, text: str) -> None:
    """Write ``text`` to stdout for '-', otherwise atomically via temp + rename."""
    if str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(text.encode("utf-8"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)


def dumps_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
