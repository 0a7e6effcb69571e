"""Dataset records and the JSON Lines file format.

One record per line: {"id": str, "text": str, "entities": [{"start", "end",
"label"}]}.  ``text`` is the space-joined token sequence; span indices are
token positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .bilou import EntitySpan, validate_spans


@dataclass
class UtteranceRecord:
    id: str
    tokens: list
    entities: list

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def record_to_json(rec: UtteranceRecord) -> str:
    obj = {
        "id": rec.id,
        "text": rec.text,
        "entities": [
            {"start": s.start, "end": s.end, "label": s.label} for s in rec.entities
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def record_from_json(line: str, lineno: int = 0) -> UtteranceRecord:
    try:
        obj = json.loads(line)
        spans = [
            EntitySpan(int(e["start"]), int(e["end"]), str(e["label"]))
            for e in obj["entities"]
        ]
        tokens = obj["text"].split(" ") if obj["text"] else []
        rec = UtteranceRecord(str(obj["id"]), tokens, spans)
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"bad dataset record line {lineno}: {exc}") from None
    validate_spans(rec.entities, len(rec.tokens))
    return rec


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def read_jsonl(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                records.append(record_from_json(line, lineno))
    return records
