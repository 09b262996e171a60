"""Corpus CSV reading/writing and conversion to encoded examples."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
# attribute -> CSV header, mirroring the competition file
LABEL_COLUMNS = {"harassment": "harassment", "indirect": "IndirectH", "physical": "PhysicalH", "sexual": "SexualH"}
HEADER = ["id", "text", "harassment", "IndirectH", "PhysicalH", "SexualH", "split"]


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusRow:
    id: str
    text: str
    harassment: int
    indirect: int
    sexual: int
    physical: int
    split: str
    provenance: str = ""

    def labels(self) -> np.ndarray:
        # CATEGORIES order
        return np.array([self.harassment, self.indirect, self.sexual, self.physical], dtype=np.float64)


def parse_column_map(spec: str | None) -> dict:
    """``"harassment=harass,SexualH=sexual"`` -> {canonical: actual}."""
    if not spec:
        return {}
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise CorpusError(f"bad column mapping {part!r}; expected canonical=actual")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _label(value: str, column: str, lineno: int) -> int:
    v = value.strip()
    if v in ("0", "1"):
        return int(v)
    raise CorpusError(f"row {lineno}: column {column} must be 0 or 1, got {value!r}")


def read_corpus(path, column_map: dict | None = None, default_split: str | None = None) -> list[CorpusRow]:
    column_map = column_map or {}
    col = {c: column_map.get(c, c) for c in HEADER + ["provenance"]}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fieldnames = reader.fieldnames or []
        required = ["id", "text"] + list(LABEL_COLUMNS.values())
        if default_split is None:
            required.append("split")
        missing = [col[c] for c in required if col[c] not in fieldnames]
        if missing:
            raise CorpusError(f"{path}: missing columns {missing}")
        rows = []
        bad_types = 0
        for lineno, rec in enumerate(reader, start=2):
            labels = {attr: _label(rec[col[header]] or "", col[header], lineno) for attr, header in LABEL_COLUMNS.items()}
            split = (rec.get(col["split"]) or default_split or "").strip()
            if split not in SPLITS:
                raise CorpusError(f"row {lineno}: unknown split {split!r}")
            row = CorpusRow(id=rec[col["id"]], text=rec[col["text"]] or "", split=split,
                            provenance=rec.get(col["provenance"]) or "", **labels)
            n_types = row.indirect + row.sexual + row.physical
            if (row.harassment == 1 and n_types > 1) or (row.harassment == 0 and n_types > 0):
                bad_types += 1
            rows.append(row)
    if bad_types:
        log.warning("%s: %d rows have inconsistent harassment/type labels", path, bad_types)
    return rows


def write_corpus(rows: Iterable[CorpusRow], path, extra: dict | None = None) -> None:
    """Write rows in the canonical layout; ``extra`` maps column name -> per-row values."""
    rows = list(rows)
    with_prov = any(r.provenance for r in rows)
    header = HEADER + (["provenance"] if with_prov else []) + list(extra or {})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for i, r in enumerate(rows):
        rec = [r.id, r.text, r.harassment, r.indirect, r.physical, r.sexual, r.split]
        if with_prov:
            rec.append(r.provenance)
        for values in (extra or {}).values():
            rec.append(values[i])
        w.writerow(rec)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def split_rows(rows: Sequence[CorpusRow], split: str) -> list[CorpusRow]:
    return [r for r in rows if r.split == split]


def class_distribution(rows: Sequence[CorpusRow]) -> list[dict]:
    """Per split: tweet count, harassment count and percentages of all tweets in the split."""
    out = []
    for split in SPLITS:
        sub = split_rows(rows, split)
        n = len(sub)

        def pct(attr):
            return round(100.0 * sum(getattr(r, attr) for r in sub) / n, 2) if n else 0.0

        out.append({
            "split": split,
            "tweets": n,
            "harassment": sum(r.harassment for r in sub),
            "harassment_pct": pct("harassment"),
            "indirect_pct": pct("indirect"),
            "sexual_pct": pct("sexual"),
            "physical_pct": pct("physical"),
        })
    return out
