"""Path observations: JSONL/CSV ingestion and sufficient statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .conjugate import SufficientStats
from .graph import EventTree, ModifiedTree

__all__ = [
    "DataError",
    "PathObservation",
    "Dataset",
    "load_dataset",
    "dump_dataset",
    "sufficient_stats",
    "TERMINAL_STATES",
]

DATASET_SCHEMA = "rdceg.dataset/1"
TERMINAL_STATES = ("critical", "dropout", "censored")


class DataError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class PathObservation:
    id: int
    entry: str
    steps: tuple  # of (label, hold or None)
    terminal: str
    censored_hold: float | None = None

    def __post_init__(self):
        if self.terminal not in TERMINAL_STATES:
            raise DataError(f"unknown terminal status {self.terminal!r}")
        for label, hold in self.steps:
            if hold is not None and (not math.isfinite(hold) or hold < 0):
                raise DataError(f"invalid holding time {hold!r} on {label!r}")
        if self.censored_hold is not None and not self.censored_hold >= 0:
            raise DataError("censored holding time must be nonnegative")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "entry": self.entry,
            "steps": [{"label": lab, "hold": h} for lab, h in self.steps],
            "terminal": self.terminal,
        }
        if self.censored_hold is not None:
            d["censored_hold"] = self.censored_hold
        return d

    @classmethod
    def from_dict(cls, d) -> "PathObservation":
        steps = []
        for st in d["steps"]:
            h = st.get("hold")
            steps.append((str(st["label"]), None if h is None else float(h)))
        ch = d.get("censored_hold")
        return cls(int(d["id"]), str(d.get("entry", "")), tuple(steps), d["terminal"],
                   None if ch is None else float(ch))


@dataclass
class Dataset:
    observations: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.observations)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.observations == other.observations

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(self.observations + other.observations, dict(self.provenance))

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        buf.write(json.dumps({"schema": DATASET_SCHEMA, "provenance": self.provenance}, sort_keys=True))
        buf.write("\n")
        for ob in self.observations:
            buf.write(json.dumps(ob.to_dict()))
            buf.write("\n")
        return buf.getvalue()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps({"schema": DATASET_SCHEMA, "provenance": self.provenance}, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "entry", "step_index", "label", "hold", "terminal", "censored_hold"])
        for ob in self.observations:
            ch = "" if ob.censored_hold is None else repr(ob.censored_hold)
            if not ob.steps:
                w.writerow([ob.id, ob.entry, -1, "", "", ob.terminal, ch])
            for k, (label, hold) in enumerate(ob.steps):
                w.writerow([ob.id, ob.entry, k, label, "" if hold is None else repr(hold), ob.terminal, ch])
        return buf.getvalue()


def dump_dataset(ds: Dataset, path, fmt: str | None = None) -> None:
    fmt = fmt or _infer_format(path)
    text = ds.to_jsonl() if fmt == "jsonl" else ds.to_csv()
    Path(path).write_text(text)


def _infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".json", ".ndjson"):
        return "jsonl"
    if suffix == ".csv":
        return "csv"
    raise DataError(f"cannot infer data format from {str(path)!r}; pass a format")


def load_dataset(path, fmt: str | None = None) -> Dataset:
    fmt = fmt or _infer_format(path)
    text = Path(path).read_text()
    if fmt == "jsonl":
        return _parse_jsonl(text)
    if fmt == "csv":
        return _parse_csv(text)
    raise DataError(f"unknown data format {fmt!r}")


def _parse_jsonl(text: str) -> Dataset:
    ds = Dataset()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON ({exc.msg})", lineno) from None
        if "schema" in d:
            if d["schema"] != DATASET_SCHEMA:
                raise DataError(f"unsupported dataset schema {d['schema']!r}", lineno)
            ds.provenance = d.get("provenance", {})
            continue
        try:
            ds.observations.append(PathObservation.from_dict(d))
        except DataError as exc:
            raise DataError(str(exc), lineno) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed record ({exc})", lineno) from None
    return ds


def _parse_csv(text: str) -> Dataset:
    ds = Dataset()
    lines = text.splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        head = json.loads(lines[start][1:])
        ds.provenance = head.get("provenance", {})
        start += 1
    if start >= len(lines) or not lines[start].strip():
        return ds
    reader = csv.DictReader(lines[start:])
    required = {"id", "step_index", "label", "hold", "terminal"}
    if not required <= set(reader.fieldnames or ()):
        raise DataError(f"CSV header must contain {sorted(required)}", start + 1)
    current = None
    steps: list = []
    meta = None

    def flush():
        if current is not None:
            ds.observations.append(PathObservation(current, meta[2], tuple(steps), meta[0], meta[1]))

    for k, row in enumerate(reader):
        lineno = start + 2 + k
        try:
            pid = int(row["id"])
            idx = int(row["step_index"])
            hold = None if row["hold"] in ("", None) else float(row["hold"])
            ch = row.get("censored_hold") or ""
            ch = None if ch == "" else float(ch)
            if pid != current:
                flush()
                current, steps, meta = pid, [], (row["terminal"], ch, row.get("entry") or "")
            if idx >= 0:
                if idx != len(steps):
                    raise DataError("step_index out of sequence", lineno)
                steps.append((row["label"], hold))
            if hold is not None and hold < 0:
                raise DataError("negative holding time", lineno)
        except DataError:
            raise
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed row ({exc})", lineno) from None
    try:
        flush()
    except DataError as exc:
        raise DataError(str(exc), len(lines)) from None
    return ds


def sufficient_stats(ds: Dataset | Iterable[PathObservation], tree: ModifiedTree | EventTree) -> SufficientStats:
    """Replay every path on the tree and tally counts and holding times per edge.

    Errors name the offending record's position (1-based) in the dataset.
    """
    t = tree.tree if isinstance(tree, ModifiedTree) else tree
    obs = ds.observations if isinstance(ds, Dataset) else list(ds)
    counts: dict[int, int] = {}
    holds: dict[int, list[float]] = {}
    censored: dict[int, list[float]] = {}
    lookup = {s: {e.label: e for e in t.children(s)} for s in t.situations}
    root_name = t.names[t.root]
    for pos, ob in enumerate(obs, start=1):
        if ob.entry and ob.entry != root_name:
            raise DataError(f"individual {ob.id} enters at {ob.entry!r}, not the root", pos)
        v = t.root
        for k, (label, hold) in enumerate(ob.steps):
            if v not in lookup:
                raise DataError(f"individual {ob.id} continues past a leaf at step {k}", pos)
            e = lookup[v].get(label)
            if e is None:
                raise DataError(
                    f"individual {ob.id}: no edge {label!r} out of {t.names[v]!r} at step {k}", pos
                )
            if e.timed != (hold is not None):
                raise DataError(
                    f"individual {ob.id}: edge {t.edge_ref(e.id)} "
                    + ("needs a holding time" if e.timed else "takes no holding time"),
                    pos,
                )
            counts[e.id] = counts.get(e.id, 0) + 1
            if hold is not None:
                if hold < 0:
                    raise DataError("negative holding time", pos)
                holds.setdefault(e.id, []).append(hold)
            v = t.resolve(e.child)
        if ob.censored_hold is not None and v in lookup:
            censored.setdefault(v, []).append(ob.censored_hold)
    return SufficientStats(counts, holds, censored)
