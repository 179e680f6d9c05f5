"""Benchmark harness: run the pipeline over a directory of instances and
compare two result sets instance by instance."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from .metrics import BenchRecord, Comparison, aggregate, compare, records_to_csv
from .pipeline import RunConfig, solve_instance
from .qplib import QplibParseError, iter_qplib_files, read_qplib

log = logging.getLogger(__name__)


class BenchError(ValueError):
    pass


def read_best_known(path) -> dict[str, float]:
    """CSV with columns ``instance`` and ``objective``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"instance", "objective"} <= set(reader.fieldnames):
            raise BenchError("best-known CSV needs the columns 'instance' and 'objective'")
        for row in reader:
            if row["objective"].strip():
                out[row["instance"].strip()] = float(row["objective"])
    return out


def run_bench(config: RunConfig, directory, best_known: Optional[dict] = None) -> tuple[list[BenchRecord], dict]:
    """Solve every instance file in ``directory``; returns the records and the
    per-class summary."""
    best_known = best_known or {}
    records = []
    for path in iter_qplib_files(directory):
        name = Path(path).stem
        try:
            inst = read_qplib(path)
        except (QplibParseError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        res = solve_instance(inst, config)
        rec = BenchRecord.from_trace(name, res.problem_class.value, res.trace,
                                     best_known.get(name, best_known.get(inst.name)),
                                     res.wall_time, inst.sense)
        records.append(rec)
    return records, aggregate(records)


def write_bench(records: Sequence[BenchRecord], summary: dict, prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    csv_path.write_text(records_to_csv(records))
    json_path.write_text(json.dumps({"records": [asdict(r) for r in records], "summary": summary},
                                    indent=2))
    return csv_path, json_path


def load_results(path) -> dict[str, dict]:
    """Per-instance results from a bench JSON (``records``) or a single solve
    JSON; keys are instance names."""
    data = json.loads(Path(path).read_text())
    rows = data["records"] if isinstance(data, dict) and "records" in data else [data]
    out = {}
    for r in rows:
        out[r["instance"]] = {"found": bool(r["found"]), "objective": r.get("objective"),
                              "class": r.get("problem_class", r.get("class", "")),
                              "sense": r.get("sense", "min")}
    return out


def run_compare(results_a: dict[str, dict], results_b: dict[str, dict]) -> dict:
    """Same/Better/Worse of ``a`` against ``b`` per instance, ``None`` when a
    side has no solution; counts per class."""
    diff = set(results_a) ^ set(results_b)
    if diff:
        raise BenchError(f"instance sets differ: {sorted(diff)}")
    rows = []
    counts: dict[str, Counter] = {}
    for name in sorted(results_a):
        a, b = results_a[name], results_b[name]
        if not (a["found"] and b["found"]):
            verdict = Comparison.NONE
        else:
            verdict = compare(float(a["objective"]), float(b["objective"]), a.get("sense", "min"))
        rows.append({"instance": name, "class": a["class"], "result": verdict.value})
        for key in (a["class"], "ALL"):
            counts.setdefault(key, Counter())[verdict.value] += 1
    return {"rows": rows,
            "counts": {k: {c.value: v.get(c.value, 0) for c in Comparison} for k, v in counts.items()}}
