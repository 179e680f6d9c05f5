"""Solution-quality measurements computed from incumbent traces."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

SAME_RTOL = 1e-5
EPS_GAP = 1e-4


class Comparison(str, enum.Enum):
    SAME = "Same"
    BETTER = "Better"
    WORSE = "Worse"
    NONE = "None"


@dataclass
class IncumbentTrace:
    """Improving objective values with their times (seconds since the run
    started). ``horizon`` is the time limit ``T``."""

    events: list[tuple[float, float]] = field(default_factory=list)
    horizon: float = 300.0
    start: float = field(default_factory=time.perf_counter, repr=False, compare=False)

    def __post_init__(self):
        ev = [(float(t), float(v)) for t, v in self.events]
        for (t0, v0), (t1, v1) in zip(ev, ev[1:]):
            if not t1 >= t0:
                raise ValueError("trace times must be nondecreasing")
            if not v1 < v0:
                raise ValueError("trace objectives must strictly improve")
        if ev and ev[-1][0] > self.horizon + 1e-9:
            raise ValueError("trace extends past the horizon")
        self.events = ev

    def record(self, value: float, t: Optional[float] = None) -> bool:
        """Append ``value`` if it improves on the last entry."""
        if self.events and not value < self.events[-1][1]:
            return False
        if t is None:
            t = time.perf_counter() - self.start
        if self.events:
            t = max(t, self.events[-1][0])
        self.events.append((float(t), float(value)))
        return True

    def merge(self, other: "IncumbentTrace") -> None:
        for t, v in sorted(other.events):
            self.record(v, t)

    @property
    def best(self) -> Optional[float]:
        return self.events[-1][1] if self.events else None

    @property
    def first_time(self) -> Optional[float]:
        return self.events[0][0] if self.events else None

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "events": [[t, v] for t, v in self.events]}


def primal_gap(v: float, v_star: float) -> float:
    """``|v - v*| / max(|v|, |v*|) * 100``; ``0`` when both are zero."""
    denom = max(abs(v), abs(v_star))
    if denom == 0:
        return 0.0
    return abs(v - v_star) / denom * 100.0


def primal_integral(trace: IncumbentTrace, v_star: float, horizon: Optional[float] = None) -> float:
    """``sum_{i=2..s} g_{i-1} (t_i - t_{i-1}) + (t_1 - t_0)`` with ``t_0 = 0``,
    ``t_s = T`` and fractional gaps; an empty trace gives ``T``."""
    T = trace.horizon if horizon is None else float(horizon)
    if not trace.events:
        return T
    times = [t for t, _ in trace.events] + [T]
    gaps = [primal_gap(v, v_star) / 100.0 for _, v in trace.events]
    total = times[0]
    for i in range(1, len(times)):
        total += gaps[i - 1] * (times[i] - times[i - 1])
    return total


def shifted_geomean(values: Iterable[float], shift: float = 1.0) -> float:
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("shifted geometric mean of an empty list")
    if np.any(vals < 0):
        raise ValueError("values must be nonnegative")
    return float(np.exp(np.mean(np.log(vals + shift))) - shift)


def compare(v1: float, v2: float, sense: str = "min") -> Comparison:
    if not (math.isfinite(v1) and math.isfinite(v2)):
        raise ValueError("compare needs finite values")
    denom = max(abs(v1), abs(v2))
    rel = 0.0 if denom == 0 else abs(v1 - v2) / denom
    if rel <= SAME_RTOL:
        return Comparison.SAME
    better = v1 < v2 if sense == "min" else v1 > v2
    return Comparison.BETTER if better else Comparison.WORSE


def eps_gap_hit(gap_percent: float) -> bool:
    if gap_percent < 0:
        raise ValueError("gap must be nonnegative")
    return gap_percent / 100.0 < EPS_GAP


@dataclass
class BenchRecord:
    instance: str
    problem_class: str
    found: bool
    objective: Optional[float] = None
    best_known: Optional[float] = None
    gap_percent: Optional[float] = None
    eps_gap_hit: Optional[bool] = None
    primal_integral: Optional[float] = None
    fft: Optional[float] = None
    wall_time: Optional[float] = None
    comparison: str = Comparison.NONE.value
    sense: str = "min"

    @classmethod
    def from_trace(cls, instance: str, problem_class: str, trace: IncumbentTrace,
                   best_known: Optional[float], wall_time: Optional[float] = None,
                   sense: str = "min") -> "BenchRecord":
        """``trace`` holds minimization values (a maximization stored negated);
        ``best_known`` and the reported objective are in the instance's sense."""
        sign = -1.0 if sense == "max" else 1.0
        found = bool(trace.events)
        rec = cls(instance, problem_class, found, None if not found else sign * trace.best,
                  best_known, fft=trace.first_time, wall_time=wall_time, sense=sense)
        if best_known is None:
            return rec
        if not found:
            rec.gap_percent, rec.eps_gap_hit, rec.primal_integral = 100.0, False, trace.horizon
            return rec
        target = sign * best_known
        rec.gap_percent = primal_gap(trace.best, target)
        rec.eps_gap_hit = eps_gap_hit(rec.gap_percent)
        rec.primal_integral = primal_integral(trace, target)
        rec.comparison = compare(trace.best, target).value
        return rec


CSV_FIELDS = [f for f in BenchRecord.__dataclass_fields__]


def records_to_csv(records: Sequence[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: ("" if v is None else v) for k, v in asdict(r).items()})
    return buf.getvalue()


def aggregate(records: Sequence[BenchRecord]) -> dict:
    """Per-class Found / Gap% / eps-Gap / PI / FFT summary; averages use the
    shifted geometric mean (shift 1)."""
    out = {}
    classes = sorted({r.problem_class for r in records})
    for cls in classes + ["ALL"]:
        rows = [r for r in records if cls == "ALL" or r.problem_class == cls]
        gaps = [r.gap_percent for r in rows if r.gap_percent is not None]
        pis = [r.primal_integral for r in rows if r.primal_integral is not None]
        ffts = [r.fft for r in rows if r.fft is not None]
        out[cls] = {
            "instances": len(rows),
            "found": sum(r.found for r in rows),
            "gap_percent": shifted_geomean(gaps) if gaps else None,
            "eps_gap": sum(bool(r.eps_gap_hit) for r in rows),
            "primal_integral": shifted_geomean(pis) if pis else None,
            "fft": shifted_geomean(ffts) if ffts else None,
        }
    return {"classes": out,
            "averaging": "shifted geometric mean exp(mean(log(v + 1))) - 1",
            "no_solution_convention": "gap 100%, primal integral = T"}


def records_to_json(records: Sequence[BenchRecord]) -> str:
    return json.dumps({"records": [asdict(r) for r in records], "summary": aggregate(records)},
                      indent=2)
