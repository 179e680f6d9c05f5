"""Subprocess adapter for an external solver.

The executable named by ``MIQCQP_EXTERNAL_SOLVER`` (split like a shell
command line) is called as

    <executable> <model.json> <solution.txt> <time-limit-seconds>

It reads the model JSON and writes a solution file:

    <status>                 one of Optimal, Feasible, Infeasible, TimeLimitNoSolution, Error
    <objective>              a number, or "none"
    <name> <value>           one line per variable (all variables when a point is returned)
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..model import ModelIR, dump_model
from .types import SolveRequest, SolveResult, Status

ENV_VAR = "MIQCQP_EXTERNAL_SOLVER"


class SolutionFormatError(ValueError):
    pass


def write_solution(path, model: ModelIR, result: SolveResult) -> None:
    lines = [result.status.value,
             "none" if result.objective is None else repr(float(result.objective))]
    if result.x is not None:
        lines += [f"{name} {float(v)!r}" for name, v in zip(model.names, result.x)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_solution(path, model: ModelIR) -> SolveResult:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    lines = [ln.strip() for ln in text if ln.strip()]
    if len(lines) < 2:
        raise SolutionFormatError("solution file needs a status line and an objective line")
    try:
        status = Status(lines[0])
    except ValueError:
        raise SolutionFormatError(f"unknown status {lines[0]!r}") from None
    objective = None if lines[1].lower() == "none" else float(lines[1])
    values = {}
    for ln in lines[2:]:
        parts = ln.split()
        if len(parts) != 2:
            raise SolutionFormatError(f"expected 'name value', got {ln!r}")
        values[parts[0]] = float(parts[1])
    x = None
    if values:
        missing = [n for n in model.names if n not in values]
        if missing:
            raise SolutionFormatError(f"solution misses variables {missing[:5]}")
        x = np.array([values[n] for n in model.names])
    return SolveResult(status, x, objective)


def _command() -> Optional[list[str]]:
    raw = os.environ.get(ENV_VAR, "").strip()
    return shlex.split(raw) if raw else None


def solve_external(request: SolveRequest, command: Optional[Sequence[str]] = None) -> SolveResult:
    cmd = list(command) if command else _command()
    if not cmd:
        return SolveResult(Status.ERROR, message=f"{ENV_VAR} is not set")
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="miqcqp-") as tmp:
        mpath = Path(tmp) / "model.json"
        spath = Path(tmp) / "solution.txt"
        dump_model(request.model, mpath)
        try:
            proc = subprocess.run(cmd + [str(mpath), str(spath), repr(float(request.time_limit_s))],
                                  capture_output=True, text=True,
                                  timeout=2.0 * request.time_limit_s + 5.0)
        except (OSError, subprocess.TimeoutExpired) as exc:
            return SolveResult(Status.ERROR, wall_time_s=time.perf_counter() - t0,
                               message=f"external solver failed to run: {exc}")
        output = (proc.stdout + proc.stderr).strip()
        wall = time.perf_counter() - t0
        if proc.returncode != 0:
            return SolveResult(Status.ERROR, wall_time_s=wall,
                               message=f"exit code {proc.returncode}: {output}")
        try:
            res = read_solution(spath, request.model)
        except (OSError, ValueError) as exc:
            return SolveResult(Status.ERROR, wall_time_s=wall, message=f"{exc}; output: {output}")
    res.wall_time_s = wall
    if res.status.has_solution:
        if res.x is None:
            return SolveResult(Status.ERROR, wall_time_s=wall, message="status claims a solution but no point given")
        viol = request.model.violation(res.x)
        if viol > 1e-6:
            return SolveResult(Status.ERROR, wall_time_s=wall,
                               message=f"returned point violates the model by {viol:.3g}; output: {output}")
        res.objective = request.model.objective(res.x)
    return res
