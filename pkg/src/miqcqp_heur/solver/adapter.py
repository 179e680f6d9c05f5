"""The internal backend exposed through the external-solver file protocol.

    python -m miqcqp_heur.solver.adapter <model.json> <solution.txt> <time-limit>
"""

from __future__ import annotations

import sys

from ..model import load_model
from .backend import InternalBackend
from .external import write_solution
from .types import SolveRequest


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print("usage: adapter <model.json> <solution.txt> <time-limit>", file=sys.stderr)
        return 1
    model = load_model(argv[0])
    res = InternalBackend().solve(SolveRequest(model, float(argv[2])))
    write_solution(argv[1], model, res)
    return 0


if __name__ == "__main__":
    sys.exit(main())
