import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from miqcqp_heur.bench import BenchError, load_results, read_best_known, run_compare
from miqcqp_heur.cli import EXIT_FOUND, EXIT_NOT_FOUND, EXIT_USAGE, main
from miqcqp_heur.corpus import random_instance
from miqcqp_heur.instance import ProblemClass, check_feasible, make_instance, objective_value
from miqcqp_heur.pipeline import RunConfig, choose_pump, solve_instance
from miqcqp_heur.qplib import read_qplib
from miqcqp_heur.solver import brute_force

DATA = Path(__file__).parent / "data" / "qplib"


class TestRunConfig:
    @pytest.mark.parametrize("kw", [dict(time_limit_s=0), dict(time_limit_s=float("inf")),
                                    dict(workers=0), dict(shift_rule="wide"), dict(backend="gurobi")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RunConfig(**kw)


class TestChoosePump:
    def test_routing(self):
        assert choose_pump(random_instance(0, ProblemClass.MIBQP)[0]) == "random_flip"
        assert choose_pump(random_instance(0, ProblemClass.MIQCP)[0]) == "race_pumps"
        assert choose_pump(random_instance(0, ProblemClass.MIQP)[0]) in ("fixed_point_miqp",
                                                                         "random_flip_project")

    def test_miqp_without_perturbed_continuous(self):
        # convex objective: no shifts, so no perturbed continuous index
        inst = make_instance(np.eye(2), [1.0, -1.0], A=[[1.0, 1.0]], b_A=[1.0],
                             lower=[0, 0], upper=[1, 1], integer=[0])
        assert choose_pump(inst) == "random_flip_project"


class TestSolveInstance:
    @pytest.mark.parametrize("cls", list(ProblemClass))
    def test_feasible_and_matches_trace(self, cls):
        inst, _ = random_instance(5, cls, n_bin=4, n_cont=1)
        res = solve_instance(inst, RunConfig(time_limit_s=20, deterministic=True))
        assert res.found and check_feasible(inst, res.x, 1e-6)
        assert res.trace.best == pytest.approx(objective_value(inst, res.x))
        assert res.wall_time <= 20 + 5
        ref = brute_force(inst)
        assert res.objective >= ref.objective - 1e-6

    def test_maximization_reported_in_sense(self):
        inst = read_qplib(DATA / "handwritten_qmq.qplib")
        res = solve_instance(inst, RunConfig(time_limit_s=15, deterministic=True))
        out = res.to_json(best_known=res.reported_objective())
        assert out["sense"] == "max" and out["found"]
        assert out["objective"] >= 3.5 - 1e-6
        assert out["trace"][-1][1] == pytest.approx(out["objective"])
        assert out["metrics"]["gap_percent"] == pytest.approx(0.0, abs=1e-9)

    def test_json_keys(self):
        inst = read_qplib(DATA / "handwritten_qbb.qplib")
        out = solve_instance(inst, RunConfig(time_limit_s=5)).to_json()
        assert {"instance", "class", "sense", "found", "objective", "solution", "trace", "metrics",
                "pump", "local_branching", "wall_time", "config", "notes"} <= set(out)
        json.dumps(out)


class TestCompare:
    def row(self, obj, found=True, cls="MIQP"):
        return {"found": found, "objective": obj, "class": cls, "sense": "min"}

    def test_verdicts(self):
        a = {"p": self.row(1.0), "q": self.row(2.0), "r": self.row(3.0), "s": self.row(None, False)}
        b = {"p": self.row(1.0), "q": self.row(3.0), "r": self.row(2.0), "s": self.row(1.0)}
        out = run_compare(a, b)
        assert [r["result"] for r in out["rows"]] == ["Same", "Better", "Worse", "None"]
        assert out["counts"]["ALL"] == {"Same": 1, "Better": 1, "Worse": 1, "None": 1}

    def test_differing_sets(self):
        with pytest.raises(BenchError):
            run_compare({"p": self.row(1.0)}, {"q": self.row(1.0)})

    def test_best_known_csv(self, tmp_path):
        p = tmp_path / "bk.csv"
        p.write_text("instance,objective\na,1.5\nb,\n")
        assert read_best_known(p) == {"a": 1.5}
        p.write_text("name,value\na,1\n")
        with pytest.raises(BenchError):
            read_best_known(p)


class TestCli:
    def test_classify(self, capsys):
        assert main(["classify", str(DATA / "handwritten_qmq.qplib")]) == EXIT_FOUND
        out = json.loads(capsys.readouterr().out)
        assert out["class"] == "MIQCP" and out["m1"] == 2 and out["m2"] == 2

    def test_classify_dump_json(self, capsys):
        assert main(["classify", "--dump-json", str(DATA / "handwritten_qbb.qplib")]) == EXIT_FOUND
        assert json.loads(capsys.readouterr().out)["n"] == 3

    def test_parse_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.qplib"
        bad.write_text("nonsense\n")
        assert main(["classify", str(bad)]) == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["solve"], ["solve", "x.qplib", "--alpha", "0"],
                                      ["solve", "x.qplib", "--time-limit", "-1"], ["frobnicate"]])
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == EXIT_USAGE

    def test_solve_writes_json(self, tmp_path):
        out = tmp_path / "r.json"
        code = main(["solve", str(DATA / "handwritten_qil.qplib"), "--time-limit", "5",
                     "--deterministic", "--out", str(out)])
        data = json.loads(out.read_text())
        assert code == EXIT_FOUND and data["found"]

    def test_solve_infeasible_exit(self, tmp_path):
        # x0 + x1 >= 3 with binaries has no solution
        inst = make_instance(np.eye(2), A=[[-1.0, -1.0]], b_A=[-3.0], lower=[0, 0], upper=[1, 1],
                             integer=[0, 1], name="infeas")
        from miqcqp_heur.qplib import write_qplib
        path = tmp_path / "infeas.qplib"
        write_qplib(inst, path)
        assert main(["solve", str(path), "--time-limit", "3"]) == EXIT_NOT_FOUND

    def test_bench_and_compare(self, tmp_path, capsys):
        d = tmp_path / "inst"
        d.mkdir()
        for f in ("handwritten_qbb.qplib", "handwritten_qil.qplib"):
            shutil.copy(DATA / f, d / f)
        bk = tmp_path / "bk.csv"
        bk.write_text("instance,objective\nhandwritten_qbb,-1000\n")
        prefix = tmp_path / "run"
        assert main(["bench", str(d), "--time-limit", "3", "--best-known", str(bk),
                     "--out", str(prefix), "--deterministic"]) == EXIT_FOUND
        capsys.readouterr()
        csv_text = (tmp_path / "run.csv").read_text().splitlines()
        assert csv_text[0].startswith("instance,problem_class,found,objective")
        assert len(csv_text) == 3
        data = json.loads((tmp_path / "run.json").read_text())
        assert set(data["summary"]["classes"]) >= {"MIBQP", "ALL"}
        assert load_results(tmp_path / "run.json").keys() == {"handwritten_qbb", "handwritten_qil"}
        assert main(["compare", str(tmp_path / "run.json"), str(tmp_path / "run.json")]) == EXIT_FOUND
        cmp = json.loads(capsys.readouterr().out)
        assert cmp["counts"]["ALL"]["Same"] == 2

    def test_export_corpus(self, tmp_path):
        assert main(["export-corpus", str(tmp_path)]) == EXIT_FOUND
        assert len(list(tmp_path.glob("*.qplib"))) == 40
