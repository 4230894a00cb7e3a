"""Command-line driver: spec validation, run modes, exit codes,
determinism, bench aggregation."""

import json
from pathlib import Path

import pytest

from treepack.cli import (EXIT_ABORT, EXIT_BUDGET, EXIT_CLASSIFY, EXIT_INPUT,
                          EXIT_OK, RunSpec, bench, exit_code_for, main, run)
from treepack.errors import (BudgetExceeded, ClassificationError, InputError,
                             PipelineAbort, StuckError)
from treepack.oracle import Decomposition, verify


class TestRunSpec:
    def test_two_graph_sources_rejected(self):
        with pytest.raises(InputError):
            RunSpec(seed=1, gen="complete:5", graph_path="x.json",
                    tree_gen="path:3").validate()

    def test_no_tree_rejected(self):
        with pytest.raises(InputError):
            RunSpec(seed=1, gen="complete:5").validate()

    def test_bad_mode(self):
        with pytest.raises(InputError):
            RunSpec(seed=1, gen="complete:5", tree_gen="path:3",
                    mode="guess").validate()

    def test_unknown_json_key(self):
        with pytest.raises(InputError):
            RunSpec.from_json_obj({"seed": 1, "gen": "complete:5",
                                   "tree_gen": "path:3", "zap": True})

    def test_json_round_trip(self):
        spec = RunSpec(seed=4, gen="gnp:20:0.5", tree_gen="star:3",
                       snapshot_at=("shifts",))
        back = RunSpec.from_json_obj(spec.to_json_obj())
        assert back.to_json_obj() == spec.to_json_obj()


class TestExitCodes:
    def test_mapping(self):
        assert exit_code_for(InputError("x")) == EXIT_INPUT
        assert exit_code_for(ClassificationError("x")) == EXIT_CLASSIFY
        assert exit_code_for(PipelineAbort("s", "r", {})) == EXIT_ABORT
        assert exit_code_for(BudgetExceeded("x")) == EXIT_BUDGET
        assert exit_code_for(StuckError("x", residual=1)) == EXIT_BUDGET
        assert exit_code_for(ValueError("x")) == 1


class TestOracleMode:
    def test_k5_path_succeeds(self, tmp_path):
        spec = RunSpec(seed=1, gen="complete:5", tree_gen="path:3",
                       mode="oracle", out_dir=str(tmp_path))
        assert run(spec) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["status"] == "success"
        d = Decomposition.from_json_obj(
            json.loads((tmp_path / "decomposition.json").read_text()))
        assert verify(d)

    def test_divisibility_error(self, tmp_path):
        spec = RunSpec(seed=1, gen="complete:4", tree_gen="path:5",
                       mode="oracle", out_dir=str(tmp_path))
        assert run(spec) == EXIT_INPUT

    def test_budget_refusal(self, tmp_path):
        spec = RunSpec(seed=1, gen="complete:21", tree_gen="path:3",
                       mode="oracle", out_dir=str(tmp_path),
                       cfg_overrides={"oracle_edge_cap": 60})
        assert run(spec) == EXIT_BUDGET


class TestPipelineMode:
    def test_case_l_success(self, tmp_path):
        spec = RunSpec(seed=1, gen="complete:15", tree_gen="star:7",
                       out_dir=str(tmp_path), cfg_overrides={"c": 0.6})
        assert run(spec) == EXIT_OK
        d = Decomposition.from_json_obj(
            json.loads((tmp_path / "decomposition.json").read_text()))
        assert verify(d)

    def test_classified_abort(self, tmp_path):
        spec = RunSpec(seed=2, gen="gnp:200:0.7", tree_gen="random:60",
                       out_dir=str(tmp_path), metrics=True)
        code = run(spec)
        summary = json.loads((tmp_path / "summary.json").read_text())
        if code == EXIT_ABORT:
            assert summary["abort"]["stage"] and summary["abort"]["reason"]
        else:
            assert code in (EXIT_OK, EXIT_CLASSIFY)
        if spec.metrics:
            assert (tmp_path / "metrics.csv").exists()

    def test_hybrid_falls_back(self, tmp_path):
        # tiny host: pipeline declines, oracle finishes
        spec = RunSpec(seed=3, gen="complete:7", tree_gen="path:4",
                       mode="hybrid", out_dir=str(tmp_path))
        assert run(spec) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary.get("fallback") == "oracle" or summary["status"] == "success"

    def test_snapshot_written(self, tmp_path):
        spec = RunSpec(seed=1, gen="gnp:200:0.7", tree_gen="random:60",
                       out_dir=str(tmp_path), snapshot_at=("shifts",))
        run(spec)
        assert (tmp_path / "snapshot_shifts.json").exists()


class TestDeterminism:
    def _artifacts(self, d):
        return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())
                if p.is_file()}

    def test_byte_identical_repeat(self, tmp_path):
        out = tmp_path / "o"
        spec = RunSpec(seed=5, gen="complete:15", tree_gen="star:7",
                       out_dir=str(out), cfg_overrides={"c": 0.6})
        assert run(spec) == EXIT_OK
        first = self._artifacts(out)
        for p in Path(out).iterdir():
            p.unlink()
        assert run(spec) == EXIT_OK
        assert self._artifacts(out) == first


class TestBench:
    def test_aggregation(self, tmp_path):
        specs = [RunSpec(seed=s, gen="complete:5", tree_gen="path:3",
                         mode="oracle") for s in (1, 2)]
        specs.append(RunSpec(seed=3, gen="complete:4", tree_gen="path:5",
                             mode="oracle"))      # divisibility failure
        assert bench(specs, str(tmp_path)) == EXIT_OK
        lines = (tmp_path / "bench.csv").read_text().strip().split("\n")
        assert lines[0] == "run,seed,mode,case,stage_reached,status,exit_code"
        assert len(lines) == 5                    # header + 3 runs + aggregate
        assert lines[-1].split(",")[-1] == f"{2/3:.6f}"
        assert (tmp_path / "run_000" / "summary.json").exists()
        assert "stage histogram" in (tmp_path / "bench.txt").read_text()


class TestMain:
    def test_run_subcommand(self, tmp_path):
        code = main(["run", "--gen", "complete:5", "--tree", "path:3",
                     "--seed", "1", "--mode", "oracle",
                     "--out", str(tmp_path)])
        assert code == EXIT_OK

    def test_bad_generator(self, tmp_path):
        code = main(["run", "--gen", "hypercube:4", "--tree", "path:3",
                     "--seed", "1", "--out", str(tmp_path)])
        assert code == EXIT_INPUT

    def test_bench_subcommand(self, tmp_path):
        specs = [{"seed": 1, "gen": "complete:5", "tree_gen": "path:3",
                  "mode": "oracle"}]
        sp = tmp_path / "specs.json"
        sp.write_text(json.dumps(specs))
        code = main(["bench", str(sp), "--out", str(tmp_path / "b")])
        assert code == EXIT_OK
