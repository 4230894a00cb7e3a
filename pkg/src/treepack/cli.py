"""Batch runner: ingest a host and a tree, run one of three modes, and
persist artifacts.

Modes:
    oracle    brute-force search within the edge cap, verified before write.
    pipeline  case classification, tree partition, the staged embedding
              pipeline, and the case finisher; Case L routes directly to
              the large-stars embedding (no approximate phase).
    hybrid    pipeline first; on any classified failure, oracle fallback
              when the instance fits under the cap.

Artifacts (all under --out): summary.json always; metrics.csv when
requested; decomposition.json only after the verifier accepts it;
snapshot_<stage>.json at each requested stage marker.  Output is
deterministic byte for byte given (spec, seed).

Exit codes:
    0 success          4 classification failure    7 matching infeasible
    1 unexpected       5 partition failure         8 stuck / budget
    2 input error      6 pipeline abort
    3 config error
"""

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import embedding, finishers, oracle, trees
from .config import ParamConfig
from .errors import (BudgetExceeded, ClassificationError, ConfigError,
                     InfeasibleMatchingError, InputError, PartitionError,
                     PipelineAbort, StuckError, TreepackError)
from .graphs import Graph
from .rng import stream
from .trees import Tree

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_CLASSIFY = 4
EXIT_PARTITION = 5
EXIT_ABORT = 6
EXIT_INFEASIBLE = 7
EXIT_BUDGET = 8

_EXIT_BY_ERROR = [
    (ClassificationError, EXIT_CLASSIFY),
    (PartitionError, EXIT_PARTITION),
    (PipelineAbort, EXIT_ABORT),
    (InfeasibleMatchingError, EXIT_INFEASIBLE),
    (StuckError, EXIT_BUDGET),
    (BudgetExceeded, EXIT_BUDGET),
    (ConfigError, EXIT_CONFIG),
    (InputError, EXIT_INPUT),
]


def exit_code_for(exc) -> int:
    for cls, code in _EXIT_BY_ERROR:
        if isinstance(exc, cls):
            return code
    return EXIT_UNEXPECTED


@dataclass
class RunSpec:
    """One experiment: exactly one graph source, one tree source, a seed."""

    seed: int
    graph_path: str = None
    gen: str = None              # "complete:N" | "gnp:N:P"
    tree_path: str = None
    tree_gen: str = None         # "path:N" | "star:K" | "random:N"
    mode: str = "pipeline"
    cfg_path: str = None
    cfg_overrides: dict = field(default_factory=dict)
    out_dir: str = "."
    fallback_exact: bool = False
    snapshot_at: tuple = ()
    metrics: bool = False

    def validate(self):
        if (self.graph_path is None) == (self.gen is None):
            raise InputError("need exactly one of --graph / --gen")
        if (self.tree_path is None) == (self.tree_gen is None):
            raise InputError("need exactly one tree source")
        if self.mode not in ("pipeline", "oracle", "hybrid"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.seed is None:
            raise InputError("seed is mandatory")
        return self

    @classmethod
    def from_json_obj(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        bad = set(obj) - known
        if bad:
            raise InputError(f"unknown spec keys: {sorted(bad)}")
        spec = cls(**obj)
        spec.snapshot_at = tuple(spec.snapshot_at)
        return spec.validate()

    def to_json_obj(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}


def _parse_gen(spec: str):
    parts = spec.split(":")
    return parts[0], parts[1:]


def load_graph(spec: RunSpec):
    if spec.graph_path is not None:
        path = Path(spec.graph_path)
        text = path.read_text()
        if path.suffix == ".json":
            return Graph.from_json_obj(json.loads(text))
        return Graph.from_edge_list_text(text)
    kind, args = _parse_gen(spec.gen)
    rng = stream(spec.seed, "gen_graph")
    if kind == "complete":
        return Graph.complete(int(args[0]))
    if kind == "gnp":
        return Graph.gnp(int(args[0]), float(args[1]), rng)
    raise InputError(f"unknown graph generator {kind!r}")


def load_tree(spec: RunSpec):
    if spec.tree_path is not None:
        path = Path(spec.tree_path)
        text = path.read_text()
        if path.suffix == ".json":
            return Tree.from_json_obj(json.loads(text))
        return Tree.from_parent_array_text(text)
    kind, args = _parse_gen(spec.tree_gen)
    if kind == "path":
        return Tree.path(int(args[0]))
    if kind == "star":
        return Tree.star(int(args[0]))
    if kind == "random":
        return Tree.random(int(args[0]), stream(spec.seed, "gen_tree"))
    raise InputError(f"unknown tree generator {kind!r}")


def load_config(spec: RunSpec, n: int) -> ParamConfig:
    return ParamConfig.load(n, path=spec.cfg_path,
                            overrides=spec.cfg_overrides)


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _metrics_csv(metric_rows):
    lines = ["stage,name,value"]
    for stage, name, value in metric_rows:
        lines.append(f"{stage},{name},{value:.9g}")
    return "\n".join(lines) + "\n"


def _write_success(d, out: Path, summary):
    rep = oracle.verify(d)
    if not rep.ok:
        summary["verify_failure"] = rep.violation
        summary["status"] = "verify_failed"
        return EXIT_UNEXPECTED
    _dump_json(d.to_json_obj(), out / "decomposition.json")
    summary["status"] = "success"
    summary["verified"] = True
    return EXIT_OK


def _run_oracle(host, tree, cfg, out, summary):
    d = oracle.brute_decompose(host, tree, edge_cap=cfg.oracle_edge_cap)
    if d is None:
        summary["status"] = "oracle_exhausted"
        return EXIT_BUDGET
    return _write_success(d, out, summary)


def _snapshot_hook(state, wanted, out: Path):
    if not wanted:
        return
    orig = state.mark

    def mark(label):
        orig(label)
        if label in wanted:
            _dump_json(state.snapshot_obj() if hasattr(state, "snapshot_obj")
                       else {"stage": label, "clock": list(state.clock)},
                       out / f"snapshot_{label.replace(':', '_')}.json")
    state.mark = mark


def _run_pipeline(host, tree, cfg, spec: RunSpec, out, summary):
    case = trees.classify_case(tree, cfg)
    summary["case"] = case.case
    if case.case == "L":
        state = finishers.make_large_stars_state(host, tree, cfg, spec.seed)
        _snapshot_hook(state, set(spec.snapshot_at), out)
        try:
            finishers.large_stars(state, state.rng_for("large_stars"))
        except PipelineAbort as exc:
            state.abort = exc
            state.mark(f"aborted:{exc.stage}")
    else:
        tp = trees.tree_partition(tree, case, cfg, stream(spec.seed, "tp"))
        state = embedding.EmbeddingState(host, tp, cfg, spec.seed)
        _snapshot_hook(state, set(spec.snapshot_at), out)
        embedding.run_pipeline(state)
        if state.abort is None:
            try:
                finishers.finish(state, state.rng_for("finish"))
            except PipelineAbort as exc:
                state.abort = exc
                state.mark(f"aborted:{exc.stage}")
    summary["stage_reached"] = state.stage
    summary["clock"] = list(state.clock)
    if spec.metrics:
        (out / "metrics.csv").write_text(_metrics_csv(state.metrics))
    if state.abort is not None:
        summary["status"] = "abort"
        summary["abort"] = {"stage": state.abort.stage,
                            "reason": state.abort.reason,
                            "details": {k: repr(v) for k, v in
                                        sorted(state.abort.details.items())}}
        return EXIT_ABORT
    return _write_success(finishers.to_decomposition(state), out, summary)


def run(spec: RunSpec) -> int:
    """Execute one spec; returns the exit code, writes artifacts."""
    spec.validate()
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"spec": spec.to_json_obj(), "status": "error"}
    try:
        host = load_graph(spec)
        tree = load_tree(spec)
        cfg = load_config(spec, host.n)
        summary["n"] = host.n
        summary["tree_edges"] = tree.n - 1
        if spec.mode == "oracle":
            code = _run_oracle(host, tree, cfg, out, summary)
        else:
            code = _run_pipeline(host, tree, cfg, spec, out, summary)
            fallback = spec.mode == "hybrid" or spec.fallback_exact
            if code != EXIT_OK and fallback \
                    and host.edge_count() <= cfg.oracle_edge_cap:
                summary["fallback"] = "oracle"
                code = _run_oracle(host, tree, cfg, out, summary)
    except TreepackError as exc:
        summary["status"] = "error"
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = exit_code_for(exc)
    summary["exit_code"] = code
    _dump_json(summary, out / "summary.json")
    return code


def bench(specs, out_dir) -> int:
    """Run every spec, aggregate outcomes; per-run failures never abort
    the batch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, spec in enumerate(specs):
        spec.out_dir = str(out / f"run_{k:03d}")
        try:
            code = run(spec)
            summ = json.loads(Path(spec.out_dir, "summary.json").read_text())
        except Exception as exc:                      # noqa: BLE001
            code, summ = EXIT_UNEXPECTED, {"status": "crash",
                                           "error": str(exc)}
        rows.append((k, spec.seed, spec.mode, summ.get("case", ""),
                     summ.get("stage_reached", ""), summ.get("status", ""),
                     code))
    lines = ["run,seed,mode,case,stage_reached,status,exit_code"]
    for row in rows:
        lines.append(",".join(str(x) for x in row))
    n_ok = sum(1 for r in rows if r[6] == EXIT_OK)
    lines.append(f"aggregate,,,,,success_rate,"
                 f"{n_ok / len(rows):.6f}" if rows else "aggregate,,,,,,")
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    stages = {}
    for r in rows:
        stages[r[4]] = stages.get(r[4], 0) + 1
    text = [f"runs: {len(rows)}", f"successes: {n_ok}",
            "stage histogram:"]
    for stage in sorted(stages):
        text.append(f"  {stage or '(none)'}: {stages[stage]}")
    (out / "bench.txt").write_text("\n".join(text) + "\n")
    return EXIT_OK


def _parse_overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise InputError(f"override must look like key=value: {item!r}")
        key, val = item.split("=", 1)
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def make_parser():
    ap = argparse.ArgumentParser(
        prog="treepack",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run", help="execute one spec")
    rp.add_argument("--graph", help="edge-list or JSON host graph file")
    rp.add_argument("--gen", help="host generator: complete:N | gnp:N:P")
    rp.add_argument("--tree", help="parent-array or JSON tree file, or "
                                   "generator path:N | star:K | random:N")
    rp.add_argument("--seed", type=int, required=True)
    rp.add_argument("--mode", default="pipeline",
                    choices=["pipeline", "oracle", "hybrid"])
    rp.add_argument("--cfg", help="JSON config file")
    rp.add_argument("--set", action="append", metavar="KEY=VAL",
                    help="config override (repeatable)")
    rp.add_argument("--out", default=".")
    rp.add_argument("--fallback-exact", action="store_true",
                    help="oracle fallback after pipeline failure")
    rp.add_argument("--snapshot-at", action="append", metavar="STAGE",
                    help="dump a state snapshot at this stage marker")
    rp.add_argument("--metrics", action="store_true",
                    help="write metrics.csv")

    bp = sub.add_parser("bench", help="run a JSON list of specs")
    bp.add_argument("specs", help="JSON file: list of RunSpec objects")
    bp.add_argument("--out", default="bench_out")
    return ap


def _spec_from_args(args) -> RunSpec:
    tree_path = tree_gen = None
    if args.tree:
        head = args.tree.split(":")[0]
        if head in ("path", "star", "random"):
            tree_gen = args.tree
        else:
            tree_path = args.tree
    return RunSpec(
        seed=args.seed, graph_path=args.graph, gen=args.gen,
        tree_path=tree_path, tree_gen=tree_gen, mode=args.mode,
        cfg_path=args.cfg, cfg_overrides=_parse_overrides(args.set),
        out_dir=args.out, fallback_exact=args.fallback_exact,
        snapshot_at=tuple(args.snapshot_at or ()), metrics=args.metrics,
    ).validate()


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run(_spec_from_args(args))
        specs = [RunSpec.from_json_obj(o)
                 for o in json.loads(Path(args.specs).read_text())]
        return bench(specs, args.out)
    except TreepackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
