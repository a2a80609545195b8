"""Command line interface: ``dgfindex <command> ...``.

Exit status: 0 success, 2 usage or policy error, 3 data error, 4 index/data
inconsistency.  Failures print a one-line JSON diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .baseline import ScanOracle, compact_build, compact_query, results_match
from .builder import DEFAULT_SPLIT_SIZE, BuildConfig, BuiltTable, append_batch, build_index
from .errors import DataError, DGFError, PolicyError
from .generator import GeneratorSpec, generate, meter_workload, write_users, write_workload
from .query import Query, load_query, plan, run_query
from .schema import Schema, schema_path_for

_UNITS = {"": 1, "b": 1, "k": 1 << 10, "kb": 1 << 10, "kib": 1 << 10, "m": 1 << 20, "mb": 1 << 20,
          "mib": 1 << 20, "g": 1 << 30, "gb": 1 << 30, "gib": 1 << 30}


def parse_size(text: str) -> int:
    m = re.fullmatch(r"\s*(\d+)\s*([a-zA-Z]*)\s*", str(text))
    if not m or m.group(2).lower() not in _UNITS:
        raise argparse.ArgumentTypeError(f"invalid size {text!r} (e.g. 1MiB, 64k, 4096)")
    value = int(m.group(1)) * _UNITS[m.group(2).lower()]
    if value <= 0:
        raise argparse.ArgumentTypeError("size must be positive")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise PolicyError(message)


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--table-dir", type=Path, default=default(None), help="table directory")
    p.add_argument("--split-size", type=parse_size, default=default(None),
                   help="split size for new tables (default 1MiB; 64MiB mirrors an HDFS block)")
    p.add_argument("--threads", type=int, default=default(1), help="query worker threads")
    p.add_argument("--format", choices=("json", "text"), default=default("json"))
    p.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgfindex", description="Grid-file index with pre-computed aggregates")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    g = command("generate", "write a synthetic data set")
    g.add_argument("output", type=Path)
    g.add_argument("--dataset", choices=("meter", "lineitem"), default="meter")
    g.add_argument("--records", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--layout", choices=("clustered-by-time", "uniform"), default="clustered-by-time")
    g.add_argument("--id-distribution", choices=("uniform", "zipfian"), default="uniform")
    g.add_argument("--days", type=int, default=30)
    g.add_argument("--start", default="2012-12-01")
    g.add_argument("--users", type=Path, help="also write the userInfo dimension table (meter only)")
    g.add_argument("--workload", type=Path, help="also write a selectivity-targeted workload (meter only)")
    g.add_argument("--per-level", type=int, default=3, help="workload queries per shape and selectivity")
    g.add_argument("--shapes", default="aggregation",
                   help="comma-separated: aggregation,group_by,filter,join,partial")

    b = command("build", "build a table from record files")
    b.add_argument("inputs", nargs="+", type=Path)
    b.add_argument("--policy", required=True, help="e.g. userId=1_400,regionId=1_1,time=2012-12-01_1d")
    b.add_argument("--precompute", default="", help="e.g. 'sum(powerConsumed),count(*)'")
    b.add_argument("--schema", type=Path, help="schema file (default: <first input>.schema)")
    b.add_argument("--delimiter", default=",")
    b.add_argument("--segment-size", type=parse_size, default=None)
    b.add_argument("--time-dim")
    b.add_argument("--max-quarantine-rate", type=float, default=0.05)

    a = command("append", "append a batch after the current time bound")
    a.add_argument("inputs", nargs="+", type=Path)

    q = command("query", "run a JSON query")
    q.add_argument("query", help="query file, or inline JSON starting with '{'")
    q.add_argument("--dump-plan", action="store_true", help="include the plan (inner/boundary keys, slices)")

    bench = command("bench", "run a workload through dgf, compact and scan")
    bench.add_argument("workload", type=Path)
    bench.add_argument("--compact-dims", help="comma-separated indexed fields (default: policy dimensions)")

    command("stats", "describe a table")
    return parser


def _table(args) -> BuiltTable:
    if args.table_dir is None:
        raise PolicyError("--table-dir is required")
    return BuiltTable.open(args.table_dir)


def cmd_generate(args) -> dict:
    spec = GeneratorSpec(dataset=args.dataset, records=args.records, seed=args.seed, layout=args.layout,
                         id_distribution=args.id_distribution, days=args.days, start=args.start)
    path = generate(spec, args.output)
    out = {"output": str(path), "schema": str(schema_path_for(path)), "records": spec.records}
    if args.users:
        out["users"] = str(write_users(spec, args.users))
    if args.workload:
        if spec.dataset != "meter":
            raise PolicyError("workload synthesis is only defined for the meter data set")
        shapes = [s.strip() for s in args.shapes.split(",") if s.strip()]
        users = args.users.name if args.users else "users.csv"
        wl = meter_workload(path, per_level=args.per_level, seed=args.seed + 100, shapes=shapes, users_file=users)
        out["workload"] = str(write_workload(wl, args.workload))
        out["queries"] = len(wl["queries"])
    return out


def cmd_build(args) -> dict:
    if args.table_dir is None:
        raise PolicyError("--table-dir is required")
    schema = Schema.load(args.schema or schema_path_for(args.inputs[0]), args.delimiter)
    kw = {}
    if args.segment_size:
        kw["segment_size"] = args.segment_size
    cfg = BuildConfig(policy=args.policy, agg_specs=args.precompute, split_size=args.split_size or DEFAULT_SPLIT_SIZE,
                      output_dir=args.table_dir, time_dim=args.time_dim,
                      max_quarantine_rate=args.max_quarantine_rate, **kw)
    table = build_index(args.inputs, cfg, schema)
    return _stats(table)


def cmd_append(args) -> dict:
    table = append_batch(args.inputs, _table(args))
    return _stats(table)


def _load_query(text: str, schema: Schema) -> Query:
    if text.lstrip().startswith("{"):
        try:
            return Query.from_json(json.loads(text), schema)
        except json.JSONDecodeError as exc:
            raise PolicyError(f"invalid inline query JSON: {exc}") from None
    return load_query(text, schema)


def cmd_query(args) -> dict:
    table = _table(args)
    query = _load_query(args.query, table.schema)
    result = run_query(table, query, threads=args.threads)
    out = result.to_json(table.schema)
    out["columns"] = result.columns
    if args.dump_plan:
        qp = result.plan or plan(query.where, table, query.is_aggregation, query.aggregates)
        out["plan"] = qp.describe(table.policy)
    return out


def cmd_bench(args) -> dict:
    table = _table(args)
    try:
        workload = json.loads(args.workload.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"workload file {args.workload} not found") from None
    sources = [Path(p) for p in table.meta.get("sources", [])]
    dims = args.compact_dims.split(",") if args.compact_dims else table.policy.names
    compact = compact_build(sources, table.schema, dims, table.split_size)
    oracle = ScanOracle(sources, table.schema)
    rows: dict = {}
    mismatches = []
    for item in workload["queries"]:
        query = Query.from_json(item["query"], table.schema, base_dir=args.workload.parent)
        level = item.get("selectivity", "?")
        truth = oracle.query(query)
        results = {
            "dgf": run_query(table, query, threads=args.threads),
            "compact": compact_query(compact, query),
            "scan": truth,
        }
        for strategy, res in results.items():
            row = rows.setdefault((level, strategy), {
                "selectivity": level, "strategy": strategy, "queries": 0, "records_read": 0,
                "bytes_read": 0, "splits_chosen": 0, "entries": res.metrics.entries, "agree": True})
            row["queries"] += 1
            row["records_read"] += res.metrics.records_read
            row["bytes_read"] += res.metrics.bytes_read
            row["splits_chosen"] += res.metrics.splits_chosen
            if not results_match(res, truth):
                row["agree"] = False
                mismatches.append(f"{item.get('name', '?')}:{strategy}")
    order = {"point": 0, "5%": 1, "12%": 2}
    strat = {"dgf": 0, "compact": 1, "scan": 2}
    table_rows = sorted(rows.values(), key=lambda r: (order.get(r["selectivity"], 9), strat[r["strategy"]]))
    return {"rows": table_rows, "mismatches": mismatches}


def _stats(table: BuiltTable) -> dict:
    store = table.store
    bounds = {}
    for d in table.policy.dims:
        try:
            lo, hi = store.cell_bounds(d.name)
            bounds[d.name] = [d.render(lo), d.render(hi)]
        except DGFError:
            bounds[d.name] = None
    sizes = table.segstore.sizes(table.segments)
    return {
        "table": str(table.directory),
        "policy": table.policy.to_spec(),
        "precompute": [str(s) for s in table.specs],
        "entries": len(store),
        "records": table.record_count,
        "quarantined": table.quarantined,
        "segments": len(table.segments),
        "bytes": sum(sizes.values()),
        "split_size": table.split_size,
        "splits": len(table.splits()),
        "bounds": bounds,
    }


def cmd_stats(args) -> dict:
    return _stats(_table(args))


COMMANDS = {"generate": cmd_generate, "build": cmd_build, "append": cmd_append, "query": cmd_query,
            "bench": cmd_bench, "stats": cmd_stats}


def _text(command: str, out: dict) -> str:
    if command == "bench":
        cols = ["selectivity", "strategy", "queries", "records_read", "bytes_read", "splits_chosen", "entries", "agree"]
        lines = ["\t".join(cols)] + ["\t".join(str(r[c]) for c in cols) for r in out["rows"]]
        return "\n".join(lines)
    if command == "query":
        lines = []
        if out.get("columns"):
            lines.append("\t".join(out["columns"]))
        for row in out["rows"]:
            if isinstance(row, dict):
                lines.append("\t".join(f"{k}={v}" for k, v in row.items()))
            else:
                lines.append("\t".join(str(v) for v in row))
        lines.extend(f"# {k}: {v}" for k, v in out["metrics"].items())
        return "\n".join(lines)
    return "\n".join(f"{k}: {v}" for k, v in out.items())


def main(argv=None) -> int:
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = COMMANDS[command](args)
    except DGFError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "command": command, "exit_code": exc.exit_code}
        print(json.dumps(diag), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "command": command, "exit_code": 3}
        print(json.dumps(diag), file=sys.stderr)
        return 3
    if args.format == "json":
        print(json.dumps(out, indent=1, default=str))
    else:
        print(_text(command, out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
