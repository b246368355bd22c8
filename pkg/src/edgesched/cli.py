"""Command-line entry point.  Every subcommand writes CSV to stdout (or --csv) and a text table to stderr."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench
from .baselines import export_milp, build_milp
from .domain import Instance
from .instancegen import GenConfig, derive_seed, generate, load, save
from .objective import Problem
from .training import METRIC_FIELDS, TrainConfig, load_model, train


def _table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, text_csv: str, table: str) -> None:
    if args.csv:
        Path(args.csv).write_text(text_csv)
    else:
        sys.stdout.write(text_csv)
    if not args.quiet:
        sys.stderr.write(table)


def _parse_scale(text: str) -> tuple[int, int, int]:
    try:
        n, q, z = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"scale must look like NxQxZ, got {text!r}") from None
    return n, q, z


def _read_instance(path: str) -> Instance:
    return load(Path(path).read_bytes())


def _model(args):
    return load_model(args.checkpoint) if getattr(args, "checkpoint", None) else None


# -- subcommands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["file", "seed", "n_edges", "region_size", "n_requests", "local_makespan"]
    rows = []
    for i in range(args.count):
        s = derive_seed(args.seed, i)
        inst = generate(GenConfig(n_edges=args.n, region_size=args.q, n_requests=args.z, seed=s, c_t=args.c_t))
        name = f"instance_{i:04d}.json"
        (out / name).write_bytes(save(inst))
        local = float(Problem(inst).makespans(np.asarray([[r.source_edge for r in inst.requests]]))[0])
        rows.append([name, s, args.n, args.q, args.z, repr(local)])
    _emit(args, _csv(header, rows), _table(header, rows))
    return 0


def cmd_solve(args) -> int:
    spec = args.method
    if spec == "random":
        spec = f"random:{args.k}"
    elif spec == "exact" and args.budget is not None:
        spec = f"exact:{args.budget}"
    elif spec == "corais":
        spec = f"corais:{args.k}" if args.k > 1 else "corais:greedy"
    scheduler = bench.make_scheduler(spec, _model(args))
    header = ["instance", "method", "seed", "makespan", "decision_time", "assignment"]
    rows = []
    for i, path in enumerate(args.instances):
        inst = _read_instance(path)
        s = derive_seed(args.seed, i)
        t0 = time.perf_counter()
        asg = scheduler(inst, s)
        elapsed = time.perf_counter() - t0
        span = float(Problem(inst).makespans(np.asarray([asg.exec_edge], dtype=np.intp).reshape(1, -1))[0])
        rows.append([Path(path).name, spec, s, repr(span), f"{elapsed:.3f}", " ".join(map(str, asg.exec_edge))])
    _emit(args, _csv(header, rows), _table(header[:-1], [r[:-1] for r in rows]))
    return 0


def cmd_export_milp(args) -> int:
    inst = _read_instance(args.instance)
    Path(args.out).write_text(export_milp(inst, args.variant))
    model = build_milp(inst, args.variant)
    header = ["instance", "out", "variant", "rows", "binaries", "continuous"]
    rows = [[Path(args.instance).name, args.out, args.variant, len(model.rows), len(model.binaries),
             len(model.continuous)]]
    _emit(args, _csv(header, rows), _table(header, rows))
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    result = train(cfg, args.out, resume_from=args.resume)
    rows = [[m[k] if not isinstance(m[k], float) else repr(m[k]) for k in METRIC_FIELDS] for m in result.metrics]
    shown = [r for r in rows if r[4] != ""]
    _emit(args, _csv(METRIC_FIELDS, rows), _table(METRIC_FIELDS, shown))
    return 0


def cmd_bench(args) -> int:
    methods = [m for m in args.methods.split(",") if m]
    model = _model(args)
    header = ["scale", *bench.METRIC_COLUMNS]
    rows, table = [], []
    for n, q, z in args.scales:
        cfg = GenConfig(n_edges=n, region_size=q, n_requests=z)
        insts = [generate(GenConfig(**{**cfg.__dict__, "seed": derive_seed(args.seed, 100, i)}))
                 for i in range(args.count)]
        records = bench.run_suite(methods, insts, seed=args.seed, model=model)
        for r in records:
            if r.error:
                print(f"warning: {r.method} failed on instance {r.instance_id}: {r.error}", file=sys.stderr)
        metrics = bench.summarize(records, args.ref, order=methods)
        tag = f"{n}x{q}x{z}"
        for m in metrics:
            rows.append([tag, *bench._cells(m)])
        table.append(f"scale {tag} (reference {args.ref}, {args.count} instances)\n" + bench.report_table(metrics))
    _emit(args, _csv(header, rows), "\n".join(table))
    return 0


def cmd_validate(args) -> int:
    if not args.checkpoint:
        raise SystemExit("validate needs --checkpoint")
    model = load_model(args.checkpoint)
    scheduler = bench.make_scheduler(f"corais:{args.samples}", model)
    res = bench.characteristic(args.scenario, scheduler, seed=args.seed, trials=args.trials)
    text = bench.characteristic_csv(res)
    stats = res.statistic()
    rows = [[bench.EDGE_NAMES[i], f"{res.ereqn[i]:.2f}", f"{res.lcost[i]:.3f}", f"{res.burden[i]:.3f}",
             f"{res.speed[i]:.3f}"] for i in range(5)]
    table = _table(["edge", "EReqN", "LCost", "burden", "speed"], rows)
    table += " ".join(f"{k}={v:.4f}" for k, v in stats.items()) + "\n"
    _emit(args, text, table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgesched", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--csv", help="write CSV here instead of stdout")
    common.add_argument("--quiet", action="store_true", help="suppress the text table")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate instance files")
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--q", type=int, default=5)
    g.add_argument("--z", type=int, default=50)
    g.add_argument("--c-t", type=float, default=3.0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", parents=[common], help="schedule instance files")
    s.add_argument("instances", nargs="+")
    s.add_argument("--method", choices=["local", "predicted", "random", "exact", "corais"], default="exact")
    s.add_argument("--k", type=int, default=1, help="draws for random / sampling decoding")
    s.add_argument("--budget", type=int, default=None, help="node budget for exact")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("export-milp", parents=[common], help="write the MILP in LP text format")
    e.add_argument("instance")
    e.add_argument("--out", required=True)
    e.add_argument("--variant", choices=["canonical", "printed"], default="canonical")
    e.set_defaults(func=cmd_export_milp)

    t = sub.add_parser("train", help="train a scheduler")
    t.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    t.add_argument("--csv")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", parents=[common], help="compare methods on generated instances")
    b.add_argument("--methods", default="local,predicted,random:1,random:128,exact")
    b.add_argument("--scales", type=_parse_scale, nargs="+", default=[(6, 3, 20)])
    b.add_argument("--ref", default="exact")
    b.add_argument("--count", type=int, default=20)
    b.add_argument("--checkpoint")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", parents=[common], help="characteristic scenario validation")
    v.add_argument("--scenario", choices=list(bench.SCENARIOS), required=True)
    v.add_argument("--checkpoint")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--samples", type=int, default=1000)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
