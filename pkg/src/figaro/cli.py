"""Command-line drivers: ``figaro`` computes R for a configured join,
``figaro-bench`` runs the accuracy and scaling experiments."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass

from .core import compute_r0
from .counts import compute_counts, dump_counts
from .errors import FigaroError
from .postprocess import postprocess, recover_q, write_q_csv, write_r_csv
from .relational import parse_config, semi_join_reduce, validate_join_tree
from .testbench import accuracy_experiment, scaling_experiment

ENGINES = ("thin", "householder")


@dataclass(frozen=True)
class RunConfig:
    config: str
    output: str
    threads: int = 1
    postprocess: str = "thin"
    assume_reduced: bool = False
    compute_q: str | None = None
    dump_counts: str | None = None
    dump_r0: str | None = None

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.postprocess not in ENGINES:
            raise ValueError(f"unknown post-processing engine {self.postprocess!r}")


class _Phases:
    """Wall-clock timer that tags any library error with the running phase."""

    def __init__(self):
        self.times: dict[str, float] = {}
        self.current = "startup"

    def run(self, name, fn, *args, **kwargs):
        self.current = name
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0
        return out


def _write_r0(path, r0, columns) -> None:
    dense = r0.to_dense()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([[format(x + 0.0, ".17g") for x in row] for row in dense])


def run(cfg: RunConfig, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    ph = _Phases()
    try:
        relations, tree = ph.run("config", parse_config, cfg.config)
        ph.run("config", validate_join_tree, tree)
        if not cfg.assume_reduced:
            relations = ph.run("reduce", semi_join_reduce, relations, tree)
        counts = ph.run("counts", compute_counts, relations, tree)
        if cfg.dump_counts:
            ph.run("output", dump_counts, counts, tree, relations, cfg.dump_counts)
        r0 = ph.run("figaro", compute_r0, relations, tree, counts, threads=cfg.threads)
        columns = tree.column_names()
        if cfg.dump_r0:
            ph.run("output", _write_r0, cfg.dump_r0, r0, columns)
        R = ph.run("postprocess", postprocess, r0, engine=cfg.postprocess, workers=cfg.threads)
        ph.run("output", write_r_csv, cfg.output, R, columns)
        if cfg.compute_q:
            chunks = ph.run("q", recover_q, relations, tree, R)
            ph.run("q", write_q_csv, cfg.compute_q, chunks, columns)
    except (FigaroError, OSError, ValueError) as exc:
        print(f"figaro: error in phase {ph.current}: {exc}", file=err)
        return 1

    M = sum(len(r) for r in relations.values())
    print(f"M (input rows): {M}", file=out)
    print(f"N (data columns): {tree.num_columns}", file=out)
    print(f"rows(R0): {r0.num_rows}", file=out)
    if R.zero_diagonal:
        print(f"warning: rank deficient, zero diagonal at {list(R.zero_diagonal)}", file=out)
    for name, secs in ph.times.items():
        print(f"time {name}: {secs:.6f} s", file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="figaro", description="Compute R of the QR decomposition "
                                "of an acyclic join without materializing the join.")
    p.add_argument("--config", required=True, help="relation/tree configuration file")
    p.add_argument("--output", required=True, help="CSV file receiving R")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--postprocess", choices=ENGINES, default="thin")
    p.add_argument("--assume-reduced", action="store_true",
                   help="skip the semi-join reduction")
    p.add_argument("--compute-q", metavar="Q.csv", help="also stream Q = A R^-1 to this file")
    p.add_argument("--dump-counts", metavar="C.csv", help="write the count tables")
    p.add_argument("--dump-r0", metavar="R0.csv", help="write the almost-triangular R0")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    cfg = RunConfig(args.config, args.output, args.threads, args.postprocess,
                    args.assume_reduced, args.compute_q, args.dump_counts, args.dump_r0)
    return run(cfg)


def bench_main(argv=None, out=None) -> int:
    p = argparse.ArgumentParser(prog="figaro-bench")
    sub = p.add_subparsers(dest="command", required=True)
    acc = sub.add_parser("accuracy", help="relative error against a known R block")
    acc.add_argument("--rows", type=int, required=True)
    acc.add_argument("--cols", type=int, required=True)
    acc.add_argument("--seed", type=int, default=0)
    acc.add_argument("--engine", choices=ENGINES, default="thin")
    sc = sub.add_parser("scaling", help="time FiGaRo and the materialized path")
    sc.add_argument("--min-rows", type=int, required=True)
    sc.add_argument("--max-rows", type=int, required=True)
    sc.add_argument("--cols", type=int, default=16)
    sc.add_argument("--runs", type=int, default=5)
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--no-oracle", action="store_true", help="skip the materialized path")
    args = p.parse_args(argv)

    writer = csv.writer(out or sys.stdout, lineterminator="\n")
    writer.writerow(["engine", "rows", "cols", "error_or_seconds"])
    try:
        if args.command == "accuracy":
            rep = accuracy_experiment(args.rows, args.cols, args.seed, engine=args.engine)
            writer.writerow([rep.engine, rep.rows, rep.cols, f"{rep.relative_frobenius:.6e}"])
        else:
            for rec in scaling_experiment(args.min_rows, args.max_rows, args.cols, args.runs,
                                          args.seed, with_oracle=not args.no_oracle):
                writer.writerow([rec["engine"], rec["rows"], rec["cols"], f"{rec['seconds']:.6e}"])
    except (FigaroError, ValueError) as exc:
        print(f"figaro-bench: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
