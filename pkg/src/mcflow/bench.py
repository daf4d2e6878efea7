"""Benchmark harness, scaling metrics, and the command-line interface."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.io

from . import ipm, oracle, schur
from .netcore import (DimacsFormatError, Network, NetworkValidationError,
                      gen_grid, gen_random_sparse, parse_dimacs, write_dimacs)

CSV_COLUMNS = ["instance", "m", "cores", "wall_time_s", "newton_iters",
               "krylov_iters", "cost", "oracle_cost", "efficiency_pct"]


@dataclass
class BenchRecord:
    instance: str
    m: int
    cores: int
    wall_time: float
    newton_iters: int
    krylov_iters: int
    cost: float
    oracle_cost: float | None = None


def efficiency(records: list[BenchRecord]) -> list[float]:
    """Weak-scaling efficiency of each record against the first.

    eta_k = 100 * (m_k/m_0)^1.5 * (cores_0/cores_k) * (time_0/time_k).
    """
    if not records:
        return []
    base = records[0]
    if base.wall_time <= 0.0:
        raise ValueError("baseline wall time must be positive")
    out = []
    for r in records:
        if r.wall_time <= 0.0:
            raise ValueError("wall times must be positive")
        out.append(100.0 * (r.m / base.m) ** 1.5
                   * (base.cores / r.cores) * (base.wall_time / r.wall_time))
    return out


def fit_exponent(records: list[BenchRecord]) -> float:
    """Least-squares exponent of the run-time power law time ~ m^alpha."""
    ms = np.asarray([r.m for r in records], dtype=float)
    ts = np.asarray([r.wall_time for r in records], dtype=float)
    if np.unique(ms).size < 3:
        raise ValueError("need at least 3 records with distinct arc counts")
    if np.any(ts <= 0.0) or np.any(ms <= 0.0):
        raise ValueError("sizes and times must be positive")
    slope, _ = np.polyfit(np.log(ms), np.log(ts), 1)
    return float(slope)


def _host_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def make_instance(family: str, size: int, seed: int) -> tuple[str, Network]:
    if family == "grid":
        return f"grid-{size}x{size}-s{seed}", gen_grid(size, size, seed)
    if family == "random":
        return f"random-{size}-s{seed}", gen_random_sparse(size, seed)
    raise ValueError(f"unknown family {family!r} (expected grid or random)")


def run_instance(name: str, net: Network, cfg: ipm.SolverConfig,
                 check_oracle: bool) -> BenchRecord:
    t0 = time.perf_counter()
    result = ipm.solve(net, cfg)
    wall = time.perf_counter() - t0
    oracle_cost = None
    if check_oracle:
        oracle_cost = oracle.ssp_solve(net).cost
    return BenchRecord(instance=name, m=net.m, cores=_host_cores(),
                       wall_time=wall, newton_iters=result.newton_iters,
                       krylov_iters=result.krylov_total, cost=result.cost,
                       oracle_cost=oracle_cost)


def run_family(family: str, sizes: list[int], seed: int,
               cfg: ipm.SolverConfig, check_oracle: bool = True,
               parallel: int = 1) -> list[BenchRecord]:
    jobs = [make_instance(family, size, seed + i)
            for i, size in enumerate(sizes)]
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(
                lambda nv: run_instance(nv[0], nv[1], cfg, check_oracle), jobs))
    return [run_instance(name, net, cfg, check_oracle) for name, net in jobs]


def write_csv(path: str, records: list[BenchRecord]) -> None:
    effs = efficiency(records)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r, e in zip(records, effs):
            writer.writerow([r.instance, r.m, r.cores, f"{r.wall_time:.6f}",
                             r.newton_iters, r.krylov_iters, r.cost,
                             "" if r.oracle_cost is None else r.oracle_cost,
                             f"{e:.2f}"])


def write_diagnostics(path: str, records: list[ipm.IterationRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(dataclasses.asdict(rec)) + "\n")


# ---------------------------------------------------------------------------
# CLI


def _config_from_args(args) -> ipm.SolverConfig:
    return ipm.SolverConfig(
        rho=args.rho, eta=args.eta, eps_x=args.eps_x, eps_s=args.eps_s,
        tol=args.tol, krylov_tol=args.krylov_tol,
        regularize=not args.no_regularization,
        use_active_set=not args.no_active_set,
        solver=args.solver, keep_operator=bool(args.dump_matrix))


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=float, default=1e-6)
    p.add_argument("--eta", type=float, default=1e-4)
    p.add_argument("--eps-x", type=float, default=1e-6, dest="eps_x")
    p.add_argument("--eps-s", type=float, default=1e-8, dest="eps_s")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--krylov-tol", type=float, default=1e-10)
    p.add_argument("--no-regularization", action="store_true")
    p.add_argument("--no-active-set", action="store_true")
    p.add_argument("--solver", choices=("cg", "bicgstab"), default="cg")
    p.add_argument("--dump-matrix", metavar="PATH", default=None,
                   help="write the final pinned Schur operator (MatrixMarket)")


def _cmd_solve(args) -> int:
    with open(args.file) as fh:
        net = parse_dimacs(fh)
    cfg = _config_from_args(args)
    result = ipm.solve(net, cfg)
    print(f"cost {result.cost:.10g}")
    print(f"newton iterations {result.newton_iters}")
    print(f"krylov iterations {result.krylov_total}")
    if args.diag:
        write_diagnostics(args.diag, result.records)
    if args.dump_matrix and result.schur_matrix is not None:
        scipy.io.mmwrite(args.dump_matrix, result.schur_matrix.L)
    if args.check_oracle:
        ref = oracle.ssp_solve(net)
        if not ref.optimal:
            print("oracle: infeasible", file=sys.stderr)
            return 1
        rel = abs(result.cost - ref.cost) / max(1.0, abs(ref.cost))
        print(f"oracle cost {ref.cost:.10g} (relative error {rel:.3e})")
        if rel > 1e-6:
            print("oracle mismatch", file=sys.stderr)
            return 1
        print("oracle match")
    return 0


def _cmd_gen(args) -> int:
    if args.family == "grid":
        net = gen_grid(args.rows, args.cols, args.seed)
    else:
        net = gen_random_sparse(args.nodes, args.seed)
    text = write_dimacs(net, comment=f"mcflow gen {args.family} seed {args.seed}")
    with open(args.output, "w") as fh:
        fh.write(text)
    print(f"wrote {args.output}: n={net.n} m={net.m}")
    return 0


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    cfg = _config_from_args(args)
    records = run_family(args.family, sizes, args.seed, cfg,
                         check_oracle=not args.no_oracle,
                         parallel=args.parallel)
    write_csv(args.out, records)
    effs = efficiency(records)
    for r, e in zip(records, effs):
        line = (f"{r.instance}: m={r.m} time={r.wall_time:.3f}s "
                f"newton={r.newton_iters} krylov={r.krylov_iters} "
                f"efficiency={e:.1f}%")
        if r.oracle_cost is not None:
            rel = abs(r.cost - r.oracle_cost) / max(1.0, abs(r.oracle_cost))
            line += f" oracle_rel_err={rel:.2e}"
        print(line)
    if len({r.m for r in records}) >= 3:
        print(f"fitted exponent alpha = {fit_exponent(records):.4f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_components(args) -> int:
    with open(args.file) as fh:
        net = parse_dimacs(fh)
    labels = schur.connected_components_labelprop(net)
    for i, lab in enumerate(labels):
        print(f"{i} {lab}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcflow",
        description="Min-cost flow via a regularized interior-point method "
                    "with AMG-preconditioned graph-Laplacian solves.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a DIMACS min instance")
    p_solve.add_argument("file")
    _add_solver_flags(p_solve)
    p_solve.add_argument("--check-oracle", action="store_true",
                         help="verify the cost against the exact solver")
    p_solve.add_argument("--diag", metavar="PATH.jsonl", default=None,
                         help="write per-iteration diagnostics as JSON lines")
    p_solve.set_defaults(func=_cmd_solve)

    p_gen = sub.add_parser("gen", help="generate an instance as DIMACS")
    gen_sub = p_gen.add_subparsers(dest="family", required=True)
    p_grid = gen_sub.add_parser("grid")
    p_grid.add_argument("--rows", type=int, required=True)
    p_grid.add_argument("--cols", type=int, required=True)
    p_grid.add_argument("--seed", type=int, default=0)
    p_grid.add_argument("-o", "--output", required=True)
    p_grid.set_defaults(func=_cmd_gen)
    p_rand = gen_sub.add_parser("random")
    p_rand.add_argument("--nodes", type=int, required=True)
    p_rand.add_argument("--seed", type=int, default=0)
    p_rand.add_argument("-o", "--output", required=True)
    p_rand.set_defaults(func=_cmd_gen)

    p_bench = sub.add_parser("bench", help="run a family and emit CSV")
    p_bench.add_argument("family", choices=("grid", "random"))
    p_bench.add_argument("--sizes", required=True,
                         help="comma-separated sizes (grid side or node count)")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--no-oracle", action="store_true")
    p_bench.add_argument("--parallel", type=int, default=1)
    _add_solver_flags(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_comp = sub.add_parser("components",
                            help="print weakly-connected component labels")
    p_comp.add_argument("file")
    p_comp.set_defaults(func=_cmd_components)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ipm.SolverError, schur.SchurSolveError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except (DimacsFormatError, NetworkValidationError,
            oracle.OracleInputError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(cli_main())
