"""``chores-eq`` command line: generate, solve, certify and benchmark.

Exit codes: 0 success, 1 the solver did not reach the requested level,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from . import epm, gfw, instances
from .certify import APPROX_TOL, EXACT_TOL, Certificate, certify_ce
from .market import (
    ChoresInstance,
    EquilibriumCandidate,
    MarketError,
    dumps_json,
    load_instance,
    save_instance,
)

logger = logging.getLogger("chores_eq")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


def _configure_logging() -> None:
    level = os.environ.get("CHORES_EQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# -- gen ----------------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    written: list[Path] = []
    if args.fixture:
        if args.fixture == "appendixB":
            inst = instances.appendix_b(M=args.M, eps=0.01 if args.eps is None else args.eps)
        elif args.fixture == "fig2":
            inst = instances.fig2(seed=args.seed)
        else:
            inst = instances.fig1()
        path = out / f"{args.fixture}.json" if out.suffix.lower() not in (".json", ".csv") else out
        path.parent.mkdir(parents=True, exist_ok=True)
        save_instance(inst, path)
        written.append(path)
    elif args.bidding:
        if args.n is None:
            raise UsageError("--bidding needs --n")
        labels = instances.read_bidding_csv(Path(args.bidding))
        out.mkdir(parents=True, exist_ok=True)
        for k in range(args.count):
            seed = args.seed + k
            inst = instances.subsample_bidding(labels, args.n, seed=seed, noise_sd=args.noise_sd)
            path = out / f"bidding_n{args.n}_s{seed}.json"
            save_instance(inst, path)
            written.append(path)
    else:
        if args.n is None:
            raise UsageError("random generation needs --n")
        out.mkdir(parents=True, exist_ok=True)
        for k in range(args.count):
            spec = instances.GenSpec(n=args.n, dist=args.dist, seed=args.seed + k, m=args.m)
            path = out / f"{args.dist}_n{args.n}_s{spec.seed}.json"
            save_instance(instances.generate(spec), path)
            written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


# -- solve ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveOutcome:
    status: str
    iters: int
    candidate: EquilibriumCandidate | None
    certificate: Certificate | None
    first_eps_iter: int | None
    trace_csv: str


def _level(cert: Certificate | None, exact_tol: float, approx_tol: float) -> str:
    if cert is None:
        return "none"
    if cert.is_exact(exact_tol):
        return "exact"
    if cert.is_strongly_approx(approx_tol, exact_tol):
        return "approx"
    return "none"


def run_algo(inst: ChoresInstance, algo: str, opts: dict[str, Any]) -> SolveOutcome:
    if algo == "gfw":
        cfg = gfw.GfwConfig(
            term_tol=opts.get("term_tol", 1e-10),
            eps_target=opts.get("eps"),
            max_iters=opts.get("max_iters"),
            stop_on_eps=False,
        )
        res = gfw.run(inst, cfg)
        cert = certify_ce(inst, res.candidate)
        return SolveOutcome(res.status, res.iters, res.candidate, cert, res.first_eps_iter, gfw.trace_csv(res))
    if algo == "epm":
        kwargs: dict[str, Any] = {"tol": opts.get("proj_tol", epm.DEFAULT_PROJ_TOL)}
        if opts.get("max_iters") is not None:
            kwargs["max_iters"] = opts["max_iters"]
        res = epm.epm_run(inst, **kwargs)
        buf = io.StringIO()
        epm.write_trace_csv(res, buf)
        return SolveOutcome(res.status, res.iters, res.candidate, res.certificate, res.first_approx_iter, buf.getvalue())
    raise UsageError(f"unknown algorithm {algo!r}")


def _solve_opts(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "eps": args.eps,
        "term_tol": args.term_tol,
        "proj_tol": args.proj_tol,
        "max_iters": args.max_iters,
    }


def cmd_solve(args: argparse.Namespace) -> int:
    inst = load_instance(args.instance)
    out = Path(args.out)
    stem = Path(args.instance).stem
    res = run_algo(inst, args.algo, _solve_opts(args))
    level = _level(res.certificate, args.exact_tol, args.approx_tol)
    summary = {
        "instance": str(args.instance),
        "algo": args.algo,
        "status": res.status,
        "iters": res.iters,
        "level": level,
        "first_eps_iter": res.first_eps_iter,
        "certificate": res.certificate.to_dict() if res.certificate else None,
        "prices": res.candidate.prices.tolist() if res.candidate else None,
    }
    if res.candidate is not None:
        _write(out / f"{stem}.{args.algo}.candidate.json", dumps_json(res.candidate.to_dict()) + "\n")
    if res.certificate is not None:
        _write(out / f"{stem}.{args.algo}.certificate.json", dumps_json(res.certificate.to_dict()) + "\n")
    _write(out / f"{stem}.{args.algo}.trace.csv", res.trace_csv)
    print(dumps_json(summary))
    ok = level == "exact" or (args.require == "approx" and level == "approx")
    if not ok:
        print(f"{args.algo}: not solved at level {args.require} (status {res.status})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


# -- certify ----------------------------------------------------------------------------------

def cmd_certify(args: argparse.Namespace) -> int:
    inst = load_instance(args.instance)
    try:
        doc = json.loads(Path(args.candidate).read_text(encoding="utf-8"))
        cand = EquilibriumCandidate.from_dict(doc)
    except (KeyError, ValueError) as err:
        raise UsageError(f"bad candidate file: {err}") from None
    cert = certify_ce(inst, cand)
    level = _level(cert, args.exact_tol, args.approx_tol)
    print(dumps_json({**cert.to_dict(), "level": level}))
    ok = level == "exact" or (args.require == "approx" and level == "approx")
    return EXIT_OK if ok else EXIT_FAIL


# -- bench ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    algo: str
    n: int
    dist: str
    seed: str
    status: str
    iters: int
    wall_ms: float
    eps_earning: float
    eps_optimality: float
    eps_supply: float
    solved_exact: bool
    solved_approx: bool
    instance: str = ""


BENCH_COLUMNS = ("schema_version",) + tuple(f.name for f in fields(BenchRow))
SUMMARY_COLUMNS = (
    "schema_version", "algo", "n", "dist", "count", "solved_exact_frac", "solved_approx_frac",
    "mean_iters_solved", "median_iters_solved", "mean_wall_ms",
)


def _bench_one(job: tuple[str, str, dict[str, Any], float, float]) -> BenchRow:
    path, algo, opts, exact_tol, approx_tol = job
    inst = load_instance(path)
    dist = str(inst.meta.get("dist", inst.meta.get("source", inst.meta.get("name", ""))))
    seed = str(inst.meta.get("seed", ""))
    nan = float("nan")
    start = time.perf_counter()
    try:
        res = run_algo(inst, algo, opts)
    except Exception as err:  # recorded, never aborts the sweep
        wall = (time.perf_counter() - start) * 1e3
        logger.warning("%s on %s raised %s", algo, path, err)
        return BenchRow(algo, inst.n, dist, seed, f"error: {err}", 0, wall, nan, nan, nan, False, False, path)
    wall = (time.perf_counter() - start) * 1e3
    cert = res.certificate
    level = _level(cert, exact_tol, approx_tol)
    e = cert.to_dict() if cert else {"eps_earning": nan, "eps_optimality": nan, "eps_supply": nan}
    return BenchRow(
        algo, inst.n, dist, seed, res.status, res.iters, wall,
        e["eps_earning"], e["eps_optimality"], e["eps_supply"],
        level == "exact", level in ("exact", "approx"), path,
    )


def summarize(rows: Sequence[BenchRow]) -> list[dict[str, Any]]:
    groups: dict[tuple[str, int, str], list[BenchRow]] = {}
    for r in rows:
        groups.setdefault((r.algo, r.n, r.dist), []).append(r)
    out = []
    for (algo, n, dist), rs in sorted(groups.items()):
        solved = [r.iters for r in rs if r.solved_exact]
        out.append({
            "schema_version": SCHEMA_VERSION,
            "algo": algo,
            "n": n,
            "dist": dist,
            "count": len(rs),
            "solved_exact_frac": sum(r.solved_exact for r in rs) / len(rs),
            "solved_approx_frac": sum(r.solved_approx for r in rs) / len(rs),
            "mean_iters_solved": statistics.fmean(solved) if solved else float("nan"),
            "median_iters_solved": statistics.median(solved) if solved else float("nan"),
            "mean_wall_ms": statistics.fmean(r.wall_ms for r in rs),
        })
    return out


def _fmt_cell(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path | None, columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> None:
    fh = sys.stdout if path is None else open(path, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt_cell(row[c]) for c in columns])
    finally:
        if path is not None:
            fh.close()


def run_bench(paths: Sequence[str], algos: Sequence[str], opts: dict[str, Any], jobs: int,
              exact_tol: float = EXACT_TOL, approx_tol: float = APPROX_TOL) -> list[BenchRow]:
    work = [(p, a, opts, exact_tol, approx_tol) for p in paths for a in algos]
    if jobs <= 1 or len(work) <= 1:
        return [_bench_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_bench_one, work))


def cmd_bench(args: argparse.Namespace) -> int:
    root = Path(args.directory)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    paths = sorted(str(p) for p in root.iterdir() if p.suffix.lower() in (".json", ".csv"))
    rows = run_bench(paths, args.algo, _solve_opts(args), args.jobs, args.exact_tol, args.approx_tol)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, BENCH_COLUMNS, [{"schema_version": SCHEMA_VERSION, **asdict(r)} for r in rows])
    if args.summary:
        write_csv(Path(args.summary), SUMMARY_COLUMNS, summarize(rows))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, help="also report the first eps-strongly-approximate iterate")
    p.add_argument("--term-tol", type=float, default=1e-10, help="GFW relative stopping tolerance")
    p.add_argument("--proj-tol", type=float, default=epm.DEFAULT_PROJ_TOL, help="EPM projection gap tolerance")
    p.add_argument("--max-iters", type=int, help="iteration cap")
    p.add_argument("--exact-tol", type=float, default=EXACT_TOL)
    p.add_argument("--approx-tol", type=float, default=APPROX_TOL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chores-eq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write instance files")
    g.add_argument("--fixture", choices=sorted(instances.FIXTURES))
    g.add_argument("--M", type=float, default=100.0, help="appendixB: large disutility")
    g.add_argument("--eps", type=float, help="appendixB: perturbation (default 0.01)")
    g.add_argument("--dist", choices=sorted(instances.DISTS), default="uniform01")
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int, help="chores (default: n)")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0, help="instance k uses seed + k")
    g.add_argument("--bidding", help="members x papers CSV of ordinal labels")
    g.add_argument("--noise-sd", type=float, default=0.0)
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("instance")
    s.add_argument("--algo", choices=("gfw", "epm"), default="gfw")
    _add_solver_flags(s)
    s.add_argument("--require", choices=("exact", "approx"), default="exact")
    s.add_argument("--seed", type=int, default=0, help="accepted for symmetry; solvers are deterministic")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("certify", help="certify a candidate against an instance")
    c.add_argument("instance")
    c.add_argument("candidate")
    c.add_argument("--require", choices=("exact", "approx"), default="exact")
    c.add_argument("--exact-tol", type=float, default=EXACT_TOL)
    c.add_argument("--approx-tol", type=float, default=APPROX_TOL)
    c.set_defaults(func=cmd_certify)

    b = sub.add_parser("bench", help="solve every instance in a directory")
    b.add_argument("directory")
    b.add_argument("--algo", choices=("gfw", "epm"), nargs="+", default=["gfw"])
    _add_solver_flags(b)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", help="row CSV (default: stdout)")
    b.add_argument("--summary", help="summary CSV")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, MarketError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"chores-eq: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (gfw.GfwError, RuntimeError) as err:
        print(f"chores-eq: solver failure: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
