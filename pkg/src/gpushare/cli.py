"""Command-line front end.

Subcommands: run, compare, sweep, gen-trace, verify-theorem. Exit status is 0
on success, 2 for configuration or input errors and 3 when a simulator
invariant fails or the endpoint check finds a better insertion time.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from .cluster import ClusterSpec
from .errors import ConfigError, GpuShareError, InvariantViolation, ValidationError
from .pair_sched import JobSnapshot, best_pair_schedule, brute_force_kappa
from .perf_model import GIB, InterferenceTable, default_profiles, load_interference, load_profiles, sample_interference
from .policies import POLICY_NAMES, PolicyKind
from .simulator import SUMMARY_COLUMNS, run, write_jobs_csv, write_report
from .trace import PRESETS, generate_workload, load_trace, save_trace

log = logging.getLogger("gpushare")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

INTERFERENCE_GRID = (1.0, 1.25, 1.5, 1.75, 2.0)
LOAD_GRID = (0.5, 1.0, 1.5, 2.0)
THEOREM_COLUMNS = [
    "sample", "t_running", "i_running", "xi_running", "t_arriving", "i_arriving", "xi_arriving",
    "share", "endpoint_avg", "grid_avg", "rel_gap",
]


# -- config --------------------------------------------------------------------


def parse_cluster(text: str, gpu_memory_gib: float) -> ClusterSpec:
    """``"4x4"`` means 4 servers with 4 GPUs each."""
    try:
        servers, per = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--cluster expects SERVERSxGPUS, got {text!r}") from None
    return ClusterSpec(servers, per, gpu_memory_gib * GIB)


def parse_interference(value: Optional[str], tasks, seed: int) -> InterferenceTable:
    """A JSON table path, a constant ratio, or (when omitted) a table sampled from [1.1, 2.0]."""
    if value is None:
        return sample_interference(tasks, seed=seed)
    try:
        xi = float(value)
    except ValueError:
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"interference table {value!r} not found") from None
        return load_interference(path)
    if not math.isfinite(xi) or xi < 1:
        raise ConfigError(f"constant interference ratio must be >= 1, got {value}")
    return InterferenceTable.constant(xi)


def parse_grid(text: Optional[str], default: Sequence[float]) -> list[float]:
    if text is None:
        return list(default)
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"grid must be comma-separated numbers, got {text!r}") from None
    if not grid:
        raise ValidationError("sweep grid is empty")
    return grid


def load_inputs(args, load_scale: float = 1.0):
    profiles = load_profiles(args.profiles) if args.profiles else default_profiles()
    if args.trace:
        trace = load_trace(args.trace)
    else:
        trace = generate_workload(PRESETS[args.preset](seed=args.seed, load_scale=load_scale))
    interference = parse_interference(args.interference, sorted(profiles), args.seed)
    cluster = parse_cluster(args.cluster or _default_cluster(args.preset), args.gpu_memory)
    return trace, cluster, profiles, interference


def _default_cluster(preset: str) -> str:
    return "4x4" if preset == "physical" else "16x4"


def config_echo(args, cluster: ClusterSpec) -> dict:
    return {
        "trace": args.trace,
        "preset": None if args.trace else args.preset,
        "cluster": {"servers": cluster.num_servers, "gpus_per_server": cluster.gpus_per_server,
                    "gpu_memory": cluster.gpu_memory},
        "profiles": args.profiles,
        "interference": args.interference,
        "seed": args.seed,
    }


# -- output --------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_rows(rows: list[dict], path: Path, fmt: str) -> Path:
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        path.write_text(json.dumps(rows, indent=2) + "\n")
    else:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(round(v, 6)) if isinstance(v, float) else v for k, v in row.items()})
    return path


def print_table(rows: list[dict], columns: Sequence[str], stream=None) -> None:
    stream = stream or sys.stdout
    cells = [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip(), file=stream)
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip(), file=stream)


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.2f}"
    return "" if v is None else str(v)


# -- commands ------------------------------------------------------------------


def cmd_run(args) -> int:
    trace, cluster, profiles, interference = load_inputs(args)
    policy = PolicyKind.parse(args.policy)
    metrics = run(trace, cluster, policy, profiles, interference, seed=args.seed)
    out = _out_dir(args)
    write_jobs_csv(metrics, out / "jobs.csv")
    write_rows([metrics.summary_row()], out / "summary", args.format)
    write_report(metrics, {**config_echo(args, cluster), "policy": policy.name}, out / "report.json")
    print_table([metrics.summary_row()], SUMMARY_COLUMNS[:5])
    return EXIT_OK


def _policies(args) -> list[str]:
    names = [PolicyKind.parse(p).name for p in args.policies.split(",") if p.strip()]
    if not names:
        raise ConfigError("no policies given")
    return names


def cmd_compare(args) -> int:
    trace, cluster, profiles, interference = load_inputs(args)
    rows = []
    for name in _policies(args):
        m = run(trace, cluster, PolicyKind.parse(name), profiles, interference, seed=args.seed)
        rows.append(m.summary_row())
    path = write_rows(rows, _out_dir(args) / "compare", args.format)
    print_table(rows, SUMMARY_COLUMNS)
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    names = _policies(args)
    rows = []
    if args.dimension == "interference":
        grid = parse_grid(args.grid, INTERFERENCE_GRID)
        trace, cluster, profiles, _ = load_inputs(args)
        for xi in grid:
            if xi < 1:
                raise ValidationError(f"interference ratios must be >= 1, got {xi}")
            table = InterferenceTable.constant(xi)
            for name in names:
                m = run(trace, cluster, PolicyKind.parse(name), profiles, table, seed=args.seed)
                rows.append({"interference": xi, **m.summary_row()})
    else:
        grid = parse_grid(args.grid, LOAD_GRID)
        if args.trace:
            raise ConfigError("load sweeps scale a generated workload; drop --trace")
        for scale in grid:
            if scale <= 0:
                raise ValidationError(f"load scale must be positive, got {scale}")
            trace, cluster, profiles, interference = load_inputs(args, load_scale=scale)
            for name in names:
                m = run(trace, cluster, PolicyKind.parse(name), profiles, interference, seed=args.seed)
                rows.append({"load": scale, **m.summary_row()})
    path = write_rows(rows, _out_dir(args) / f"sweep_{args.dimension}", args.format)
    print_table(rows, [args.dimension if args.dimension == "interference" else "load", *SUMMARY_COLUMNS[:5]])
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    jobs = generate_workload(PRESETS[args.preset](seed=args.seed, load_scale=args.load))
    out = Path(args.out)
    if out.suffix != ".jsonl":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{args.preset}_seed{args.seed}.jsonl"
    save_trace(jobs, out)
    print(f"{len(jobs)} jobs -> {out}")
    return EXIT_OK


def theorem_rows(samples: int, grid_points: int, seed: int) -> list[dict]:
    """Endpoint decision against a brute-force grid over the insertion time, one row per random pair."""
    rng = random.Random(seed)
    rows = []
    for k in range(samples):
        run_ = JobSnapshot(rng.uniform(0.01, 10), rng.uniform(10, 1e4), rng.uniform(1, 6))
        arr = JobSnapshot(rng.uniform(0.01, 10), rng.uniform(10, 1e4), rng.uniform(1, 6))
        sched = best_pair_schedule(run_, arr)
        _, grid_avg = brute_force_kappa(run_, arr, grid_points)
        rows.append({
            "sample": k,
            "t_running": run_.solo_iter, "i_running": run_.remaining_iters, "xi_running": run_.xi,
            "t_arriving": arr.solo_iter, "i_arriving": arr.remaining_iters, "xi_arriving": arr.xi,
            "share": sched.share,
            "endpoint_avg": sched.avg_jct,
            "grid_avg": grid_avg,
            # positive when the grid beat the endpoint prediction
            "rel_gap": (sched.avg_jct - grid_avg) / sched.avg_jct,
        })
    return rows


def cmd_verify_theorem(args) -> int:
    if args.samples < 1:
        raise ValidationError("--samples must be >= 1")
    rows = theorem_rows(args.samples, args.grid_points, args.seed)
    path = write_rows(rows, _out_dir(args) / "theorem", args.format)
    worst = max(rows, key=lambda r: r["rel_gap"])
    print(f"samples={len(rows)} grid_points={args.grid_points} max_rel_violation={max(worst['rel_gap'], 0.0):.3e}")
    print("worst pair: " + ", ".join(f"{k}={worst[k]:.6g}" for k in THEOREM_COLUMNS[1:7]))
    log.info("wrote %s", path)
    if worst["rel_gap"] > args.tolerance:
        print(f"VIOLATION: grid search beat the endpoint decision by {worst['rel_gap']:.3e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpushare", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=False, policies=False):
        sp.add_argument("--trace", help="JSON-lines trace; default generates --preset")
        sp.add_argument("--preset", choices=sorted(PRESETS), default="physical")
        sp.add_argument("--cluster", help="SERVERSxGPUS, default 4x4 (physical) or 16x4 (simulation)")
        sp.add_argument("--gpu-memory", type=float, default=11.0, help="GiB per GPU")
        sp.add_argument("--profiles", help="JSON profile file; default built-in profiles")
        sp.add_argument("--interference", help="JSON table path or constant ratio")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="results")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if policy:
            sp.add_argument("--policy", default="sjf-bsbf", help="|".join(n.replace("_", "-") for n in POLICY_NAMES))
        if policies:
            sp.add_argument("--policies", default=",".join(POLICY_NAMES))

    common(sub.add_parser("run", help="simulate one policy"), policy=True)
    common(sub.add_parser("compare", help="simulate several policies on the same trace"), policies=True)
    sw = sub.add_parser("sweep", help="interference or load sweep")
    common(sw, policies=True)
    sw.add_argument("--dimension", choices=("interference", "load"), required=True)
    sw.add_argument("--grid", help="comma-separated values")

    gt = sub.add_parser("gen-trace", help="write a synthetic trace")
    gt.add_argument("--preset", choices=sorted(PRESETS), default="physical")
    gt.add_argument("--seed", type=int, default=0)
    gt.add_argument("--load", type=float, default=1.0)
    gt.add_argument("--out", default="traces", help="directory or .jsonl file")

    vt = sub.add_parser("verify-theorem", help="check endpoint optimality against a grid search")
    vt.add_argument("--samples", type=int, default=1000)
    vt.add_argument("--grid-points", type=int, default=201)
    vt.add_argument("--tolerance", type=float, default=1e-9)
    vt.add_argument("--seed", type=int, default=0)
    vt.add_argument("--out", default="results")
    vt.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "gen-trace": cmd_gen_trace,
    "verify-theorem": cmd_verify_theorem,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (GpuShareError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
