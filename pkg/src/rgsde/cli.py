"""``rgsde`` command line: simulate | solve | expect | check | refine.

Exit status: 0 success, 2 configuration error, 3 numeric failure, 4 suite failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cache import ScenarioCache
from .config import RunConfig, load_config
from .errors import ConfigError, IllPosedCaseError, NonConvergenceError, NumericFailureError, RGSDEError
from .expectation import estimate, solve_family
from .harness import run_comparison, run_truncation_study, run_uniqueness_probe
from .reflection import flatness_defect
from .solver import picard_solve_batch, richardson_refine, write_solution_csv

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SUITE = 0, 2, 3, 4


def _clean(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _solve_rows(run: RunConfig, batch):
    """Solve every row, isolating rows that fail so the rest still complete."""
    chunks = [c for c in np.array_split(np.arange(len(batch)), run.jobs) if c.size]

    def work(rows):
        sub = batch.subset(rows)
        try:
            return [(rows, picard_solve_batch(run.coeffs, run.obstacle, sub, run.x0, run.solver), None)]
        except (NonConvergenceError, NumericFailureError):
            out = []
            for r in rows:
                try:
                    out.append(([r], picard_solve_batch(run.coeffs, run.obstacle, batch.subset([r]), run.x0, run.solver), None))
                except (NonConvergenceError, NumericFailureError) as e:
                    out.append(([r], None, e))
            return out

    with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
        parts = [p for res in ex.map(work, chunks) for p in res]
    rows = {}
    for idx, res, err in parts:
        for n, r in enumerate(idx):
            rows[int(r)] = (res.row(n) if res is not None else None, err)
    return [rows[r] for r in range(len(batch))]


def cmd_simulate(run: RunConfig) -> int:
    cache = ScenarioCache(run)
    cache.ensure()
    print(json.dumps({"cache_dir": str(cache.dir), "n_files": len(cache.files())}))
    return EXIT_OK


def cmd_solve(run: RunConfig) -> int:
    cache = ScenarioCache(run)
    cache.ensure()
    sol_dir = run.out_dir / "solutions"
    sol_dir.mkdir(parents=True, exist_ok=True)
    records, failed = [], 0
    for ci, c in enumerate(run.controls):
        batch = cache.load(ci)
        for j, (res, err) in enumerate(_solve_rows(run, batch)):
            rec = {"control": c.label, "index": j, "seed": int(batch.seeds[j])}
            if err is not None:
                failed += 1
                rec.update(status="failed", error=str(err))
            else:
                rec.update(
                    status="ok", picard_iters=res.picard_iters, residual=res.residual,
                    flatness_defect=float(flatness_defect(res.solution, res.S)),
                    oracle_gap=res.oracle_gap, K_T=float(res.solution.K[-1]), X_T=float(res.solution.X[-1]),
                )
                write_solution_csv(res, batch.path(j), sol_dir / f"c{ci:03d}_s{j:06d}.csv")
            records.append(rec)
    ok = [r for r in records if r["status"] == "ok"]
    summary = {
        "coefficients": run.coeffs.describe(),
        "obstacle": run.obstacle.describe(),
        "x0": run.x0,
        "n_steps": run.grid.n_steps,
        "horizon": run.grid.horizon,
        "master_seed": run.master_seed,
        "n_failed": failed,
        "picard_iters": {
            "min": min((r["picard_iters"] for r in ok), default=None),
            "max": max((r["picard_iters"] for r in ok), default=None),
            "mean": math.fsum(r["picard_iters"] for r in ok) / len(ok) if ok else None,
        },
        "max_flatness_defect": max((r["flatness_defect"] for r in ok), default=None),
        "max_oracle_gap": max((r["oracle_gap"] for r in ok if r["oracle_gap"] is not None), default=None),
        "scenarios": records,
    }
    write_json(run.out_dir / "summary.json", summary)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_expect(run: RunConfig) -> int:
    solved = solve_family(run.problem, run.controls, max(run.n_paths, 2), run.master_seed, run.jobs)
    est = estimate(run.functional, solved, run.master_seed)
    write_json(run.out_dir / "expect.json", est.to_dict())
    return EXIT_OK


def cmd_check(run: RunConfig) -> int:
    results = []
    for s in run.suites:
        entry = {"kind": s.kind, "name": s.name}
        try:
            if s.kind == "comparison":
                rep = run_comparison(s.case, run.controls, s.n_paths, run.grid, run.master_seed,
                                     run.vol, run.solver, run.jobs)
                entry.update(rep.to_dict())
            elif s.kind == "truncation":
                tab = run_truncation_study(s.problem, s.values, run.controls, s.n_paths, run.master_seed, run.jobs)
                entry.update(tab.to_dict())
            else:
                rep = run_uniqueness_probe(s.problem, run.controls, s.n_paths, run.master_seed, s.values)
                entry.update(rep.to_dict())
        except IllPosedCaseError as e:
            entry.update(passed=False, error="ill-posed-case", probe=e.probe, message=str(e))
        results.append(entry)
    passed = all(r["passed"] for r in results)
    write_json(run.out_dir / "check.json", {"passed": passed, "master_seed": run.master_seed, "suites": results})
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['kind']} {r['name']}" + (f" ({r['probe']})" if "probe" in r else ""))
    return EXIT_OK if passed else EXIT_SUITE


def cmd_refine(run: RunConfig) -> int:
    table = richardson_refine(run.coeffs, run.obstacle, run.controls[run.refine_control], run.x0, run.solver,
                              run.refine_levels, run.grid, run.vol, run.master_seed, run.refine_n_paths)
    out = table.to_dict()
    out.update(control=run.controls[run.refine_control].label, master_seed=run.master_seed)
    write_json(run.out_dir / "refine.json", out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "solve": cmd_solve, "expect": cmd_expect, "check": cmd_check, "refine": cmd_refine}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgsde", description="Reflected G-SDEs with nonlinear resistance.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="run configuration file")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--jobs", type=int, help="worker threads (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = load_config(args.config).with_overrides(args.seed, args.out, args.jobs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "check" and not run.suites:
        print("config error: check needs at least one [comparison|truncation|uniqueness NAME] section", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"config error: output directory {run.out_dir}: {e.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](run)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, NumericFailureError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RGSDEError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
