"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .controller import validate_gains
from .coordmath import build_q, iss_bounds
from .engine import (
    Scenario,
    ScenarioError,
    check_iss_bound,
    disturbance_sup,
    extract_metrics,
    run,
    validate_scenario,
)
from .scenario import BUNDLED, ScenarioFormatError, bundled_path, load_scenario
from .topology import DigraphSchedule, verify_assumption3
from .trajectory import speed_bounds

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

GRID_KEYS = ("a", "b", "epsilon", "dwell", "seed")


@dataclass
class RunConfig:
    scenario: str
    out: Optional[Path] = None
    dt: Optional[float] = None
    t_end: Optional[float] = None
    seed: Optional[int] = None
    a: Optional[float] = None
    b: Optional[float] = None
    epsilon: Optional[float] = None
    check_bounds: bool = False
    verify_assumption3: bool = False
    waive_connectivity: bool = False
    bounds_only: bool = False
    sweep: Optional[Path] = None
    jobs: int = 1


def resolve_scenario_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if str(p.parent) == "." and stem in BUNDLED:
        return bundled_path(stem)
    return p


def apply_overrides(sc: Scenario, **kw) -> Scenario:
    """Return ``sc`` with non-``None`` overrides applied (dt, t_end, seed, a, b, epsilon, dwell)."""
    changes = {}
    for key in ("dt", "t_end"):
        if kw.get(key) is not None:
            changes[key] = float(kw[key])
    if kw.get("seed") is not None:
        changes["seed"] = int(kw["seed"])
    gains = {k: float(kw[k]) for k in ("a", "b", "epsilon") if kw.get(k) is not None}
    if gains:
        changes["gains"] = dataclasses.replace(sc.gains, **gains)
    if kw.get("dwell") is not None:
        d = float(kw["dwell"])
        changes["schedule"] = DigraphSchedule(
            tuple((g, d) for g, _ in sc.schedule.segments), sc.schedule.cycle
        )
    return dataclasses.replace(sc, **changes)


def load_config_scenario(cfg: RunConfig) -> Scenario:
    sc = load_scenario(resolve_scenario_path(cfg.scenario))
    return apply_overrides(
        sc, dt=cfg.dt, t_end=cfg.t_end, seed=cfg.seed, a=cfg.a, b=cfg.b, epsilon=cfg.epsilon
    )


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def bounds_report(sc: Scenario):
    """Convergence constants for the scenario's QoS and gains.

    Returns ``(constants, report_dict)``; degenerate-bound warnings are
    echoed to stderr and recorded in the report.
    """
    if sc.qos is None:
        raise ScenarioError(["qos: required for bound computation"])
    if sc.n < 2:
        raise ScenarioError(["n: bounds need at least two agents"])
    T, delta = sc.qos
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            c = iss_bounds(
                sc.n, T, delta, sc.gains.a, sc.gains.b,
                c3=sc.bounds.c3, beta=sc.bounds.beta, lambda_tc=sc.bounds.lambda_tc,
            )
        except ValueError as exc:
            raise ScenarioError([f"qos/bounds: {exc}"]) from exc
    msgs = [str(w.message) for w in caught]
    for m in msgs:
        _err(f"warning: {m}")
    report = {
        "inputs": {
            "n": sc.n, "T": T, "delta": delta, "a": sc.gains.a, "b": sc.gains.b,
            "c3": sc.bounds.c3, "beta": sc.bounds.beta, "lambda_tc": sc.bounds.lambda_tc,
            "ramp": sc.bounds.ramp,
        },
        "constants": c.to_dict(),
        "warnings": msgs,
    }
    return c, report


def cmd_verify(cfg: RunConfig) -> int:
    sc = load_config_scenario(cfg)
    if sc.qos is None:
        _err("$.qos: required for --verify-assumption3")
        return EXIT_INVALID
    T, delta = sc.qos
    rep = verify_assumption3(sc.schedule, T, delta, horizon=sc.t_end)
    verdict = "holds" if rep.holds else f"fails (first violation at t={rep.first_violation})"
    print(f"assumption3: {verdict} [T={T}, delta={delta}, samples={rep.samples}]")
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        _write_json(cfg.out / "assumption3.json", rep.to_dict())
    return EXIT_OK if rep.holds else EXIT_INVALID


def cmd_bounds(cfg: RunConfig) -> int:
    sc = load_config_scenario(cfg)
    _, report = bounds_report(sc)
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        _write_json(cfg.out / "bounds.json", report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def simulate(sc: Scenario, waive_connectivity: bool = False, check_bounds: bool = False):
    """Run one scenario; return ``(log, metrics_doc, bounds_doc_or_None)``."""
    log = run(sc, waive_connectivity=waive_connectivity)
    q = build_q(sc.n) if sc.n >= 2 else None
    metrics = extract_metrics(log, q, sc.gamma_dot_d)
    sb = speed_bounds(sc.trajectories)
    gains = validate_gains(sc.gains, sb.v_min, sb.v_max, sb.v_min_lowest)
    doc = {
        "scenario": sc.name,
        "n": sc.n,
        "dt": sc.dt,
        "seed": sc.seed,
        "connectivity_waived": waive_connectivity,
        "metrics": metrics.summary(),
        "speed_bounds": {k: v for k, v in sb.to_dict().items() if not k.startswith("per_agent")},
        "gain_check": gains.to_dict(),
        "events": log.events,
    }
    bounds = None
    if check_bounds:
        c, bounds = bounds_report(sc)
        sup_epf, sup_gdd = disturbance_sup(log, sc.gamma_dot_d, sc.bounds.ramp)
        rep = check_iss_bound(metrics, c, sup_epf, sup_gdd)
        bounds["iss_check"] = {**rep.to_dict(), "sup_epf": sup_epf, "sup_gamma_ddot_d": sup_gdd}
    return log, doc, bounds


def cmd_run(cfg: RunConfig) -> int:
    sc = load_config_scenario(cfg)
    log, doc, bounds = simulate(sc, cfg.waive_connectivity, cfg.check_bounds)
    out = cfg.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "log.csv").write_text(log.to_csv())
    _write_json(out / "metrics.json", doc)
    if bounds is not None:
        _write_json(out / "bounds.json", bounds)
    m = doc["metrics"]
    print(
        f"{sc.name or cfg.scenario}: n={sc.n} steps={len(log.t)} "
        f"final spread={m['final_residuals']['gamma_spread']:.3g} "
        f"final rate error={m['final_residuals']['rate_error']:.3g} -> {out}"
    )
    return EXIT_OK


def _sweep_cell(args):
    sc, cell, waive = args
    try:
        cand = apply_overrides(sc, **cell)
    except ValueError as exc:
        return {"status": "rejected", "reason": str(exc)}
    errs = validate_scenario(cand, waive)
    if errs:
        return {"status": "rejected", "reason": "; ".join(errs)}
    _, doc, _ = simulate(cand, waive)
    return {"status": "ok", "reason": "", **doc["metrics"]}


SUMMARY_METRICS = (
    "peak_gamma_spread",
    "peak_rate_error",
    "decay_rate",
    "gamma_spread_settle_0.01",
    "rate_error_settle_0.01",
)


def load_grid(path: Path) -> list[dict]:
    grid = json.loads(Path(path).read_text())
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ScenarioFormatError([f"$.{k}: unknown sweep parameter" for k in sorted(unknown)])
    keys = [k for k in GRID_KEYS if k in grid]
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ScenarioFormatError([f"$.{k}: must be a non-empty list"])
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def cmd_sweep(cfg: RunConfig) -> int:
    sc = load_config_scenario(cfg)
    cells = load_grid(cfg.sweep)
    jobs = [(sc, cell, cfg.waive_connectivity) for cell in cells]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]

    out = cfg.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    header = ["cell", *GRID_KEYS, "status", "reason", *SUMMARY_METRICS,
              "final_gamma_spread", "final_rate_error", "final_xi_tc_norm"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for idx, (cell, res) in enumerate(zip(cells, results)):
            fin = res.get("final_residuals", {})
            w.writerow(
                [idx, *(cell.get(k, "") for k in GRID_KEYS), res["status"], res["reason"],
                 *(res.get(k, "") for k in SUMMARY_METRICS),
                 fin.get("gamma_spread", ""), fin.get("rate_error", ""), fin.get("xi_tc_norm", "")]
            )
            if res["status"] != "ok":
                _err(f"cell {idx} {cell}: rejected: {res['reason']}")
    ok = sum(r["status"] == "ok" for r in results)
    print(f"sweep: {ok}/{len(cells)} cells ran -> {out / 'summary.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tcoord",
        description="Simulate distributed time-coordination over switching digraphs.",
    )
    p.add_argument("--scenario", required=True,
                   help=f"scenario JSON path or bundled name ({', '.join(BUNDLED)})")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--dt", type=float, default=None, help="step size override [s]")
    p.add_argument("--t-end", type=float, default=None, help="end time override [s]")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--a", type=float, default=None, help="consensus gain override")
    p.add_argument("--b", type=float, default=None, help="damping gain override")
    p.add_argument("--epsilon", type=float, default=None, help="coupling regulariser override")
    p.add_argument("--check-bounds", action="store_true",
                   help="also write bounds.json with convergence constants and ISS check")
    p.add_argument("--bounds-only", action="store_true",
                   help="write bounds.json without simulating")
    p.add_argument("--verify-assumption3", action="store_true",
                   help="only check integral connectivity and report holds/fails")
    p.add_argument("--waive-connectivity", action="store_true",
                   help="simulate even if the connectivity check fails")
    p.add_argument("--sweep", type=Path, default=None, help="parameter grid JSON")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        scenario=args.scenario, out=args.out, dt=args.dt, t_end=args.t_end, seed=args.seed,
        a=args.a, b=args.b, epsilon=args.epsilon, check_bounds=args.check_bounds,
        verify_assumption3=args.verify_assumption3, waive_connectivity=args.waive_connectivity,
        bounds_only=args.bounds_only, sweep=args.sweep, jobs=args.jobs,
    )
    try:
        if cfg.verify_assumption3:
            return cmd_verify(cfg)
        if cfg.bounds_only:
            return cmd_bounds(cfg)
        if cfg.sweep is not None:
            return cmd_sweep(cfg)
        return cmd_run(cfg)
    except (ScenarioFormatError, ScenarioError) as exc:
        for line in exc.errors:
            _err(f"error: {line}")
        return EXIT_INVALID
    except FileNotFoundError as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        _err(f"runtime failure: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
