"""Command-line scenario runner.

    safeguard list
    safeguard run acc:nodelay --out runs --set acc.gamma=2.5
    safeguard run segway:delay_naive --expect-unsafe

Exit codes: 0 clean run, 2 safety violation (min barrier < -1e-6), 1 error.
``--expect-unsafe`` swaps the meaning of 0 and 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import acc, segway
from .core import BadOverride, IoFailure, NumericalBlowup, SafeguardError, UnknownScenario
from .sim import FLAG_ACTIVE, FLAG_INFEASIBLE, RunOptions, TrajectoryLog

VIOLATION_TOL = 1e-6
EXIT_OK, EXIT_ERROR, EXIT_UNSAFE = 0, 1, 2


@dataclass(frozen=True)
class ScenarioEntry:
    family: str
    name: str
    description: str

    @property
    def key(self) -> str:
        return f"{self.family}:{self.name}"


REGISTRY: dict[str, ScenarioEntry] = {
    e.key: e
    for e in [ScenarioEntry("acc", n, d) for n, d in acc.SCENARIOS.items()]
    + [ScenarioEntry("segway", n, d) for n, d in segway.SCENARIOS.items()]
}


def _defaults_line(family: str) -> str:
    if family == "acc":
        p = acc.AccParams()
        return f"gamma={p.gamma:g} kappa_bar={p.kappa_bar:g} l={p.length:g} tau={p.tau:g} horizon={p.horizon:g}"
    sc = segway.SegwayScenario()
    return f"gamma={sc.gamma:g} gamma_e={sc.gamma_e:g} tau={sc.tau:g} horizon={sc.horizon:g}"


def list_scenarios() -> str:
    width = max(len(k) for k in REGISTRY)
    lines = [f"{k:<{width}}  {e.description}  [{_defaults_line(e.family)}]" for k, e in REGISTRY.items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- overrides

def _section_targets(family: str) -> list:
    if family == "acc":
        return [acc.AccParams()]
    return [segway.SegwayParams(), segway.SegwayScenario()]


_DOMAIN_KEYS = {"domain_e": "e", "domain_e_dot": "e_dot", "domain_e_ddot": "e_ddot"}
_SIM_KEYS = ("dt_integration", "dt_control", "horizon")


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, (int, float)):
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
        if isinstance(default, tuple):
            return tuple(float(t) for t in raw.split(","))
        if isinstance(default, str):
            return raw
    except ValueError as exc:
        raise BadOverride(f"cannot parse value {raw!r} for {key}") from exc
    raise BadOverride(f"{key} cannot be overridden")


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise BadOverride(f"expected key=value, got {text!r}")
    key, val = text.split("=", 1)
    key = key.strip()
    if "." not in key:
        raise BadOverride(f"key {key!r} must look like section.name")
    return key, val


def read_config(path: str) -> list[tuple[str, str]]:
    """Flat ``section.key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path!r}: {exc}") from exc
    pairs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(parse_assignment(line))
    return pairs


@dataclass
class ResolvedRun:
    entry: ScenarioEntry
    targets: list
    options: RunOptions


def resolve(scenario: str, assignments: Sequence[tuple[str, str]], cli_options: dict) -> ResolvedRun:
    """Apply assignments in order (later wins) to the scenario's parameter objects.

    Keys of the other family's section are validated but otherwise ignored, so
    one config file can serve every scenario.
    """
    if scenario not in REGISTRY:
        raise UnknownScenario(f"unknown scenario {scenario!r}; run 'list' to see the {len(REGISTRY)} available")
    entry = REGISTRY[scenario]
    targets = {fam: _section_targets(fam) for fam in ("acc", "segway")}
    opts = dataclasses.asdict(RunOptions())
    for key, raw in assignments:
        section, name = key.split(".", 1)
        if section == "sim":
            if name not in _SIM_KEYS:
                raise BadOverride(f"unknown key {key!r}")
            opts[name] = _parse_value(key, raw, 0.0)
            continue
        if section not in targets:
            raise BadOverride(f"unknown section in {key!r}")
        objs = targets[section]
        if section == "segway" and name in _DOMAIN_KEYS:
            sc = objs[1]
            field_name = _DOMAIN_KEYS[name]
            val = _parse_value(key, raw, getattr(sc.domains, field_name))
            if len(val) != 2:
                raise BadOverride(f"{key} needs two comma-separated numbers")
            try:
                objs[1] = dataclasses.replace(sc, domains=dataclasses.replace(sc.domains, **{field_name: val}))
            except ValueError as exc:
                raise BadOverride(f"{key}: {exc}") from exc
            continue
        for i, obj in enumerate(objs):
            if name in {f.name for f in dataclasses.fields(obj)} and name != "domains":
                val = _parse_value(key, raw, getattr(obj, name))
                try:
                    objs[i] = dataclasses.replace(obj, **{name: val})
                except (ValueError, TypeError) as exc:
                    raise BadOverride(f"{key}: {exc}") from exc
                break
        else:
            raise BadOverride(f"unknown key {key!r}")
    for name, val in cli_options.items():
        if val is not None:
            opts[name] = val
    return ResolvedRun(entry, targets[entry.family], RunOptions(**opts))


def execute(run: ResolvedRun) -> tuple[TrajectoryLog, list]:
    e = run.entry
    if e.family == "acc":
        log = acc.run_scenario(e.name, run.targets[0], run.options)
        return log, acc.csv_columns(log)
    log = segway.run_segway_scenario(e.name, run.targets[0], run.targets[1], run.options)
    return log, segway.csv_columns(log)


# ----------------------------------------------------------------- outputs

def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def summarize(log: TrajectoryLog) -> dict:
    mb = float(np.min(log.barrier))
    return {
        "min_barrier": mb,
        "first_violation_time": log.first_violation(VIOLATION_TOL),
        "violated": bool(mb < -VIOLATION_TOL),
        "activation_fraction": float(np.mean((log.flags & FLAG_ACTIVE) != 0)),
        "max_abs_u": float(np.max(np.abs(log.u_applied))),
        "infeasible_count": int(np.sum((log.flags & FLAG_INFEASIBLE) != 0)),
        "rows": len(log),
    }


def write_outputs(out_dir: Path, run: ResolvedRun, log: TrajectoryLog, columns: list, status: str) -> dict:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "trajectory.csv"
        log.to_csv(csv_path, columns)
        stats = summarize(log)
        manifest = {
            "scenario": run.entry.key,
            "description": run.entry.description,
            "status": status,
            "parameters": [_jsonable(t) for t in run.targets],
            "config": dict(_jsonable(run.options), effective_horizon=float(log.t[-1]) if len(log) else 0.0),
            "outputs": {"trajectory": str(csv_path), "manifest": str(out_dir / "manifest.json")},
            "verdict": {k: stats[k] for k in ("min_barrier", "first_violation_time", "violated")},
            "filter_stats": {k: stats[k] for k in ("activation_fraction", "max_abs_u", "infeasible_count")},
            "rows": stats["rows"],
            "meta": _jsonable(log.meta),
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write outputs to {out_dir}: {exc}") from exc
    return manifest


def run_one(run: ResolvedRun, out_dir: Path, expect_unsafe: bool) -> int:
    try:
        log, columns = execute(run)
        status = "completed"
    except NumericalBlowup as exc:
        if exc.log is None or len(exc.log) == 0:
            raise
        log = exc.log
        columns = acc.csv_columns(log) if run.entry.family == "acc" else segway.csv_columns(log)
        status = f"aborted: {exc}"
        write_outputs(out_dir, run, log, columns, status)
        raise
    manifest = write_outputs(out_dir, run, log, columns, status)
    unsafe = manifest["verdict"]["violated"]
    return EXIT_OK if unsafe == expect_unsafe else EXIT_UNSAFE


def _sweep_values(spec: str) -> tuple[str, list[str]]:
    key, vals = parse_assignment(spec)
    values = [v for v in vals.split(";" if ";" in vals else ",") if v.strip()]
    if not values:
        raise BadOverride(f"sweep {spec!r} has no values")
    return key, values


def cmd_run(args) -> int:
    assignments = read_config(args.config) if args.config else []
    assignments += [parse_assignment(s) for s in args.set or []]
    cli_options = {"dt_integration": args.dt_int, "dt_control": args.dt_ctrl, "horizon": args.horizon}
    base_out = Path(args.out or os.environ.get("SAFEGUARD_OUT") or "runs") / args.scenario
    if not args.sweep:
        run = resolve(args.scenario, assignments, cli_options)
        code = run_one(run, base_out, args.expect_unsafe)
        _report(base_out, code)
        return code
    key, values = _sweep_values(args.sweep)
    runs = [(v, resolve(args.scenario, assignments + [(key, v)], cli_options)) for v in values]

    def job(item):
        v, run = item
        out = base_out / f"{key}={v.strip()}"
        return out, run_one(run, out, args.expect_unsafe)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(job, runs))
    for out, code in results:
        _report(out, code)
    return max(code for _, code in results)


def _report(out: Path, code: int) -> None:
    label = {EXIT_OK: "ok", EXIT_UNSAFE: "unexpected safety verdict"}[code]
    print(f"{out}: {label}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safeguard", description="Run safety-filter scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list available scenarios")
    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--config", help="file of 'section.key = value' lines")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. acc.gamma=2")
    r.add_argument("--out", help="output root (default $SAFEGUARD_OUT or ./runs)")
    r.add_argument("--expect-unsafe", action="store_true", help="succeed only if safety is violated")
    r.add_argument("--dt-int", type=float, dest="dt_int")
    r.add_argument("--dt-ctrl", type=float, dest="dt_ctrl")
    r.add_argument("--horizon", type=float)
    r.add_argument("--sweep", metavar="KEY=V1,V2,...", help="run once per value in worker threads")
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        sys.stdout.write(list_scenarios())
        return EXIT_OK
    try:
        return cmd_run(args)
    except (SafeguardError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
