"""Command-line harness: runs, sweeps, self-checks, and CSV exporters.

Exit codes across all subcommands: 0 success, 1 usage or config error,
2 partial scientific failure (failed seeds, failed sweep cells, or
failed verification checks).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .channels import channel_to_dict
from .training import (
    RunResult,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    forward_channels_for_seed,
    result_from_dict,
    result_to_dict,
    run_experiment,
)

SCHEMA_VERSION = 1

STRATEGY_TO_KIND = {"sqco": "sqco_step", "hqto": "hqto", "hqto+pc": "pc"}

# documented column orders; tests pin them
REPORT_COLUMNS = (
    "qubits",
    "l_f",
    "k_f",
    "l_b",
    "k_b",
    "strategy",
    "family",
    "lambda",
    "mean_fidelity",
    "std",
    "n_seeds",
    "status",
)
LEDGER_COLUMNS = (
    "config_hash",
    "qubits",
    "l_f",
    "k_f",
    "l_b",
    "k_b",
    "strategy",
    "family",
    "lambda",
    "mean_fidelity",
    "std",
    "n_seeds",
    "total_iters",
    "wall_time",
)

GRID_KEYS = ("qubits", "l_f", "k_f", "l_b", "k_b", "lambda", "family", "strategy")

_SCHEDULE_KEYS = {"family", "length", "n_ops", "p_max", "gamma", "dt", "seed"}
_LOSS_KEYS = {"kind", "lambda", "alpha", "loss_form"}
_CELL_KEYS = {
    "n_qubits",
    "schedule",
    "l_b",
    "k_b",
    "loss",
    "max_iters",
    "convergence_eps",
    "tau0",
    "seeds",
    "target",
    "init",
}
_RUN_KEYS = _CELL_KEYS | {"schema_version", "output_dir", "exports"}
_EXPORT_KEYS = {"bloch", "curves", "channels"}
_SWEEP_KEYS = {"schema_version", "output_dir", "configs", "base", "grid"}


class ConfigError(Exception):
    """Invalid configuration document."""


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"missing key {key!r} in {where}")
    return doc[key]


def _check_schema_version(doc: dict, where: str) -> None:
    version = _require(doc, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version!r} in {where}; this build supports {SCHEMA_VERSION}"
        )


def _parse_cell(doc: dict, where: str) -> TrainConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(doc, _CELL_KEYS, where)
    schedule = _require(doc, "schedule", where)
    if not isinstance(schedule, dict):
        raise ConfigError(f"schedule in {where} must be an object")
    _reject_unknown(schedule, _SCHEDULE_KEYS, f"{where}.schedule")
    _require(schedule, "family", f"{where}.schedule")
    _require(schedule, "length", f"{where}.schedule")
    loss = _require(doc, "loss", where)
    if not isinstance(loss, dict):
        raise ConfigError(f"loss in {where} must be an object")
    _reject_unknown(loss, _LOSS_KEYS, f"{where}.loss")
    _require(loss, "kind", f"{where}.loss")
    for key in ("n_qubits", "l_b", "k_b", "seeds"):
        _require(doc, key, where)
    try:
        return config_from_dict(doc)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid value in {where}: {exc}") from exc


def _parse_run_config(doc: dict) -> tuple[TrainConfig, dict, str | None]:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(doc, _RUN_KEYS, "config")
    _check_schema_version(doc, "config")
    exports = doc.get("exports", {})
    if not isinstance(exports, dict):
        raise ConfigError("exports must be an object")
    _reject_unknown(exports, _EXPORT_KEYS, "config.exports")
    exports = {
        "bloch": bool(exports.get("bloch", True)),
        "curves": bool(exports.get("curves", True)),
        "channels": bool(exports.get("channels", False)),
    }
    output_dir = doc.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string")
    cell = {k: v for k, v in doc.items() if k in _CELL_KEYS}
    return _parse_cell(cell, "config"), exports, output_dir


def config_hash(cfg: TrainConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} is not valid JSON: {path}: {exc}")


def _ledger_row(cfg: TrainConfig, res: RunResult) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "qubits": cfg.n_qubits,
        "l_f": cfg.schedule.length,
        "k_f": cfg.schedule.n_ops,
        "l_b": cfg.l_b,
        "k_b": cfg.k_b,
        "strategy": res.strategy,
        "family": cfg.schedule.family,
        "lambda": repr(float(cfg.loss.lam)),
        "mean_fidelity": repr(float(res.mean_fidelity)),
        "std": repr(float(res.std_fidelity)),
        "n_seeds": len(cfg.seeds),
        "total_iters": sum(o.iters for o in res.outcomes),
        "wall_time": repr(float(res.wall_time)),
    }


def _append_ledger(path: Path, row: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow(row)


def _write_result(out_dir: Path, cfg: TrainConfig, res: RunResult, exports: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "result": result_to_dict(res, include_curves=exports["curves"]),
    }
    if not exports["bloch"]:
        for row in doc["result"]["seeds"]:
            row["bloch_forward"] = None
            row["bloch_backward"] = None
    with open(out_dir / "result.json", "w") as fh:
        json.dump(doc, fh)
    if exports["channels"]:
        for seed in cfg.seeds:
            chans = forward_channels_for_seed(cfg, seed)
            payload = {
                "schema_version": SCHEMA_VERSION,
                "channels": [channel_to_dict(ch) for ch in chans],
            }
            with open(out_dir / f"channels_seed{seed}.json", "w") as fh:
                json.dump(payload, fh)


def cmd_run(config_path: str) -> int:
    doc = _load_json(config_path, "config")
    cfg, exports, output_dir = _parse_run_config(doc)
    base = Path(output_dir) if output_dir else Path("ccmqd_runs")
    run_dir = base / config_hash(cfg)
    res = run_experiment(cfg)
    _write_result(run_dir, cfg, res, exports)
    _append_ledger(base / "ledger.csv", _ledger_row(cfg, res))
    for o in res.outcomes:
        if o.error is not None:
            print(f"seed {o.seed} failed: {o.error}", file=sys.stderr)
    print(
        f"{run_dir / 'result.json'}: strategy={res.strategy} "
        f"mean_fidelity={res.mean_fidelity:.6f} std={res.std_fidelity:.2e} "
        f"seeds_ok={res.n_ok}/{len(cfg.seeds)}"
    )
    return 2 if res.partial else 0


def _grid_cells(base: dict, grid: dict) -> list[dict]:
    """Cross product over the documented grid keys, in documented order."""
    _reject_unknown(grid, set(GRID_KEYS), "grid")
    active = [k for k in GRID_KEYS if k in grid]
    if not active:
        raise ConfigError("grid is empty")
    for key in active:
        if not isinstance(grid[key], list) or not grid[key]:
            raise ConfigError(f"grid.{key} must be a non-empty list")
    cells = [dict()]
    for key in active:
        cells = [dict(c, **{key: v}) for c in cells for v in grid[key]]
    out = []
    for assignment in cells:
        doc = json.loads(json.dumps(base))  # deep copy
        for key, value in assignment.items():
            if key == "qubits":
                doc["n_qubits"] = value
            elif key == "l_f":
                doc.setdefault("schedule", {})["length"] = value
            elif key == "k_f":
                doc.setdefault("schedule", {})["n_ops"] = value
            elif key == "l_b":
                doc["l_b"] = value
            elif key == "k_b":
                doc["k_b"] = value
            elif key == "lambda":
                doc.setdefault("loss", {})["lambda"] = value
            elif key == "family":
                doc.setdefault("schedule", {})["family"] = value
            elif key == "strategy":
                if value not in STRATEGY_TO_KIND:
                    raise ConfigError(
                        f"unknown strategy {value!r}; known: {sorted(STRATEGY_TO_KIND)}"
                    )
                doc.setdefault("loss", {})["kind"] = STRATEGY_TO_KIND[value]
        out.append(doc)
    return out


def resolve_sweep_path(path: str) -> str:
    """Shipped fixture names (table1..table5) resolve without a path."""
    if os.path.exists(path):
        return path
    candidate = resources.files("ccmqd.sweeps").joinpath(f"{path}.sweep")
    if candidate.is_file():
        return str(candidate)
    return path


def _parse_sweep(doc: dict) -> list[TrainConfig]:
    if not isinstance(doc, dict):
        raise ConfigError("sweep root must be an object")
    _reject_unknown(doc, _SWEEP_KEYS, "sweep")
    _check_schema_version(doc, "sweep")
    has_configs = "configs" in doc
    has_grid = "base" in doc or "grid" in doc
    if has_configs == has_grid:
        raise ConfigError("sweep needs either 'configs' or 'base'+'grid', not both")
    if has_configs:
        raw = doc["configs"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("configs must be a non-empty list")
        return [_parse_cell(c, f"configs[{i}]") for i, c in enumerate(raw)]
    base = _require(doc, "base", "sweep")
    grid = _require(doc, "grid", "sweep")
    if not isinstance(base, dict) or not isinstance(grid, dict):
        raise ConfigError("base and grid must be objects")
    return [
        _parse_cell(c, f"grid cell {i}") for i, c in enumerate(_grid_cells(base, grid))
    ]


def _run_cell(args: tuple[int, TrainConfig]):
    index, cfg = args
    try:
        return index, run_experiment(cfg), None
    except Exception as exc:  # noqa: BLE001 - cell failures become table rows
        return index, None, f"{type(exc).__name__}: {exc}"


def _report_row(cfg: TrainConfig, res: RunResult | None, error: str | None) -> dict:
    if res is None:
        status, mean, std, strategy = "failed", "", "", cfg.strategy
    else:
        status = "partial" if res.partial else "ok"
        mean, std = repr(float(res.mean_fidelity)), repr(float(res.std_fidelity))
        strategy = res.strategy
    row = {
        "qubits": cfg.n_qubits,
        "l_f": cfg.schedule.length,
        "k_f": cfg.schedule.n_ops,
        "l_b": cfg.l_b,
        "k_b": cfg.k_b,
        "strategy": strategy,
        "family": cfg.schedule.family,
        "lambda": repr(float(cfg.loss.lam)),
        "mean_fidelity": mean,
        "std": std,
        "n_seeds": len(cfg.seeds),
        "status": status,
    }
    if error:
        print(f"cell {config_hash(cfg)} failed: {error}", file=sys.stderr)
    return row


def cmd_sweep(sweep_path: str) -> int:
    path = resolve_sweep_path(sweep_path)
    doc = _load_json(path, "sweep")
    cells = _parse_sweep(doc)
    output_dir = doc.get("output_dir")
    base = Path(output_dir) if output_dir else Path("ccmqd_runs")
    base.mkdir(parents=True, exist_ok=True)

    workers = int(os.environ.get("CCMQD_THREADS", os.cpu_count() or 1))
    indexed = list(enumerate(cells))
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_cell, indexed))
    else:
        raw = [_run_cell(item) for item in indexed]
    raw.sort(key=lambda item: item[0])

    exports = {"bloch": True, "curves": True, "channels": False}
    any_bad = False
    rows = []
    for index, res, error in raw:
        cfg = cells[index]
        if res is not None:
            _write_result(base / config_hash(cfg), cfg, res, exports)
            _append_ledger(base / "ledger.csv", _ledger_row(cfg, res))
            any_bad = any_bad or res.partial
        else:
            any_bad = True
        rows.append(_report_row(cfg, res, error))
    report = base / "report.csv"
    with open(report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"{report}: {len(rows)} cells")
    return 2 if any_bad else 0


def cmd_verify(full: bool) -> int:
    from .verify import run_checks

    results = run_checks(full=full)
    all_ok = True
    for res in results:
        mark = "PASS" if res.passed else "FAIL"
        all_ok = all_ok and res.passed
        print(f"[{mark}] {res.name} ({res.elapsed:.1f}s): {res.detail}")
    print(f"verify {'passed' if all_ok else 'FAILED'} ({'full' if full else 'fast'} level)")
    return 0 if all_ok else 2


def _load_result(result_path: str) -> RunResult:
    doc = _load_json(result_path, "result")
    if not isinstance(doc, dict) or "result" not in doc:
        raise ConfigError(f"not a result file: {result_path}")
    _check_schema_version(doc, "result")
    try:
        return result_from_dict(doc["result"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed result file {result_path}: {exc}") from exc


def _write_bloch_csv(path: Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "x", "y", "z", "purity"])
        for step, row in enumerate(rows):
            writer.writerow([step] + [repr(float(v)) for v in row])


def cmd_export_bloch(result_path: str, out_prefix: str) -> int:
    res = _load_result(result_path)
    if res.config.dim != 2:
        raise ConfigError("bloch export needs a 1-qubit run")
    first = next((o for o in res.outcomes if o.error is None), None)
    if first is None or first.bloch_forward is None or first.bloch_backward is None:
        raise ConfigError("result holds no trajectory data (bloch export disabled?)")
    prefix = out_prefix[:-4] if out_prefix.endswith(".csv") else out_prefix
    forward = Path(f"{prefix}_forward.csv")
    backward = Path(f"{prefix}_backward.csv")
    _write_bloch_csv(forward, first.bloch_forward)
    _write_bloch_csv(backward, first.bloch_backward)
    print(f"{forward} and {backward}: seed {first.seed}")
    return 0


def cmd_export_curves(result_path: str, out_csv: str) -> int:
    res = _load_result(result_path)
    header = ["seed", "iter", "loss"] + [f"F_{t}" for t in range(res.config.l_b + 1)]
    any_curves = False
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for o in res.outcomes:
            if o.error is not None:
                continue
            if not o.loss_curve or not o.fidelity_curves:
                continue
            any_curves = True
            for i, (loss, row) in enumerate(zip(o.loss_curve, o.fidelity_curves), 1):
                writer.writerow(
                    [o.seed, i, repr(float(loss))] + [repr(float(f)) for f in row]
                )
    if not any_curves:
        Path(out_csv).unlink(missing_ok=True)
        raise ConfigError("result holds no training curves (curve export disabled?)")
    print(out_csv)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccmqd",
        description="Channel-constrained Markovian quantum diffusion experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config (JSON)")
    p_run.add_argument("config", help="path to an experiment config JSON file")

    p_sweep = sub.add_parser("sweep", help="run a sweep file or shipped fixture name")
    p_sweep.add_argument(
        "sweep",
        help="path to a sweep JSON file, or a shipped name (table1..table5)",
    )

    p_verify = sub.add_parser("verify", help="run the self-check suite")
    p_verify.add_argument(
        "--full", action="store_true", help="deep sweep (more random trials)"
    )

    p_bloch = sub.add_parser(
        "export-bloch", help="write forward/backward Bloch CSVs from a 1-qubit result"
    )
    p_bloch.add_argument("result", help="path to a result.json")
    p_bloch.add_argument(
        "out", help="output prefix; writes <out>_forward.csv and <out>_backward.csv"
    )

    p_curves = sub.add_parser(
        "export-curves", help="write per-seed training curves from a result"
    )
    p_curves.add_argument("result", help="path to a result.json")
    p_curves.add_argument("out", help="output CSV path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "sweep":
            return cmd_sweep(args.sweep)
        if args.command == "verify":
            return cmd_verify(args.full)
        if args.command == "export-bloch":
            return cmd_export_bloch(args.result, args.out)
        if args.command == "export-curves":
            return cmd_export_curves(args.result, args.out)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
