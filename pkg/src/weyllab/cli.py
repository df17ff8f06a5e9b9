"""Command line entry point: ``weyllab run <config>`` and ``weyllab validate <config>``.

Exit codes: 0 every verdict passed, 1 some verdict failed, 2 configuration
error, 3 numerical failure (factorization, eigensolver or refinement).

Per experiment ``run`` writes, atomically:

* ``<name>.csv`` with the fixed header ``hbar, n_count, scaled_count, volume,
  remainder, counting_method, truncation_ratio`` followed by one verdict
  column per check (``WeylConvergence, RelativeInequality, SandwichUpper,
  IMSSuite, RankLemma``; empty when the check was not requested);
* ``<name>.json``, the full report (sorted keys, indent 2);
* ``<name>.dat``, two columns ``hbar remainder`` for plotting;
* ``<name>_plot.py``, a small matplotlib script reading the ``.dat`` file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import harness
from .harness import CHECKS, ExperimentAborted, GridPolicy, SweepConfig
from .ims import GRADIENT_SAFETY
from .model import model_from_dict

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
CSV_HEADER = ["hbar", "n_count", "scaled_count", "volume", "remainder", "counting_method",
              "truncation_ratio", *CHECKS]


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentFile:
    schema_version: int
    experiments: tuple[SweepConfig, ...]
    output_dir: str | None
    seed: int


def load_schema(name: str) -> dict:
    text = resources.files("weyllab").joinpath("schema", name).read_text()
    return json.loads(text)


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "(root)"


def parse_config(data: dict, seed: int | None = None) -> ExperimentFile:
    """Validate against the schema, then build and check every experiment."""
    validator = jsonschema.Draft202012Validator(load_schema("experiments.schema.json"))
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_field_path(e)}: {e.message}" for e in errors))
    file_seed = int(data.get("seed", 0)) if seed is None else int(seed)
    names = [e["name"] for e in data["experiments"]]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"experiments.name: duplicate name(s) {dupes}")
    configs = []
    for i, exp in enumerate(data["experiments"]):
        where = f"experiments.{i}"
        try:
            model = model_from_dict(exp["model"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{where}.model: {exc}") from exc
        try:
            policy = GridPolicy(**exp.get("grid", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}.grid: {exc}") from exc
        cfg_seed = file_seed if seed is not None else int(exp.get("seed", file_seed))
        try:
            cfg = SweepConfig(name=exp["name"], model=model, lam=float(exp["lambda"]),
                              hbar_grid=tuple(exp["hbar_grid"]),
                              checks=tuple(exp.get("checks", ["WeylConvergence"])),
                              policy=policy, tolerance=float(exp.get("tolerance", 0.05)),
                              margin=float(exp.get("margin", 1.0)), epsilon=exp.get("epsilon"),
                              seed=cfg_seed,
                              rank_lemma_instances=int(exp.get("rank_lemma_instances", 0)))
        except ValueError as exc:
            raise ConfigError(f"{where}.{exc}") from exc
        configs.append(cfg)
    return ExperimentFile(1, tuple(configs), data.get("output_dir"), file_seed)


def read_config(path, seed: int | None = None) -> ExperimentFile:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data, seed)


def resolved_defaults(cfg: SweepConfig) -> dict:
    p = cfg.policy
    rule = (f"fixed spacing {p.spacing}" if p.spacing is not None else
            f"h = hbar / sqrt(lambda) / {p.resolution_factor}")
    return {"grid_rule": rule, "truncation_safety": p.safety_factor,
            "audit_threshold": p.audit_threshold, "max_refinements": p.max_refinements,
            "refine_ratio": p.refine_ratio,
            "sigma_shift": f"1e-9 * max(1, |lambda|) = {1e-9 * max(1.0, abs(cfg.lam)):.3g}",
            "c_policy": f"c = 2 * {GRADIENT_SAFETY} * max(sup|d phi|^2, sup|d psi|^2) "
                        "from the constructed partition",
            "seed": cfg.seed}


# -- report emission ----------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_plain(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report["rows"]:
        ratio = r["truncation_ratio"]
        w.writerow([repr(r["hbar"]), r["n_count"], repr(r["scaled_count"]), repr(r["volume"]),
                    repr(r["remainder"]), r["counting_method"],
                    "" if ratio is None else repr(ratio),
                    *[r.get("verdicts", {}).get(c, "") for c in CHECKS]])
    return buf.getvalue()


def report_dat(report: dict) -> str:
    lines = ["# hbar remainder"]
    lines += [f"{r['hbar']!r} {r['remainder']!r}" for r in report["rows"]]
    return "\n".join(lines) + "\n"


PLOT_STUB = '''"""Remainder against hbar for {name}."""
import matplotlib.pyplot as plt
import numpy as np

hbar, rem = np.loadtxt("{name}.dat", unpack=True, ndmin=2)
plt.loglog(hbar, np.abs(rem), "o-")
plt.xlabel("hbar")
plt.ylabel("|remainder|")
plt.title("{name}")
plt.savefig("{name}_remainder.png", dpi=150)
'''


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(report: dict, out: Path) -> None:
    name = report["name"]
    write_atomic(out / f"{name}.json", report_json(report))
    write_atomic(out / f"{name}.csv", report_csv(report))
    write_atomic(out / f"{name}.dat", report_dat(report))
    write_atomic(out / f"{name}_plot.py", PLOT_STUB.format(name=name))


# -- commands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        ef = read_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("OK")
    for cfg in ef.experiments:
        print(json.dumps({"name": cfg.name, "checks": list(cfg.checks),
                          "defaults": resolved_defaults(cfg)}, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        ef = read_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or ef.output_dir or ".")
    code = EXIT_OK
    for cfg in ef.experiments:
        dump = None
        if args.dump_matrix:
            dump = out / "matrices"
            dump.mkdir(parents=True, exist_ok=True)
        try:
            report = harness.run_experiment(cfg, jobs=args.jobs, strict=args.strict,
                                            dump_dir=dump)
        except ExperimentAborted as exc:
            emit(exc.report, out)
            print(f"{cfg.name}: numerical failure: {exc}", file=sys.stderr)
            diag = exc.report.get("error", {}).get("diagnostics")
            if diag:
                print(json.dumps(_plain(diag), sort_keys=True), file=sys.stderr)
            return EXIT_NUMERICAL
        except ValueError as exc:
            print(f"{cfg.name}: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        emit(report, out)
        status = harness.overall_status(report)
        summary = ", ".join(f"{k}={v['status']}" for k, v in sorted(report["verdicts"].items()))
        print(f"{cfg.name}: {status} ({summary or 'no checks'})", file=sys.stderr)
        if status == "FAIL":
            code = EXIT_FAIL
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weyllab",
                                description="Semiclassical eigenvalue-counting experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every experiment in a config file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: config output_dir or .)")
    run.add_argument("--seed", type=int, help="override every experiment seed")
    run.add_argument("--jobs", type=int, default=1, help="parallel sweep rows")
    run.add_argument("--dump-matrix", action="store_true",
                     help="write each assembled operator as 'row col value' text")
    run.add_argument("--strict", action="store_true",
                     help="treat vacuous-regime rows as failures")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a config file without computing")
    val.add_argument("config")
    val.add_argument("--seed", type=int)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
