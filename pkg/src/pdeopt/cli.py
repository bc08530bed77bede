"""Config-driven command line: run demos, gradient checks, and figure reports.

Verbs: `run <cfg>`, `gradient-check <cfg>`, `list`, `report <dir-or-csv>`.
Configs are a flat TOML subset with [section] headers; PDEOPT_OUTPUT_DIR
overrides the configured output directory.  Exit codes: 0 success, 1 config
error (naming the offending key), 2 solver nonconvergence or failed check.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import problems
from .mesh import write_vtk

SECTION_KEYS = {
    "optimizer": {"algorithm", "rtol", "atol", "max_iter", "lbfgs_memory"},
    "linesearch": {"method", "c1", "shrink", "alpha0", "max_trials"},
    "output": {"directory", "vtk"},
    "gradient_check": {"corrupt", "seed"},
}

PROBLEM_KEYS = {
    "poisson_control": {"resolution", "alpha"},
    "shape_poisson": {"rings", "inner_product", "p", "eps", "mu", "lam",
                      "fixed_markers", "quality_threshold", "fields", "max_iter",
                      "alpha0"},
    "topopt_source": {"resolution", "f_inside", "f_outside", "kappa_init",
                      "kappa_min", "theta_tol_deg", "max_iter", "algorithm", "memory"},
    "constrained_control": {"resolution", "alpha", "volume_target", "constraint_kind",
                            "outer_method", "mu0", "growth", "tol_feas", "progress_ratio",
                            "max_outer"},
    "spacemapping_flow": {"resolution", "tol", "max_iter"},
    "spacemapping_semilinear": {"fine_resolution", "coarse_resolution", "sigma",
                                "reference_design", "tol", "max_iter"},
}


class ConfigError(Exception):
    pass


def load_config(path: str) -> dict:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(cfg_path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"cannot parse config {path}: {err}") from err

    if "problem" not in raw or "name" not in raw.get("problem", {}):
        raise ConfigError("config needs a [problem] section with a 'name' key")
    name = raw["problem"]["name"]
    if name not in problems.REGISTRY:
        valid = ", ".join(sorted(problems.REGISTRY))
        raise ConfigError(f"unknown problem name {name!r}; valid names: {valid}")

    for section, table in raw.items():
        if section == "problem":
            allowed = PROBLEM_KEYS[name] | {"name"}
        elif section in SECTION_KEYS:
            allowed = SECTION_KEYS[section]
        else:
            raise ConfigError(f"unknown config section [{section}]")
        for key in table:
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    params = {}
    for section in ("problem", "optimizer", "linesearch"):
        params.update(raw.get(section, {}))
    params.pop("name")
    output = dict(raw.get("output", {}))
    check = dict(raw.get("gradient_check", {}))
    return {"name": name, "params": params, "output": output, "gradient_check": check}


def output_directory(config: dict) -> Path:
    env = os.environ.get("PDEOPT_OUTPUT_DIR")
    if env:
        return Path(env)
    return Path(config["output"].get("directory", f"pdeopt_runs/{config['name']}"))


def _format_cell(value) -> str:
    if isinstance(value, (int,)) or (hasattr(value, "dtype") and getattr(value, "dtype").kind in "iu"):
        return str(int(value))
    return repr(float(value))


def write_history(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_run(config_path: str) -> int:
    try:
        config = load_config(config_path)
        demo = problems.REGISTRY[config["name"]](config["params"])
    except (ConfigError, ValueError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    out_dir = output_directory(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    vtk_dir = str(out_dir) if config["output"].get("vtk", False) else None
    result = demo.run(vtk_dir=vtk_dir)

    write_history(out_dir / "history.csv", result.header, result.rows)
    if vtk_dir is not None:
        for name, (mesh, data) in result.final_fields.items():
            write_vtk(mesh, out_dir / f"{name}.vtk", data)
    print(result.summary)
    print(f"history written to {out_dir / 'history.csv'}")
    return 0 if result.converged else 2


def cmd_gradient_check(config_path: str) -> int:
    try:
        config = load_config(config_path)
        if config["name"] not in problems.GRADIENT_CHECK_PROBLEMS:
            supported = ", ".join(problems.GRADIENT_CHECK_PROBLEMS)
            raise ConfigError(
                f"gradient-check is not available for {config['name']!r}; "
                f"supported problems: {supported}")
        demo = problems.REGISTRY[config["name"]](config["params"])
    except (ConfigError, ValueError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    corrupt = bool(config["gradient_check"].get("corrupt", False))
    seed = int(config["gradient_check"].get("seed", 0))
    lines, best = demo.gradient_check(corrupt=corrupt, seed=seed)
    print(f"gradient check for {config['name']} (corrupt={corrupt}):")
    for line in lines:
        print(line)
    passed = best <= 1e-5
    print(f"best relative error: {best:.3e} -> {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 2


def cmd_list() -> int:
    print("available problems:")
    for name in sorted(problems.REGISTRY):
        marker = " (gradient-check)" if name in problems.GRADIENT_CHECK_PROBLEMS else ""
        print(f"  {name}{marker}")
    return 0


def cmd_report(target: str) -> int:
    from . import report

    path = Path(target)
    try:
        figures = report.render(path)
    except FileNotFoundError as err:
        print(f"report error: {err}", file=sys.stderr)
        return 1
    for fig in figures:
        print(f"figure written to {fig}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pdeopt",
                                     description="Adjoint-based PDE-constrained optimization demos")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a demo problem from a config file")
    p_run.add_argument("config")
    p_check = sub.add_parser("gradient-check", help="FD-vs-adjoint derivative check")
    p_check.add_argument("config")
    sub.add_parser("list", help="list available problems")
    p_rep = sub.add_parser("report", help="render figures from a run directory")
    p_rep.add_argument("target", help="run directory or history.csv path")

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "gradient-check":
        return cmd_gradient_check(args.config)
    if args.command == "report":
        return cmd_report(args.target)
    return cmd_list()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
