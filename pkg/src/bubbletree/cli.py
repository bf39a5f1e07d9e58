"""Command line entry point ``bubbletree``.

Every subcommand prints (or writes) one JSON report with ``meta``,
optional result blocks and a ``checks`` list. Exit codes: 0 when every
check passes, 1 when a check fails, 2 for bad input, 3 for solver errors.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bubble_tree import decompose_family, quantization_from_dict, validate_tree, verify_quantization
from .concentration import energy_radii, fibonacci_points
from .config import Config, load_config
from .conformal_analysis import branch_estimates, detect_branch_points
from .cut_fill import cut_and_fill
from .errors import BubbleTreeError, InputError
from .geom_core import energies, read_imm, write_imm, write_obj
from .scenarios import SCENARIOS, ScenarioSpec, generate_scenario, member

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3

DN2_FLOOR = 0.98 * 8 * math.pi
GAUSS_BONNET_TOL = 0.05
BRANCH_ALLOWANCE = 0.05
QUANT_AREA_TOL = 0.02
QUANT_HAUSDORFF_TOL = 0.05


# ------------------------------------------------------------------ JSON

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(obj, out: list):
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append(("," if i else "") + json.dumps(k) + ":")
            _emit(v, out)
        out.append("}")
    elif isinstance(obj, list):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    elif isinstance(obj, float):
        out.append(format(obj, ".17g") if math.isfinite(obj) else "null")
    else:
        out.append(json.dumps(obj))


def dumps(report: dict) -> str:
    """Deterministic JSON: floats with 17 significant digits, non-finite
    values as null, keys in insertion order."""
    out: list[str] = []
    _emit(_plain(report), out)
    return "".join(out) + "\n"


# --------------------------------------------------------------- reports

def check(name: str, value, threshold, passed: bool) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "pass": bool(passed)}


def _meta(cfg: Config, command: str) -> dict:
    return {"version": __version__, "command": command, "config": cfg.to_dict()}


def _energy_block(Phi) -> dict:
    rep = energies(Phi)
    out = rep.to_dict()
    out["Dn2"] = 2.0 * rep.F
    out["epsilon"] = rep.epsilon
    return out


def _closed_checks(Phi) -> list:
    dn2 = 2.0 * energies(Phi).F
    return [check("dn2_floor", dn2, DN2_FLOOR, dn2 >= DN2_FLOOR)]


def _analysis(Phi) -> tuple[dict, list]:
    branches = Phi.branch_points or tuple(detect_branch_points(Phi))
    est = branch_estimates(Phi, branches)
    seeds = fibonacci_points()
    radii = energy_radii(Phi, seeds)
    k = int(np.argmin(radii))
    block = {
        "energies": _energy_block(Phi),
        "branches": [{"location": b.location, "order": b.order} for b in branches],
        "estimates": est,
        "concentration": {"min_energy_radius": float(radii[k]), "at": seeds[k]},
    }
    slack = est["rhs"] - est["lhs"]
    checks = _closed_checks(Phi) + [
        check("gauss_bonnet", abs(est["gauss_bonnet_check"]), GAUSS_BONNET_TOL,
              abs(est["gauss_bonnet_check"]) < GAUSS_BONNET_TOL),
        check("branch_bound_slack", slack, -BRANCH_ALLOWANCE * max(1.0, abs(est["rhs"])),
              slack >= -BRANCH_ALLOWANCE * max(1.0, abs(est["rhs"]))),
    ]
    return block, checks


def _spec(name: str, cfg: Config, schedule=None, degree: int = 2) -> ScenarioSpec:
    if name not in SCENARIOS:
        raise InputError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return ScenarioSpec(name, level=cfg.level, schedule=tuple(schedule or ()), degree=degree)


def run_report(command: str, inputs: dict, cfg: Config | None = None) -> tuple[dict, int]:
    """Run one pipeline and return (report, exit code)."""
    cfg = cfg or Config()
    report = {"meta": _meta(cfg, command)}
    checks: list = []
    if command == "scenario":
        spec = _spec(inputs["name"], cfg, degree=inputs.get("d") or 2)
        t = inputs.get("t")
        param = spec.schedule[-1] if t is None else float(t)
        if t is not None:
            spec = ScenarioSpec(spec.name, spec.level, (param,), spec.degree)
        Phi = member(spec, param)
        report["scenario"] = {"name": spec.name, "param": param, "level": spec.level}
        report["energies"] = _energy_block(Phi)
        checks += _closed_checks(Phi)
        out = inputs.get("out")
        if out:
            (write_obj if str(out).endswith(".obj") else write_imm)(Phi, out)
    elif command == "analyze":
        Phi = read_imm(inputs["input"])
        block, checks = _analysis(Phi)
        report.update(block)
    elif command == "decompose":
        spec = _spec(inputs["scenario"], cfg, inputs.get("schedule"))
        F = generate_scenario(spec)
        T = decompose_family(F, cfg.tree_config())
        T.quantization = verify_quantization(F, T)
        valid = validate_tree(T)
        q = T.quantization
        report["scenario"] = {"name": spec.name, "schedule": list(spec.schedule),
                              "level": spec.level}
        report["tree"] = T.to_dict()
        report["tree"].pop("quantization", None)
        report["quantization"] = q
        checks += [
            check("tree_valid", valid["valid"], True, valid["valid"]),
            check("area_additivity", q["area_rel_err"], QUANT_AREA_TOL,
                  q["area_rel_err"] <= QUANT_AREA_TOL),
            check("degree_additivity", q["degree_sum_err"], 0, q["degree_sum_err"] == 0),
            check("image_hausdorff", q["hausdorff"], QUANT_HAUSDORFF_TOL,
                  q["hausdorff"] <= QUANT_HAUSDORFF_TOL),
        ]
        obj = inputs.get("obj")
        if obj and T.f is not None:
            write_obj(T.f, obj)
    elif command == "verify":
        data = _read_json(inputs["report"])
        if "tree" not in data:
            raise InputError("report has no tree block")
        tree = dict(data["tree"])
        tree["quantization"] = data.get("quantization")
        tol = float(inputs["tol"])
        q = quantization_from_dict(tree, tuple(inputs.get("drop") or ()))
        report["quantization"] = q
        checks += [
            check("area_additivity", q["area_rel_err"], tol, q["area_rel_err"] <= tol),
            check("degree_additivity", q.get("degree_sum_err"), 0, q.get("degree_sum_err") == 0),
        ]
    elif command == "cutfill":
        Phi = read_imm(inputs["input"])
        center = np.asarray(inputs["center"], dtype=float)
        if center.shape != (3,) or not np.linalg.norm(center) > 0:
            raise InputError("center must be a nonzero x,y,z triple")
        res = cut_and_fill(Phi, center, float(inputs["outer"]), float(inputs["inner"]),
                           eta=None if inputs.get("skip_eta") else cfg.eta,
                           sigma_max=cfg.sigma_max)
        report["cutfill"] = res.report()
        report["energies"] = _energy_block(res.xi)
        outside = res.exterior_faces()
        before, after = energies(Phi, outside), energies(res.xi, outside)
        same = (before.A, before.W, before.F) == (after.A, after.W, after.F)
        checks += [
            check("sigma_contracting", res.sigma_sup, cfg.sigma_max, res.sigma_sup <= cfg.sigma_max),
            check("exterior_unchanged", same, True, same),
        ]
        out = inputs.get("out")
        if out:
            (write_obj if str(out).endswith(".obj") else write_imm)(res.xi, out)
    else:
        raise InputError(f"unknown command {command!r}")
    report["checks"] = checks
    return report, EXIT_OK if all(c["pass"] for c in checks) else EXIT_CHECK


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read report {path}: {exc}") from None


# ------------------------------------------------------------------- click

def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"expected comma separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise InputError(f"expected {n} comma separated numbers, got {text!r}")
    return vals


def _finish(ctx, command: str, inputs: dict, report_path=None):
    cfg = ctx.obj
    try:
        report, code = run_report(command, inputs, cfg)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    except BubbleTreeError as exc:
        click.echo(f"solver error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    text = dumps(report)
    if report_path:
        Path(report_path).write_text(text)
    else:
        click.echo(text, nl=False)
    sys.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="flat key = value file")
@click.option("--eta", type=float, default=None)
@click.option("--sigma-max", type=float, default=None)
@click.option("--d-min", type=float, default=None)
@click.option("--quantum-margin", type=float, default=None)
@click.option("--level", type=int, default=None, help="icosphere subdivision level")
@click.option("--cauchy-tol", type=float, default=None)
@click.version_option(__version__)
@click.pass_context
def main(ctx, config_path, **overrides):
    """Bubble-tree analysis of degenerating conformal immersions."""
    try:
        ctx.obj = load_config(config_path).updated(**overrides)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)


@main.command()
@click.argument("name")
@click.option("--t", "t", type=float, default=None, help="scenario parameter")
@click.option("--d", "d", type=int, default=None, help="cover degree")
@click.option("--subdiv", type=int, default=None, help="subdivision level")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help=".imm or .obj")
@click.option("--report", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def scenario(ctx, name, t, d, subdiv, out, report):
    """Generate one scenario member."""
    if subdiv is not None:
        ctx.obj = ctx.obj.updated(level=subdiv)
    _finish(ctx, "scenario", {"name": name, "t": t, "d": d, "out": out}, report)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def analyze(ctx, input_path, report):
    """Energies, branch points and estimates of one immersion."""
    _finish(ctx, "analyze", {"input": input_path}, report)


@main.command()
@click.option("--scenario", "name", required=True)
@click.option("--schedule", default=None, help="comma separated parameters")
@click.option("--report", type=click.Path(dir_okay=False), default=None)
@click.option("--obj", type=click.Path(dir_okay=False), default=None,
              help="write the assembled limit map")
@click.pass_context
def decompose(ctx, name, schedule, report, obj):
    """Bubble-tree decomposition of a scenario family."""
    try:
        sched = _floats(schedule) if schedule else None
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    _finish(ctx, "decompose", {"scenario": name, "schedule": sched, "obj": obj}, report)


@main.command()
@click.option("--report", "report_in", required=True, type=click.Path(dir_okay=False))
@click.option("--tol", type=float, default=QUANT_AREA_TOL, show_default=True)
@click.option("--drop", multiple=True, help="node id to leave out (negative control)")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def verify(ctx, report_in, tol, drop, out):
    """Recheck the quantization identities of a decompose report."""
    _finish(ctx, "verify", {"report": report_in, "tol": tol, "drop": list(drop)}, out)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False))
@click.option("--center", required=True, help="x,y,z")
@click.option("--outer", type=float, required=True)
@click.option("--inner", type=float, required=True)
@click.option("--skip-eta", is_flag=True, help="do not require annulus content below eta")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help=".imm or .obj")
@click.option("--report", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cutfill(ctx, input_path, center, outer, inner, skip_eta, out, report):
    """Cut a neck ball and fill it with a conformal cap."""
    try:
        c = _floats(center, 3)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    _finish(ctx, "cutfill", {"input": input_path, "center": c, "outer": outer,
                             "inner": inner, "skip_eta": skip_eta, "out": out}, report)


if __name__ == "__main__":
    main()
