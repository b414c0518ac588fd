"""Command-line front end: run scenario files and built-in scenarios.

    folideform run <config.yaml|builtin> [--tol X] [--bandwidth B] [--out DIR] [--format json|csv]
    folideform list-builtins
    folideform describe <builtin>

Exit codes: 0 success, 2 invalid configuration, 3 an analysis raised (the
report holds every analysis finished before it).
"""

from __future__ import annotations

import os

_THREADS = os.environ.get("FOLIDEFORM_THREADS")
if _THREADS:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import csv  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from dataclasses import dataclass  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import yaml  # noqa: E402

from . import __version__  # noqa: E402
from .config import (ConfigError, ScenarioConfig, integer, load_path, number, parse_field,  # noqa: E402
                     parse_form, validate)
from .dgla import DefiningCouple, bracket, c_class, frobenius_checks  # noqa: E402
from .forms import ComplexStructure, TrigForm  # noqa: E402
from .hodge import (LeafSpec, OperatorContext, assemble, cohomology_dims, harmonic_part,  # noqa: E402
                    laplace_spectrum, restricted_operator_norm, z_subspace)
from .levi import (ComplexTorusAmbient, DefiningFunction, GraphFunction, deformation_derivative_check,  # noqa: E402
                   gamma_wedge_omega, leaf_structure, leafwise_kernel, levi_couple, levi_flat_check,
                   rigidity_certificate, uniqueness_kernel_test)
from .maurer_cartan import (formal_mc_extend, gauge_derivative_check, mc_residual,  # noqa: E402
                            tangent_cone_test_product)
from .scenarios import BUILTINS, builtin_config  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_ANALYSIS = 0, 2, 3


# JSON helpers --------------------------------------------------------------------

def to_plain(obj):
    """Convert results to JSON-safe data without rounding."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": to_plain(float(obj.real)), "im": to_plain(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, TrigForm):
        return obj.to_json()
    return obj


def dumps(report: dict) -> str:
    return json.dumps(to_plain(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def constant_coefficients(a: TrigForm, tol: float = 1e-14) -> list:
    """Nonzero frequency-zero coefficients as [{I, re, im, abs}]."""
    out = []
    for (k, I), v in sorted(a.terms.items()):
        if any(k) or abs(v) <= tol:
            continue
        out.append({"I": list(I), "re": v.real, "im": v.imag, "abs": abs(v)})
    return out


# scenario preparation ------------------------------------------------------------

@dataclass
class Context:
    cfg: ScenarioConfig
    domain: object
    couple: DefiningCouple | None
    r: DefiningFunction | None

    @property
    def tol(self) -> float:
        return self.cfg.tolerances["tol"]


def build_context(cfg: ScenarioConfig) -> Context:
    r = None
    couple = None
    try:
        if cfg.levi_spec is not None:
            spec = cfg.levi_spec
            G = None if cfg.levi_spec["metric"] is None else np.array(spec["metric"], dtype=float).reshape(
                2 * spec["m"], 2 * spec["m"])
            r = DefiningFunction(ComplexTorusAmbient(spec["m"], G), spec["axis"], spec["scale"])
            couple = levi_couple(r)
        elif cfg.couple_spec is not None:
            gamma = parse_form(cfg.couple_spec["gamma"], cfg.domain, "couple.gamma")
            X = parse_field(cfg.couple_spec["X"], cfg.domain, "couple.X")
            couple = DefiningCouple(gamma, X)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"couple: {exc}") from None
    return Context(cfg, cfg.domain, couple, r)


def _whole_leaf(domain) -> LeafSpec:
    J = ComplexStructure.standard(domain).matrix if domain.dim % 2 == 0 else None
    return LeafSpec(domain, tuple(range(domain.dim)), (), J=J)


def _bandwidth(params: dict, ctx: Context, default: int, what: str) -> int:
    B = params.get("B", ctx.cfg.bandwidth if ctx.cfg.bandwidth is not None else default)
    B = integer(B, f"{what}.B")
    if B < 0:
        raise ConfigError(f"{what}: B must be nonnegative")
    return B


def prepare(name: str, params: dict, ctx: Context, j: int):
    """Parse a directive's inputs and return a zero-argument runner."""
    what = f"analyses[{j}] ({name})"
    D = ctx.domain
    c = ctx.couple
    tol = ctx.tol
    if name == "frobenius":
        return lambda: run_frobenius(c, tol)
    if name == "mc-residual":
        a = parse_form(params["a"], D, f"{what}.a")
        ts = [number(t, f"{what}.t") for t in params.get("t", [1.0])]
        return lambda: run_mc_residual(a, ts, c, tol)
    if name == "formal-extend":
        beta = parse_form(params["beta"], D, f"{what}.beta")
        order = integer(params.get("order", 2), f"{what}.order")
        if order < 1:
            raise ConfigError(f"{what}: order must be at least 1")
        return lambda: run_formal_extend(beta, order, c, tol)
    if name == "cohomology":
        B = _bandwidth(params, ctx, 3, what)
        degrees = [integer(p, f"{what}.degrees") for p in params.get("degrees", [0, 1])]
        if any(not 0 <= p < D.dim for p in degrees):
            raise ConfigError(f"{what}: degrees must lie in 0..{D.dim - 1}")
        if c is not None and c.coefficient_bandwidth() > 0:
            raise ConfigError(f"{what}: cohomology needs a constant couple")
        thr = ctx.cfg.tolerances["rank"]
        return lambda: run_cohomology(D, c, degrees, B, thr)
    if name == "tangent-cone":
        beta = parse_form(params["beta"], D, f"{what}.beta")
        basis = [parse_form(f, D, f"{what}.basis[{i}]") for i, f in enumerate(params["basis"])]
        return lambda: tangent_cone_test_product(beta, basis, c, tol).to_json()
    if name == "levi-scan":
        graphs = [parse_form(g, D, f"{what}.graphs[{i}]") for i, g in enumerate(params["graphs"])]
        ltol = ctx.cfg.tolerances["levi"]
        return lambda: run_levi_scan(graphs, ctx.r, ltol)
    if name == "deformation-derivative":
        p = parse_form(params["p"], D, f"{what}.p")
        mode = params.get("mode", "levi")
        if mode not in ("levi", "formal"):
            raise ConfigError(f"{what}: mode must be levi or formal")
        steps = [number(t, f"{what}.t_steps") for t in params.get("t_steps", [1e-2, 5e-3, 2.5e-3])]
        ltol = ctx.cfg.tolerances["levi"]
        return lambda: deformation_derivative_check(p, ctx.r, steps, mode, ltol).to_json()
    if name == "leaf-kernel":
        B = _bandwidth(params, ctx, 4, what)
        thr = ctx.cfg.tolerances["rank"]
        return lambda: leafwise_kernel(ctx.r, B, thr).to_json()
    if name == "rigidity":
        samples = integer(params.get("samples", 17), f"{what}.samples")
        if samples < 1:
            raise ConfigError(f"{what}: samples must be positive")
        if ctx.r is not None:
            leafJ = leaf_structure(ctx.r, c)
            axes, J, t = leafJ.leaf_axes, leafJ.leaf_J, leafJ.transverse_axis
        else:
            if "leaf_axes" not in params or "J" not in params:
                raise ConfigError(f"{what}: needs leaf_axes and J outside Levi scenarios")
            axes = [integer(i, f"{what}.leaf_axes") for i in params["leaf_axes"]]
            J = np.array([[number(v, f"{what}.J") for v in row] for row in params["J"]])
            t = None
        return lambda: rigidity_certificate(c, axes, J, t, samples, tol=tol).to_json()
    if name == "gamma-wedge-omega":
        return lambda: {"integral": gamma_wedge_omega(ctx.r, tol)}
    if name == "c-class":
        B = params.get("B", ctx.cfg.bandwidth)
        B = None if B is None else integer(B, f"{what}.B")
        return lambda: c_class(c, B, tol).to_json()
    if name == "gauge-derivative":
        Y = parse_field(params["Y"], D, f"{what}.Y")
        return lambda: gauge_derivative_check(Y, c).to_json()
    if name == "uniqueness":
        if D.dim % 2:
            raise ConfigError(f"{what}: the leaf domain must have even dimension")
        beta = parse_form(params["beta"], D, f"{what}.beta")
        B = _bandwidth(params, ctx, 6, what)
        if beta.bw > B:
            raise ConfigError(f"{what}: B = {B} is below the bandwidth of beta ({beta.bw})")
        samples = integer(params.get("samples", 100), f"{what}.samples")
        seed = integer(params.get("seed", 0), f"{what}.seed")
        return lambda: uniqueness_kernel_test(_whole_leaf(D), beta, B, samples, seed).to_json()
    if name == "spectrum":
        count = integer(params.get("count", 5), f"{what}.count")
        constraint = params.get("constraint", "all")
        if constraint not in ("all", "zero_mean", "B_F"):
            raise ConfigError(f"{what}: unknown constraint {constraint!r}")
        if count < 1:
            raise ConfigError(f"{what}: count must be positive")
        b_F = None
        if constraint == "B_F":
            if "b_F" not in params or D.dim % 2:
                raise ConfigError(f"{what}: B_F constraint needs b_F on an even-dimensional leaf")
            b_F = parse_form(params["b_F"], D, f"{what}.b_F")
        return lambda: laplace_spectrum(_whole_leaf(D), count, constraint, b_F)
    raise ConfigError(f"{what}: unknown directive")


# analyses -----------------------------------------------------------------------

def run_frobenius(c: DefiningCouple, tol: float) -> dict:
    rep = frobenius_checks(c, tol)
    out = rep.to_json()
    out["verdict"] = "integrable" if rep.integrable else "not integrable"
    if c.domain.dim == 3:
        out["dgamma_wedge_gamma_coefficient"] = rep.forms["dgamma_wedge_gamma"].coefficient((0, 0, 0), (0, 1, 2))
    return out


def run_mc_residual(a: TrigForm, ts: list, c: DefiningCouple, tol: float) -> dict:
    rows = []
    for t in ts:
        _, norm = mc_residual(a * t, c, tol)
        rows.append({"t": t, "residual_norm": norm, "solves": norm <= tol})
    return {"residuals": rows, "all_solve": all(r["solves"] for r in rows), "tol": tol}


def run_formal_extend(beta: TrigForm, order: int, c: DefiningCouple, tol: float) -> dict:
    series = formal_mc_extend(beta, order, c, tol)
    out = series.to_json()
    bb = harmonic_part(bracket(beta, beta, c.X))
    out["bracket_harmonic_part"] = {"form": bb.to_json(), "constant_coefficients": constant_coefficients(bb)}
    if series.obstruction is not None:
        w = harmonic_part(series.obstruction["witness"])
        out["obstruction"]["harmonic_witness"] = {"form": w.to_json(),
                                                  "constant_coefficients": constant_coefficients(w)}
    out["obstructed"] = series.obstruction is not None
    return out


def run_cohomology(D, c: DefiningCouple | None, degrees: list, B: int, threshold: float) -> dict:
    out = {"complex": "(Z*, delta)" if c is not None else "(forms, d)", "bandwidth": B, "degrees": {}}
    opname = "δ" if c is not None else "d"
    ctx = OperatorContext(couple=c, domain=D)
    for p in degrees:
        op_out = assemble(opname, p, B, ctx)
        op_in = assemble(opname, p - 1, B, ctx) if p > 0 else None
        sub_mid = z_subspace(c, p, B) if c is not None else None
        sub_in = z_subspace(c, p - 1, B) if (c is not None and p > 0) else None
        dims = cohomology_dims(op_in, op_out, threshold, sub_in, sub_mid)
        entry = dims.to_json()
        if op_in is not None:
            entry["square_norm"] = restricted_operator_norm(op_out.compose(op_in), sub_in)
        out["degrees"][str(p)] = entry
    return out


def run_levi_scan(graphs: list, r: DefiningFunction, tol: float) -> dict:
    rows = []
    for g in graphs:
        v = levi_flat_check(GraphFunction(g), r, tol)
        rows.append({"graph": g.to_json(), **v.to_json()})
    return {"graphs": rows, "tol": tol}


# report assembly ------------------------------------------------------------------

def _result_json(result):
    return result.to_json() if hasattr(result, "to_json") else result


def execute(cfg: ScenarioConfig) -> tuple[dict, int, list]:
    """Run every analysis; returns (report, exit code, raw results)."""
    ctx = build_context(cfg)
    runners = [(name, params, prepare(name, params, ctx, j)) for j, (name, params) in enumerate(cfg.analyses)]
    report = {
        "scenario": cfg.name,
        "config_sha256": cfg.config_hash,
        "tolerances": dict(sorted(cfg.tolerances.items())),
        "bandwidth": cfg.bandwidth,
        "version": __version__,
        "status": "ok",
        "analyses": [],
    }
    raw = []
    code = EXIT_OK
    for j, (name, params, runner) in enumerate(runners):
        entry = {"index": j, "directive": name, "parameters": params}
        try:
            result = runner()
        except Exception as exc:  # analysis failures are reported, not raised
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            report["analyses"].append(entry)
            report["status"] = "analysis failure"
            code = EXIT_ANALYSIS
            break
        raw.append((j, name, result))
        entry.update(status="ok", result=_result_json(result))
        report["analyses"].append(entry)
    return report, code, raw


def _flatten(prefix: str, obj, rows: list):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], rows)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, obj))


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["analysis", "directive", "key", "value"])
    plain = to_plain(report)
    for key in ("scenario", "config_sha256", "status", "bandwidth", "version"):
        w.writerow(["", "", key, plain[key]])
    for k, v in plain["tolerances"].items():
        w.writerow(["", "", f"tolerances.{k}", repr(v)])
    for entry in plain["analyses"]:
        rows = []
        _flatten("", entry.get("result", {"error": entry.get("error")}), rows)
        for key, v in rows:
            w.writerow([entry["index"], entry["directive"], key, repr(v) if isinstance(v, float) else v])
    return buf.getvalue()


def write_outputs(report: dict, raw: list, out_dir: Path, fmt: str) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report["scenario"]
    paths = []
    if fmt == "json":
        p = out_dir / f"{stem}.report.json"
        p.write_text(dumps(report))
        paths.append(p)
    else:
        p = out_dir / f"{stem}.report.csv"
        p.write_text(report_csv(report))
        paths.append(p)
        for j, name, result in raw:
            if hasattr(result, "to_csv"):
                q = out_dir / f"{stem}.{j}-{name}.csv"
                q.write_text(result.to_csv())
                paths.append(q)
    return paths


# commands -------------------------------------------------------------------------

def load_scenario(target: str, tol=None, bandwidth=None) -> ScenarioConfig:
    path = Path(target)
    if path.is_file():
        return validate(load_path(path), str(path), tol, bandwidth)
    if target in BUILTINS:
        return validate(builtin_config(target), target, tol, bandwidth)
    raise ConfigError(f"{target}: no such file or built-in scenario")


def cmd_run(args) -> int:
    try:
        cfg = load_scenario(args.config, args.tol, args.bandwidth)
        report, code, raw = execute(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in write_outputs(report, raw, Path(args.out), args.format):
        print(p)
    for entry in report["analyses"]:
        line = f"  [{entry['index']}] {entry['directive']}: {entry['status']}"
        if entry["status"] != "ok":
            line += f" ({entry['error']})"
        print(line)
    if code != EXIT_OK:
        print(f"error: analysis failure in scenario {cfg.name}", file=sys.stderr)
    return code


def cmd_list(_args) -> int:
    width = max(len(n) for n in BUILTINS)
    for name, cfg in BUILTINS.items():
        print(f"{name.ljust(width)}  {cfg['description']}")
    return EXIT_OK


def cmd_describe(args) -> int:
    if args.name not in BUILTINS:
        print(f"error: unknown built-in {args.name!r}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(yaml.safe_dump(builtin_config(args.name), sort_keys=False, default_flow_style=None))
    return EXIT_OK


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError("tolerance must be positive")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("bandwidth must be nonnegative")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="folideform", description="Deformations of codimension-one foliations on flat tori.")
    ap.add_argument("--version", action="version", version=f"folideform {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file or a built-in scenario")
    run.add_argument("config", help="YAML/JSON scenario file or built-in name")
    run.add_argument("--tol", type=_positive_float, default=None, help="override tolerances.tol")
    run.add_argument("--bandwidth", type=_nonneg_int, default=None, help="override the default truncation B")
    run.add_argument("--out", default=".", help="output directory (default: current directory)")
    run.add_argument("--format", choices=("json", "csv"), default="json")
    run.set_defaults(func=cmd_run)
    ls = sub.add_parser("list-builtins", help="list built-in scenarios")
    ls.set_defaults(func=cmd_list)
    ds = sub.add_parser("describe", help="print a built-in scenario as YAML")
    ds.add_argument("name")
    ds.set_defaults(func=cmd_describe)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
