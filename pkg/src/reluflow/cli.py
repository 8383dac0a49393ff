"""Command-line front end: ``reluflow <command> CONFIG.json``.

Exit codes: 0 success, 2 invalid configuration or input, 3 certification or
synthesis failure, 4 numerical-oracle mismatch. Outputs go to ``--output-dir``,
else ``$RELUFLOW_OUTPUT_DIR``, else the config's ``output_dir``, else
``./reluflow_output``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import divergence, points, svg, synthesis, xlogx
from .config import CONFIGS
from .core import ControlSchedule, PiecewiseGaussianDensity, TargetSpec
from .errors import (
    AbsoluteContinuityError,
    CertificationError,
    DistinctnessError,
    RankError,
    SeparationError,
    SynthesisError,
    UnsupportedDimensionError,
)
from .flow import flow_forward, pushforward_density
from .oracle import integrate_ode

EXIT_OK, EXIT_VALIDATION, EXIT_FAILURE, EXIT_ORACLE = 0, 2, 3, 4
ENV_OUTPUT_DIR = "RELUFLOW_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "reluflow_output"
FLOW_ORACLE_TOL = 1e-8
MATCH_TOL = 1e-8
PATH_TOL = 1e-6
INPUT_ERROR_KINDS = {
    DistinctnessError: "distinctness",
    RankError: "rank",
    UnsupportedDimensionError: "unsupported_dimension",
}


class CommandError(Exception):
    def __init__(self, code, kind, message, details=None):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.details = details or {}


# ---------------------------------------------------------------------------
# output helpers


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def _read_cloud(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                if rows:
                    raise
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: expected a non-empty CSV with one point per row")
    return np.array(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_synthesize(cfg, out: Path, base_dir: Path):
    base = PiecewiseGaussianDensity.gaussian(np.array(cfg.base.mean), np.array(cfg.base.cov))
    dens = cfg.target.build()
    d = base.dim
    if dens.dim != d:
        raise CommandError(EXIT_VALIDATION, "validation", "base and target dimensions differ")
    radius = cfg.radius
    if radius is None:
        try:
            radius = synthesis.find_tail_radius(dens, cfg.sigma_tail, cfg.tail_mode, d, seed=cfg.seed)
        except ValueError as exc:
            raise CommandError(EXIT_FAILURE, "tail_hypothesis", str(exc)) from None
    target = TargetSpec(dens, cfg.sigma_tail, radius, cfg.tail_mode, d)
    try:
        report = synthesis.synthesize(base, target, cfg.epsilon, cfg.horizon, cfg.objective, cfg.seed,
                                      max_rounds=cfg.max_rounds)
    except SynthesisError as exc:
        raise CommandError(EXIT_FAILURE, exc.kind, str(exc), exc.details) from None
    write_json(out / "report.json", report.to_dict())
    write_json(out / "schedule.json", report.schedule.to_dict())
    method = "quadrature" if d <= 2 else "monte_carlo"
    write_rows(out / "divergences.csv", divergence.CSV_FIELDS, [
        ("kl" if cfg.objective == "kl" else "reverse_kl", report.kl_achieved, report.kl_error, method, cfg.seed),
        ("tv", report.tv_achieved, "", method, cfg.seed),
    ])
    write_rows(out / "summary.csv", synthesis.SynthesisReport.CSV_FIELDS,
               [[report.csv_row()[k] for k in synthesis.SynthesisReport.CSV_FIELDS]])
    if d <= 2:
        half, final = synthesis.solution_densities(base, report)
        (out / "densities.svg").write_text(_density_svg(base, half, final, dens, d))
    return {"kl_achieved": report.kl_achieved, "switch_count": report.switch_count}


def _marginals(dens, d, grid):
    if d == 1:
        return [np.asarray(dens.pdf(grid[:, None]), float)]
    g0, g1 = np.meshgrid(grid, grid, indexing="ij")
    vals = np.asarray(dens.pdf(np.stack([g0.ravel(), g1.ravel()], axis=1)), float).reshape(g0.shape)
    dx = grid[1] - grid[0]
    return [vals.sum(axis=1) * dx, vals.sum(axis=0) * dx]


def _density_svg(base, half, final, target, d):
    lo, hi = target.support_box(1e-6)
    blo, bhi = base.support_box(1e-6)
    r = float(max(np.max(np.abs(lo)), np.max(np.abs(hi)), np.max(np.abs(blo)), np.max(np.abs(bhi))))
    grid = np.linspace(-r, r, 401 if d == 1 else 161)
    series = []
    for name, dens in (("base", base), ("t = T/2", half), ("t = T", final), ("target", target)):
        for k, m in enumerate(_marginals(dens, d, grid)):
            label = name if d == 1 else f"{name} (x{k + 1})"
            series.append((label, grid, m))
    title = "densities" if d == 1 else "coordinate marginals"
    return svg.line_plot(series, title=title, xlabel="x", ylabel="density")


def _divergence_row(name, p, q, method, seed):
    if name == "kl":
        return divergence.kl(p, q, method, seed)
    if name == "reverse_kl":
        return divergence.kl(q, p, method, seed)
    if name == "tv":
        return divergence.tv(p, q, method, seed)
    if name == "hellinger_sq":
        return divergence.hellinger_sq(p, q, method, seed)
    lam = float(name.split(":", 1)[1])
    return divergence.renyi(lam, p, q, method, seed)


def cmd_divergence(cfg, out: Path, base_dir: Path):
    p, q = cfg.p.build(), cfg.q.build()
    if p.dim != q.dim:
        raise CommandError(EXIT_VALIDATION, "validation", "p and q dimensions differ")
    header = list(divergence.CSV_FIELDS) + ["note"]
    rows = []
    seed = "" if cfg.seed is None else cfg.seed
    for name in cfg.divergences:
        try:
            est = _divergence_row(name, p, q, cfg.method, cfg.seed)
            rows.append((name, est.value, est.error_bar, est.method, seed, ""))
        except AbsoluteContinuityError as exc:
            rows.append((name, "n/a", "", cfg.method or "", seed, f"absolute continuity: {exc}"))
    try:
        cert = divergence.pinsker_certificates(p, q, cfg.method, cfg.seed).to_dict()
    except AbsoluteContinuityError as exc:
        cert = {"error": f"absolute continuity: {exc}"}
    if "error" in cert:
        rows.append(("pinsker", "n/a", "", "", seed, cert["error"]))
        rows.append(("reverse_pinsker", "n/a", "", "", seed, cert["error"]))
    else:
        rows.append(("pinsker", cert["pinsker_slack"], "", "", seed, "ok" if cert["pinsker_ok"] else "violated"))
        if cert["reverse_applicable"]:
            note = "ok" if cert["reverse_pinsker_ok"] else "violated"
            rows.append(("reverse_pinsker", cert["reverse_bound"], "", "", seed, note))
        else:
            rows.append(("reverse_pinsker", "n/a", "", "", seed, "density ratio unbounded"))
    write_rows(out / "divergences.csv", header, rows)
    write_json(out / "pinsker.json", cert)
    return {"rows": len(rows)}


def cmd_points(cfg, out: Path, base_dir: Path):
    try:
        X = _read_cloud(base_dir / cfg.source)
        Y = _read_cloud(base_dir / cfg.target)
    except (OSError, ValueError) as exc:
        raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
    if X.shape != Y.shape:
        raise CommandError(EXIT_VALIDATION, "validation", f"cloud shapes differ: {X.shape} vs {Y.shape}")
    n, d = X.shape
    T = cfg.horizon
    try:
        if cfg.mode == "exact":
            plan = points.exact_match(X, Y, T, seed=cfg.seed)
            write_json(out / "plan.json", plan.to_dict())
            reached = points.flow_linear(plan, X)
            traj = lambda t: points.flow_linear(plan, X, t)  # noqa: E731
            tol = MATCH_TOL * max(1.0, float(np.max(np.abs(Y))))
        else:
            path = points.minimum_norm_path(X, Y, T, cfg.activation, cfg.n_grid, cfg.bias)
            write_json(out / "path.json", path.to_dict())
            sol = path.integrate()
            reached = sol.y[:, -1].reshape(n, d)
            traj = lambda t: sol.sol(t).reshape(n, d)  # noqa: E731
            tol = PATH_TOL
    except (DistinctnessError, RankError, UnsupportedDimensionError) as exc:
        details = {}
        if isinstance(exc, RankError):
            details = {"s": exc.s, "singular_values": None if exc.singular_values is None
                       else np.asarray(exc.singular_values).tolist()}
        raise CommandError(EXIT_VALIDATION, INPUT_ERROR_KINDS[type(exc)], str(exc), details) from None
    except SeparationError as exc:
        raise CommandError(EXIT_FAILURE, "separation", str(exc)) from None
    res = np.max(np.abs(reached - Y), axis=1)
    write_rows(out / "residuals.csv", ["index", "residual"], [(i, float(r)) for i, r in enumerate(res)])
    if d == 2:
        ts = np.linspace(0.0, T, 241)
        paths = np.stack([traj(t) for t in ts])
        series = [(f"point {i}", paths[:, i, 0], paths[:, i, 1]) for i in range(n)]
        (out / "trajectories.svg").write_text(
            svg.line_plot(series, title="trajectories", xlabel="x1", ylabel="x2", equal_aspect=True))
    worst = float(res.max())
    if worst > tol:
        raise CommandError(EXIT_ORACLE, "oracle_mismatch", f"landing error {worst:.3g} above {tol:.3g}",
                           {"max_residual": worst})
    return {"max_residual": worst}


def cmd_xlogx(cfg, out: Path, base_dir: Path):
    summary, table, series = [], [], []
    for t in cfg.t_values:
        chk = xlogx.tail_conversion_check(cfg.p, cfg.q, t, cfg.x_max, cfg.n_grid)
        summary.append((cfg.p, cfg.q, t, chk.threshold, chk.ratio_limit_finite, float(chk.increments[-1])))
        for x, dens, ratio in xlogx.xlogx_table(cfg.p, cfg.q, t, chk.grid):
            table.append((t, x, dens, ratio))
        series.append((f"t = {t:g}", np.log10(chk.grid), chk.log_ratio / math.log(10)))
    write_rows(out / "xlogx_summary.csv", ["p", "q", "t", "threshold", "finite", "last_increment"], summary)
    write_rows(out / "xlogx_table.csv", ["t", "x", "density", "ratio"], table)
    (out / "xlogx.svg").write_text(
        svg.line_plot(series, title=f"tail ratio, p = {cfg.p:g}, q = {cfg.q:g}", xlabel="log10 x",
                      ylabel="log10 ratio"))
    return {"finite": [s[4] for s in summary]}


def cmd_flow_eval(cfg, out: Path, base_dir: Path):
    data = cfg.schedule
    try:
        if isinstance(data, str):
            data = json.loads((base_dir / data).read_text())
        schedule = ControlSchedule.from_dict(data)
        pts = np.array(cfg.points, dtype=float)
        if pts.shape[1] != schedule.dim:
            raise ValueError("point dimension does not match the schedule")
        res = flow_forward(schedule, pts, cfg.t)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
    d = schedule.dim
    header = [f"x0_{k}" for k in range(d)] + [f"x_{k}" for k in range(d)] + ["log_jacobian", "oracle_error"]
    rows, worst = [], 0.0
    for x0, x, lj in zip(pts, res.point, res.log_jacobian):
        err = ""
        if cfg.check_oracle:
            ref = integrate_ode(schedule, x0, cfg.t)
            err = float(max(np.max(np.abs(x - ref.point) / np.maximum(1.0, np.abs(ref.point))),
                            abs(lj - ref.log_jacobian) / max(1.0, abs(ref.log_jacobian))))
            worst = max(worst, err)
        rows.append(list(x0) + list(x) + [float(lj), err])
    write_rows(out / "flow.csv", header, rows)
    if worst > FLOW_ORACLE_TOL:
        raise CommandError(EXIT_ORACLE, "oracle_mismatch", f"flow differs from the ODE oracle by {worst:.3g}",
                           {"max_error": worst})
    return {"max_oracle_error": worst}


COMMANDS = {
    "synthesize": cmd_synthesize,
    "divergence": cmd_divergence,
    "points": cmd_points,
    "xlogx": cmd_xlogx,
    "flow-eval": cmd_flow_eval,
}


# ---------------------------------------------------------------------------
# entry point


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def build_parser():
    parser = argparse.ArgumentParser(prog="reluflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment from a JSON config")
        p.add_argument("config", type=Path, help="JSON configuration file")
        p.add_argument("--output-dir", type=Path, default=None, help="directory for emitted files")
        p.add_argument("--set", dest="overrides", action="append", type=_parse_override, default=[],
                       metavar="KEY=VALUE", help="override a top-level config entry (value parsed as JSON)")
    return parser


def _fail(code, kind, message, details=None, out=None):
    doc = {"error": kind, "message": message, "details": _clean(details or {})}
    if out is not None:
        write_json(out / "error.json", doc)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def _output_dir(args, raw):
    declared = raw.get("output_dir") if isinstance(raw, dict) else None
    chosen = args.output_dir or os.environ.get(ENV_OUTPUT_DIR) or declared or DEFAULT_OUTPUT_DIR
    out = Path(str(chosen))
    out.mkdir(parents=True, exist_ok=True)
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_VALIDATION, "validation", f"cannot read config: {exc}")
    if not isinstance(raw, dict):
        return _fail(EXIT_VALIDATION, "validation", "config must be a JSON object")
    for key, value in args.overrides:
        raw[key] = value
    out = _output_dir(args, raw)
    try:
        cfg = CONFIGS[args.command].model_validate(raw)
    except ValidationError as exc:
        errors = [{"loc": ".".join(str(p) for p in e["loc"]), "msg": e["msg"]} for e in exc.errors()]
        return _fail(EXIT_VALIDATION, "validation", "invalid configuration", {"errors": errors}, out)
    try:
        summary = COMMANDS[args.command](cfg, out, args.config.parent)
    except CommandError as exc:
        return _fail(exc.code, exc.kind, str(exc), exc.details, out)
    except CertificationError as exc:
        return _fail(EXIT_FAILURE, "certification", str(exc), out=out)
    print(json.dumps(_clean(summary), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
