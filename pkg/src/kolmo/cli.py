"""Command line interface.

Subcommands: analyze, eval-kernel, build-density, solve-cauchy, verify,
mc-oracle. Every subcommand reads a model JSON file, writes delimited or JSON
artifacts into --out, and is deterministic for a fixed seed regardless of
--threads (work is split into fixed chunks reduced in index order).

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification failure (reports are still written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import expr as expr_mod
from .cauchy import CauchyProblem, solve as cauchy_solve, terminal_continuity_check
from .errors import ConfigError, KolmoError, NumericalError
from .kernel import prototype_density
from .levi import LeviSession, QuadratureConfig, batch_quadrature
from .model import load_model
from .parametrix import parametrix_eval
from .verify import (DensityEvaluator, VerificationReport, check_c2_blowup,
                     check_chapman_kolmogorov, check_expm_block_orders,
                     check_gaussian_bounds, check_mass,
                     check_reduced_homogeneity, residual_along_flow)
from .montecarlo import mc_oracle


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _parse_axis(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) == 1:
        return np.array([float(parts[0])])
    if len(parts) == 3:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ConfigError(f"grid axis needs at least one point: {spec!r}")
        return np.linspace(lo, hi, n)
    raise ConfigError(f"grid axis must be 'value' or 'lo:hi:n', got {spec!r}")


def parse_grid(spec: str, n_axes: int) -> list[np.ndarray]:
    axes = [_parse_axis(s) for s in spec.split(",")]
    if len(axes) != n_axes:
        raise ConfigError(f"grid needs {n_axes} axes (t and x1..xN), got {len(axes)}")
    return axes


def _parse_point(spec: str, n: int, what: str) -> np.ndarray:
    vals = [float(s) for s in spec.split(",")]
    if len(vals) != n:
        raise ConfigError(f"{what} needs {n} comma-separated values, got {len(vals)}")
    return np.asarray(vals)


def _prepare_out(path: str, force: bool) -> str:
    if os.path.exists(path):
        if not os.path.isdir(path):
            raise ConfigError(f"--out {path!r} exists and is not a directory")
        if os.listdir(path) and not force:
            raise ConfigError(f"--out {path!r} is not empty (use --force to allow)")
    else:
        os.makedirs(path)
    return path


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _quad_from_args(quad: QuadratureConfig, args) -> QuadratureConfig:
    kw = {}
    if getattr(args, "series_tol", None) is not None:
        kw["series_tol"] = args.series_tol
    if getattr(args, "max_terms", None) is not None:
        kw["max_terms"] = args.max_terms
    if getattr(args, "time_levels", None) is not None:
        kw["time_panels"] = args.time_levels
    if getattr(args, "space_order", None) is not None:
        kw["space_order"] = args.space_order
    if not kw:
        return quad
    base = {f: getattr(quad, f) for f in quad.__dataclass_fields__}
    base.update(kw)
    return QuadratureConfig(**base)


def _terminal_callable(src: str, N: int):
    node = expr_mod.parse_expr(src)
    if expr_mod.uses_time(node):
        raise ConfigError("terminal condition must not depend on t")
    if expr_mod.max_x_index(node) > N:
        raise ConfigError("terminal condition references a coordinate beyond N")

    def g(Y):
        return np.broadcast_to(np.asarray(expr_mod.evaluate(node, 0.0, Y)),
                               np.atleast_2d(Y).shape[:-1])

    return g


def _source_callable(src: str, N: int):
    node = expr_mod.parse_expr(src)
    if expr_mod.max_x_index(node) > N:
        raise ConfigError("source references a coordinate beyond N")

    def f(s, Y):
        return np.broadcast_to(np.asarray(expr_mod.evaluate(node, s, Y)),
                               np.atleast_2d(Y).shape[:-1])

    return f


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    model, _ = load_model(args.model)
    doc = model.structure.to_dict()
    print(json.dumps(doc, sort_keys=True))
    if args.out:
        out = _prepare_out(args.out, args.force)
        _write_json(os.path.join(out, "structure.json"), doc)
    return 0


def _grid_points(axes: list[np.ndarray]):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def cmd_eval_kernel(args) -> int:
    model, quad = load_model(args.model)
    N = model.N
    target = _parse_point(args.target, N + 1, "--target")
    T, y = target[0], target[1:]
    axes = parse_grid(args.grid, N + 1)
    pts = _grid_points(axes)
    out = _prepare_out(args.out, args.force)
    header = (["t"] + [f"x{i+1}" for i in range(N)] + ["T"]
              + [f"y{i+1}" for i in range(N)] + ["value"])
    rows = []
    for row in pts:
        t, x = row[0], row[1:]
        if not t < T:
            raise ConfigError(f"grid time {t} is not below the target time {T}")
        if args.kind == "prototype":
            val = prototype_density(args.delta, t, x, T, y, model.B, model.structure)
        else:
            val = parametrix_eval(model, t, x, T, y).value
        rows.append(list(row) + [T] + list(y) + [val])
    _write_csv(os.path.join(out, "kernel_grid.csv"), header, rows)
    return 0


def cmd_build_density(args) -> int:
    model, quad = load_model(args.model)
    quad = _quad_from_args(quad, args)
    N, d = model.N, model.d
    target = _parse_point(args.target, N + 1, "--target")
    T, y = target[0], target[1:]
    axes = parse_grid(args.grid, N + 1)
    pts = _grid_points(axes)
    session = LeviSession(model, quad)
    out = _prepare_out(args.out, args.force)
    header = (["t"] + [f"x{i+1}" for i in range(N)] + ["T"]
              + [f"y{i+1}" for i in range(N)] + ["p"]
              + [f"grad{i+1}" for i in range(d)]
              + [f"hess{i+1}{j+1}" for i in range(d) for j in range(d)])
    rows, diags = [], []
    for row in pts:
        t, x = row[0], row[1:]
        if not t < T:
            raise ConfigError(f"grid time {t} is not below the target time {T}")
        res = session.solution(T, y, t_min=float(axes[0].min())).density(t, x)
        rows.append([t] + list(x) + [T] + list(y) + [res.p]
                    + list(res.grad) + list(res.hess.ravel()))
        diags.append({"t": t, "x": list(map(float, x)), "terms_used": res.terms_used,
                      "tail_bound": res.tail_bound, "rel_budget": res.rel_budget,
                      "flags": res.flags})
    _write_csv(os.path.join(out, "density_grid.csv"), header, rows)
    _write_json(os.path.join(out, "diagnostics.json"), diags)
    return 0


def cmd_solve_cauchy(args) -> int:
    model, quad = load_model(args.model)
    quad = _quad_from_args(quad, args)
    N = model.N
    g = _terminal_callable(args.terminal, N)
    f = _source_callable(args.source, N) if args.source else None
    cp = CauchyProblem(model=model, terminal=g, T=args.T, source=f,
                       growth_C=model.growth_C)
    axes = parse_grid(args.grid, N + 1)
    pts = _grid_points(axes)
    session = LeviSession(model, quad)
    out = _prepare_out(args.out, args.force)
    header = ["t"] + [f"x{i+1}" for i in range(N)] + ["u"]
    rows = []
    for row in pts:
        t, x = row[0], row[1:]
        rows.append([t] + list(x) + [cauchy_solve(cp, t, x, q=quad, session=session)])
    _write_csv(os.path.join(out, "cauchy_grid.csv"), header, rows)
    return 0


_VERIFY_CHOICES = ("structure", "expm-orders", "homogeneity", "mass", "chapman",
                   "residual", "bounds-kernel", "bounds-density", "blowup",
                   "continuity")


def cmd_verify(args) -> int:
    model, quad = load_model(args.model)
    quad = _quad_from_args(quad, args)
    checks = args.checks.split(",") if args.checks != "all" else list(_VERIFY_CHOICES)
    for c in checks:
        if c not in _VERIFY_CHOICES:
            raise ConfigError(f"unknown check {c!r}; choose from {_VERIFY_CHOICES}")
    N = model.N
    T, y = args.T, np.zeros(N)
    if args.target:
        tgt = _parse_point(args.target, N + 1, "--target")
        T, y = tgt[0], tgt[1:]
    point = np.zeros(N)
    t0 = 0.0
    if args.point:
        pt = _parse_point(args.point, N + 1, "--point")
        t0, point = pt[0], pt[1:]
    if not t0 < T:
        raise ConfigError(f"--point time {t0} must lie below the target time {T}")

    reports: list[VerificationReport] = []
    scaling_rows = []
    for name in checks:
        if name == "structure":
            s = model.structure
            status = "pass" if s.hoermander_ok else "fail"
            reports.append(VerificationReport(
                check_name="structure", status=status, measured=s.to_dict()))
        elif name == "expm-orders":
            reports.append(check_expm_block_orders(model.B, model.structure))
        elif name == "homogeneity":
            reports.append(check_reduced_homogeneity(model.B, model.structure))
        elif name == "mass":
            ev = DensityEvaluator(model, batch_quadrature())
            reports.append(check_mass(ev, args.abar, t0, point, T,
                                      tol=args.tol or 1e-4, threads=args.threads))
        elif name == "chapman":
            ev = DensityEvaluator(model, batch_quadrature())
            s_mid = 0.5 * (t0 + T)
            reports.append(check_chapman_kolmogorov(ev, t0, point, s_mid, T, y))
        elif name == "residual":
            ev = DensityEvaluator(model, quad)
            u = lambda tt, xx: ev(tt, xx, T, y, want_derivs=False).p
            Au = lambda tt, xx: ev.operator_applied(tt, xx, T, y)
            s_end = t0 + 0.75 * (T - t0)
            res = residual_along_flow(u, Au, None, t0, point, s_end, model.B)
            scale = abs(u(t0, point)) + 1e-300
            budget = ev(t0, point, T, y, want_derivs=False).rel_budget
            status = "pass" if res <= 5.0 * budget * scale else "fail"
            reports.append(VerificationReport(
                check_name="residual", status=status,
                measured={"residual": res, "scale": scale, "rel_budget": budget},
                tolerance=5.0 * budget))
        elif name in ("bounds-kernel", "bounds-density"):
            kind = "kernel" if name.endswith("kernel") else "density"
            ev = DensityEvaluator(model, quad, kind=kind)
            rep = check_gaussian_bounds(ev, T, y)
            reports.append(rep)
            for dt, sv, sg, sh in zip(rep.measured["scales"], rep.measured["sup_value"],
                                      rep.measured["sup_grad"], rep.measured["sup_hess"]):
                scaling_rows.append([{"bounds-kernel": 0, "bounds-density": 1}[name],
                                     dt, sv, sg, sh])
        elif name == "blowup":
            ev = DensityEvaluator(model, quad)
            rep = check_c2_blowup(ev, T, y, beta=args.beta, samples=args.samples or 60,
                                  seed=args.seed)
            reports.append(rep)
            for dt, val in zip(rep.measured["scales"], rep.measured["seminorm_values"]):
                scaling_rows.append([2, dt, val, 0.0, 0.0])
        elif name == "continuity":
            g = _terminal_callable(args.terminal or "x1", N)
            cp = CauchyProblem(model=model, terminal=g, T=T, growth_C=model.growth_C)
            out = terminal_continuity_check(cp, y, [0.1 * 2.0 ** (-k) for k in range(4)],
                                            q=quad)
            devs = out["deviations"]
            decreasing = all(b <= a * 1.2 for a, b in zip(devs, devs[1:]))
            reports.append(VerificationReport(
                check_name="terminal_continuity",
                status="pass" if decreasing else "fail", measured=out))

    out_dir = _prepare_out(args.out, args.force)
    _write_json(os.path.join(out_dir, "report.json"), [r.to_dict() for r in reports])
    _write_csv(os.path.join(out_dir, "scaling.csv"),
               ["table", "scale", "sup_value", "sup_grad", "sup_hess"], scaling_rows)
    print(json.dumps({r.check_name: r.status for r in reports}, sort_keys=True))
    return 3 if any(r.status == "fail" for r in reports) else 0


def cmd_mc_oracle(args) -> int:
    model, quad = load_model(args.model)
    N = model.N
    pt = _parse_point(args.point, N + 1, "--point")
    t0, x0 = pt[0], pt[1:]
    res = mc_oracle(model, t0, x0, args.T, paths=args.paths, steps=args.steps,
                    seed=args.seed, bins=args.bins, scheme=args.scheme,
                    q=batch_quadrature(), threads=args.threads)
    out = _prepare_out(args.out, args.force)
    centers = [0.5 * (np.asarray(e)[1:] + np.asarray(e)[:-1]) for e in res.edges]
    mesh = np.meshgrid(*centers, indexing="ij")
    rows = np.stack([g.ravel() for g in mesh] +
                    [res.counts.ravel(), res.model_mass.ravel()], axis=-1)
    _write_csv(os.path.join(out, "histogram.csv"),
               [f"center{i+1}" for i in range(N)] + ["count", "model_mass"], rows)
    _write_json(os.path.join(out, "mc_report.json"), {
        "distance": res.distance,
        "paths": res.paths,
        "outside_fraction": res.outside_fraction,
        "sample_mean": res.sample_mean.tolist(),
        "sample_cov": res.sample_cov.tolist(),
        "mean_se": res.mean_se.tolist(),
        "cov_se": res.cov_se.tolist(),
        "scheme": args.scheme,
        "seed": args.seed,
    })
    print(json.dumps({"distance": res.distance}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kolmo",
        description="Degenerate Kolmogorov operators: kernels, densities, checks.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_out=True):
        sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--out", required=needs_out, default=None,
                        help="output directory (created; must be empty unless --force)")
        sp.add_argument("--force", action="store_true",
                        help="write into a non-empty output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("analyze", help="drift-matrix structure report")
    common(sp, needs_out=False)
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("eval-kernel", help="prototype or parametrix kernel on a grid")
    common(sp)
    sp.add_argument("--grid", required=True, help="axes 't0:t1:nt,x1lo:x1hi:n,...'")
    sp.add_argument("--target", required=True, help="'T,y1,...,yN'")
    sp.add_argument("--delta", type=float, default=1.0)
    sp.add_argument("--kind", choices=("prototype", "parametrix"), default="prototype")
    sp.set_defaults(fn=cmd_eval_kernel)

    sp = sub.add_parser("build-density", help="fundamental solution on a grid")
    common(sp)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--series-tol", type=float, default=None)
    sp.add_argument("--max-terms", type=int, default=None)
    sp.add_argument("--time-levels", type=int, default=None)
    sp.add_argument("--space-order", type=int, default=None)
    sp.set_defaults(fn=cmd_build_density)

    sp = sub.add_parser("solve-cauchy", help="terminal-value problem on a grid")
    common(sp)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--terminal", required=True, help="expression in x1..xN")
    sp.add_argument("--source", default=None, help="expression in t, x1..xN")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--series-tol", type=float, default=None)
    sp.add_argument("--max-terms", type=int, default=None)
    sp.add_argument("--time-levels", type=int, default=None)
    sp.add_argument("--space-order", type=int, default=None)
    sp.set_defaults(fn=cmd_solve_cauchy)

    sp = sub.add_parser("verify", help="verification checks, report JSON + tables")
    common(sp)
    sp.add_argument("--checks", default="structure,expm-orders,homogeneity")
    sp.add_argument("--target", default=None, help="'T,y1,...,yN'")
    sp.add_argument("--point", default=None, help="'t,x1,...,xN'")
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--abar", type=float, default=0.0)
    sp.add_argument("--beta", type=float, default=0.5)
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--terminal", default=None)
    sp.add_argument("--series-tol", type=float, default=None)
    sp.add_argument("--max-terms", type=int, default=None)
    sp.add_argument("--time-levels", type=int, default=None)
    sp.add_argument("--space-order", type=int, default=None)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("mc-oracle", help="simulate and compare with the density")
    common(sp)
    sp.add_argument("--point", required=True, help="'t,x1,...,xN'")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--paths", type=int, default=100000)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--bins", type=int, default=30)
    sp.add_argument("--scheme", choices=("exact-flow", "euler"), default="exact-flow")
    sp.set_defaults(fn=cmd_mc_oracle)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except KolmoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
