"""Command-line front end.

Exit codes: 0 success, 1 tolerance breach, 2 input error (including systems
that do not meet a command's preconditions, such as a singular frame).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from .distribution import (
    VanishingFactorError,
    distribution_report,
    distributional_flow,
    rescale_dynamics,
    v_sequence,
)
from .expr import ExprError, parse
from .fields import SingularFrameError, check_complete_regularity
from .liealg import lie_report, structure_constants
from .oracle import OracleError, compare_flows, integrate_flow
from .quadrature import (
    NotIntegrableError,
    QuadratureChart,
    QuadratureError,
    build_chart,
    flow_csv,
    reconstruct_flow,
)
from .sampling import NoAdmissiblePointsError, default_seed
from .system import SystemFile, SystemFileError, load_system, with_dynamics

EXIT_OK, EXIT_BREACH, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise InputError(f"cannot parse number list {text!r}") from None


def _points(text: str | None, system: SystemFile) -> np.ndarray:
    if not text:
        return system.x0[None, :]
    pts = [_floats(p) for p in text.split(";") if p.strip()]
    if any(len(p) != system.n for p in pts):
        raise InputError(f"each point needs {system.n} coordinates")
    arr = np.array(pts)
    if not np.all(system.domain.admissible(arr)):
        raise InputError("probe point is not admissible")
    return arr


def _load(args) -> SystemFile:
    overrides = {}
    for item in args.param or []:
        k, _, v = item.partition("=")
        try:
            overrides[k.strip()] = float(v)
        except ValueError:
            raise InputError(f"bad parameter binding {item!r}") from None
    system = load_system(args.file, overrides or None)
    if args.gamma:
        names = system.frame.names
        if args.gamma not in names:
            raise InputError(f"unknown field {args.gamma!r}; choose from {names}")
        system = with_dynamics(system, names.index(args.gamma))
    if system.gamma_index is None:
        raise InputError("the dynamical field must be one of the listed fields")
    return system


@dataclass
class ChartBuild:
    chart: QuadratureChart
    source: str


def chart_for(system: SystemFile, seed: int) -> ChartBuild:
    """Lie chart when the frame closes and is regular, else the distributional chart."""
    S = structure_constants(system.frame, seed=seed)
    if S.closes and S.regular:
        return ChartBuild(build_chart(S, system.gamma_index, system.x0, seed=seed), "lie")
    if S.closes and not S.regular:
        rep = check_complete_regularity(system.frame, seed=seed)
        raise SingularFrameError(
            f"the fields close on a Lie algebra but are not completely regular "
            f"(min |det|/||A||^n = {rep.min_ratio:.3g}); no quadrature chart exists on this frame"
        )
    df = distributional_flow(system.frame, system.gamma_index, system.x0, seed=seed)
    if not df.ok:
        raise NotIntegrableError(df.diagnostic)
    return ChartBuild(df.chart, "distribution")


def cmd_analyze(args) -> int:
    system = _load(args)
    seed = args.seed
    S = structure_constants(system.frame, samples=args.samples, seed=seed)
    reg = check_complete_regularity(system.frame, seed=seed) if len(system.frame) == system.n else None
    report = {"system": system.name, "seed": seed}
    report["regularity"] = reg.to_dict() if reg else None
    lie = lie_report(S).to_dict()
    report["lie"] = lie
    if not S.closes or not S.regular:
        try:
            seqs = {}
            for i, name in enumerate(system.frame.names):
                seqs[name] = v_sequence(system.frame, i, seed=seed)
            main = seqs[system.frame.names[system.gamma_index]]
            report["distribution"] = distribution_report(main)
            report["distribution"]["orders"] = {k: v.order for k, v in seqs.items()}
        except SingularFrameError as exc:
            report["distribution"] = {"error": str(exc)}
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_integrate(args) -> int:
    system = _load(args)
    build = chart_for(system, args.seed)
    x = _points(args.point, system)[0]
    steps = max(1, args.steps)
    rows = []
    for i in range(steps + 1):
        t = args.t * i / steps
        res = reconstruct_flow(build.chart, x, t)
        rows.append((t, res.point, res.residual))
    text = flow_csv(system.domain.coords, rows)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"quadratures: {build.chart.quadrature_count}", file=sys.stderr if not args.output else sys.stdout)
    return EXIT_OK


def cmd_compare(args) -> int:
    system = _load(args)
    build = chart_for(system, args.seed)
    chart = build.chart
    if args.corrupt:
        # test hook: a chart whose velocities are off by a relative amount
        chart.velocities = chart.velocities * (1.0 + args.corrupt)
    grid = _floats(args.t_grid) if args.t_grid else [round(0.1 * k, 10) for k in range(1, 11)]
    pts = _points(args.points, system)
    rep = compare_flows(
        lambda x, t: reconstruct_flow(chart, x, t).point,
        lambda x, t: integrate_flow(system.gamma, x, t),
        pts,
        grid,
        tolerance=args.tol,
    )
    out = rep.to_dict()
    out["quadrature_count"] = chart.quadrature_count
    out["chart"] = build.source
    print(json.dumps(out, indent=2))
    return EXIT_OK if rep.passed else EXIT_BREACH


def cmd_rescale(args) -> int:
    system = _load(args)
    f = parse(args.factor_expr, system.domain.coords, list(system.domain.params))
    rep = rescale_dynamics(system.frame, system.gamma_index, f, seed=args.seed)
    print(json.dumps(rep.to_dict(), indent=2))
    return EXIT_OK if rep.holds else EXIT_BREACH


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadflow", description="Integrability by quadratures for families of vector fields.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("file", help="system TOML file or the name of a shipped fixture")
        sp.add_argument("--gamma", help="name of the dynamical field (default: the file's choice)")
        sp.add_argument("--param", action="append", metavar="NAME=VALUE", help="override a parameter binding")
        sp.add_argument("--seed", type=int, default=None, help="sampling seed (default: $QUADFLOW_SEED or built-in)")

    a = sub.add_parser("analyze", help="structure constants, indices and integrability orders")
    common(a)
    a.add_argument("--samples", type=int, default=64)
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("integrate", help="reconstruct the flow from the quadrature chart")
    common(i)
    i.add_argument("--t", type=float, required=True)
    i.add_argument("--point", help="comma-separated start point (default: x0)")
    i.add_argument("--steps", type=int, default=10)
    i.add_argument("--output", "-o", help="write the CSV here instead of stdout")
    i.set_defaults(func=cmd_integrate)

    c = sub.add_parser("compare", help="compare the reconstructed flow with the oracle")
    common(c)
    c.add_argument("--t-grid", help="comma-separated times (default 0.1..1.0)")
    c.add_argument("--points", help="semicolon-separated probe points (default: x0)")
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("rescale", help="orders before and after rescaling the dynamical field")
    common(r)
    r.add_argument("--factor-expr", required=True)
    r.set_defaults(func=cmd_rescale)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = default_seed()
    try:
        return args.func(args)
    except (
        InputError,
        SystemFileError,
        ExprError,
        SingularFrameError,
        NotIntegrableError,
        NoAdmissiblePointsError,
        VanishingFactorError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (QuadratureError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BREACH


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
