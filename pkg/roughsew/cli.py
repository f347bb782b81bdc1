"""
Command line experiments.

Each subcommand builds rough paths from a ``t,x1,...,xd`` CSV file (or a
seeded random Fourier curve when no file is given), runs one verification
and writes a CSV report to standard output or ``--out``. Floats are written
with 17 significant digits so identical seeds and flags give identical
bytes.

Exit codes: 0 on success, 2 on bad input, 3 when a refinement or a
truncation does not reach its tolerance, 4 when an asserted bound or
identity fails (the violating tuple is printed on standard error).
"""

import argparse
import logging
import math
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from . import controlled_path as cp
from . import controls
from . import joint
from . import sigkernel
from .constants import (
    BOUND_SLACK,
    CSV_FLOAT_FORMAT,
    DEFAULT_LEVEL,
    DEFAULT_SERIES_LEVEL,
    EXACT_MIXED_CAP,
    EXIT_BAD_INPUT,
    EXIT_INVARIANT,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
)
from .errors import (
    ConvergenceError,
    InvariantViolation,
    RoughSewError,
    TruncationError,
    UnboundedNormError,
)
from .roughpath import (
    RoughPath,
    increment_table,
    lift,
    read_path_csv,
    signature,
    smooth_random_samples,
)
from .sewing import rough_integral, zeta

logger = logging.getLogger(__name__)

Row = Dict[str, object]


# ---------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma separated integers, got {text!r}")


def _samples(args: argparse.Namespace, which: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Samples of the first or second driver: from file, or a seeded random curve."""
    path = args.path if which == 1 else getattr(args, "path2", None)
    if path is not None:
        return read_path_csv(path)
    rng = np.random.default_rng(args.path_seed + which - 1)
    return smooth_random_samples(rng, args.segments, args.dim, amplitude=args.amplitude)


def _drivers(args: argparse.Namespace, level: Optional[int] = None) -> Tuple[RoughPath, Optional[RoughPath]]:
    level = args.level if level is None else level
    X = lift(*_samples(args, 1), p=args.p, level=level)
    X2 = None
    if getattr(args, "path2", None) is not None or getattr(args, "two_drivers", False):
        X2 = lift(*_samples(args, 2), p=args.p, level=level)
    return X, X2


def _sine_path(X: RoughPath, shift: float = 0.0) -> cp.ControlledPath:
    """Y = sin(x1 + ... + xd + shift) with its derivatives."""
    fns = []
    for j in range(X.order + 1):
        fns.append(
            lambda x, j=j: math.sin(float(np.sum(x)) + shift + j * math.pi / 2.0) * np.ones(X.dim**j)
        )
    return cp.from_function(X, fns)


def _joint_path(args: argparse.Namespace, X: RoughPath, X2: Optional[RoughPath]) -> joint.JointPath:
    if args.integrand == "kernel":
        KI = sigkernel.kernel_instance(X, X2, series_level=args.series_level)
        return sigkernel.as_joint_path(KI, tol=args.kernel_tol)
    if args.integrand == "const":
        return joint.constant_joint(X, X2, 1.0)
    other = X if X2 is None else X2
    return joint.product_joint(_sine_path(X), _sine_path(other, math.pi / 2.0))


def _full_rect(J: joint.JointPath) -> joint.Rect:
    X, X2 = J.driver, J.driver2
    return (float(X.times[0]), float(X.times[-1]), float(X2.times[0]), float(X2.times[-1]))


def _build_joint(args: argparse.Namespace) -> joint.JointPath:
    level = max(args.level, args.series_level) if args.integrand == "kernel" else args.level
    X, X2 = _drivers(args, level)
    return _joint_path(args, X, X2)


# ---------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------


def _word(index: int, dim: int, level: int) -> str:
    if level == 0:
        return "()"
    letters = np.unravel_index(index, (dim,) * level)
    return "(" + ",".join(str(int(a) + 1) for a in letters) + ")"


def run_signature(args: argparse.Namespace) -> List[Row]:
    X, _ = _drivers(args)
    s = float(X.times[0]) if args.s is None else args.s
    t = float(X.times[-1]) if args.t is None else args.t
    sig = signature(X, s, t, args.level)
    constants = joint.driver_constants(X.p)
    rows = []
    for l in range(args.level + 1):
        for i, value in enumerate(sig[l]):
            rows.append({"s": s, "t": t, "level": l, "word": _word(i, X.dim, l), "value": float(value), **constants})
    return rows


def run_integrate1d(args: argparse.Namespace) -> List[Row]:
    X, _ = _drivers(args)
    if args.integrand == "taut":
        Y = cp.tautological(X)
    elif args.integrand == "const":
        Y = cp.constant(X, [1.0])
    else:
        Y = _sine_path(X)
    s = float(X.times[0]) if args.s is None else args.s
    t = float(X.times[-1]) if args.t is None else args.t
    result = rough_integral(Y, s, t, with_bound=not args.no_bound)
    local = cp.local_approx(Y, s, t)
    constants = joint.driver_constants(X.p)
    rows = []
    for e in range(Y.codomain):
        for k in range(X.dim):
            rows.append(
                {
                    "s": s,
                    "t": t,
                    "component": e + 1,
                    "direction": k + 1,
                    "value": float(result.value[e, k]),
                    "local": float(local[e, k]),
                    "bound": math.nan if result.bound is None else result.bound,
                    "theta": result.theta,
                    "zeta_theta": zeta(result.theta),
                    "omega": X.control(s, t),
                    "points": result.sewing.partition_sizes[-1],
                    **constants,
                }
            )
    return rows


def run_integrate2d(args: argparse.Namespace) -> List[Row]:
    J = _build_joint(args)
    rect = _full_rect(J)
    result = joint.joint_integral(
        J, rect, tol=args.tol, with_bound=not args.no_bound, refine_to_grid=args.full_grid
    )
    iterated = joint.iterated_integrals(J, rect)
    values = (result.value, iterated.first_order, iterated.second_order)
    q = result.quantities if result.quantities is not None else joint.maximal_quantities(J, rect)
    row: Row = {
        "integrand": args.integrand,
        "joint": values[0],
        "iterated_12": values[1],
        "iterated_21": values[2],
        "gap_12_21": abs(values[1] - values[2]),
        "gap_joint_12": abs(values[0] - values[1]),
        "gap_joint_21": abs(values[0] - values[2]),
        "omega": result.omega,
        "bound": math.nan if result.bound is None else result.bound,
        "rounds": result.rounds,
    }
    row.update(q.as_row())
    return [row]


def run_maximal_check(args: argparse.Namespace) -> List[Row]:
    J = _build_joint(args)
    rect = _full_rect(J)
    q = joint.maximal_quantities(J, rect, alpha=args.alpha, mixed=args.mixed)
    n1, n2 = J.driver.times.size, J.driver2.times.size
    rows = []
    for trial in range(args.trials):
        rng = np.random.default_rng(args.seed + trial)
        points = int(rng.integers(2, n1 + 1))
        points2 = int(rng.integers(2, n2 + 1))
        G = joint.random_partition(rng, J, rect, points, points2)
        check = joint.check_maximal_inequality(J, G, quantities=q)
        row: Row = {
            "trial": trial,
            "seed": args.seed + trial,
            "points1": G.shape[0],
            "points2": G.shape[1],
            "lhs": check.lhs,
            "rhs": check.rhs,
            "ratio": check.ratio,
            "V1": q.V1,
            "V2": q.V2,
            "eta1": q.eta1,
            "eta2": q.eta2,
        }
        row.update(q.as_row())
        rows.append(row)
        if check.ratio > 1.0 + BOUND_SLACK:
            raise InvariantViolation(
                f"Maximal inequality fails on trial {trial}: ratio {check.ratio:.6e}",
                context={"trial": trial, "axis1": G.axis1.tolist(), "axis2": G.axis2.tolist()},
            )
    if rows:
        logger.info("maximal-check: %d trials, largest ratio %.3e", len(rows), max(r["ratio"] for r in rows))
    return rows


def run_fubini_sweep(args: argparse.Namespace) -> List[Row]:
    J = _build_joint(args)
    rect = _full_rect(J)
    q = joint.maximal_quantities(J, rect)
    checks = [joint.fubini_check(J, joint.uniform_partition(J, rect, n)) for n in args.meshes]
    target = q.theta_star - 1.0
    # On the full grid the three sums coincide up to round-off.
    coarse = [c for n, c in zip(args.meshes, checks) if n < J.driver.n_segments]
    try:
        order = joint.fit_decay_order([c.mesh for c in coarse], [c.gap for c in coarse])
    except ValueError:
        order = math.nan
    if order < target:
        logger.warning("Fitted Fubini order %.3f is below theta* - 1 = %.3f", order, target)
    rows = []
    for cells, check in zip(args.meshes, checks):
        row: Row = {
            "cells": cells,
            "mesh": check.mesh,
            "iterated_12": check.first_order,
            "iterated_21": check.second_order,
            "joint": check.joint,
            "gap": check.gap,
            "fitted_order": order,
            "target_order": target,
        }
        row.update(q.as_row())
        rows.append(row)
    return rows


def run_variation(args: argparse.Namespace) -> List[Row]:
    X, X2 = _drivers(args)
    rows = []
    if not args.twod:
        for l in range(1, X.floor_p + 1):
            dist = np.linalg.norm(increment_table(X, l), axis=-1)
            exponent = X.p / l
            rows.append(
                {
                    "kind": f"level{l}",
                    "p": exponent,
                    "q": math.nan,
                    "mode": "exact",
                    "points1": X.times.size,
                    "points2": 0,
                    "value": controls.p_variation_from_table(dist, exponent),
                    **joint.driver_constants(X.p),
                }
            )
        return rows
    Y = X if X2 is None else X2
    q = args.p if args.q is None else args.q

    def cell(s: float, t: float, u: float, v: float) -> float:
        inc = X.values[X.index(t)] - X.values[X.index(s)]
        inc2 = Y.values[Y.index(v)] - Y.values[Y.index(u)]
        return float(inc @ inc2)

    mode = args.mode
    if mode == "exact" and max(X.times.size, Y.times.size) > EXACT_MIXED_CAP:
        logger.warning("Grid exceeds %d points per axis; falling back to greedy", EXACT_MIXED_CAP)
        mode = "greedy"
    rect = (X.times[0], X.times[-1], Y.times[0], Y.times[-1])
    value = controls.mixed_variation(cell, rect, args.p, q, (X.times, Y.times), mode=mode)
    rows.append(
        {
            "kind": "mixed",
            "p": args.p,
            "q": q,
            "mode": mode,
            "points1": X.times.size,
            "points2": Y.times.size,
            "value": value,
            **joint.driver_constants(X.p, Y.p),
        }
    )
    return rows


def run_stability(args: argparse.Namespace) -> List[Row]:
    level = max(args.level, args.series_level) if args.integrand == "kernel" else args.level
    times, values = _samples(args, 1)
    rng = np.random.default_rng(args.path_seed + 100)
    _, bump = smooth_random_samples(rng, times.size - 1, values.shape[1], horizon=float(times[-1] - times[0]))
    X = lift(times, values, p=args.p, level=level)
    J1 = _joint_path(args, X, None)
    rect = _full_rect(J1)
    reports = []
    for eps in args.eps_sweep:
        Xe = lift(times, values + eps * bump, p=args.p, level=level)
        reports.append(joint.stability_distance(J1, _joint_path(args, Xe, None), rect))
    try:
        slope = joint.fit_decay_order(
            [r.driver_distance + r.distance for r in reports], [r.gap for r in reports]
        )
    except ValueError:
        slope = math.nan
    constants = joint.constants_row(joint.theta_star(J1), joint.default_alpha(J1), J1.order + 1, J1.order2 + 1)
    rows = []
    for eps, r in zip(args.eps_sweep, reports):
        rows.append(
            {
                "eps": eps,
                "driver_distance": r.driver_distance,
                "distance": r.distance,
                "gap": r.gap,
                "constant": r.constant,
                "value1": r.value1,
                "value2": r.value2,
                "slope": slope,
                **constants,
            }
        )
    return rows


COMMANDS: Dict[str, Callable[[argparse.Namespace], List[Row]]] = {
    "signature": run_signature,
    "integrate1d": run_integrate1d,
    "integrate2d": run_integrate2d,
    "maximal-check": run_maximal_check,
    "fubini-sweep": run_fubini_sweep,
    "variation": run_variation,
    "stability": run_stability,
}


# ---------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, p: float = 2.0) -> None:
    parser.add_argument("--path", default=None, help="Path file with header t,x1,...,xd")
    parser.add_argument("--p", type=float, default=p, help="Roughness exponent p >= 1")
    parser.add_argument("--level", type=int, default=DEFAULT_LEVEL, help="Signature truncation level")
    parser.add_argument("--out", default=None, help="Write the CSV report here instead of stdout")
    parser.add_argument("--segments", type=int, default=8, help="Segments of the random curve without --path")
    parser.add_argument("--dim", type=int, default=2, help="Dimension of the random curve without --path")
    parser.add_argument("--amplitude", type=float, default=0.5, help="Scale of the random curve")
    parser.add_argument("--path-seed", type=int, default=0, help="Seed of the random curve")


def _add_joint(parser: argparse.ArgumentParser, drivers: bool = True) -> None:
    if drivers:
        parser.add_argument("--path2", default=None, help="Second driver; one-driver mode when omitted")
        parser.add_argument("--two-drivers", action="store_true", help="Draw a second random driver")
    parser.add_argument("--integrand", choices=("kernel", "const", "product"), default="kernel")
    parser.add_argument("--series-level", type=int, default=DEFAULT_SERIES_LEVEL, help="Kernel series truncation")
    parser.add_argument("--kernel-tol", type=float, default=None, help="Largest accepted kernel tail bound")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roughsew", description="Rough integration, sewing and signature kernel experiments"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (repeatable)")
    parser.add_argument("--quiet", action="store_true", help="Only log errors")
    sub = parser.add_subparsers(dest="command", required=True)

    sig = sub.add_parser("signature", help="Per-level signature entries over [s, t]")
    _add_common(sig, p=1.0)
    sig.add_argument("--s", type=float, default=None)
    sig.add_argument("--t", type=float, default=None)

    one = sub.add_parser("integrate1d", help="One-parameter rough integral with its bound")
    _add_common(one)
    one.add_argument("--integrand", choices=("taut", "const", "fn"), default="taut")
    one.add_argument("--s", type=float, default=None)
    one.add_argument("--t", type=float, default=None)
    one.add_argument("--no-bound", action="store_true", help="Skip the remainder norms and the bound")

    two = sub.add_parser("integrate2d", help="Joint and iterated double integrals")
    _add_common(two)
    _add_joint(two)
    two.add_argument("--tol", type=float, default=1e-6)
    two.add_argument("--full-grid", action="store_true", help="Report the grid sum on every driver node")
    two.add_argument("--no-bound", action="store_true", help="Skip the maximal-inequality bound")

    mx = sub.add_parser("maximal-check", help="Maximal inequality on seeded random grids")
    _add_common(mx)
    _add_joint(mx)
    mx.add_argument("--trials", type=int, default=100)
    mx.add_argument("--seed", type=int, default=0, help="Trial t draws from default_rng(seed + t)")
    mx.add_argument("--alpha", type=float, default=None)
    mx.add_argument("--mixed", choices=("envelope", "exact", "greedy"), default="envelope")

    fub = sub.add_parser("fubini-sweep", help="Fubini gap against the mesh")
    _add_common(fub)
    _add_joint(fub)
    fub.add_argument("--meshes", type=_int_list, default=[4, 8, 16, 32], help="Cells per axis")
    fub.set_defaults(segments=None)

    var = sub.add_parser("variation", help="p-variation or mixed (p, q)-variation")
    _add_common(var)
    var.add_argument("--path2", default=None)
    var.add_argument("--q", type=float, default=None)
    var.add_argument("--twod", action="store_true", help="Mixed variation of <dx, dx~>")
    var.add_argument("--mode", choices=("exact", "greedy"), default="exact")

    stab = sub.add_parser("stability", help="Integral gap against the path distance")
    _add_common(stab)
    _add_joint(stab, drivers=False)
    stab.add_argument("--eps-sweep", type=_float_list, default=[1e-2, 1e-3, 1e-4])
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    if args.quiet:
        level = logging.ERROR
    elif args.verbose >= 2:
        level = logging.DEBUG
    elif args.verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )


def write_report(rows: Sequence[Row], out: Optional[str] = None) -> None:
    frame = pd.DataFrame(list(rows))
    text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    if args.command == "fubini-sweep" and args.segments is None:
        args.segments = max(args.meshes)
    try:
        rows = COMMANDS[args.command](args)
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        print(f"violating tuple: {exc.context}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConvergenceError, TruncationError, UnboundedNormError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (RoughSewError, ValueError, OSError) as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    write_report(rows, args.out)
    return EXIT_OK
