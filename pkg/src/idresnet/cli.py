"""Command line entry point.

Subcommands: factorize, landscape check-bound, train, memorize, verify.

Exit codes: 0 success; 1 a check did not pass; 2 negative determinant;
3 depth too small; 4 gradient bound violated; 5 gradient descent diverged;
6 memorizer validation failed; 64 usage error; 65 malformed input data.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, factorize, landscape, memorize, train
from .errors import (
    DepthTooSmall,
    Diverged,
    DuplicatePoints,
    NegativeDeterminant,
    NotOrthogonal,
    NotSymmetricPSD,
    ProjectionFailed,
    SeparationViolated,
    SingularTarget,
    SurrogateCorrelated,
)
from .matio import matrix_from_json, read_matrix

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NEG_DET = 2
EXIT_DEPTH = 3
EXIT_BOUND = 4
EXIT_DIVERGED = 5
EXIT_MEMORIZE = 6
EXIT_USAGE = 64
EXIT_DATA = 65


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Run:
    """Collects the manifest of one command invocation."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.start = time.perf_counter()
        self.outputs: list[str] = []

    def say(self, msg: str) -> None:
        if not self.args.quiet:
            print(msg)

    def manifest(self, **extra) -> dict:
        params = {k: v for k, v in vars(self.args).items() if k not in ("func", "quiet")}
        params.update(extra)
        return {
            "command": self.command,
            "parameters": params,
            "seed": self.args.seed,
            "version": __version__,
            "duration_s": round(time.perf_counter() - self.start, 6),
            "outputs": list(self.outputs),
        }

    def write_json(self, path, payload: dict, **extra) -> None:
        if path is None:
            return
        self.outputs.append(str(path))
        payload = dict(payload)
        payload["manifest"] = self.manifest(**extra)
        Path(path).write_text(json.dumps(payload, indent=1, default=str) + "\n")


def _read_target(path) -> factorize.Target:
    """A target file holds either a bare matrix (R) or {"R", "Sigma", "noise_var"}."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read target: {exc}") from exc
    try:
        obj = json.loads(text) if text.lstrip().startswith(("{", "[")) else None
        if isinstance(obj, dict) and "R" in obj:
            Sigma = obj.get("Sigma")
            return factorize.Target(
                R=matrix_from_json(obj["R"]),
                Sigma=None if Sigma is None else matrix_from_json(Sigma),
                noise_var=float(obj.get("noise_var", 0.0)),
            )
        return factorize.Target(read_matrix(path))
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed target file {path}: {exc}") from exc


# ---------------------------------------------------------------- commands


def cmd_factorize(args) -> int:
    run = Run(args, "factorize")
    R = _read_target(args.target).R
    extra = {}
    if args.rescale:
        R, scale = factorize.rescale_target(R)
        extra["rescale_factor"] = scale
        run.say(f"rescaled target by 1/{scale:.6g}")
    if args.augment_neg_det and np.linalg.det(R) < 0:
        R = factorize.augment_negative_det(R)
        extra["augmented"] = True
        run.say("negative determinant: target augmented with an extra -1 dimension")
    try:
        rep = factorize.factorize_psd(R, args.depth) if args.psd else factorize.factorize_general(R, args.depth)
    except NegativeDeterminant as exc:
        print(f"error: {exc}; rerun with --augment-neg-det", file=sys.stderr)
        return EXIT_NEG_DET
    except DepthTooSmall as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPTH
    except (SingularTarget, NotSymmetricPSD, NotOrthogonal) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    check = factorize.verify_factorization(rep, R)
    run.say(
        f"depth {rep.depth}  gamma {rep.gamma:.6g}  split p={rep.depth_split[0]} q={rep.depth_split[1]} "
        f"padding={rep.depth_split[2]}\nmaxnorm {rep.maxnorm_achieved:.6g} <= bound {rep.norm_bound_claimed:.6g}  "
        f"reconstruction {check:.3e}"
    )
    run.write_json(args.out, rep.to_json(), **extra)
    return EXIT_OK if rep.certified and check <= 1e-8 else EXIT_CHECK_FAILED


def cmd_landscape(args) -> int:
    run = Run(args, "landscape check-bound")
    if not 0 < args.tau < 1:
        raise UsageError(f"--tau must lie in (0, 1), got {args.tau}")
    if args.samples < 0 or args.depth < 1:
        raise UsageError("--samples must be >= 0 and --depth >= 1")
    target = _read_target(args.target)
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    res = landscape.bound_sweep(rng, args.tau, args.depth, target.d, args.samples, target=target)
    slack = res.relative_slack
    violations = int(np.sum(res.lhs < res.rhs * (1 - landscape.BOUND_RTOL)))
    csv_path = args.csv or (Path(args.out).with_suffix(".csv") if args.out else None)
    if csv_path is not None:
        run.outputs.append(str(csv_path))
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "lhs", "rhs", "excess", "maxnorm", "relative_slack"])
            for i in range(args.samples):
                w.writerow([i, repr(float(res.lhs[i])), repr(float(res.rhs[i])), repr(float(res.excess[i])),
                            repr(float(res.maxnorm[i])), repr(float(slack[i]))])
    summary = {
        "tau": args.tau,
        "depth": args.depth,
        "dim": target.d,
        "samples": args.samples,
        "violations": violations,
        "min_relative_slack": float(slack.min()) if args.samples else None,
        "all_hold": violations == 0,
    }
    run.say(f"{args.samples} samples  violations {violations}  min relative slack {summary['min_relative_slack']}")
    run.write_json(args.out, summary)
    return EXIT_OK if violations == 0 else EXIT_BOUND


def cmd_train(args) -> int:
    run = Run(args, "train")
    try:
        obj = json.loads(Path(args.config).read_text())
        config = train.TrainConfig.from_json(obj)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed config: {exc}") from exc
    if args.seed is not None:
        config.seed = args.seed
    try:
        trace = train.run_gd(config)
    except Diverged as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        if args.trace and exc.trace is not None:
            exc.trace.write_csv(args.trace)
        return EXIT_DIVERGED
    if args.trace:
        trace.write_csv(args.trace)
        run.outputs.append(str(args.trace))
    last = trace.records[-1]
    from .matio import matrix_to_json

    payload = {
        "reason": trace.reason,
        "steps": last.step,
        "final_excess": last.excess,
        "final_grad_norm": last.grad_norm,
        "final_maxnorm": last.maxnorm,
        "left_ball": trace.left_ball,
        "config": config.to_json(),
        "layers": [matrix_to_json(A) for A in trace.final],
    }
    run.say(f"{trace.reason} after {last.step} steps, excess {last.excess:.3e}, grad norm {last.grad_norm:.3e}")
    run.write_json(args.out, payload)
    ok = trace.reason == "stop_excess" or (
        config.parameterization == "standard" and trace.reason == "stuck_critical_point"
    )
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _read_dataset_csv(path, normalize: bool) -> tuple[np.ndarray, np.ndarray]:
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise UsageError(f"cannot read data: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed data file {path}: {exc}") from exc
    if raw.shape[1] < 2 or raw.shape[0] < 1:
        raise DataError("data rows need at least one feature column and a label column")
    X, y = raw[:, :-1], raw[:, -1]
    if not np.all(np.isfinite(raw)) or not np.all(np.equal(np.mod(y, 1), 0)) or y.min() < 1:
        raise DataError("labels must be positive integers and features finite")
    if normalize:
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise DataError("a data row is the zero vector and cannot be normalized")
        X = X / norms[:, None]
    return X, y.astype(int)


def cmd_memorize(args) -> int:
    run = Run(args, "memorize")
    X, y = _read_dataset_csv(args.data, not args.no_normalize)
    rho = None if args.rho == "auto" else float(args.rho)
    seed = 0 if args.seed is None else args.seed
    try:
        data = memorize.Dataset(X, y, rho=rho)
        net = memorize.build_memorizer(data, seed=seed, c=args.c, retries=args.retries)
    except (DuplicatePoints, SeparationViolated, ProjectionFailed, SurrogateCorrelated) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MEMORIZE
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    rep = memorize.verify_fit(net, data)
    run.say(
        f"n={data.n} d={data.d} r={data.r} rho={data.rho:.6g} k={net.k} layers={net.ell} "
        f"params={net.parameter_count} (bound {net.parameter_bound()})\nfit fraction {rep.fraction} "
        f"max deviation {rep.max_deviation:.3e}"
    )
    run.write_json(args.out, net.to_json(), rho_used=data.rho)
    run.write_json(args.report, rep.to_json(), rho_used=data.rho)
    return EXIT_OK if rep.fraction == 1.0 else EXIT_CHECK_FAILED


def cmd_verify(args) -> int:
    run = Run(args, f"verify {args.what}")
    if args.what == "factorization":
        try:
            obj = json.loads(Path(args.report).read_text())
            stack = np.array([matrix_from_json(m) for m in obj["layers"]])
        except OSError as exc:
            raise UsageError(str(exc)) from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"malformed report: {exc}") from exc
        R = _read_target(args.target).R
        err = factorize.verify_factorization(stack, R)
        mn = float(factorize.maxnorm(stack))
        bound = obj.get("norm_bound_claimed")
        ok = err <= 1e-8 and (bound is None or mn <= bound)
        run.say(f"reconstruction {err:.3e}  maxnorm {mn:.6g}  claimed bound {bound}")
        run.write_json(args.out, {"reconstruction_rel_error": err, "maxnorm": mn, "ok": ok})
        return EXIT_OK if ok else EXIT_CHECK_FAILED

    try:
        net = memorize.MemorizerNet.from_json(json.loads(Path(args.net).read_text()))
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed network file: {exc}") from exc
    X, y = _read_dataset_csv(args.data, not args.no_normalize)
    data = memorize.Dataset(X, y, rho=None, r=net.r)
    rep = memorize.verify_fit(net, data)
    run.say(f"fit fraction {rep.fraction}  max deviation {rep.max_deviation:.3e}")
    run.write_json(args.out, rep.to_json())
    return EXIT_OK if rep.fraction == 1.0 else EXIT_CHECK_FAILED


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    p = _Parser(prog="idresnet", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="master seed for every random stage")
    p.add_argument("--out", type=Path, default=None, help="JSON output path")
    p.add_argument("--quiet", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("factorize", parents=[common], help="near-identity factorization of a target matrix")
    f.add_argument("--target", required=True, type=Path)
    f.add_argument("--depth", required=True, type=int)
    f.add_argument("--psd", action="store_true", help="use the equal-layer construction for symmetric PD targets")
    f.add_argument("--augment-neg-det", action="store_true", help="append a -1 dimension when det(R) < 0")
    f.add_argument("--rescale", action="store_true", help="rescale R so sigma_min * sigma_max = 1 first")
    f.set_defaults(func=cmd_factorize)

    ls = sub.add_parser("landscape", help="landscape experiments")
    lsub = ls.add_subparsers(dest="action", required=True, parser_class=_Parser)
    cb = lsub.add_parser("check-bound", parents=[common], help="sample B_tau and test the gradient lower bound")
    cb.add_argument("--target", required=True, type=Path)
    cb.add_argument("--tau", required=True, type=float)
    cb.add_argument("--samples", type=int, default=1000)
    cb.add_argument("--depth", type=int, default=4)
    cb.add_argument("--csv", type=Path, default=None, help="per-sample CSV (default: --out with .csv suffix)")
    cb.set_defaults(func=cmd_landscape)

    t = sub.add_parser("train", parents=[common], help="gradient descent on the population risk")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--trace", type=Path, default=None)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("memorize", parents=[common], help="construct a network that fits a dataset exactly")
    m.add_argument("--data", required=True, type=Path)
    m.add_argument("--rho", default="auto", help="separation, or 'auto' to measure it")
    m.add_argument("--report", type=Path, default=None)
    m.add_argument("--c", type=float, default=memorize.DEFAULT_C, help="width constant in k = c ln n / rho^2")
    m.add_argument("--retries", type=int, default=memorize.DEFAULT_RETRIES)
    m.add_argument("--no-normalize", action="store_true", help="require unit-norm rows instead of normalizing")
    m.set_defaults(func=cmd_memorize)

    v = sub.add_parser("verify", help="re-check a saved artifact")
    vsub = v.add_subparsers(dest="what", required=True, parser_class=_Parser)
    vf = vsub.add_parser("factorization", parents=[common])
    vf.add_argument("--report", required=True, type=Path)
    vf.add_argument("--target", required=True, type=Path)
    vf.set_defaults(func=cmd_verify)
    vm = vsub.add_parser("memorizer", parents=[common])
    vm.add_argument("--net", required=True, type=Path)
    vm.add_argument("--data", required=True, type=Path)
    vm.add_argument("--no-normalize", action="store_true")
    vm.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
