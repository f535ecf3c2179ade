"""Command-line entry point: ``rilt <subcommand> [flags]``.

Exit codes: 0 success, 1 validation failure (bad config, non-compliant or
refused law), 2 an acceptance flag failed, 64 usage error.  Every run writes
under ``<out-root>/<subcommand>-<config hash>``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_FLAG, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("rilt")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _offsets(text: str) -> tuple[tuple[int, int], ...]:
    """'0,0;1,-1' -> ((0, 0), (1, -1))."""
    if not text.strip():
        return ()
    out = []
    for part in text.split(";"):
        a, b = part.split(",")
        out.append((int(a), int(b)))
    return tuple(out)


def run_dir(args, name: str, config: dict) -> Path:
    blob = json.dumps(config, sort_keys=True, default=str)
    h = hashlib.sha256(blob.encode()).hexdigest()[:12]
    d = Path(args.out_root) / f"{name}-{h}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(config, sort_keys=True, indent=1, default=str))
    return d


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=float))


# ---------------------------------------------------------------- subcommands


def cmd_law_validate(args) -> int:
    from .increment_law import resolve_law, validate

    rep = validate(resolve_law(args.law), args.grid)
    _emit({**rep.as_dict(), "compliant": rep.compliant, "failures": rep.failures()})
    return EXIT_OK if rep.compliant else EXIT_INVALID


def cmd_kernel(args) -> int:
    from .kernel import build_kernel, fit_kappa

    from .increment_law import resolve_law

    law = resolve_law(args.law)
    table = build_kernel(law, args.radius)
    fit = fit_kappa(table, *table.kappa_fit_range) if table.kappa_fit_range else None
    out = Path(args.out) if args.out else run_dir(args, "kernel", vars_of(args)) / "kernel.bin"
    table.save(out)
    _emit(
        {
            "law": law.name,
            "radius": table.radius,
            "kappa": table.kappa,
            "quadrature_error": table.quadrature_error,
            "kappa_residual_max": float(fit.residual.max()) if fit else None,
            "out": str(out),
        }
    )
    return EXIT_OK


def cmd_count(args) -> int:
    from .chains import ChainSpec, count_family, renormalize
    from .experiments import load_kernel
    from .increment_law import resolve_law
    from .walk import simulate

    offs = _offsets(args.offsets)
    spec = ChainSpec(args.k, offs)
    path = simulate(resolve_law(args.law), args.n, args.seed, args.stream)
    if args.dump_path:
        path.dump(args.dump_path)
    fam = count_family(path, spec)
    B = fam[spec].running
    out = {"k": args.k, "offsets": offs, "n": args.n, "B_k": int(B[-1])}
    if args.n >= 1:
        table = load_kernel(args.law, args.radius)
        Bt = renormalize(fam, spec, table, args.n).values
        out["B_tilde"] = float(Bt[-1])
        out["beta_tilde"] = float(Bt[-1] / args.n)
        if args.csv:
            with open(args.csv, "w") as fh:
                fh.write("i,B_k,B_tilde\n")
                for i, (b, bt) in enumerate(zip(B, Bt)):
                    fh.write(f"{i},{int(b)},{bt:.17g}\n")
    _emit(out)
    return EXIT_OK


def cmd_martingale_check(args) -> int:
    from .chains import ChainSpec
    from .experiments import load_kernel
    from .increment_law import resolve_law
    from .martingale import exact_onestep_check
    from .walk import philox, simulate

    law = resolve_law(args.law)
    table = load_kernel(args.law, args.radius)
    rng = philox(args.seed, 2)
    res = []
    for r in range(args.replicas):
        n = int(rng.integers(1, args.n + 1))
        offs = _offsets(args.offsets) if args.offsets else tuple(
            tuple(int(v) for v in rng.integers(-2, 3, size=2)) for _ in range(args.k - 1)
        )
        pos = simulate(law, n - 1, args.seed, r).positions
        res.append(exact_onestep_check(pos, ChainSpec(args.k, offs), table, m=n))
    res = np.array(res)
    report = {
        "k": args.k,
        "replicas": args.replicas,
        "max": float(res.max()),
        "median": float(np.median(res)),
        "tolerance": args.tolerance,
        "passed": bool(res.max() <= args.tolerance),
    }
    d = run_dir(args, "martingale-check", vars_of(args))
    (d / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_FLAG


def cmd_couple(args) -> int:
    from .coupling import couple
    from .increment_law import resolve_law

    law = resolve_law(args.law)
    sups, clocks = [], []
    for r in range(args.replicas):
        cp = couple(law, args.n, args.delta, seed=args.seed, stream=r)
        sups.append(cp.sup_distance)
        clocks.append((cp.embed_times[:, -1] / max(args.n, 1)).tolist())
        if args.dump_bm and r == 0:
            cp.bm.astype("<f8").tofile(args.dump_bm)
    report = {"n": args.n, "delta": args.delta, "sup": sups, "median_sup": float(np.median(sups)), "clock": clocks}
    d = run_dir(args, "couple", vars_of(args))
    (d / "report.json").write_text(json.dumps(report, indent=1))
    _emit({k: report[k] for k in ("n", "delta", "median_sup")})
    return EXIT_OK


def cmd_gamma(args) -> int:
    from .coupling import brownian_path, mollified_gamma

    vals = []
    for r in range(args.replicas):
        est = mollified_gamma(brownian_path(args.m, args.seed, r), args.tau, args.k)
        vals.append({"value": est.value, "components": est.components.tolist(), "l_f_tau": est.l_f_tau})
    mean = float(np.mean([v["value"] for v in vals]))
    report = {"k": args.k, "tau": args.tau, "m": args.m, "mean": mean, "replicas": vals}
    d = run_dir(args, "gamma", vars_of(args))
    (d / "report.json").write_text(json.dumps(report, indent=1))
    _emit({"k": args.k, "tau": args.tau, "mean": mean})
    return EXIT_OK


def _plan_command(args, experiment: str) -> int:
    from .experiments import ExperimentPlan, ReplicaStore, acceptance_plan, run_plan

    if args.config:
        plan = ExperimentPlan.from_json(args.config)
        if plan.experiment != experiment and experiment != "report":
            raise ValueError(f"experiment: config is for {plan.experiment!r}, not {experiment!r}")
    else:
        over = {"law": args.law}
        for key in ("replicas", "seed", "k"):
            v = getattr(args, key, None)
            if v is not None:
                over[key] = v
        if getattr(args, "n_grid", None):
            over["n_grid"] = tuple(int(v) for v in args.n_grid.split(","))
        plan = acceptance_plan(args.experiment if experiment == "report" else experiment, **over)
    out = Path(plan.output) if plan.output else Path(args.out_root) / f"{plan.experiment}-{plan.config_hash}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(plan.as_dict(), indent=1, sort_keys=True))
    report = run_plan(plan, args.threads, ReplicaStore(out / "checkpoint.jsonl"))
    report.write(out)
    _emit({"out": str(out), "flags": {r: f["passed"] for r, f in report.flags.items()}, "hash": report.report_hash})
    return EXIT_OK if report.passed else EXIT_FLAG


def cmd_invariance(args) -> int:
    return _plan_command(args, "invariance")


def cmd_holder(args) -> int:
    return _plan_command(args, "holder")


def cmd_report(args) -> int:
    if args.collect:
        rows = []
        for p in sorted(Path(args.collect).glob("*/report.json")):
            rep = json.loads(p.read_text())
            for rule, f in sorted(rep.get("flags", {}).items()):
                rows.append({"run": p.parent.name, "rule": rule, "passed": f["passed"]})
        _emit(rows)
        return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FLAG
    if not args.experiment and not args.config:
        raise ValueError("experiment: give --experiment, --config or --collect")
    return _plan_command(args, "report")


def vars_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "threads", "out_root")}


# ---------------------------------------------------------------- parser


def build_parser() -> Parser:
    p = Parser(prog="rilt", description="Renormalized intersection local times of planar walks.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    def add(name, func, **kw):
        s = sub.add_parser(name, **kw)
        s.set_defaults(func=func)
        s.add_argument("--law", default="default", help="built-in name or JSON law file")
        s.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        s.add_argument("--out-root", default="runs")
        s.add_argument("--seed", type=int, default=0)
        return s

    s = add("law-validate", cmd_law_validate)
    s.add_argument("--grid", type=int, default=256)

    s = add("kernel", cmd_kernel)
    s.add_argument("--radius", type=int, default=64)
    s.add_argument("--out")

    s = add("count", cmd_count)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--offsets", default="0,0")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--stream", type=int, default=0)
    s.add_argument("--radius", type=int, default=64)
    s.add_argument("--csv")
    s.add_argument("--dump-path")

    s = add("martingale-check", cmd_martingale_check)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--replicas", type=int, default=100)
    s.add_argument("--tolerance", type=float, default=1e-8)
    s.add_argument("--offsets")
    s.add_argument("--radius", type=int, default=64)

    s = add("couple", cmd_couple)
    s.add_argument("--n", type=int, default=4096)
    s.add_argument("--delta", type=float, default=2.0**-6)
    s.add_argument("--replicas", type=int, default=8)
    s.add_argument("--dump-bm")

    s = add("gamma", cmd_gamma)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--m", type=int, default=1 << 14)
    s.add_argument("--replicas", type=int, default=8)

    for name, func in (("invariance", cmd_invariance), ("holder", cmd_holder)):
        s = add(name, func)
        s.add_argument("--config")
        s.add_argument("--replicas", type=int)
        s.add_argument("--n-grid")
        s.add_argument("--k", type=int)
        s.set_defaults(seed=None)

    s = add("report", cmd_report)
    s.add_argument("--experiment")
    s.add_argument("--config")
    s.add_argument("--collect")
    s.add_argument("--replicas", type=int)
    s.add_argument("--n-grid")
    s.set_defaults(seed=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"rilt: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    from .increment_law import LawError
    from .kernel import KernelError

    try:
        return args.func(args)
    except (LawError, KernelError, ValueError, FileNotFoundError) as e:
        print(f"rilt {args.command}: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
