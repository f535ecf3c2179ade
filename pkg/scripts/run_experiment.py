"""Run one or more acceptance experiments and write their reports.

    python scripts/run_experiment.py coupling invariance --out runs/manual
"""
import argparse
import time
from pathlib import Path

from rilt.experiments import EXPERIMENTS, ReplicaStore, acceptance_plan, run_plan


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("experiments", nargs="+", choices=sorted(EXPERIMENTS))
    ap.add_argument("--out", default="runs/manual")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--replicas", type=int)
    args = ap.parse_args()
    for name in args.experiments:
        over = {"replicas": args.replicas} if args.replicas else {}
        plan = acceptance_plan(name, **over)
        out = Path(args.out) / f"{name}-{plan.config_hash}"
        t0 = time.time()
        rep = run_plan(plan, args.threads, ReplicaStore(out / "checkpoint.jsonl"))
        rep.write(out)
        for rule, flag in rep.flags.items():
            print(f"{rule} {'PASS' if flag['passed'] else 'FAIL'} {flag['value']}  ({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
