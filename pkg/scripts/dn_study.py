"""Quick look at D_n = |beta~_2(n, 0) - gamma^_2(n)| on a few coupled replicas."""
import argparse

import numpy as np

from rilt.experiments import _invariance_replica
from rilt.stats import loglog_slope

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicas", type=int, default=16)
    ap.add_argument("--exponents", default="10,12,14")
    args = ap.parse_args()
    ns = [2 ** int(e) for e in args.exponents.split(",")]
    taus = (0.2, 0.1, 0.05)
    D = []
    for n in ns:
        rows = [_invariance_replica("default", 2, n, 2.0**-8, 5, r, taus, False) for r in range(args.replicas)]
        d = np.array([abs(x["beta"] - x["gamma_hat"]) for x in rows])
        D.append(d)
        print(n, f"median={np.median(d):.4f} l2={np.sqrt(np.mean(d * d)):.4f}", flush=True)
    if len(ns) > 1:
        fit = loglog_slope(ns, D, "median")
        print(f"slope {fit.slope:.3f} CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
