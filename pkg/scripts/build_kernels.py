"""Tabulate and cache the potential kernel of the default law at the radii the experiments use."""
import time

from rilt.increment_law import default_law
from rilt.kernel import build_kernel, cache_path

if __name__ == "__main__":
    law = default_law()
    for radius in (64, 128):
        t0 = time.time()
        table = build_kernel(law, radius)
        print(f"R={radius} kappa={table.kappa:.12f} quad_err={table.quadrature_error:.1e} {time.time() - t0:.1f}s")
