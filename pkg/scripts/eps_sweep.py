"""Rate fits of the gluing run for eps/T in {1e-3, 1e-4, 1e-5}.

Writes eps_sweep.csv (eps_frac, converged, sweeps, mu_slope, u_slope, decades).
"""

import argparse
import csv
from pathlib import Path

from critheat.gluing import GluingConfig, run_gluing


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="critheat_out")
    ap.add_argument("--T", type=float, default=0.05)
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for eps_frac in (1e-3, 1e-4, 1e-5):
        res = run_gluing(GluingConfig(T=args.T, eps_frac=eps_frac))
        sweeps = len([h for h in res.history if "iteration" in h])
        rows.append((eps_frac, res.converged, sweeps, res.mu_fit.slope, res.u_fit.slope, res.mu_fit.decades))
        print(f"eps/T={eps_frac:g} converged={res.converged} mu={res.mu_fit.slope:.5f} "
              f"u={res.u_fit.slope:.5f} decades={res.mu_fit.decades:.2f}")
    with (out / "eps_sweep.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eps_frac", "converged", "sweeps", "mu_slope", "u_slope", "decades"])
        wr.writerows([[repr(float(r[0])), str(r[1]).lower(), r[2], *(repr(float(v)) for v in r[3:])] for r in rows])


if __name__ == "__main__":
    main()
