"""Pick the per-sample energy scale used by the simulation defaults.

Sensing energies are ``scale * (5.0, 5.5, ..., 9.5)`` and the per-sample
overhead is ``2 * scale``. For each integer scale the one-device battery sweep
is run and its residual-energy percentages are inspected; the chosen scale is
the smallest one where every step of the sweep lowers the residual percentage
by at least ``--min-drop`` (relative). With the shipped defaults that is 8.

    python3 scripts/calibrate_energy.py --iterations 300
"""

import argparse
from dataclasses import replace

from edsa_market.sim import BASELINE, sweep_battery

BASE = tuple(5.0 + 0.5 * j for j in range(10))


def residual_steps(scale: int, iterations: int, jobs: int):
    cfg = replace(BASELINE, devices=1, iterations=iterations,
                  e_sense=tuple(scale * b for b in BASE), e_overhead=2.0 * scale)
    res = sweep_battery(cfg, jobs=jobs)
    pct = [p.mean_residual_pct for p in res.points]
    drops = [(a - b) / a if a > 0 else 0.0 for a, b in zip(pct, pct[1:])]
    return pct, drops, res.fit["correlation"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", default="1-12", help="inclusive integer range, e.g. 1-12")
    ap.add_argument("--iterations", type=int, default=BASELINE.iterations)
    ap.add_argument("--min-drop", type=float, default=0.15)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    lo, hi = (int(x) for x in args.scales.split("-"))
    chosen = None
    for scale in range(lo, hi + 1):
        pct, drops, corr = residual_steps(scale, args.iterations, args.jobs)
        ok = all(d >= args.min_drop for d in drops)
        print(f"scale {scale:2d}  corr {corr:.4f}  residual% "
              + " ".join(f"{x:6.2f}" for x in pct)
              + "  min step drop " + f"{min(drops):.3f}" + ("  <- ok" if ok else ""))
        if ok and chosen is None:
            chosen = scale
    print(f"chosen scale: {chosen}")
    return 0 if chosen is not None else 1


if __name__ == "__main__":
    raise SystemExit(main())
