"""
Calibrate the lighting noise presets against target detection rates.

For each preset, p_miss and the jitter are held fixed and p_misclass is swept
over a grid; the Monte-Carlo exact-detection rate over the bundled scenarios
is printed for every grid point, and the value closest to the target is
reported. The chosen values are locked into perception.LIGHTING_PRESETS by
hand.

Usage:
  python scripts/calibrate_presets.py                      # 1000 trials per scenario
  python scripts/calibrate_presets.py --trials 2000 --seed 3
  python scripts/calibrate_presets.py --scenarios data/scenarios/bundled --step 0.002
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np
from tqdm import tqdm

from config import BUNDLED_DIR
from perception import LIGHTING_PRESETS, exact_rate
from scene import Lighting, load_scenario, scenario_files

TARGETS = {Lighting.OPTIMAL: 0.80, Lighting.INADEQUATE: 0.60}
SWEEP_HALF_WIDTH = 0.03


def calibrate(scenarios, lighting: Lighting, trials: int, seed: int, step: float) -> tuple[float, float]:
    base = LIGHTING_PRESETS[lighting]
    target = TARGETS[lighting]
    lo = max(0.0, base.p_misclass - SWEEP_HALF_WIDTH)
    hi = min(1.0, base.p_misclass + SWEEP_HALF_WIDTH)
    grid = np.round(np.arange(lo, hi + step / 2, step), 4)

    print(f"\n{lighting.value}: p_miss={base.p_miss}, jitter={base.jitter_sigma} cells, target {target:.2f}")
    print(f"  {'p_misclass':>10}  {'exact-rate':>10}")
    best = None
    for p in tqdm(grid, desc=lighting.value, leave=False, file=sys.stderr):
        rate = exact_rate(scenarios, replace(base, p_misclass=float(p)), trials, seed)
        marker = ""
        if best is None or abs(rate - target) < abs(best[1] - target):
            best = (float(p), rate)
            marker = "  <"
        print(f"  {p:>10.4f}  {rate:>10.4f}{marker}")
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description="Calibrate perception noise presets")
    parser.add_argument("--scenarios", type=Path, default=BUNDLED_DIR)
    parser.add_argument("--trials", type=int, default=1000, help="trials per scenario")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--step", type=float, default=0.004, help="p_misclass grid step")
    args = parser.parse_args()

    paths = scenario_files(args.scenarios)
    if not paths:
        print(f"ERROR: no scenario files under {args.scenarios}", file=sys.stderr)
        sys.exit(1)
    scenarios = [load_scenario(p) for p in paths]
    print(f"Calibrating on {len(scenarios)} scenarios x {args.trials} trials")

    for lighting in TARGETS:
        p, rate = calibrate(scenarios, lighting, args.trials, args.seed, args.step)
        print(f"  best: p_misclass={p:.4f} -> {rate:.4f} (currently {LIGHTING_PRESETS[lighting].p_misclass})")


if __name__ == "__main__":
    main()
