"""Run the shipped scenarios through the CLI and print a comparison table.

Fault scenarios are run with and without the fault reference; outputs land in
``<out>/<scenario>/`` exactly as ``jetfault simulate`` writes them.
"""

import argparse
import json
from pathlib import Path

from jetfault import cli

RUNS = [("nominal", False), ("arm_fault", True), ("arm_fault", False), ("back_fault", True), ("back_fault", False)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--repeats", type=int, help="override the scenario repeat count")
    ap.add_argument("--no-plots", action="store_true")
    args = ap.parse_args()

    rows = []
    for scenario, refgen in RUNS:
        out = args.out / scenario
        argv = ["simulate", "--scenario", scenario, "--out", str(out), "--with-refgen" if refgen else "--no-with-refgen"]
        if args.repeats:
            argv += ["--repeats", str(args.repeats)]
        if args.no_plots:
            argv.append("--no-plots")
        rc = cli.main(argv)
        tag = "refgen" if refgen else "norefgen"
        s = json.loads((out / f"summary_{tag}.json").read_text())
        rows.append((scenario, tag, rc, s))

    print()
    print(f"{'scenario':<12}{'mode':<10}{'runs':>5}{'completed':>11}{'mean integral':>15}{'max recovery [s]':>18}")
    for scenario, tag, rc, s in rows:
        rec = s["max_recovery_time"]
        print(
            f"{scenario:<12}{tag:<10}{len(s['runs']):>5}{str(s['all_completed']):>11}"
            f"{s['mean_momentum_error_integral']:>15.3f}{'-' if rec is None else f'{rec:.2f}':>18}"
            + ("" if rc == 0 else "  (aborted runs)")
        )


if __name__ == "__main__":
    main()
