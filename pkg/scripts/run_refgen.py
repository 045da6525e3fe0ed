"""Solve the shipped reference problems and write the reference files used by the scenarios."""

import argparse
import logging
import time
from pathlib import Path

from jetfault import multibody as mb
from jetfault import refgen

DATA = Path(refgen.__file__).resolve().parent / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("problems", nargs="*", default=["nofault", "arm_fault", "back_fault"])
    ap.add_argument("--out", type=Path, default=DATA / "references")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    model = mb.load_jetbot()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.problems:
        problem = refgen.load_problem(DATA / "problems" / f"{name}.json", model)
        t0 = time.perf_counter()
        x, report = refgen.solve_reference_problem(problem, model)
        ref = refgen.HoverReference.from_x(x, model, problem.name, report.to_dict())
        refgen.save_reference(args.out / f"{name}.json", ref, model)
        print(f"{name}: {time.perf_counter() - t0:.1f} s, feasible={report.feasible}, |Ldot|^2={report.equilibrium:.2e}")


if __name__ == "__main__":
    main()
