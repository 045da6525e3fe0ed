"""Command-line entry point: ``jetfault simulate|refgen|plot|validate``."""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checks
from . import multibody as mb
from . import plotting
from . import refgen
from . import simulator as sim
from . import telemetry as tl

log = logging.getLogger("jetfault")


def resolve_data_file(value, kind):
    """A path, or the bare name of a shipped file under data/<kind>/."""
    path = Path(value)
    if path.exists():
        return path
    if not path.suffix:
        shipped = sim.data_dir() / kind / f"{value}.json"
        if shipped.exists():
            return shipped
    raise FileNotFoundError(f"{kind[:-1]} {value!r} not found")


def load_model_arg(value):
    return mb.load_model(value) if value else mb.load_jetbot()


def max_workers(n_jobs):
    env = os.environ.get("JETFAULT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def run_file_name(scenario, with_refgen, seed):
    return f"{scenario}_{'refgen' if with_refgen else 'norefgen'}_seed{seed}.csv"


def _run_repeat(job):
    model_path, scenario_path, with_refgen, seed, out_dir = job
    model = load_model_arg(model_path)
    spec = sim.load_scenario(scenario_path)
    run = sim.run_scenario(model, spec, with_refgen=with_refgen, seed=seed)
    path = Path(out_dir) / run_file_name(spec.name, with_refgen, seed)
    tl.write_telemetry(path, run)
    return str(path)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    scenario_path = resolve_data_file(args.scenario, "scenarios")
    spec = sim.load_scenario(scenario_path)
    load_model_arg(args.model)  # fail early on a bad model
    repeats = args.repeats or spec.repeats
    seed0 = spec.seed if args.seed is None else args.seed
    out = Path(args.out or Path("runs") / spec.name)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(args.model, str(scenario_path), args.with_refgen, seed0 + i, str(out)) for i in range(repeats)]
    workers = max_workers(len(jobs))
    log.info("simulate %s: %d repeat(s), %d worker(s), refgen=%s", spec.name, repeats, workers, args.with_refgen)
    if workers == 1:
        paths = [_run_repeat(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_run_repeat, jobs))
    # everything below works from the files alone
    logs = [tl.read_telemetry(p) for p in paths]
    threshold = spec.thresholds.get("hover_momentum_error")
    summary = tl.summarize(logs, threshold)
    summary["files"] = [Path(p).name for p in paths]
    tag = "refgen" if args.with_refgen else "norefgen"
    (out / f"summary_{tag}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    t, env = tl.envelopes(logs)
    tl.write_envelope_csv(out / f"envelope_{tag}.csv", t, env)
    if not args.no_plots:
        plotting.plot_run_set(logs, out, prefix=f"{tag}_")
    rec = summary["max_recovery_time"]
    print(
        f"{spec.name} ({tag}): {len(logs)} run(s), completed={summary['all_completed']}, "
        f"mean momentum-error integral={summary['mean_momentum_error_integral']:.4f}, "
        f"max recovery={'none' if rec is None else f'{rec:.2f} s'}"
    )
    aborted = [lg.header["seed"] for lg in logs if lg.aborted]
    if aborted:
        for lg in logs:
            if lg.aborted:
                print(f"seed {lg.header['seed']}: aborted ({lg.abort_reason})", file=sys.stderr)
        return 1
    return 0


def cmd_refgen(args):
    model = load_model_arg(args.model)
    problem_path = resolve_data_file(args.problem, "problems")
    problem = refgen.load_problem(problem_path, model)
    x, report = refgen.solve_reference_problem(problem, model)
    ref = refgen.HoverReference.from_x(x, model, problem.name, report.to_dict())
    out = Path(args.out or f"{problem.name}.json")
    if out.is_dir():
        out = out / f"{problem.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    refgen.save_reference(out, ref, model)
    report_path = out.with_suffix(".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if not report.feasible:
        print(f"{problem.name}: no feasible reference found", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args):
    if not args.files:
        print("plot: no telemetry files given", file=sys.stderr)
        return 2
    try:
        logs = [tl.read_telemetry(p) for p in args.files]
        tl.check_compatible(logs)
    except (tl.SchemaError, ValueError) as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 2
    for p in plotting.plot_run_set(logs, args.out, prefix=args.prefix):
        print(p)
    return 0


def cmd_validate(args):
    try:
        model = load_model_arg(args.model)
    except mb.ModelError as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return 1
    results = checks.static_checks(model) + checks.dynamics_checks(model, args.samples, args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.value:.3e} (tol {r.tolerance:g})")
    return 0 if all(r.ok for r in results) else 1


# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="jetfault", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario N times and write telemetry, summary and plots")
    p.add_argument("--scenario", required=True, help="scenario file or shipped name (nominal, arm_fault, back_fault)")
    p.add_argument("--model", help="robot description (default: shipped jetbot)")
    p.add_argument("--out", help="output directory (default: runs/<scenario>)")
    p.add_argument("--seed", type=int, help="seed of the first repeat; repeat i uses seed+i")
    p.add_argument("--repeats", type=int, help="number of repeats (default: from the scenario)")
    p.add_argument("--with-refgen", action=argparse.BooleanOptionalAction, default=False,
                   help="swap in the optimized fault reference on detection")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("refgen", help="solve a reference problem")
    p.add_argument("--problem", "--scenario", dest="problem", required=True, help="problem file or shipped name")
    p.add_argument("--model")
    p.add_argument("--out", help="reference file or directory")
    p.set_defaults(func=cmd_refgen)

    p = sub.add_parser("plot", help="render SVG panels from telemetry CSVs")
    p.add_argument("files", nargs="*")
    p.add_argument("--out", default=".")
    p.add_argument("--prefix", default="")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("validate", help="check a robot description")
    p.add_argument("--model")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, mb.ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
