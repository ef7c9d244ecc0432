"""Command-line entry point: ``ironmask-lab <command> ...``.

Angles on the command line are in degrees; configs and reports store radians.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from ..code import CodeParams
from ..plra import AttackConfig, run_attack, run_attack_parallel
from ..sketch import DefenseParams, SketchRecord, authenticate, enroll, load_record, save_record
from ..sphere import RandomStream, angle, random_unit
from .experiments import ExperimentSpec, challenger_sample, load_templates
from .report import Report, render_tables, run_experiment, write_csvs

# CLI flag -> ExperimentSpec field, with a converter applied to the flag value
_SPEC_FLAGS = {
    "n": ("n", int),
    "alpha": ("alpha", int),
    "sketches": ("num_sketches", int),
    "k": ("k", int),
    "solver": ("solver", str),
    "theta_t": ("theta_t", math.radians),
    "noise": ("noise", math.radians),
    "trials": ("trials", int),
    "seed": ("seed", int),
    "workers": ("workers", int),
    "out": ("output_path", str),
    "template": ("template_path", str),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring ExperimentSpec; flags override it")
    p.add_argument("--n", type=int, help="template dimension")
    p.add_argument("--alpha", type=int, help="codeword weight")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", help="report JSON path, CSV tables go next to it (attack on record files: recovered template, raw float64)")
    p.add_argument("--template", help="template file (.csv, or raw little-endian float64 rows)")


def _attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sketches", type=int, help="number of sketches of the target")
    p.add_argument("--k", type=int, help="equations per sampled system")
    p.add_argument("--solver", choices=("svd", "lsa"))
    p.add_argument("--theta-t", type=float, help="threshold angle, degrees")
    p.add_argument("--noise", type=float, help="pairwise template noise, degrees")
    p.add_argument("--trials", type=int)


# per-command defaults, applied below any config file and flags
_SCENARIO_DEFAULTS = {
    "defense": {"alpha": 16, "n": 512, "trials": 2000},
    "tmto": {"n": 32, "alpha": 4, "trials": 20},
    "rotation": {"n": 512, "alpha": 16, "trials": 200, "theta_t": math.radians(30.0)},
}


def build_spec(args, scenario: str, **overrides) -> ExperimentSpec:
    data: dict = dict(_SCENARIO_DEFAULTS.get(scenario, {}))
    if getattr(args, "config", None):
        data.update(json.loads(Path(args.config).read_text()))
    data["scenario"] = scenario
    for flag, (name, conv) in _SPEC_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[name] = conv(val)
    data.update({k: v for k, v in overrides.items() if v is not None})
    if scenario in ("noiseless", "noisy"):
        data["scenario"] = "noisy" if data.get("noise", 0.0) > 0 else "noiseless"
    return ExperimentSpec.from_dict(data)


def _print_report(report: Report, out) -> None:
    for name, body in render_tables(report).items():
        print(f"# {name}", file=out)
        out.write(body)
    timing = report.metadata.get("timing")
    if timing:
        print(f"# timing: t_k={timing['t_k']:.6g}s  t_all={timing['t_all']:.6g}s", file=out)


# -- commands --------------------------------------------------------------


def cmd_sketch(args) -> int:
    if args.action == "enroll":
        params = CodeParams(args.n or 512, args.alpha or 16)
        stream = RandomStream(args.seed or 0)
        g = stream.generator()
        if args.template:
            w = load_templates(args.template, params.n)[args.row]
        else:
            w = random_unit(params.n, g)
        readings = challenger_sample(w, args.copies, math.radians(args.noise or 0.0), g)
        defense = DefenseParams(theta_a=math.radians(args.theta_a), n_fake=args.n_fake)
        out = Path(args.out or "record.json")
        out.parent.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, reading in enumerate(readings):
            rec = enroll(reading, params, defense, args.hash_cost, g, args.bind_matrix)
            path = out if args.copies == 1 else out.with_name(f"{out.stem}_{i:03d}{out.suffix}")
            save_record(rec, path)
            paths.append(path)
        if args.save_template:
            np.asarray(w, dtype="<f8").tofile(args.save_template)
        for p in paths:
            print(p)
        return 0
    # verify
    rec = load_record(args.record)
    query = load_templates(args.query, rec.params.n)[args.row]
    ok = authenticate(query, rec)
    print("accept" if ok else "reject")
    return 0 if ok else 1


def cmd_attack(args) -> int:
    if args.records:
        recs = [load_record(p) for p in args.records]
        if any(r.n_fake for r in recs):
            print("salted records: pass one decoy-free record per sketch", file=sys.stderr)
            return 2
        sketches = [SketchRecord(r.matrices[0], r.params) for r in recs]
        n = sketches[0].params.n
        config = AttackConfig(
            solver=args.solver or "lsa",
            k=args.k or min(n - 1, 40),
            theta_t=math.radians(args.theta_t if args.theta_t is not None else 10.0),
            max_outer_iterations=args.max_iterations,
            stream=RandomStream(args.seed or 0),
        )
        if (args.workers or 1) > 1:
            outcome = run_attack_parallel(sketches, config, args.workers)
        else:
            outcome = run_attack(sketches, config)
        print(f"accepted={outcome.accepted} iterations={outcome.outer_iterations}")
        if outcome.recovered is not None:
            if args.out:
                np.asarray(outcome.recovered, dtype="<f8").tofile(args.out)
                print(f"recovered template written to {args.out}")
            if args.truth:
                w = load_templates(args.truth, n)[0]
                err = min(angle(outcome.recovered, w), angle(outcome.recovered, -w))
                print(f"angle to truth: {math.degrees(err):.6f} deg")
        return 0 if outcome.accepted else 1
    spec = build_spec(args, "noiseless", max_outer_iterations=args.max_iterations)
    report = run_experiment(spec)
    _print_report(report, sys.stdout)
    att = report.results["attack"]
    print(f"success {att['successes']}/{len(att['trials'])}")
    return 0


def cmd_rates(args) -> int:
    spec = build_spec(
        args,
        "noiseless",
        measure="rates",
        trials_per_instance=args.per_instance,
        timing_solves=args.timing_solves,
        bernoulli_trials=args.bernoulli,
    )
    report = run_experiment(spec)
    _print_report(report, sys.stdout)
    return 0


def cmd_defense(args) -> int:
    theta_i = [math.radians(x) for x in args.theta_i]
    spec = build_spec(
        args,
        "defense",
        theta_i=theta_i,
        theta_a=math.radians(args.theta_a) if args.theta_a is not None else None,
        p_r_target=args.target,
        n_fake=args.n_fake,
    )
    report = run_experiment(spec)
    _print_report(report, sys.stdout)
    cross = report.results["defense"]["theta_i_at_target"]
    if cross is not None:
        print(f"theta_i at p_r={spec.p_r_target}: {math.degrees(cross):.3f} deg")
    return 0


def cmd_tmto(args) -> int:
    spec = build_spec(args, "tmto", m_rows=args.m_rows, bucket=args.bucket)
    report = run_experiment(spec)
    _print_report(report, sys.stdout)
    return 0


def cmd_rotation(args) -> int:
    spec = build_spec(args, "rotation", rotation_m=args.m)
    report = run_experiment(spec)
    _print_report(report, sys.stdout)
    rot = report.results["rotation"]
    print(f"success {rot['successes']}/{len(rot['trials'])}")
    return 0


def cmd_report(args) -> int:
    try:
        report = Report.load(args.report)
    except (UnicodeDecodeError, ValueError) as exc:
        print(f"error: {args.report} is not a report JSON ({exc})", file=sys.stderr)
        return 2
    if not report.check_t_all():
        print("warning: stored t_all disagrees with r_k t_k / (p_k p_f)", file=sys.stderr)
    if args.out:
        for p in write_csvs(report, Path(args.out)):
            print(p)
    else:
        _print_report(report, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ironmask-lab", description="Hypersphere secure-sketch cryptanalysis workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sketch", help="enroll templates into record files, or verify a query")
    p.add_argument("action", choices=("enroll", "verify"))
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--template", help="template file; a random template is drawn otherwise")
    p.add_argument("--row", type=int, default=0, help="row of the template/query file to use")
    p.add_argument("--copies", type=int, default=1, help="independent noisy enrollments of the template")
    p.add_argument("--noise", type=float, help="pairwise noise between copies, degrees")
    p.add_argument("--theta-a", type=float, default=0.0, help="extra enrollment noise, degrees")
    p.add_argument("--n-fake", type=int, default=0, help="decoy matrices per record")
    p.add_argument("--hash-cost", type=int, default=1)
    p.add_argument("--bind-matrix", action="store_true", help="commit to (c, M) instead of c")
    p.add_argument("--save-template", help="write the enrolled template as raw float64")
    p.add_argument("--out")
    p.add_argument("--record", help="record file (verify)")
    p.add_argument("--query", help="query template file (verify)")
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("attack", help="run the regression attack on record files or synthetic instances")
    _common(p)
    _attack_flags(p)
    p.add_argument("records", nargs="*", help="record files, one sketch each")
    p.add_argument("--max-iterations", type=int, default=100_000)
    p.add_argument("--truth", help="planted template file, to report the recovery angle")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("rates", help="estimate r_k, t_k, p_k, p_f on planted-correct systems")
    _common(p)
    _attack_flags(p)
    p.add_argument("--per-instance", type=int, default=100, help="planted trials per generated instance")
    p.add_argument("--timing-solves", type=int, default=0, help="pad t_k timing to this many solves")
    p.add_argument("--bernoulli", type=int, default=0, help="simulated sampler draws to cross-check r_k")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("defense", help="extra-noise defense sweep")
    _common(p)
    p.add_argument("--theta-i", type=float, nargs="+", default=[0.0], help="initial noise grid, degrees")
    p.add_argument("--theta-a", type=float, help="fixed extra noise, degrees (solved from theta_r otherwise)")
    p.add_argument("--target", type=float, default=0.9, help="p_r target for the crossing point")
    p.add_argument("--n-fake", type=int, default=0)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_defense)

    p = sub.add_parser("tmto", help="desk-scale meet-in-the-middle attack and cost model")
    _common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--m-rows", type=int, default=4)
    p.add_argument("--bucket", type=float, default=2.0**-20)
    p.set_defaults(func=cmd_tmto)

    p = sub.add_parser("rotation", help="attack on structured sketches M = T R")
    _common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--m", type=int, default=8, help="largest submatrix size")
    p.add_argument("--theta-t", type=float, help="acceptance angle, degrees")
    p.set_defaults(func=cmd_rotation)

    p = sub.add_parser("report", help="re-render a report JSON as CSV tables")
    p.add_argument("report")
    p.add_argument("--out", help="write CSVs next to this path instead of printing")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
