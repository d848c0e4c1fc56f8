"""Command-line entry point.

Subcommands:
  check   criterion report for a composition config -> CSV + verdict
  bump    minimal bump amplitude restoring criterion positivity
  sample  run a particle simulation -> samples CSV + diagnostics JSON
  sweep   collapse-prevalence counts over schedule triplets -> CSV
  bench   checker benchmark table -> CSV
  ablate  bump-sensitivity or ESS-ablation curves -> CSV

Exit codes: 0 success, 2 validation/config error, 3 collapsed-path abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from ratiopath import experiments
from ratiopath.composition import default_grid
from ratiopath.config import composition_from_file, load_config
from ratiopath.errors import CollapsedRunError, RatioPathError
from ratiopath.sampler import Method, SamplerConfig, force_final_resample, run

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_COLLAPSED = 3


def _parser():
    p = argparse.ArgumentParser(prog="ratiopath", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="composition config JSON")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add_common(sub.add_parser("check", help="criterion report"))
    sp.add_argument("--bump", type=float, default=None, help="bump amplitude to apply")
    sp.add_argument("--bump-index", type=int, default=None)

    sp = add_common(sub.add_parser("bump", help="minimal valid bump amplitude"))
    sp.add_argument("--bump-index", type=int, default=None)

    sp = add_common(sub.add_parser("sample", help="particle run"))
    sp.add_argument("--method", choices=[m.value for m in Method], default="ace")
    sp.add_argument("--bump", type=float, default=None)
    sp.add_argument("--bump-index", type=int, default=None)
    sp.add_argument("--particles", type=int, default=10000)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--ess-threshold", type=float, default=0.7)
    sp.add_argument("--trajectory-stride", type=int, default=0,
                    help="record every k-th step of the first particles to trajectory.csv")
    sp.add_argument("--trajectory-particles", type=int, default=200)

    sp = add_common(sub.add_parser("sweep", help="collapse prevalence"), config=False)
    sp.add_argument("--w", type=float, action="append", default=None,
                    help="guidance value (repeatable; default: the standard six)")

    sp = add_common(sub.add_parser("bench", help="checker benchmark"), config=False)
    sp.add_argument("--methods", default="nr,fkc,ace:10,ace:20,ace:30,ace:40,ace:50,ace:100")
    sp.add_argument("--seeds", default="0,1,2,3,4")
    sp.add_argument("--particles", type=int, default=10000)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--ess-threshold", type=float, default=0.7)

    sp = add_common(sub.add_parser("ablate", help="sensitivity curves"), config=False)
    sp.add_argument("--kind", choices=["bump", "ess"], required=True)
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--particles", type=int, default=10000)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--bumps", default="10,20,30,40,50,100")
    sp.add_argument("--taus", default="0.1,0.3,0.5,0.7,0.9")
    return p


def _sampler_times(n_steps):
    dt = 1.0 / n_steps
    return [dt / 2.0] + [k * dt for k in range(1, n_steps - 1)]


def _apply_bump(comp, bump, bump_index):
    if bump is None:
        return comp
    j = bump_index if bump_index is not None else comp.default_bump_index()
    return comp.with_bump(j, bump)


def cmd_check(args):
    comp = _apply_bump(composition_from_file(args.config), args.bump, args.bump_index)
    report = (comp.check_path_gaussian() if comp.all_gaussian() else comp.check_path())
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "criterion.csv")
    report.to_csv(path)
    if report.is_valid:
        print("verdict: Valid", file=sys.stderr)
    else:
        t_star, k_star = report.first_violation
        print(f"verdict: Collapsed (first violation t*={t_star:.4g}, "
              f"coordinate {k_star}; {report.collapse_fraction:.1%} of the grid)",
              file=sys.stderr)
    print(path)
    return EXIT_OK


def cmd_bump(args):
    comp = composition_from_file(args.config)
    b, report = comp.find_bump(j=args.bump_index)
    if b is None:
        print(f"no candidate bump restores validity (residual min C = "
              f"{report.c_min.min():.4g})", file=sys.stderr)
        return EXIT_INVALID
    print(f"minimal bump B = {b:g}")
    return EXIT_OK


def cmd_sample(args):
    times = _sampler_times(args.steps)
    comp = _apply_bump(composition_from_file(args.config, timesteps=times),
                       args.bump, args.bump_index)
    cfg = SamplerConfig(method=Method(args.method), n_particles=args.particles,
                        n_steps=args.steps, sigma=args.sigma,
                        ess_threshold=args.ess_threshold, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    traj_rows = []
    observer = None
    if args.trajectory_stride > 0:
        stride, n_keep = args.trajectory_stride, args.trajectory_particles

        def observer(k, snapshot):
            if k % stride == 0:
                for j in range(min(n_keep, snapshot.n)):
                    traj_rows.append((k, snapshot.t, j, *snapshot.positions[j]))

    ens, diag = run(comp, cfg, observer=observer)
    spath = os.path.join(args.out, "samples.csv")
    data = np.column_stack([ens.positions, ens.log_weights])
    header = ",".join([f"x{k}" for k in range(ens.positions.shape[1])] + ["log_weight"])
    np.savetxt(spath, data, delimiter=",", header=header, comments="")
    final = force_final_resample(ens, cfg)
    fpath = os.path.join(args.out, "samples_resampled.csv")
    np.savetxt(fpath, final, delimiter=",",
               header=",".join(f"x{k}" for k in range(final.shape[1])), comments="")
    dpath = os.path.join(args.out, "diagnostics.json")
    with open(dpath, "w") as f:
        json.dump(diag.to_dict(), f, indent=2)
    if traj_rows:
        tpath = os.path.join(args.out, "trajectory.csv")
        d = ens.positions.shape[1]
        header = ",".join(["step", "t", "particle"] + [f"x{k}" for k in range(d)])
        np.savetxt(tpath, np.array(traj_rows), delimiter=",", header=header, comments="")
    print(f"criterion verdict: {diag.criterion_verdict}", file=sys.stderr)
    print(spath)
    return EXIT_OK


def cmd_sweep(args):
    ws = tuple(args.w) if args.w else experiments.SWEEP_GUIDANCE_VALUES
    results = experiments.sweep_both_variants(ws)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["guidance_w", "poly_variant", "collapse_count",
                         "collapse_percent", "n_triplets"])
        for variant, res in results.items():
            for w, c in zip(res.guidance, res.counts):
                writer.writerow([w, variant, c, 100.0 * c / res.n_triplets,
                                 res.n_triplets])
    for variant, res in results.items():
        line = ", ".join(f"w={w:g}: {c}" for w, c in zip(res.guidance, res.counts))
        print(f"{variant}: {line}", file=sys.stderr)
    print(path)
    return EXIT_OK


def _parse_methods(spec):
    out = []
    for tok in spec.split(","):
        tok = tok.strip()
        if ":" in tok:
            name, b = tok.split(":")
            out.append((name, float(b)))
        else:
            out.append(tok)
    return out


def cmd_bench(args):
    methods = _parse_methods(args.methods)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows = experiments.checker_benchmark(
        methods=methods, seeds=seeds, n_particles=args.particles,
        n_steps=args.steps, sigma=args.sigma, ess_threshold=args.ess_threshold,
        progress=lambda r: print(
            f"{r.method} B={r.bump:g} seed={r.seed}: W1={r.w1:.3f}", file=sys.stderr))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "benchmark.csv")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "bump", "seed", "path_valid", "W1", "W2", "MMD",
                         "resamples", "nonfinite"])
        for r in rows:
            writer.writerow([r.method, r.bump, r.seed, "O" if r.path_valid else "X",
                             r.w1, r.w2, r.mmd, r.resamples, r.nonfinite])
    spath = os.path.join(args.out, "benchmark_summary.csv")
    summary = experiments.summarize_benchmark(rows)
    with open(spath, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "bump", "path_valid", "seeds",
                         "w1_min", "w1_mean", "w1_std",
                         "w2_min", "w2_mean", "w2_std",
                         "mmd_min", "mmd_mean", "mmd_std"])
        for s in summary:
            writer.writerow([s["method"], s["bump"], "O" if s["path_valid"] else "X",
                             s["seeds"], s["w1_min"], s["w1_mean"], s["w1_std"],
                             s["w2_min"], s["w2_mean"], s["w2_std"],
                             s["mmd_min"], s["mmd_mean"], s["mmd_std"]])
    print(path)
    return EXIT_OK


def cmd_ablate(args):
    seeds = tuple(int(s) for s in args.seeds.split(","))
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "bump":
        bumps = tuple(float(b) for b in args.bumps.split(","))
        res = experiments.bump_sensitivity(bumps=bumps, seeds=seeds,
                                           n_particles=args.particles,
                                           n_steps=args.steps)
        path = os.path.join(args.out, "bump_sensitivity.csv")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["bump", "w1_mean", "w1_std"])
            for c in res["curve"]:
                writer.writerow([c["bump"], c["w1_mean"], c["w1_std"]])
    else:
        taus = tuple(float(t) for t in args.taus.split(","))
        res = experiments.ess_ablation(thresholds=taus, seeds=seeds,
                                       n_particles=args.particles,
                                       n_steps=args.steps)
        path = os.path.join(args.out, "ess_ablation.csv")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["tau", "method", "w1_mean", "w1_std"])
            for key, curve in res["curves"].items():
                for c in curve:
                    writer.writerow([c["tau"], key, c["w1_mean"], c["w1_std"]])
    print(path)
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    handler = {
        "check": cmd_check, "bump": cmd_bump, "sample": cmd_sample,
        "sweep": cmd_sweep, "bench": cmd_bench, "ablate": cmd_ablate,
    }[args.command]
    try:
        return handler(args)
    except CollapsedRunError as exc:
        print(f"collapsed-path abort: {exc}", file=sys.stderr)
        return EXIT_COLLAPSED
    except RatioPathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
