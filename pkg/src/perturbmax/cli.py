"""Command-line entry point: reproducible experiments with CSV/JSON outputs.

Every run writes its data files plus one manifest JSON echoing the full
configuration, the seed, and the output list.  All randomness flows from
--seed through counter-based streams, and reductions happen in a fixed
order regardless of --jobs, so identical command lines give byte-identical
data files.  Exit codes: 0 success, 2 precondition error, 3 invariant
violation, 64 usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .bounds import lower_bound_logz, upper_bound_logz
from .concentration import (
    best_deviation,
    deviation_histogram,
    deviation_radius_poincare,
    deviation_radius_sobolev,
    mgf_bound_poincare,
    mgf_bound_sobolev,
)
from .entropy import (
    marginal_entropy_bound,
    perturbmax_distribution,
    perturbmax_run,
)
from .errors import InvariantViolation, PerturbMaxError, PreconditionError
from .learning import (
    generate_denoising_dataset,
    test_error,
    train,
    write_text_image,
)
from .model import SpinGlassSpec, generate_spin_glass, save_model
from .oracle import cached_summary, energy_table, exact_bruteforce, exact_transfer_matrix
from .sampler import SamplerConfig, complexity_profile, sample_many

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_INVARIANT = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise PreconditionError(f"bad size {text!r}, expected HxW") from exc


def _parse_sweep(text: str) -> list[float]:
    """start:stop:count inclusive sweep, or a comma list."""
    if ":" in text:
        start, stop, count = text.split(":")
        return list(np.linspace(float(start), float(stop), int(count)))
    return [float(v) for v in text.split(",")]


def _write_csv(path, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in fieldnames})


def _write_rows(args, stem: str, rows: list[dict], fieldnames: list[str]) -> str:
    if args.format == "json":
        path = os.path.join(args.out_dir, stem + ".json")
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    else:
        path = os.path.join(args.out_dir, stem + ".csv")
        _write_csv(path, rows, fieldnames)
    return path


def _manifest(args, command: str, outputs: list[str], started: float) -> None:
    doc = {
        "command": command,
        "config": {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func",)
        },
        "seed": getattr(args, "seed", None),
        "artifact_version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": [os.path.basename(p) for p in outputs],
    }
    path = os.path.join(args.out_dir, f"{command}_manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pmap(fn, items, jobs: int):
    """Order-preserving map, optionally across processes."""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- subcommands ---------------------------------------------------------------


def cmd_gen(args):
    h, w = _parse_size(args.size)
    spec = SpinGlassSpec(h, w, args.f, args.c, args.mode, args.seed)
    model = generate_spin_glass(spec)
    path = args.out or os.path.join(args.out_dir, "model.json")
    save_model(model, path)
    return EXIT_OK, [path]


def cmd_verify(args):
    """Dual-oracle and identity checks; nonzero exit on violation."""
    h, w = _parse_size(args.size)
    report = {"instances": [], "max_logz_gap": 0.0, "max_duality_gap": 0.0,
              "max_derivative_relerr": 0.0}
    failures = []
    for k in range(args.instances):
        spec = SpinGlassSpec(h, w, args.f, args.c, "attractive", args.seed + k)
        model = generate_spin_glass(spec)
        brute = exact_bruteforce(model)
        transfer = exact_transfer_matrix(model)
        gap = abs(brute.log_partition - transfer.log_partition)
        report["max_logz_gap"] = max(report["max_logz_gap"], gap)
        if gap > 1e-9:
            failures.append(f"instance {k}: oracle log Z gap {gap:.3e}")

        energies = energy_table(model)
        duality = abs(
            brute.entropy
            - (brute.log_partition - float((brute.gibbs_table * energies).sum()))
        )
        report["max_duality_gap"] = max(report["max_duality_gap"], duality)
        if duality > 1e-9:
            failures.append(f"instance {k}: entropy duality gap {duality:.3e}")

        # finite-difference Gibbs derivative at the most likely configuration
        step = 1e-5
        target = int(np.argmax(brute.gibbs_table))
        relerr = _gibbs_derivative_relerr(energies, target, step, brute.gibbs_table)
        report["max_derivative_relerr"] = max(report["max_derivative_relerr"], relerr)
        if relerr > 1e-4:
            failures.append(f"instance {k}: Gibbs derivative relerr {relerr:.3e}")
        report["instances"].append(
            {"seed": spec.seed, "log_z": brute.log_partition,
             "logz_gap": gap, "duality_gap": duality, "derivative_relerr": relerr}
        )
    report["ok"] = not failures
    report["failures"] = failures
    path = args.out or os.path.join(args.out_dir, "verify_report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if failures:
        raise InvariantViolation("; ".join(failures))
    return EXIT_OK, [path]


def _gibbs_derivative_relerr(energies, target, step, gibbs_table) -> float:
    """d log Z / d theta(x) vs p(x) by central differences on the score vector."""
    from scipy.special import logsumexp

    plus = energies.copy()
    plus[target] += step
    minus = energies.copy()
    minus[target] -= step
    fd = (logsumexp(plus) - logsumexp(minus)) / (2 * step)
    p = float(gibbs_table[target])
    return abs(fd - p) / max(p, 1e-300)


def _bounds_one(task) -> dict:
    spec, samples, replication = task
    model = generate_spin_glass(spec)
    summary = cached_summary(model)
    upper = upper_bound_logz(model, samples=samples, seed=spec.seed)
    lower = lower_bound_logz(model, replication, seed=spec.seed)
    return {
        "instance_seed": spec.seed,
        "c": spec.coupling_range,
        "f": spec.field_range,
        "oracle_logz": summary.log_partition,
        "upper_mean": upper.mean,
        "upper_dev": upper.deviation_radius,
        "lower_value": lower.mean,
        "gap": upper.mean - lower.mean,
    }


def cmd_bounds(args):
    h, w = _parse_size(args.size)
    tasks = []
    for c in _parse_sweep(args.c_sweep):
        for k in range(args.instances):
            spec = SpinGlassSpec(h, w, args.f, c, "attractive",
                                 args.seed + 1000 * k)
            tasks.append((spec, args.M, args.replication))
    rows = _pmap(_bounds_one, tasks, args.jobs)
    path = _write_rows(args, "bounds", rows,
                       ["instance_seed", "c", "f", "oracle_logz", "upper_mean",
                        "upper_dev", "lower_value", "gap"])
    return EXIT_OK, [path]


def cmd_sample(args):
    config = SamplerConfig(m_phi=args.m_phi, max_restarts=args.max_restarts,
                           seed=args.seed)
    if args.profile_sizes:
        specs = []
        for size in args.profile_sizes.split(","):
            h, w = _parse_size(size)
            for k in range(args.profile_seeds):
                specs.append(SpinGlassSpec(h, w, args.f, args.c, "attractive",
                                           args.seed + 1000 * k))
        rows = complexity_profile(specs, config)
        path = _write_rows(args, "complexity_profile", rows,
                           ["height", "width", "n", "seed", "c", "f",
                            "upper_mean", "lower_value", "gap",
                            "gap_per_variable", "oracle_logz", "upper_minus_logz"])
        return EXIT_OK, [path]

    h, w = _parse_size(args.size)
    spec = SpinGlassSpec(h, w, args.f, args.c, "attractive", args.seed)
    model = generate_spin_glass(spec)
    samples, traces = sample_many(model, args.count, config)
    rows = [
        {**{f"x{i}": int(v) for i, v in enumerate(s)}}
        for s in samples
    ]
    path = _write_rows(args, "samples", rows, [f"x{i}" for i in range(model.num_variables)])
    summary = {
        "accepted": len(samples),
        "total_passes": traces[-1].restarts + len(traces) if traces else 0,
        "mean_map_calls": float(np.mean([t.map_calls for t in traces])),
        "negative_reject_clamps": int(sum(t.negative_reject_clamps for t in traces)),
    }
    spath = os.path.join(args.out_dir, "sample_trace.json")
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return EXIT_OK, [path, spath]


def cmd_entropy(args):
    h, w = _parse_size(args.size)
    rows = []
    for c in _parse_sweep(args.c_sweep):
        for k in range(args.instances):
            spec = SpinGlassSpec(h, w, args.f, c, "attractive",
                                 args.seed + 1000 * k)
            model = generate_spin_glass(spec)
            run = perturbmax_run(model, samples=args.M, seed=spec.seed)
            bound = float(run.gumbel_sums.mean())
            oracle_entropy = None
            if model.num_configs <= (1 << 16):
                dist = perturbmax_distribution(model, run=run)
                marginal = marginal_entropy_bound(dist.marginals(model))
                empirical = dist.plugin_entropy()
                summary = cached_summary(model)
                oracle_entropy = summary.entropy
            else:
                dist = None
                marginal = None
                empirical = None
            rows.append({
                "seed": spec.seed, "c": c, "f": args.f,
                "oracle_entropy": oracle_entropy,
                "perturbmax_bound": bound,
                "marginal_bound": marginal,
                "empirical_pm_entropy": empirical,
            })
    path = _write_rows(args, "entropy", rows,
                       ["seed", "c", "f", "oracle_entropy", "perturbmax_bound",
                        "marginal_bound", "empirical_pm_entropy"])
    return EXIT_OK, [path]


def cmd_concentration(args):
    outputs = []
    a = args.a
    lam_rows = []
    for lam in np.linspace(0, 0.99 / a, args.lambda_points):
        lam_rows.append({
            "lambda": lam,
            "alpha": mgf_bound_poincare(lam, a),
            "beta": mgf_bound_sobolev(lam, a),
        })
    outputs.append(_write_rows(args, "mgf_table", lam_rows, ["lambda", "alpha", "beta"]))

    radius_rows = []
    for m in _parse_sweep(args.m_sweep):
        m = int(m)
        radius_rows.append({
            "M": m, "delta": args.delta,
            "radius_poincare": deviation_radius_poincare(a, m, args.delta),
            "radius_sobolev": deviation_radius_sobolev(a, m, args.delta),
            "radius_best": best_deviation(a, m, args.delta),
        })
    outputs.append(_write_rows(args, "radius_table", radius_rows,
                               ["M", "delta", "radius_poincare", "radius_sobolev",
                                "radius_best"]))

    if args.histogram_size:
        h, w = _parse_size(args.histogram_size)
        spec = SpinGlassSpec(h, w, args.f, args.c, "attractive", args.seed)
        model = generate_spin_glass(spec)
        hist = deviation_histogram(
            model, statistic=args.statistic, samples_per_mean=args.M_per_mean,
            trials=args.trials, seed=args.seed,
        )
        rows = [
            {"trial": t, "abs_deviation": float(d)}
            for t, d in enumerate(hist.deviations)
        ]
        outputs.append(_write_rows(args, "histogram", rows, ["trial", "abs_deviation"]))
        bound_rows = hist.bound_rows([0.5, 0.1, args.delta])
        outputs.append(_write_rows(args, "histogram_bounds", bound_rows,
                                   ["delta", "radius_poincare", "radius_sobolev",
                                    "radius_best", "empirical_exceedance"]))
    return EXIT_OK, outputs


def cmd_learn(args):
    dataset = generate_denoising_dataset(
        args.height, args.width, args.train_images, args.test_images,
        args.noise, args.seed,
    )
    params = train(
        dataset, iterations=args.iters, perturbation_samples=args.M,
        seed=args.seed, regularizer=args.reg, step_size=args.step,
    )
    err = test_error(params, dataset)
    outputs = []
    ppath = os.path.join(args.out_dir, "params.json")
    with open(ppath, "w") as fh:
        json.dump({
            "theta_unary": params.theta_unary.tolist(),
            "theta_pair": params.theta_pair.tolist(),
            "regularizer": params.regularizer,
            "test_pixel_error": err,
        }, fh, indent=2)
        fh.write("\n")
    outputs.append(ppath)
    trace_rows = [{"iteration": i, "objective": v} for i, v in enumerate(params.trace)]
    outputs.append(_write_rows(args, "learn_trace", trace_rows, ["iteration", "objective"]))
    img_path = os.path.join(args.out_dir, "clean.pbm")
    write_text_image(img_path, dataset.clean)
    outputs.append(img_path)
    if len(dataset.test_observed):
        from .learning import predict

        noisy_path = os.path.join(args.out_dir, "test0_observed.pbm")
        write_text_image(noisy_path, dataset.test_observed[0])
        den_path = os.path.join(args.out_dir, "test0_denoised.pbm")
        write_text_image(den_path, predict(params, dataset.test_observed[0]))
        outputs.extend([noisy_path, den_path])
    return EXIT_OK, outputs


def build_parser() -> _Parser:
    parser = _Parser(prog="perturbmax",
                     description="Perturb-max inference experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("gen", help="generate a spin-glass model JSON")
    common(p)
    p.add_argument("--size", required=True)
    p.add_argument("--f", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--mode", choices=("attractive", "mixed"), default="attractive")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="dual-oracle and identity checks")
    common(p)
    p.add_argument("--size", default="3x3")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--f", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bounds", help="log-partition bracketing sweep")
    common(p)
    p.add_argument("--size", default="10x10")
    p.add_argument("--c-sweep", default="0:4:9")
    p.add_argument("--f", type=float, default=1.0)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--replication", type=int, default=100)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sample", help="sequential Gibbs sampler")
    common(p)
    p.add_argument("--size", default="3x3")
    p.add_argument("--f", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--m-phi", type=int, default=200)
    p.add_argument("--max-restarts", type=int, default=10_000)
    p.add_argument("--profile-sizes", default="",
                   help="comma list of HxW sizes: emit the gap profile instead")
    p.add_argument("--profile-seeds", type=int, default=10)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("entropy", help="entropy bound comparison sweep")
    common(p)
    p.add_argument("--size", default="4x4")
    p.add_argument("--c-sweep", default="0:4:9")
    p.add_argument("--f", type=float, default=0.1)
    p.add_argument("--M", type=int, default=1000)
    p.add_argument("--instances", type=int, default=5)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("concentration", help="bound tables and deviation histograms")
    common(p)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--lambda-points", type=int, default=20)
    p.add_argument("--m-sweep", default="1,2,5,10,20,50,100")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--histogram-size", default="")
    p.add_argument("--statistic", choices=("logz_bound", "entropy_bound"),
                   default="entropy_bound")
    p.add_argument("--M-per-mean", type=int, default=5)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--f", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.set_defaults(func=cmd_concentration)

    p = sub.add_parser("learn", help="denoising with perturbed learning")
    common(p)
    p.add_argument("--height", type=int, default=20)
    p.add_argument("--width", type=int, default=20)
    p.add_argument("--train-images", type=int, default=10)
    p.add_argument("--test-images", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--M", type=int, default=5)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--reg", type=float, default=1.0)
    p.add_argument("--step", type=float, default=0.25)
    p.set_defaults(func=cmd_learn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    started = time.time()
    try:
        result = args.func(args)
    except PreconditionError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except PerturbMaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    outputs = []
    if isinstance(result, tuple):
        result, outputs = result
    _manifest(args, args.command, outputs, started)
    return result


if __name__ == "__main__":
    sys.exit(main())
