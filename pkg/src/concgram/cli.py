"""Command-line entry point.

Usage::

    concgram [--config PATH] [--seed U64] [--out DIR] [--threads N] COMMAND [args]

Commands: ``density``, ``universality``, ``specwalk``, ``deviation``,
``concentration`` and ``ingest-compare``. Each run validates its JSON
configuration, computes everything in memory and then publishes its CSV
and JSON outputs together with ``config.resolved.json``. Nothing is
written when a run fails.

Exit codes: 0 on success, 1 when a computation did not converge, 2 for
configuration or input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import equivalent as eq
from . import lab
from . import pushforward as pf
from . import specwalk as sw
from .exceptions import (ConcGramError, ConfigError, ContractError, ConvergenceError,
                         PartialResultError)
from .io import AtomicDir, atomic_write, read_labels, read_matrix
from .model import LabeledSample, esd, gram, sample_gmm, sort_by_label
from .numerics import RngStream

log = logging.getLogger("concgram")

COMMANDS = ("density", "universality", "specwalk", "deviation", "concentration",
            "ingest-compare")

EXIT_OK, EXIT_NONCONVERGED, EXIT_USAGE = 0, 1, 2


def _versions():
    from . import __version__
    out = {"concgram": __version__}
    for pkg in ("numpy", "scipy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _summary(cfg, metrics, converged=True):
    return {
        "config": cfg,
        "seed": cfg["seed"],
        "versions": _versions(),
        "converged": converged,
        "metrics": metrics,
    }


# -- commands -------------------------------------------------------------------

def cmd_density(cfg, out: AtomicDir):
    root = RngStream(cfg["seed"], 0)
    model = cfgmod.build_model(cfg["model"], root.substream(0))
    g = cfg["grid"]
    grid = np.linspace(g["lo"], g["hi"], g["points"])
    curve = eq.density(model, grid, eps=cfg["eps"], omega=cfg["omega"],
                       weighting=cfg["weighting"])
    out.add_csv("density.csv", ["x", "rho"], zip(curve.grid, curve.density))
    metrics = {
        "p": model.p, "n": model.n, "c": model.c,
        "atom_at_zero": curve.atom_at_zero,
        "mass": curve.mass(),
        "eps": curve.eps,
        "support_edges": curve.support_edges(cfg["edge_threshold"]),
        "max_iterations": int(curve.iterations.max()),
        "max_residual": float(np.nanmax(curve.residuals)),
        "delta": {str(z): _delta_record(model, z, cfg["weighting"])
                  for z in cfg["delta_at"]},
    }
    if cfg["subspace"] is not None:
        sub = cfg["subspace"]
        proj = eq.subspace_stats(model, tuple(sub["interval"]), sub["quadrature_points"],
                                 omega=cfg["omega"], weighting=cfg["weighting"])
        out.add_csv("subspace.csv", ["ell", "m", "value"],
                    ((l, m, proj[l, m]) for l in range(model.k) for m in range(model.k)))
        metrics["subspace_trace"] = float(np.trace(proj))
    if cfg["overlay"]:
        sample = sample_gmm(model, root.substream(1))
        spectrum = esd(gram(sample))
        out.add_csv("esd.csv", ["value"], ((v,) for v in spectrum.eigenvalues))
        metrics["esd_theory_ks"] = lab.esd_theory_distance(spectrum, curve)
    return metrics


def _delta_record(model, z, weighting):
    sol = eq.solve_delta(model, float(z), weighting=weighting)
    return {"delta": np.real(sol.delta).tolist(), "iterations": sol.iterations,
            "residual": sol.residual}


def _report_files(out: AtomicDir, report: lab.SpectralReport, bins: int):
    out.add_csv("esd.csv", ["value"], ((v,) for v in report.esd_a))
    out.add_csv("esd_gmm.csv", ["value"], ((v,) for v in report.esd_b))
    for name, u in (("scatter.csv", report.top_eigvecs_a),
                    ("scatter_gmm.csv", report.top_eigvecs_b)):
        out.add_csv(name, ["index", "label", "u1", "u2"],
                    ((i, int(l), a, b) for i, (l, (a, b))
                     in enumerate(zip(report.labels, u))))
    counts, edges = np.histogram(report.esd_a, bins=bins)
    out.add_csv("histogram.csv", ["lo", "hi", "count"],
                zip(edges[:-1], edges[1:], counts))


def cmd_universality(cfg, out: AtomicDir):
    root = RngStream(cfg["seed"], 0)
    net = cfgmod.build_network(cfg["network"], root.substream(0))
    report = lab.universality_experiment(net, cfg["n_per_class"], cfg["trials"],
                                         root.substream(1))
    _report_files(out, report, cfg["bins"])
    metrics = report.summary()
    metrics["lipschitz_bound"] = net.lipschitz_bound()
    return metrics


def cmd_ingest_compare(cfg, out: AtomicDir):
    if "features" not in cfg or "labels" not in cfg:
        raise ConfigError("ingest-compare needs features and labels paths")
    X = read_matrix(cfg["features"])
    labels = read_labels(cfg["labels"])
    p, n = X.shape
    if labels.size != n:
        raise ContractError(
            f"features file is {p} x {n} (p x n) but labels has {labels.size} "
            f"entries; the matrix must hold one sample per column"
        )
    X, labels, perm = sort_by_label(X, labels)
    k = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=k)
    if np.any(counts < 2):
        raise ContractError(f"every class needs >= 2 samples, counts are {counts.tolist()}")
    means = np.stack([X[:, labels == l].mean(axis=1) for l in range(k)], axis=1)
    sample = LabeledSample(X, labels, means, perm)
    report = lab.compare_with_gmm(sample, cfg["trials"], RngStream(cfg["seed"], 0))
    _report_files(out, report, cfg["bins"])
    metrics = report.summary()
    metrics.update({"p": p, "n": n, "k": k, "class_counts": counts.tolist()})
    return metrics


def cmd_specwalk(cfg, out: AtomicDir):
    rows, traces = [], []
    for s_i, sigma_star in enumerate(cfg["sigma_star"]):
        for run in range(cfg["runs"]):
            seed = (cfg["seed"] + 1_000_003 * s_i + run) % (1 << 64)
            wc = sw.WalkConfig(d0=cfg["d0"], d1=cfg["d1"], eta=cfg["eta"],
                               sigma_star=sigma_star, iterations=cfg["iterations"],
                               seed=seed, normalize=cfg["normalize"])
            tr = sw.run_walk(wc, epsilon=cfg["epsilon"],
                             burnin_fraction=cfg["burnin_fraction"])
            rows.extend((sigma_star, run, t + 1, s, sp, tr.bound)
                        for t, (s, sp) in enumerate(zip(tr.sigma1, tr.sigma_pre)))
            traces.append({
                "sigma_star": sigma_star, "run": run, "seed": seed,
                "bound": tr.bound, "violations_after_burnin": tr.violations_after_burnin,
                "violation_rate": tr.violation_rate, "final_sigma1": tr.final_sigma1,
                "max_sigma1_after_burnin": float(np.max(tr.sigma1[tr.burnin:])),
                "first_exceedance": tr.first_exceedance(),
                "drift_flagged": bool(tr.final_sigma1 > tr.bound + cfg["epsilon"]),
                "network_bound": sw.network_bound([wc] * cfg["network_layers"],
                                                  cfg["epsilon"]),
            })
    out.add_csv("walk.csv", ["sigma_star", "run", "iteration", "sigma1", "sigma_pre",
                             "bound"], rows)
    return {"traces": traces,
            "max_violation_rate": max(t["violation_rate"] for t in traces),
            "any_drift": any(t["drift_flagged"] for t in traces)}


def cmd_deviation(cfg, out: AtomicDir):
    root = RngStream(cfg["seed"], 0)
    spec = cfg["model"]

    def factory(p):
        return cfgmod.build_model(spec, root.substream(0).substream(p), p=p)

    res = lab.deviation_study(factory, cfg["z"], cfg["p_list"], cfg["trials"],
                              root.substream(1), omega=cfg["omega"])
    out.add_csv("deviation.csv", ["p", "deviation", "trials", "noise_floor"],
                ((int(p), d, res.trials, f)
                 for p, d, f in zip(res.p_values, res.deviations, res.noise_floor)))
    ratios = res.ratios
    return {"slope": res.slope, "ratios": ratios.tolist(),
            "monotone": bool(np.all(ratios < 1)),
            "max_ratio": float(np.max(ratios)) if ratios.size else None,
            "deviations": res.deviations.tolist(),
            "noise_floor": res.noise_floor.tolist()}


def cmd_concentration(cfg, out: AtomicDir):
    root = RngStream(cfg["seed"], 0)
    net = cfgmod.build_network(cfg["network"], root.substream(0))
    rep = pf.concentration_probe(net, cfg["trials"], cfg["directions"], root.substream(1),
                                 cls=cfg["class"], t_grid=cfg["t_grid"])
    out.add_csv("concentration.csv", ["t", "exceedance", "in_fit"],
                zip(rep.t, rep.exceedance, rep.fit_mask.astype(int)))
    return {"sigma_hat": rep.sigma_hat, "log_c": rep.log_c, "r2": rep.r2,
            "q_hat": rep.q_hat, "sigma_free": rep.sigma_free,
            "lipschitz_bound": rep.lipschitz_bound, "bound_ratio": rep.bound_ratio,
            "std": rep.std, "trials": rep.trials, "directions": rep.directions,
            "p": rep.p}


HANDLERS = {
    "density": cmd_density,
    "universality": cmd_universality,
    "specwalk": cmd_specwalk,
    "deviation": cmd_deviation,
    "concentration": cmd_concentration,
    "ingest-compare": cmd_ingest_compare,
}


# -- argument parsing -----------------------------------------------------------

def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= cfgmod.U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _global_flags(parser, suppress=False):
    """Add the global flags; ``suppress`` leaves unset flags out of the namespace."""
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument("--config", type=Path, default=default(None),
                        help="JSON configuration file")
    parser.add_argument("--seed", type=_u64, default=default(None),
                        help="master seed (overrides the config)")
    parser.add_argument("--out", type=Path, default=default(Path("out")),
                        help="output directory (default: ./out)")
    parser.add_argument("--threads", type=_positive, default=default(None),
                        help="cap on BLAS/LAPACK worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="concgram",
        description="Deterministic equivalents and universality experiments for "
                    "Gram matrices of concentrated mixture data.",
    )
    _global_flags(parser)
    # the same flags are accepted after the subcommand name as well
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "ingest-compare":
            sp.add_argument("features", nargs="?", help="p x n matrix (CSV or RMTX)")
            sp.add_argument("labels", nargs="?", help="labels file, one per line")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        raw = cfgmod.load_json(args.config) if args.config else {}
        if args.command == "ingest-compare":
            if args.features:
                raw["features"] = args.features
            if args.labels:
                raw["labels"] = args.labels
        cfg = cfgmod.resolve(args.command, raw, seed=args.seed)
    except ConfigError as exc:
        print(f"concgram: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = AtomicDir(args.out)
    start = time.perf_counter()
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                metrics = HANDLERS[args.command](cfg, out)
        else:
            metrics = HANDLERS[args.command](cfg, out)
    except (PartialResultError, ConvergenceError) as exc:
        print(f"concgram: computation did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ConfigError, ContractError, OSError) as exc:
        print(f"concgram: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConcGramError as exc:
        print(f"concgram: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    elapsed = time.perf_counter() - start

    out.add_json("summary.json", _summary(cfg, metrics))
    out.add_json("config.resolved.json", cfg)
    try:
        out.commit()
        # wall-clock time varies between runs, so it stays out of the JSON
        # outputs (which must be byte-identical for a fixed seed)
        atomic_write(args.out / "run.log",
                     f"command={args.command} seed={cfg['seed']} "
                     f"wall_clock_seconds={elapsed:.3f}\n".encode())
    except OSError as exc:
        print(f"concgram: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("wrote %s to %s in %.2fs", ", ".join(out.names), args.out, elapsed)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
