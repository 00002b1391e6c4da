"""Acceptance checks, one test per criterion, each at its stated tolerance.

Every test prints a ``criterion N PASS/FAIL`` line (also repeated in the
pytest terminal summary) before asserting.
"""
import json
import time

import numpy as np
import pytest
from scipy.stats import norm

from concgram import config as cfgmod
from concgram import equivalent as eq
from concgram import lab
from concgram import pushforward as pf
from concgram.cli import run
from concgram.io import write_matrix
from concgram.model import MixtureModel, balanced_counts, gram, gram_decomposition, sample_gmm
from concgram.numerics import RngStream
from concgram.specwalk import WalkConfig, run_walk

from conftest import CONFIGS, random_model, record_criterion


def load(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def test_criterion_1_closed_form_fixed_point():
    t0 = time.perf_counter()
    p = 200
    model = MixtureModel(np.zeros((p, 1)), np.eye(p)[None], [p])
    err = abs(eq.solve_delta(model, 1.0).delta[0] - (np.sqrt(5) - 1) / 2)
    mp = MixtureModel(np.zeros((400, 1)), np.eye(400)[None], [200])
    curve = eq.density(mp, np.linspace(0.0, 3.5, 400), eps=1e-8)
    (lo, hi), = curve.support_edges(1e-4)
    cell = 3.5 / 399
    lo_err = abs(lo - (1 - 2 ** -0.5) ** 2)
    hi_err = abs(hi - (1 + 2 ** -0.5) ** 2)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-10 and lo_err <= cell and hi_err <= cell and elapsed < 5
    record_criterion(1, ok, f"|delta error|={err:.2e}, edge errors {lo_err:.4f}/{hi_err:.4f} "
                            f"(cell {cell:.4f}), {elapsed:.1f}s")
    assert ok


def test_criterion_2_deviation_decreases():
    t0 = time.perf_counter()
    cfg = cfgmod.resolve("deviation", load("deviation_k2"))
    root = RngStream(cfg["seed"], 0)

    def factory(p):
        return cfgmod.build_model(cfg["model"], root.substream(0).substream(p), p=p)

    res = lab.deviation_study(factory, cfg["z"], cfg["p_list"], cfg["trials"],
                              root.substream(1))
    elapsed = time.perf_counter() - t0
    ratios = res.ratios
    ok = bool(np.all(ratios <= 0.8)) and elapsed < 600
    record_criterion(2, ok, "deviations " + ", ".join(f"{d:.4f}" for d in res.deviations)
                     + "; ratios " + ", ".join(f"{r:.3f}" for r in ratios)
                     + "; noise floor " + ", ".join(f"{f:.4f}" for f in res.noise_floor)
                     + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_3_universality_relu():
    t0 = time.perf_counter()
    cfg = cfgmod.resolve("universality", load("universality_relu"))
    root = RngStream(cfg["seed"], 0)
    net = cfgmod.build_network(cfg["network"], root.substream(0))
    rep = lab.universality_experiment(net, cfg["n_per_class"], cfg["trials"],
                                      root.substream(1))
    elapsed = time.perf_counter() - t0
    ok = (rep.ks_ratio <= 2.0 and rep.top_alignment_signs_agree
          and rep.top_alignment_gap <= 0.05 and elapsed < 300)
    record_criterion(3, ok, f"KS ratio {rep.ks_ratio:.3f}, signs agree "
                            f"{rep.top_alignment_signs_agree}, alignment gap "
                            f"{rep.top_alignment_gap:.3f}, {elapsed:.0f}s")
    assert ok


def test_criterion_4_spectral_walk():
    t0 = time.perf_counter()
    worst = 0.0
    for sigma_star in (1.0, 2.0, 3.0):
        for seed in range(20):
            tr = run_walk(WalkConfig(sigma_star=sigma_star, seed=seed))
            worst = max(worst, tr.violation_rate)
    firsts = [run_walk(WalkConfig(sigma_star=3.0, seed=seed, normalize=False)).first_exceedance()
              for seed in range(20)]
    elapsed = time.perf_counter() - t0
    drifted = sum(f is not None and f < 2000 for f in firsts)
    ok = worst <= 0.01 and drifted == 20 and elapsed < 120
    record_criterion(4, ok, f"worst normalized violation rate {worst:.4f}, unnormalized "
                            f"exceedance in {drifted}/20 seeds (latest at step "
                            f"{max((f or 0) for f in firsts)}), {elapsed:.0f}s")
    assert ok


def test_criterion_5_gram_decomposition():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        s = sample_gmm(random_model(rng, mean_scale=float(rng.uniform(0, 5))), RngStream(seed))
        G = gram(s)
        worst = max(worst, np.linalg.norm(sum(gram_decomposition(s)) - G) / np.linalg.norm(G))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 30
    record_criterion(5, ok, f"worst relative Frobenius error {worst:.2e} over 100 models, "
                            f"{elapsed:.1f}s")
    assert ok


def test_criterion_6_single_class_regression():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        p, n = int(rng.integers(3, 40)), int(rng.integers(3, 60))
        model = random_model(rng, p=p, k=1, counts=[n], mean_scale=rng.uniform(0, 3))
        z = float(rng.uniform(0.05, 5))
        R = eq.rtilde(model, eq.solve_delta(model, z)).materialize()
        ref = eq.k1_closed_form(model.means[:, 0], model.second_moments[0], n, z)
        worst = max(worst, float(np.max(np.abs(R - ref))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 30
    record_criterion(6, ok, f"worst entrywise difference {worst:.2e} over 50 pairs, "
                            f"{elapsed:.1f}s")
    assert ok


def test_criterion_7_concentration_probe():
    t0 = time.perf_counter()
    sig = []
    for p in (64, 256, 1024):
        net = pf.random_network(p, [p, p], RngStream(7), output_dim=p, sigma_star=1.0)
        sig.append(pf.concentration_probe(net, 10_000, 32, RngStream(3)).sigma_hat)
    variation = max(sig) / min(sig) - 1
    rep = pf.concentration_probe(pf.identity_network(4), 100_000, np.eye(4)[:, :1],
                                 RngStream(1), t_grid=[1.0, 2.0, 3.0])
    tail = rep.exceedance_at(2.0)
    elapsed = time.perf_counter() - t0
    ok = variation < 0.3 and abs(tail - 2 * norm.cdf(-2)) <= 0.01 and elapsed < 120
    record_criterion(7, ok, "sigma_hat " + ", ".join(f"{s:.4f}" for s in sig)
                     + f" (variation {variation:.1%}), identity P(|f|>2)={tail:.4f}, "
                       f"{elapsed:.0f}s")
    assert ok


SMALL_RUNS = {
    "density": {"model": {"p": 60, "n": 120, "k": 2,
                          "means": {"kind": "orthogonal", "kappa": 1.0}},
                "grid": {"lo": 0.01, "hi": 7.0, "points": 80}},
    "universality": {"k": 2, "n_per_class": 60, "trials": 3,
                     "network": {"kind": "relu", "input_dim": 32, "widths": [32],
                                 "output_dim": 32, "heads": 2, "sigma_star": 1.0}},
    "specwalk": {"sigma_star": [1.0, 3.0], "iterations": 50, "runs": 2},
    "deviation": {"model": {"k": 2, "c": 1.0, "means": {"kind": "orthogonal", "kappa": 1.0}},
                  "p_list": [16, 32], "trials": 3},
    "concentration": {"network": {"kind": "identity", "input_dim": 4}, "trials": 2000,
                      "directions": 2},
}


@pytest.fixture(scope="module")
def ingest_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("ingest")
    model = MixtureModel.from_covariances(np.stack([np.ones(20), -np.ones(20)], axis=1),
                                          np.stack([np.eye(20) * 2] * 2),
                                          balanced_counts(80, 2))
    s = sample_gmm(model, RngStream(4))
    write_matrix(d / "x.csv", s.data)
    (d / "y.txt").write_text("".join(f"{l}\n" for l in s.labels))
    return {"features": str(d / "x.csv"), "labels": str(d / "y.txt"), "trials": 2}


def test_criterion_8_determinism(tmp_path, ingest_files):
    runs = dict(SMALL_RUNS, **{"ingest-compare": ingest_files})
    mismatched, compared = [], 0
    for command, cfg in runs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for rep in range(2):
            out = tmp_path / f"{command}-{rep}"
            assert run([command, "--config", str(path), "--seed", "11", "--out", str(out)]) == 0
            outs.append(out)
        names = sorted(f.name for f in outs[0].iterdir() if f.suffix in (".csv", ".json"))
        assert names == sorted(f.name for f in outs[1].iterdir()
                               if f.suffix in (".csv", ".json"))
        for name in names:
            compared += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatched.append(f"{command}/{name}")
    ok = not mismatched
    record_criterion(8, ok, f"{compared} CSV/JSON files over {len(runs)} commands, "
                            f"mismatches: {mismatched or 'none'}")
    assert ok
