"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (printed in the terminal
summary) and then asserts the same condition.
"""
import filecmp
import json
import os
import time

import numpy as np

from strokeunc import aggregate as A
from strokeunc import measures as M
from strokeunc import metrics as E
from strokeunc import nn
from strokeunc.cli import main
from strokeunc.pipeline import ExperimentConfig, cell_seed, cohort_summaries, image_level_report, make_folds, run_experiment
from strokeunc.predstore import PredictiveSamples
from strokeunc.synth import GeneratorConfig, generate

from . import oracles
from .gradcheck import pass_fraction, relative_errors


def _random_samples(rng, T):
    kind = rng.integers(4)
    if kind == 0:
        p = rng.random(T)
    elif kind == 1:
        mu, k = rng.uniform(0.02, 0.98), rng.uniform(1, 200)
        p = rng.beta(mu * k, (1 - mu) * k, T)
    elif kind == 2:
        p = np.full(T, rng.random())
    else:
        p = rng.choice([0.0, 0.5, 1.0, 0.29, 0.51], T)
    return PredictiveSamples(p)


def test_criterion_1_measure_oracles(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst = 0.0
    identity = 0.0
    mi_ok = True
    for T in (2, 10, 100, 500):
        items = [_random_samples(rng, T) for _ in range(2500)]
        summaries = M.summarize_many(items)
        for s, out in zip(items, summaries):
            p = s.p_stroke.tolist()
            m0, m1 = oracles.mean_prob(p)
            ref = {
                "var": oracles.variance(p), "vr": oracles.variation_ratio(p),
                "pe": oracles.predictive_entropy(p), "mi": oracles.mutual_information(p),
                "epi": oracles.variance(p), "alea": oracles.aleatoric(p),
            }
            single = {
                "var": M.mc_variance(s), "vr": M.variation_ratio(s),
                "pe": M.predictive_entropy(M.mean_probability(s)), "mi": M.mutual_information(s),
                "epi": M.epistemic(s), "alea": M.aleatoric(s),
            }
            errs = [abs(out.mean_prob[0] - m0), abs(out.mean_prob[1] - m1)]
            errs += [abs(np.subtract(M.mean_probability(s), (m0, m1))).max()]
            errs += [abs(out.measure(k) - v) for k, v in ref.items()]
            errs += [abs(single[k] - v) for k, v in ref.items()]
            errs += [np.abs(out.hist[1] - oracles.histogram(p)).max()]
            errs += [np.abs(M.histogram_counts(s)[1] - oracles.histogram(p)).max()]
            worst = max(worst, *errs)
            identity = max(identity, abs(out.epi + out.alea - out.p_stroke * (1 - out.p_stroke)))
            mi_ok &= 0.0 <= out.mi <= out.pe
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and identity <= 1e-12 and mi_ok and elapsed < 30
    acceptance(1, ok, f"max |err|={worst:.1e}, identity={identity:.1e}, MI in [0,PE]={mi_ok}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_wilson_anchor(acceptance):
    n = 15188
    acc, lo, hi = E.accuracy_with_wilson(round(0.9552 * n), n)
    ok = abs(lo - 0.9518) <= 2e-4 and abs(hi - 0.9583) <= 2e-4
    acceptance(2, ok, f"{acc:.4f} [{lo:.6f}, {hi:.6f}] vs [0.9518, 0.9583]")
    assert ok


def test_criterion_3_fold_sizes(acceptance):
    ds, _ = generate(GeneratorConfig(mc_runs=1))
    sizes = sorted(len(t) for t in make_folds(ds, seed=0).test_sets)
    ok = len(ds) == 511 and sizes == [102, 102, 102, 102, 103]
    acceptance(3, ok, f"test sets {sizes}")
    assert ok


def test_criterion_4_gradients(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    fractions = {}
    for variant in A.ALL_VARIANTS:
        if not variant.is_network:
            continue
        net = A.build_model(variant, hidden=4, head_hidden=4, filters=3)
        params = nn.init_params(net, rng)
        # zero biases put fully-dropped rows exactly on the relu kink
        for name, w in params.params.items():
            if name.endswith(".b"):
                w += rng.uniform(-0.5, 0.5, w.shape)
        shape = (2, 5) if variant.name == "fcnn/P" else (2, 5, variant.n_channels)
        if variant.family == "cnn1d":
            shape = (2, 7, variant.n_channels)
        x = rng.random(shape)
        if variant.inputs == "Hist":
            x = x / x.sum(axis=-1, keepdims=True)
        errs = relative_errors(net, params, x, np.array([0, 1]), mode="train", seed=int(rng.integers(1 << 30)))
        fractions[variant.name] = pass_fraction(errs)[0]
        if net.pathway:
            assert any(k.startswith("path.") for k in errs)
    elapsed = time.perf_counter() - t0
    worst = min(fractions, key=fractions.get)
    ok = min(fractions.values()) >= 0.99 and elapsed < 120
    acceptance(4, ok, f"{len(fractions)} architectures, worst {worst} {fractions[worst]:.4f} within 1e-6, {elapsed:.1f}s")
    assert ok


def test_criterion_5_image_removal(acceptance):
    t0 = time.perf_counter()
    ds, _ = generate(GeneratorConfig(n_stroke_patients=70, n_tia_patients=30, mc_runs=50, difficulty_mix=0.15, seed=0))
    rep = image_level_report(ds, cohort_summaries(ds), ExperimentConfig(grid=(0.0, 0.05)))
    base, after = rep.removal["pe"].accuracy
    aucs = {m: rep.auc(m) for m in M.MEASURE_NAMES}
    elapsed = time.perf_counter() - t0
    ok = after - base >= 0.01 and min(aucs.values()) > 0.70 and elapsed < 120
    auc_txt = " ".join(f"{m}={a:.3f}" for m, a in aucs.items())
    acceptance(5, ok, f"PE 5% removal {base:.4f} -> {after:.4f}; AUC {auc_txt}; {elapsed:.1f}s")
    assert ok


def test_criterion_6_table_ordering(acceptance):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(mc_runs=500, seed=0)
    ds, _ = generate(GeneratorConfig(n_stroke_patients=104, n_tia_patients=46, mc_runs=100, seed=7))
    res = run_experiment(ds, ["max", "fcnn/P", "cnn1d/P"], cfg)
    acc = {k: res.pooled[k].accuracy for k in res.variants}
    order_ok = all(acc[k] >= acc["max"] - 0.005 for k in ("fcnn/P", "cnn1d/P"))

    noisy, _ = generate(GeneratorConfig(
        n_stroke_patients=104, n_tia_patients=46, mc_runs=100, difficulty_mix=0.4, seed=7,
    ))
    names = ["fcnn/P", "fcnn/P+VR_PE_MI_Var", "fcnn/P+Epi_Alea", "cnn1d/P", "cnn1d/P+VR_PE_MI_Var", "cnn1d/P+Epi_Alea"]
    res2 = run_experiment(noisy, names, cfg)
    auc = {k: res2.pooled[k].auc("pe") for k in names}
    gaps = {}
    for k in names:
        family, inputs = k.split("/")
        base = auc[f"{family}/P"]
        if inputs != "P" and auc[k] is not None and base is not None:
            gaps[k] = auc[k] - base
    gap_ok = any(g > 0 for g in gaps.values())
    elapsed = time.perf_counter() - t0
    ok = order_ok and gap_ok and elapsed < 900
    acc_txt = " ".join(f"{k}={v:.3f}" for k, v in acc.items())
    gap_txt = " ".join(f"{k}:{g:+.3f}" for k, g in gaps.items())
    acceptance(6, ok, f"accuracy {acc_txt}; PE-AUC gain over P at 0.4: {gap_txt}; {elapsed:.0f}s")
    assert ok


def test_criterion_7_calibration_and_auc(acceptance):
    t0 = time.perf_counter()
    # perfectly calibrated: 40 items per interval with round(40 * pi) events
    p, y = [], []
    for i in range(1, 21):
        pi = (2 * i - 1) / 40
        p += [pi] * 40
        y += [1] * (2 * i - 1) + [0] * (40 - (2 * i - 1))
    perfect = E.sanders_score(E.calibration(p, y))

    rng = np.random.default_rng(7)
    worst_sc = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        probs = rng.random(n)
        probs[rng.random(n) < 0.05] = 1.0
        labels = rng.integers(0, 2, n)
        worst_sc = max(worst_sc, abs(E.sanders_score(E.calibration(probs, labels)) - oracles.sanders(probs.tolist(), labels.tolist())))

    auc_exact = 0
    done = 0
    while done < 1000:
        n = int(rng.integers(2, 31))
        scores = (rng.integers(0, 8, n) / 7).tolist() if rng.random() < 0.5 else rng.random(n).tolist()
        pos = (rng.random(n) < 0.5).tolist()
        if all(pos) or not any(pos):
            continue
        auc_exact += E.roc_auc(scores, pos).auc == oracles.pairwise_auc(scores, pos)
        done += 1
    elapsed = time.perf_counter() - t0
    ok = perfect == 0.0 and worst_sc <= 1e-12 and auc_exact == 1000 and elapsed < 60
    acceptance(7, ok, f"perfect SC={perfect}, max SC err={worst_sc:.1e}, AUC exact {auc_exact}/1000, {elapsed:.1f}s")
    assert ok


def _same_tree(a, b, skip=("manifest.json",)):
    diffs = []
    for root, _, files in os.walk(a):
        for f in files:
            if f in skip:
                continue
            pa = os.path.join(root, f)
            pb = os.path.join(b, os.path.relpath(pa, a))
            if not (os.path.exists(pb) and filecmp.cmp(pa, pb, shallow=False)):
                diffs.append(os.path.relpath(pa, a))
    n_b = sum(len([f for f in fs if f not in skip]) for _, _, fs in os.walk(b))
    n_a = sum(len([f for f in fs if f not in skip]) for _, _, fs in os.walk(a))
    return diffs + (["<file count>"] if n_a != n_b else [])


def test_criterion_8_cli_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    same = {}

    def run(*argv):
        assert main(list(map(str, argv))) == 0

    def read(p):
        return p.read_bytes()

    for k in (1, 2):
        run("gen", "--seed", 11, "--out", tmp_path / f"c{k}.csv", "--n-stroke", 24, "--n-tia", 16, "--mc-runs", 30)
    same["gen"] = read(tmp_path / "c1.csv") == read(tmp_path / "c2.csv")

    data = tmp_path / "c1.csv"
    for k in (1, 2):
        run("train", "--variant", "fcnn/P+Epi_Alea", "--epochs", 5, "--seed", 3,
            "--train", data, "--valid", data, "--model-out", tmp_path / f"m{k}.json")
    same["train"] = read(tmp_path / "m1.json") == read(tmp_path / "m2.json")

    for k in (1, 2):
        run("predict", "--model", tmp_path / "m1.json", "--data", data, "--seed", 5, "--out", tmp_path / f"p{k}.csv")
    same["predict"] = read(tmp_path / "p1.csv") == read(tmp_path / "p2.csv")

    cv = ["cv", "--data", data, "--variants", "max,fcnn/P,cnn1d/P+VR_PE_MI_Var", "--epochs", 4, "--mc-runs", 50, "--seed", 2]
    run(*cv, "--out-dir", tmp_path / "cv1")
    run(*cv, "--out-dir", tmp_path / "cv2")
    run(*cv, "--out-dir", tmp_path / "cv3", "--jobs", 2)
    d12 = _same_tree(tmp_path / "cv1", tmp_path / "cv2")
    d13 = _same_tree(tmp_path / "cv1", tmp_path / "cv3")
    # manifests record argv (out-dir, --jobs), so only their config must agree
    configs = [json.loads((tmp_path / d / "manifest.json").read_text())["config"] for d in ("cv1", "cv2", "cv3")]
    if not configs[0] == configs[1] == configs[2]:
        d13.append("manifest config")
    same["cv"] = not d12
    same["cv --jobs 2"] = not d13
    elapsed = time.perf_counter() - t0
    ok = all(same.values()) and elapsed < 300
    txt = " ".join(f"{k}={'same' if v else 'DIFF'}" for k, v in same.items())
    acceptance(8, ok, f"{txt}; {elapsed:.1f}s")
    assert ok, (d12, d13)


def test_criterion_9_patient_mc_dropout(acceptance):
    # models are trained the way a cross-validation cell trains them (fold 0)
    t0 = time.perf_counter()
    ds, _ = generate(GeneratorConfig(seed=0))
    sums = cohort_summaries(ds)
    v = A.FeatureVariant.parse("fcnn/P")
    feats = {p.patient_id: (A.build_features(p, sums[p.patient_id], v), p.label) for p in ds}
    split = make_folds(ds, seed=0).folds[0]
    train = [feats[i] for i in split.train1 + split.valid1]
    valid = [feats[i] for i in split.valid2]
    tcfg = A.TrainConfig(seed=cell_seed(0, 0, "fcnn/P"))

    def variances(rate, n=None):
        net = A.build_model(v, dropout_rate=rate)
        params, _ = A.train_aggregator(net, train, valid, tcfg)
        xs = [x for x, _ in feats.values()][:n]
        return [A.predict_patient(net, params, x, T=500, seed=[1, i]).summary for i, x in enumerate(xs)]

    zero_ok = all(s.var == 0.0 and s.vr == 0.0 and s.mi == 0.0 for s in variances(0.0, 50))
    positive = {rate: float(np.mean([s.var > 0.0 for s in variances(rate)])) for rate in (0.3, 0.4, 0.5)}
    elapsed = time.perf_counter() - t0
    ok = zero_ok and min(positive.values()) >= 0.99 and elapsed < 120
    txt = " ".join(f"r={r}:{f:.4f}" for r, f in positive.items())
    acceptance(9, ok, f"rate 0 exact zeros={zero_ok}; Var>0 fraction {txt}; {elapsed:.1f}s")
    assert ok
