"""Acceptance gate: one test per release criterion, each printing a
PASS line with the measured values (run with -s to see them inline).

Budgets are generous on purpose; every test here runs well inside its
stated wall-clock limit on a laptop-class machine.
"""

import json
import math
import os
import sys
import tracemalloc
from pathlib import Path

import numpy as np

from fixtures import quarter_circle, stratified_blobs, two_blob
from mixturepfn import micp
from mixturepfn.capfn import (FinetuneConfig, finetune, grad_adapters,
                              nll_loss, sample_bootstrap_small)
from mixturepfn.cli import main
from mixturepfn.data import TabularDataset, take_rows
from mixturepfn.evalrank import (ACCURACY, condorcet, wilcoxon_signed_rank,
                                 write_condorcet_csv)
from mixturepfn.micp import (CONSTRAINED_KMEANS, Prompt, assemble_batches,
                             overlap_counts_train)
from mixturepfn.neighbors import brute_force_knn, build_index
from mixturepfn.predictor import ReferencePredictor, predict


def ok(name, detail=""):
    print(f"ACCEPTANCE PASS: {name}" + (f" ({detail})" if detail else ""))


def wrap_ds(X, y=None, n_classes=1):
    if y is None:
        y = np.zeros(X.shape[0], dtype=np.int64)
    return TabularDataset(features=np.asarray(X, dtype=np.float64),
                          labels=np.asarray(y, dtype=np.int64),
                          n_classes=n_classes,
                          feature_kinds=["numeric"] * X.shape[1],
                          column_names=[f"f{j}" for j in range(X.shape[1])],
                          preprocessed=True)


def test_nonzero_overlap_guarantee():
    """Constrained-mode overlap >= 1 for 100% of train rows on >= 100
    random datasets (N <= 3000, d <= 8). Zero tolerance."""
    rng = np.random.default_rng(2024)
    datasets = 0
    rows_checked = 0
    while datasets < 100:
        n = int(rng.integers(64, 3001))
        d = int(rng.integers(1, 9))
        B = int(rng.integers(16, 257))
        X = rng.normal(size=(n, d)) * rng.uniform(0.5, 4)
        gamma = float(rng.uniform(1.0, 2.5))
        model = micp.fit(wrap_ds(X), gamma=gamma, B=B,
                         mode=CONSTRAINED_KMEANS, seed=datasets,
                         self_routing=True, max_iters=20)
        counts = overlap_counts_train(model)
        assert (counts >= 1).all(), (
            f"dataset {datasets}: {(counts < 1).sum()} rows with zero "
            f"overlap (n={n}, d={d}, B={B})")
        rows_checked += n
        datasets += 1
    ok("nonzero-overlap guarantee (constrained mode)",
       f"{datasets} datasets, {rows_checked} train rows, zero violations")


def test_knn_oracle_equivalence():
    """Ball-tree kNN set-identical to exhaustive scan on 200 random
    instances (M <= 2000). Zero tolerance."""
    rng = np.random.default_rng(7)
    for trial in range(200):
        m = int(rng.integers(1, 2001))
        d = int(rng.integers(1, 9))
        pts = rng.normal(size=(m, d)) * rng.uniform(0.2, 5)
        idx = build_index(pts, leaf_size=int(rng.integers(4, 64)))
        k = int(rng.integers(1, m + 1))
        q = rng.normal(size=d) * 2
        got = {i for i, _ in idx.knn(q, k)}
        want = {i for i, _ in brute_force_knn(pts, q, k)}
        assert got == want, f"trial {trial}: m={m} d={d} k={k}"
    ok("knn oracle equivalence", "200 instances set-identical")


def _clusterable(n, d, seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-10, 10, size=(24, d))
    X = centers[rng.integers(0, 24, size=n)] + rng.normal(0, 1, size=(n, d))
    return X


def test_prompt_size_bound_and_memory():
    """Context never exceeds B at N_train in {1e4, 1e5, 1e6}; peak
    prompt-assembly memory grows < 1.3x from 1e5 to 1e6."""
    B = 3000
    rng = np.random.default_rng(1)
    X_test = rng.uniform(-10, 10, size=(65536, 4))
    peaks = {}
    for n in (10_000, 100_000, 1_000_000):
        ds = wrap_ds(_clusterable(n, 4, seed=0))
        model = micp.fit(ds, gamma=1.0, B=B, seed=0, max_iters=5)
        tracemalloc.start()
        prompts = assemble_batches(model, X_test, n_batch=1024)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        peaks[n] = peak
        assert max(p.context_size for p in prompts) == B
        emitted = np.concatenate([p.query_indices for p in prompts])
        assert sorted(emitted.tolist()) == list(range(65536))
    growth = peaks[1_000_000] / peaks[100_000]
    assert growth < 1.3, f"assembly memory grew {growth:.3f}x"
    ok("prompt-size bound / O(1) assembly memory",
       f"max context = {B} exactly; 1e5 to 1e6 growth {growth:.3f}x")


def test_routing_sublinearity():
    """Mean distance evaluations per route at K=4096 <= 6x the K=64
    cost on clusterable data (tight 2-D blobs; queries from the same
    cluster structure, the regime routed test rows live in)."""
    rng = np.random.default_rng(5)
    d, sigma = 2, 0.4
    centers = rng.uniform(-10, 10, size=(24, d))

    def draw(n):
        return (centers[rng.integers(0, 24, size=n)]
                + rng.normal(0, sigma, size=(n, d)))

    means = {}
    for K in (64, 4096):
        idx = build_index(draw(K))
        queries = draw(400)
        idx.distance_count = 0
        for q in queries:
            idx.nns(q)
        means[K] = idx.distance_count / queries.shape[0]
    ratio = means[4096] / means[64]
    assert ratio <= 6.0, f"route cost ratio {ratio:.2f}"
    ok("routing sublinearity",
       f"{means[64]:.1f} evals at K=64, {means[4096]:.1f} at K=4096, "
       f"ratio {ratio:.2f} <= 6")


def test_nll_closed_form():
    """Loss at zeroed adapters equals ln C to 1e-12 for C in {2,4,10}."""
    for C in (2, 4, 10):
        rng = np.random.default_rng(C)
        ds = wrap_ds(rng.normal(size=(40, 3)),
                     rng.integers(0, C, size=40), n_classes=C)
        pred = ReferencePredictor(n_classes=C, bandwidth=1.0,
                                  temperature=0.0)
        loss = nll_loss(pred, sample_bootstrap_small(ds, seed=0))
        assert abs(loss - math.log(C)) < 1e-12, (C, loss)
    ok("uniform-adapter loss closed form", "ln C to 1e-12 for C=2,4,10")


def test_gradient_check():
    """Analytic adapter gradients within 1e-5 relative of central
    finite differences on 50 random instances."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(50):
        C = int(rng.integers(2, 6))
        n = int(rng.integers(10, 50))
        ds = wrap_ds(rng.normal(size=(n, 3)), rng.integers(0, C, size=n),
                     n_classes=C)
        s = sample_bootstrap_small(ds, seed=trial)
        pred = ReferencePredictor(n_classes=C,
                                  bandwidth=float(rng.uniform(0.5, 2)),
                                  temperature=float(rng.uniform(-1, 2)),
                                  bias=rng.normal(size=C) * 0.5)
        a_t, a_b = grad_adapters(pred, s)
        h = 1e-5

        def loss_at(temp, bias):
            return nll_loss(pred.with_adapters(temp, bias), s)

        n_t = (loss_at(pred.temperature + h, pred.bias)
               - loss_at(pred.temperature - h, pred.bias)) / (2 * h)
        n_b = np.empty(C)
        for c in range(C):
            up, dn = pred.bias.copy(), pred.bias.copy()
            up[c] += h
            dn[c] -= h
            n_b[c] = (loss_at(pred.temperature, up)
                      - loss_at(pred.temperature, dn)) / (2 * h)
        analytic = np.concatenate([[a_t], a_b])
        numeric = np.concatenate([[n_t], n_b])
        rel = (np.linalg.norm(analytic - numeric)
               / max(1.0, np.linalg.norm(numeric)))
        worst = max(worst, rel)
        assert rel < 1e-5, (trial, rel)
    ok("adapter gradient check", f"worst relative error {worst:.2e}")


def test_capfn_efficacy_analog():
    """Finetuned predictor beats the un-finetuned one by >= 0.05 nats of
    held-out NLL, averaged over 10 seeds, on both fixtures."""
    for name, maker in (("two-blob", two_blob),
                        ("quarter-circle", quarter_circle)):
        gains = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            ds = maker(rng)
            base = ReferencePredictor(n_classes=2, bandwidth=0.03)
            tuned, _ = finetune(base, ds, FinetuneConfig(seed=seed))
            held = [sample_bootstrap_small(ds, 10_000 + 31 * seed + j)
                    for j in range(15)]
            before = np.mean([nll_loss(base, s) for s in held])
            after = np.mean([nll_loss(tuned, s) for s in held])
            gains.append(before - after)
        mean_gain = float(np.mean(gains))
        assert mean_gain >= 0.05, (name, mean_gain)
        ok(f"finetuning efficacy on {name}",
           f"mean held-out NLL gain {mean_gain:.3f} nats >= 0.05")


def test_gamma_tradeoff_analog():
    """On the stratified-blob fixture: accuracy(gamma=5) >=
    accuracy(gamma=1) - 0.01, and prompter contexts (gamma=1) beat a
    random-B-subsample context by >= 5 accuracy points, 10-seed means."""
    acc = {1.0: [], 5.0: [], "random": []}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ds = stratified_blobs(rng, n=22000)
        train = take_rows(ds, np.arange(20000))
        test = take_rows(ds, np.arange(20000, 22000))
        pred = ReferencePredictor(n_classes=2, bandwidth=0.03)
        for gamma in (1.0, 5.0):
            model = micp.fit(train, gamma=gamma, B=3000, seed=seed,
                             max_iters=20)
            correct = 0
            for p in assemble_batches(model, test.features, n_batch=1024):
                probs = predict(pred, p)
                correct += int((probs.argmax(1)
                                == test.labels[p.query_indices]).sum())
            acc[gamma].append(correct / test.n_rows)
        pick = np.random.default_rng(10_000 + seed).choice(
            20000, size=3000, replace=False)
        p = Prompt(context_features=train.features[pick],
                   context_labels=train.labels[pick],
                   query_features=test.features, n_classes=2)
        probs = predict(pred, p)
        acc["random"].append(float((probs.argmax(1) == test.labels).mean()))
    a1 = float(np.mean(acc[1.0]))
    a5 = float(np.mean(acc[5.0]))
    ar = float(np.mean(acc["random"]))
    assert a5 >= a1 - 0.01, (a1, a5)
    assert a1 - ar >= 0.05, (a1, ar)
    ok("gamma trade-off analog",
       f"acc gamma=1 {a1:.3f}, gamma=5 {a5:.3f}, random-context {ar:.3f}")


def test_condorcet_harness(tmp_path):
    """Dominant fixture yields wins = A-1 / losses = 0 and the winner;
    a 3-cycle yields none; random fixtures match a brute-force recount
    byte-for-byte."""
    from test_evalrank import (brute_force_recount, random_records,
                               table_shaped_fixture)
    records = table_shaped_fixture(n_algs=8, n_datasets=12)
    tally = condorcet(records, metric=ACCURACY)
    assert tally.winner == "champ"
    assert tally.wins["champ"] == 7 and tally.losses["champ"] == 0

    cyc = []
    from test_evalrank import rec
    for ds, order in (("d1", "abc"), ("d2", "bca"), ("d3", "cab")):
        for copy in (0, 1):
            for pos, alg in enumerate(order):
                cyc.append(rec(alg, f"{ds}_{copy}", acc=0.9 - 0.1 * pos))
    assert condorcet(cyc, metric=ACCURACY).winner is None

    rng = np.random.default_rng(13)
    for trial in range(10):
        records = random_records(rng)
        tally = condorcet(records, metric=ACCURACY)
        votes, wins, ties, losses, _ = brute_force_recount(records,
                                                           ACCURACY)
        lib_path = tmp_path / f"lib{trial}.csv"
        write_condorcet_csv(tally, str(lib_path))
        order = sorted(votes, key=lambda a: (-votes[a], -wins[a], a))
        expected = "algorithm,votes,wins,ties,losses\n" + "".join(
            f"{a},{votes[a]},{wins[a]},{ties[a]},{losses[a]}\n"
            for a in order)
        assert lib_path.read_bytes() == expected.encode()
    ok("condorcet harness",
       "dominant winner, 3-cycle none, 10 recounts byte-identical")


def test_wilcoxon_exactness():
    """n=6 all-positive differences: W=21, exact p = 0.03125."""
    w, p = wilcoxon_signed_rank(np.arange(1.0, 7.0), np.zeros(6))
    assert w == 21.0
    assert p == 0.03125
    ok("wilcoxon exactness", "n=6 all-positive p = 0.03125 exactly")


def _run_all_commands(base, train, test, records, seed="11"):
    outs = {}
    for name, argv in {
        "preprocess": ["preprocess", "--data", train, "--label", "y"],
        "fit": ["fit", "--data", train, "--label", "y", "--B", "40"],
        "finetune": ["finetune", "--data", train, "--label", "y",
                     "--iterations", "8"],
        "theorem": ["theorem-audit", "--data", train, "--label", "y",
                    "--B", "20"],
        "report": ["report", "--records", records],
    }.items():
        out = os.path.join(base, name)
        assert main(["--out", out, "--seed", seed] + argv) == 0
        outs[name] = out
    fit_out = outs["fit"]
    out = os.path.join(base, "predict")
    assert main(["--out", out, "--seed", seed, "predict", "--data", train,
                 "--test", test, "--label", "y",
                 "--model", os.path.join(fit_out, "model.micp")]) == 0
    outs["predict"] = out
    out = os.path.join(base, "sweep")
    assert main(["--out", out, "--seed", seed, "sweep-gamma",
                 "--data", train, "--test", test, "--label", "y",
                 "--gammas", "1,3", "--B", "40", "--n-ensemble", "2"]) == 0
    outs["sweep"] = out
    return outs


def test_cli_determinism(tmp_path):
    """Every CLI command re-run with the same seed produces byte-identical
    CSV/JSON outputs (path-bearing resolved configs masked)."""
    rng = np.random.default_rng(0)
    n, d = 120, 2
    X = np.vstack([rng.normal(-3, 1, size=(60, d)),
                   rng.normal(3, 1, size=(60, d))])
    train = str(tmp_path / "train.csv")
    with open(train, "w") as fh:
        fh.write("f0,f1,y\n")
        for i in range(n):
            fh.write(f"{float(X[i, 0])!r},{float(X[i, 1])!r},{int(i >= 60)}\n")
    test = str(tmp_path / "test.csv")
    with open(test, "w") as fh:
        fh.write("f0,f1,y\n")
        for i in range(0, n, 3):
            fh.write(f"{float(X[i, 0])!r},{float(X[i, 1])!r},{int(i >= 60)}\n")
    records = str(tmp_path / "records.csv")
    with open(records, "w") as fh:
        fh.write("algorithm,dataset,fold,accuracy,mean_ll,status\n")
        for ds_i in range(6):
            fh.write(f"alpha,d{ds_i},0,0.9,-0.1,ok\n")
            fh.write(f"beta,d{ds_i},0,0.7,-0.4,ok\n")

    trees = []
    for run in ("a", "b"):
        outs = _run_all_commands(str(tmp_path / run), train, test, records)
        tree = {}
        for cmd, out in outs.items():
            for p in sorted(Path(out).rglob("*")):
                if p.suffix in (".csv", ".json", ".micp"):
                    tree[f"{cmd}/{p.name}"] = p.read_bytes()
        trees.append(tree)
    assert trees[0].keys() == trees[1].keys()
    compared = 0
    for name in trees[0]:
        a, b = trees[0][name], trees[1][name]
        if name.endswith("resolved_config.json"):
            ja, jb = json.loads(a), json.loads(b)
            for j in (ja, jb):
                for key in ("out", "model", "curve"):
                    j.pop(key, None)
            assert ja == jb, name
        else:
            assert a == b, name
        compared += 1
    ok("cli determinism",
       f"{compared} output files byte-identical across 7 commands")
