"""Command-line surface: preprocess, fit, predict, finetune, gamma
sweeps, the overlap-guarantee audit, and tournament reports.

Every command writes a resolved-config JSON next to its outputs and is
byte-deterministic given --seed: CSV/JSON outputs carry no wall-clock
values; timing measurements go to *.log files and the stderr log stream.
Exit codes: 0 ok, 2 data errors, 3 config errors, 4 predictor/bridge
failures, 5 when the constrained-mode overlap guarantee is violated.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import capfn, evalrank, micp
from .data import (TabularDataset, combine_and_preprocess, load_csv,
                   preprocess, select_features_by_variance, take_columns)
from .errors import (AllMissingColumn, BridgeUnavailable,
                     CapabilityExceeded, DimensionMismatch, EmptyDataset,
                     Infeasible, KTooLarge, MissingLabelColumn, MpfnError,
                     NoResults, NoSharedDatasets, ProtocolViolation,
                     RaggedRow, TooFewPairs, TooFewRows, TooManyClasses,
                     UnknownLabel)
from .predictor import (ExternalHandle, ReferenceHandle, ReferencePredictor,
                        default_bandwidth, ensemble_predict)

log = logging.getLogger("mpfn")

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_PREDICTOR = 4
EXIT_THEOREM = 5

DATA_ERRORS = (MissingLabelColumn, RaggedRow, EmptyDataset,
               AllMissingColumn, TooFewRows, TooManyClasses, UnknownLabel,
               NoResults, NoSharedDatasets, TooFewPairs, OSError)
CONFIG_ERRORS = (DimensionMismatch, Infeasible, KTooLarge, ValueError)
PREDICTOR_ERRORS = (BridgeUnavailable, ProtocolViolation,
                    CapabilityExceeded)

# the four tuning settings exposed as presets: gamma high / gamma low /
# feature cap by variance / frequency-coded categoricals
PRESETS = {
    1: {"gamma": 5.0},
    2: {"gamma": 1.0},
    3: {"gamma": 1.0, "feature_cap": 50},
    4: {"gamma": 1.0, "categorical_encoding": "frequency"},
}


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_resolved_config(args, command: str) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func",) and v is not None}
    cfg["command"] = command
    _write_json(os.path.join(args.out, "resolved_config.json"), cfg)


def _schema_from_args(args) -> dict[str, str]:
    if not getattr(args, "categorical", None):
        return {}
    return {name.strip(): "categorical"
            for name in args.categorical.split(",") if name.strip()}


def _apply_preset(args) -> dict:
    settings = {"gamma": getattr(args, "gamma", 1.0), "feature_cap": None,
                "categorical_encoding": "ordinal"}
    if getattr(args, "preset", None):
        settings.update(PRESETS[args.preset])
    return settings


def _load_train(args, settings) -> TabularDataset:
    ds = load_csv(args.data, args.label, schema=_schema_from_args(args),
                  max_classes=args.max_classes)
    if settings["feature_cap"]:
        ds = select_features_by_variance(
            ds, settings["feature_cap"],
            categorical_encoding=settings["categorical_encoding"])
    return ds


def _make_handle(args, train_ds):
    """Reference predictor (optionally with saved adapters) or an
    external bridge client per --predictor / MPFN_BRIDGE_CMD."""
    spec = getattr(args, "predictor", "reference") or "reference"
    env_cmd = os.environ.get("MPFN_BRIDGE_CMD", "")
    if spec.startswith("external") or env_cmd:
        command = env_cmd
        if not command and ":" in spec:
            command = spec.split(":", 1)[1]
        if not command:
            raise ValueError(
                "external predictor needs --predictor external:<command> "
                "or MPFN_BRIDGE_CMD")
        return ExternalHandle(command)
    adapters_path = getattr(args, "adapters", None)
    if adapters_path:
        with open(adapters_path, encoding="utf-8") as fh:
            saved = json.load(fh)
        if saved["n_classes"] != train_ds.n_classes:
            raise ValueError(
                f"adapters were fitted for {saved['n_classes']} classes, "
                f"dataset has {train_ds.n_classes}")
        pred = ReferencePredictor(n_classes=saved["n_classes"],
                                  bandwidth=saved["bandwidth"],
                                  temperature=saved["temperature"],
                                  bias=np.array(saved["bias"]))
    else:
        pred = ReferencePredictor(
            n_classes=train_ds.n_classes,
            bandwidth=default_bandwidth(train_ds.n_features))
    return ReferenceHandle(pred)


def _predict_prompts(handle, prompts, n_ensemble, seed, jobs):
    if not prompts:
        return np.empty((0, 0))
    C = prompts[0].n_classes
    total = sum(p.n_queries for p in prompts)
    probs = np.empty((total, C))

    def work(p):
        return p, ensemble_predict(handle, p, n_ensemble=n_ensemble,
                                   seed=seed)

    if jobs <= 1:
        pairs = [work(p) for p in prompts]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            pairs = list(ex.map(work, prompts))
    for p, out in pairs:
        probs[p.query_indices] = out
    return probs


def _write_predictions_csv(path, probs):
    C = probs.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row_id,predicted_class,"
                 + ",".join(f"p{c}" for c in range(C)) + "\n")
        pred = probs.argmax(axis=1)
        for i in range(probs.shape[0]):
            fh.write(f"{i},{pred[i]},"
                     + ",".join(_fmt(v) for v in probs[i]) + "\n")


# -- commands ----------------------------------------------------------------

def cmd_preprocess(args) -> int:
    settings = _apply_preset(args)
    ds = _load_train(args, settings)
    out = preprocess(ds,
                     categorical_encoding=settings["categorical_encoding"])
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "preprocess")
    csv_path = os.path.join(args.out, "preprocessed.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(out.column_names + [out.label_name]) + "\n")
        for i in range(out.n_rows):
            cells = [_fmt(v) for v in out.features[i]]
            cells.append(out.label_values[out.labels[i]])
            fh.write(",".join(cells) + "\n")
    _write_json(os.path.join(args.out, "preprocess_meta.json"), {
        "n_rows": out.n_rows,
        "n_features": out.n_features,
        "n_classes": out.n_classes,
        "feature_kinds": out.feature_kinds,
        "column_names": out.column_names,
        "label_values": out.label_values,
    })
    log.info("preprocessed %d rows x %d features", out.n_rows,
             out.n_features)
    return EXIT_OK


def cmd_fit(args) -> int:
    settings = _apply_preset(args)
    ds = _load_train(args, settings)
    train = preprocess(ds,
                       categorical_encoding=settings["categorical_encoding"])
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "fit")
    t0 = time.perf_counter()
    model = micp.fit(train, gamma=settings["gamma"], B=args.B,
                     mode=args.mode, seed=args.seed)
    wall = time.perf_counter() - t0
    model_path = os.path.join(args.out, "model.micp")
    micp.save_model(model, model_path)
    report = {
        "K": model.k,
        "B": model.B,
        "gamma": model.gamma,
        "mode": model.mode,
        "n_train": train.n_rows,
        "n_features": train.n_features,
        "cluster_sizes": model.cluster_sizes.tolist(),
        "support_sizes": [int(s.size) for s in model.prompt_supports],
        "init_distance_evaluations": int(model.train_index.distance_count),
    }
    _write_json(os.path.join(args.out, "fit_report.json"), report)
    with open(os.path.join(args.out, "fit_timing.log"), "w",
              encoding="utf-8") as fh:
        fh.write(f"init_wall_seconds {wall:.6f}\n")
    log.info("fitted K=%d prompters in %.3fs", model.k, wall)
    return EXIT_OK


def cmd_predict(args) -> int:
    settings = _apply_preset(args)
    train_raw = _load_train(args, settings)
    test_raw = load_csv(args.test, args.label,
                        schema=_schema_from_args(args),
                        max_classes=args.max_classes,
                        label_vocabulary=train_raw.label_values)
    if settings["feature_cap"]:
        # project the test file onto the columns the train cap kept
        test_raw = take_columns(test_raw, train_raw.column_names)
    train, test = combine_and_preprocess(
        train_raw, test_raw,
        categorical_encoding=settings["categorical_encoding"])
    model = micp.load_model(args.model, train)
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "predict")
    handle = _make_handle(args, train)
    try:
        prompts = micp.assemble_batches(model, test.features,
                                        n_batch=args.n_batch)
        probs = _predict_prompts(handle, prompts, args.n_ensemble,
                                 args.seed, args.jobs)
    finally:
        handle.close()
    _write_predictions_csv(os.path.join(args.out, "predictions.csv"), probs)
    accuracy, mean_ll = evalrank.metrics(probs, test.labels)
    _write_json(os.path.join(args.out, "metrics.json"),
                {"accuracy": accuracy, "mean_log_likelihood": mean_ll,
                 "n_test": test.n_rows})
    log.info("accuracy %.4f mean_ll %.4f over %d rows", accuracy, mean_ll,
             test.n_rows)
    return EXIT_OK


def cmd_finetune(args) -> int:
    settings = _apply_preset(args)
    ds = _load_train(args, settings)
    train = preprocess(ds,
                       categorical_encoding=settings["categorical_encoding"])
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "finetune")
    base = ReferencePredictor(n_classes=train.n_classes,
                              bandwidth=(args.bandwidth
                                         or default_bandwidth(
                                             train.n_features)))
    cfg = capfn.FinetuneConfig(iterations=args.iterations,
                               learning_rate=args.learning_rate,
                               seed=args.seed, mode=args.mode,
                               bootstrap_context=args.B)
    tuned, curve = capfn.finetune(base, train, cfg)
    _write_json(os.path.join(args.out, "adapters.json"), {
        "temperature": tuned.temperature,
        "bias": tuned.bias.tolist(),
        "bandwidth": tuned.bandwidth,
        "n_classes": tuned.n_classes,
        "final_loss": curve[-1][1] if curve else None,
    })
    if args.curve:
        capfn.write_curve(curve, args.curve)
    log.info("finetuned adapters: temperature %.4f", tuned.temperature)
    return EXIT_OK


def cmd_sweep_gamma(args) -> int:
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    if len(gammas) < 2:
        raise ValueError("need at least 2 gamma values")
    settings = _apply_preset(args)
    train_raw = _load_train(args, settings)
    test_raw = load_csv(args.test, args.label,
                        schema=_schema_from_args(args),
                        max_classes=args.max_classes,
                        label_vocabulary=train_raw.label_values)
    if settings["feature_cap"]:
        test_raw = take_columns(test_raw, train_raw.column_names)
    train, test = combine_and_preprocess(
        train_raw, test_raw,
        categorical_encoding=settings["categorical_encoding"])
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "sweep-gamma")
    handle = _make_handle(args, train)
    rows = []
    timing_lines = []
    try:
        for gamma in gammas:
            model = micp.fit(train, gamma=gamma, B=args.B, mode=args.mode,
                             seed=args.seed)
            model.center_index.distance_count = 0
            t0 = time.perf_counter()
            prompts = micp.assemble_batches(model, test.features,
                                            n_batch=args.n_batch)
            probs = _predict_prompts(handle, prompts, args.n_ensemble,
                                     args.seed, args.jobs)
            wall = time.perf_counter() - t0
            accuracy, mean_ll = evalrank.metrics(probs, test.labels)
            route_cost = model.center_index.distance_count / max(
                1, test.n_rows)
            rows.append((gamma, model.k, accuracy, mean_ll, route_cost))
            timing_lines.append(f"gamma {gamma} wall_seconds {wall:.6f}")
            log.info("gamma %.2f: K=%d accuracy %.4f", gamma, model.k,
                     accuracy)
    finally:
        handle.close()
    with open(os.path.join(args.out, "sweep_gamma.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("gamma,K,accuracy,mean_ll,mean_route_cost\n")
        for gamma, k, acc, ll, cost in rows:
            fh.write(f"{_fmt(gamma)},{k},{_fmt(acc)},{_fmt(ll)},"
                     f"{_fmt(cost)}\n")
    with open(os.path.join(args.out, "sweep_timing.log"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(timing_lines) + "\n")
    for gamma, k, _, _, _ in rows:
        want = (1 if train.n_rows <= args.B
                else micp.num_prompters(gamma, train.n_rows, args.B))
        assert k == want, f"K={k} deviates from the ceiling formula {want}"
    return EXIT_OK


def cmd_theorem_audit(args) -> int:
    settings = _apply_preset(args)
    ds = _load_train(args, settings)
    train = preprocess(ds,
                       categorical_encoding=settings["categorical_encoding"])
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "theorem-audit")
    rng = np.random.default_rng(args.seed)
    rows = np.arange(train.n_rows)
    if args.sample and train.n_rows > args.sample:
        rows = np.sort(rng.choice(train.n_rows, size=args.sample,
                                  replace=False))
    report = {}
    for mode in (micp.CONSTRAINED_KMEANS, micp.PLAIN_KMEANS):
        model = micp.fit(train, gamma=settings["gamma"], B=args.B,
                         mode=mode, seed=args.seed,
                         self_routing=(mode == micp.CONSTRAINED_KMEANS))
        arr = micp.overlap_counts_train(model, rows=rows)
        report[mode] = {
            "K": model.k,
            "rows_checked": int(arr.size),
            "nonzero_fraction": float((arr >= 1).mean()),
            "mean_overlap": float(arr.mean()),
            "min_overlap": int(arr.min()),
        }
    _write_json(os.path.join(args.out, "theorem_report.json"), report)
    constrained = report[micp.CONSTRAINED_KMEANS]
    log.info("constrained nonzero overlap: %.4f, plain: %.4f",
             constrained["nonzero_fraction"],
             report[micp.PLAIN_KMEANS]["nonzero_fraction"])
    if constrained["nonzero_fraction"] < 1.0:
        log.error("overlap guarantee violated: %.4f < 1.0",
                  constrained["nonzero_fraction"])
        return EXIT_THEOREM
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = evalrank.read_records(args.records)
    except ValueError as e:
        log.error("%s", e)
        return EXIT_DATA
    metric = (evalrank.ACCURACY if args.metric == "accuracy"
              else evalrank.LOG_LIKELIHOOD)
    os.makedirs(args.out, exist_ok=True)
    _write_resolved_config(args, "report")
    tally = evalrank.condorcet(records, metric=metric)
    evalrank.write_condorcet_csv(tally,
                                 os.path.join(args.out, "condorcet.csv"))
    evalrank.write_pairwise_csv(tally,
                                os.path.join(args.out, "pairwise.csv"))

    by_votes = sorted(tally.algorithms,
                      key=lambda a: (-tally.votes[a], a))
    for name, subset in (("mean_rank.csv", tally.algorithms),
                         ("mean_rank_top10.csv", by_votes[:10])):
        path = os.path.join(args.out, name)
        try:
            table = evalrank.mean_rank_table(records, subset, metric=metric)
            evalrank.write_mean_rank_csv(table, path)
        except NoSharedDatasets:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("algorithm,mean_rank,std_rank,median_rank,"
                         "min_rank,max_rank,n_datasets\n")
            log.warning("%s: no dataset shared by all of the subset", name)

    top = by_votes[0]
    with open(os.path.join(args.out, "wilcoxon.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("algorithm,n_pairs,w_statistic,p_value,significant\n")
        per_key: dict[tuple, dict[str, float]] = {}
        for r in records:
            if r.ok:
                val = (r.accuracy if metric == evalrank.ACCURACY
                       else r.mean_log_likelihood)
                per_key.setdefault((r.dataset, r.fold), {})[r.algorithm] = val
        for other in tally.algorithms:
            if other == top:
                continue
            x, y = [], []
            for vals in per_key.values():
                if top in vals and other in vals:
                    x.append(vals[top])
                    y.append(vals[other])
            try:
                w, p = evalrank.wilcoxon_signed_rank(x, y)
                fh.write(f"{other},{len(x)},{_fmt(w)},{_fmt(p)},"
                         f"{int(p < 0.05)}\n")
            except TooFewPairs:
                fh.write(f"{other},{len(x)},,,\n")
    if tally.winner:
        print(f"Condorcet winner: {tally.winner}")
    else:
        print("no Condorcet winner")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _add_common_data_args(p, with_test=False):
    p.add_argument("--data", required=True, help="training CSV path")
    p.add_argument("--label", required=True, help="label column name")
    p.add_argument("--categorical", default=None,
                   help="comma-separated columns to force categorical")
    p.add_argument("--max-classes", type=int, default=10, dest="max_classes")
    p.add_argument("--preset", type=int, choices=sorted(PRESETS))
    if with_test:
        p.add_argument("--test", required=True, help="test CSV path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mpfn",
        description="scalable in-context tabular classification")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="out")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="impute, encode, normalize")
    _add_common_data_args(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("fit", help="fit the prompter mixture")
    _add_common_data_args(p)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--B", type=int, default=3000)
    p.add_argument("--mode", default=micp.PLAIN_KMEANS,
                   choices=[micp.PLAIN_KMEANS, micp.CONSTRAINED_KMEANS])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="batched prompt inference")
    _add_common_data_args(p, with_test=True)
    p.add_argument("--model", required=True, help="model file from fit")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--predictor", default="reference",
                   help="reference or external:<command>")
    p.add_argument("--adapters", default=None,
                   help="adapters JSON from finetune")
    p.add_argument("--n-ensemble", type=int, default=16, dest="n_ensemble")
    p.add_argument("--n-batch", type=int, default=1024, dest="n_batch")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("finetune", help="adapter-only bootstrap finetuning")
    _add_common_data_args(p)
    p.add_argument("--mode", default="auto",
                   choices=["auto", "large", "small"])
    p.add_argument("--iterations", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=0.001,
                   dest="learning_rate")
    p.add_argument("--B", type=int, default=3000)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--curve", default=None,
                   help="write iter,loss CSV to this path")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep-gamma", help="trade-off sweep over gamma")
    _add_common_data_args(p, with_test=True)
    p.add_argument("--gammas", required=True,
                   help="comma-separated gamma values")
    p.add_argument("--B", type=int, default=3000)
    p.add_argument("--mode", default=micp.PLAIN_KMEANS,
                   choices=[micp.PLAIN_KMEANS, micp.CONSTRAINED_KMEANS])
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--predictor", default="reference")
    p.add_argument("--adapters", default=None)
    p.add_argument("--n-ensemble", type=int, default=16, dest="n_ensemble")
    p.add_argument("--n-batch", type=int, default=1024, dest="n_batch")
    p.set_defaults(func=cmd_sweep_gamma)

    p = sub.add_parser("theorem-audit",
                       help="overlap statistics in both clustering modes")
    _add_common_data_args(p)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--B", type=int, default=3000)
    p.add_argument("--sample", type=int, default=2000,
                   help="max train rows to audit (0 = all)")
    p.set_defaults(func=cmd_theorem_audit)

    p = sub.add_parser("report", help="Condorcet, mean-rank, Wilcoxon")
    p.add_argument("--records", required=True,
                   help="algorithm,dataset,fold,accuracy,mean_ll,status CSV")
    p.add_argument("--metric", default="ll", choices=["ll", "accuracy"])
    p.set_defaults(func=cmd_report)

    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except PREDICTOR_ERRORS as e:
        log.error("predictor failure: %s", e)
        return EXIT_PREDICTOR
    except DATA_ERRORS as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except CONFIG_ERRORS as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except MpfnError as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
