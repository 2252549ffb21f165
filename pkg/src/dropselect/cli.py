"""Subcommand front-end: one command per evaluation protocol.

gen-data    synthesize the blob dataset splits
train       fit the dropout MLP on the train split
mc-score    compute the six selection scores (model run or --from-files)
correlate   metric-vs-correctness correlation table
curve       decile accuracy curve for one metric
attack      iterative FGSM traces (optional per-iteration metric trends)
mix-correlate  correlations on a real+adversarial mixed set
retrain-sim    budgeted selection-and-retraining simulation
report      gather the artifacts of an output directory into one summary

Global flags: --seed, --k, --dropout-rate, --out-dir, --config, --threads.
Precedence: built-in defaults < config file < explicit flags.  Commands
exit 0 on success and nonzero with an error JSON on stderr otherwise
(exit 2 for usage/config problems, 1 for runtime failures).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adversarial as adv
from . import datasets as ds
from . import fileio as fio
from . import metrics as met
from . import model as mdl
from . import scoring, selection, stats
from .parallel import limit_blas_threads
from .tensormath import child_rng, seeded_shuffle

USAGE_EXIT = 2
RUNTIME_EXIT = 1

GLOBAL_DEFAULTS = {
    "seed": 0,
    "k": 50,
    "dropout_rate": 0.2,
    "out_dir": "out",
    "threads": 1,
}


class UsageError(Exception):
    pass


class JsonArgumentParser(argparse.ArgumentParser):
    """argparse that reports its own usage failures as machine-readable JSON."""

    def error(self, message):
        _emit_error("usage", message)
        raise SystemExit(USAGE_EXIT)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"kind": kind, "message": message}}) + "\n")


@dataclass
class Settings:
    seed: int
    k: int
    dropout_rate: float
    out_dir: Path
    threads: int


def _resolve_settings(args) -> Settings:
    merged = dict(GLOBAL_DEFAULTS)
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        try:
            loaded = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}") from e
        unknown = set(loaded) - set(GLOBAL_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in GLOBAL_DEFAULTS:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    if merged["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    if not (0 <= merged["dropout_rate"] < 1):
        raise UsageError("--dropout-rate must be in [0, 1)")
    return Settings(
        seed=int(merged["seed"]),
        k=int(merged["k"]),
        dropout_rate=float(merged["dropout_rate"]),
        out_dir=Path(merged["out_dir"]),
        threads=int(merged["threads"]),
    )


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as e:
        raise UsageError(f"bad --hidden value {text!r}") from e
    if not sizes or any(s < 1 for s in sizes):
        raise UsageError("--hidden needs positive comma-separated sizes")
    return sizes


# --- dataset directory layout --------------------------------------------

SPLITS = ("train", "test", "pool")


def _write_dataset_dir(out: Path, splits: ds.BlobSplits, manifest: fio.RunManifest) -> None:
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, data in splits.all_splits.items():
        fpath, lpath = out / f"{name}_features.dstf", out / f"{name}_labels.dstf"
        fio.write_tensor(fpath, data.features)
        fio.write_tensor(lpath, data.labels.astype(np.float32))
        files[name] = {"features": fpath.name, "labels": lpath.name}
    spec = splits.spec
    fio.write_json(
        out / "dataset.json",
        {
            "n_classes": spec.n_classes,
            "dim": spec.dim,
            "feature_range": list(splits.feature_range),
            "sizes": {name: d.n for name, d in splits.all_splits.items()},
            "spec": {
                "points_per_class": spec.points_per_class,
                "sigma": spec.sigma,
                "overlap_factor": spec.overlap_factor,
                "tail_factor": spec.tail_factor,
                "overlap_span": list(spec.overlap_span),
                "tail_scale": spec.tail_scale,
                "seed": spec.seed,
            },
            "files": files,
        },
    )
    fio.write_manifest(out / "gen_data_manifest.json", manifest)


def _load_dataset_dir(data_dir, split: str) -> tuple[mdl.Dataset, dict]:
    root = Path(data_dir)
    meta_path = _require_file(root / "dataset.json", "dataset manifest")
    meta = fio.read_json(meta_path)
    if split not in meta["files"]:
        raise UsageError(f"split {split!r} not present in {meta_path}")
    feats = fio.read_tensor(_require_file(root / meta["files"][split]["features"], "features"))
    labels = fio.read_tensor(_require_file(root / meta["files"][split]["labels"], "labels"))
    data = mdl.Dataset(feats, labels.astype(np.int64), meta["n_classes"], split)
    return data, meta


# --- commands --------------------------------------------------------------

def cmd_gen_data(args, st: Settings) -> int:
    spec = ds.BlobSpec(
        n_classes=args.classes,
        points_per_class=(args.n_train + args.n_test + args.n_pool) // args.classes,
        dim=args.dim,
        sigma=args.sigma,
        overlap_factor=args.overlap,
        ambiguous_factor=args.ambiguous,
        tail_factor=args.tail,
        satellite_factor=args.satellite,
        seed=st.seed,
    )
    if spec.points_per_class * args.classes != args.n_train + args.n_test + args.n_pool:
        raise UsageError("split sizes must sum to a multiple of --classes")
    splits = ds.make_blobs(spec, args.n_train, args.n_test, args.n_pool)
    manifest = fio.RunManifest(
        command="gen-data",
        master_seed=st.seed,
        configs={
            "classes": args.classes,
            "dim": args.dim,
            "sigma": args.sigma,
            "overlap": args.overlap,
            "ambiguous": args.ambiguous,
            "tail": args.tail,
            "satellite": args.satellite,
            "n_train": args.n_train,
            "n_test": args.n_test,
            "n_pool": args.n_pool,
        },
    )
    _write_dataset_dir(st.out_dir, splits, manifest)
    return 0


def cmd_train(args, st: Settings) -> int:
    data, _ = _load_dataset_dir(args.data, "train")
    cfg = mdl.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        seed=st.seed,
    )
    result = mdl.train(data, _parse_hidden(args.hidden), st.dropout_rate, cfg)
    st.out_dir.mkdir(parents=True, exist_ok=True)
    model_path = st.out_dir / "model.ckpt"
    mdl.save_model(result.model, model_path)
    fio.write_csv(
        st.out_dir / "train_history.csv",
        ["epoch", "val_accuracy", "train_loss"],
        [
            (e, result.history.val_accuracy[e], result.history.train_loss[e])
            for e in range(len(result.history.val_accuracy))
        ],
    )
    manifest = fio.RunManifest(
        command="train",
        master_seed=st.seed,
        configs={
            "hidden": args.hidden,
            "epochs": args.epochs,
            "lr": args.lr,
            "momentum": args.momentum,
            "batch_size": args.batch_size,
            "dropout_rate": st.dropout_rate,
            "best_epoch": result.history.best_epoch,
            "best_val_accuracy": result.history.best_val_accuracy,
        },
    )
    manifest.add_input(Path(args.data) / "dataset.json")
    fio.write_manifest(st.out_dir / "train_manifest.json", manifest)
    return 0


def _scores_payload(score_map, predicted=None, labels=None, provenance=None) -> dict:
    metrics_obj = {}
    for mid, sv in score_map.items():
        vals = [v if np.isfinite(v) else None for v in sv.values.tolist()]
        metrics_obj[mid] = {
            "values": vals,
            "orientation": sv.orientation,
            "invalid": [[int(i), r] for i, r in sv.invalid],
        }
    body = {"metrics": metrics_obj, "provenance": provenance or {}}
    if predicted is not None:
        body["predicted"] = [int(p) for p in predicted]
    if labels is not None:
        body["labels"] = [int(y) for y in labels]
        body["correct"] = [int(p == y) for p, y in zip(predicted, labels)]
    return body


def _write_scores(out: Path, payload: dict) -> None:
    fio.write_json(out / "scores.json", payload)
    metric_ids = sorted(payload["metrics"])
    n = len(next(iter(payload["metrics"].values()))["values"])
    header = ["index"]
    cols = []
    if "predicted" in payload:
        header.append("predicted")
        cols.append(payload["predicted"])
    if "labels" in payload:
        header += ["label", "correct"]
        cols += [payload["labels"], payload["correct"]]
    header += metric_ids
    cols += [payload["metrics"][m]["values"] for m in metric_ids]
    rows = [[i, *(c[i] for c in cols)] for i in range(n)]
    fio.write_csv(out / "scores.csv", header, rows)


def cmd_mc_score(args, st: Settings) -> int:
    st.out_dir.mkdir(parents=True, exist_ok=True)
    if args.from_files:
        if args.prob_tensor is None or args.det_probs is None:
            raise UsageError("--from-files needs --prob-tensor and --det-probs")
        tensor_arr = fio.read_tensor(_require_file(args.prob_tensor, "probability tensor"))
        if tensor_arr.ndim != 3:
            raise UsageError("probability tensor must be rank 3 (k x n x C)")
        det = fio.read_tensor(_require_file(args.det_probs, "deterministic probabilities"))
        tensor = mdl.ProbTensor(tensor_arr)
        tensor.validate_simplex()
        kw = {}
        if args.train_acts and args.test_acts:
            kw["train_acts"] = fio.read_tensor(_require_file(args.train_acts, "train activations"))
            kw["test_acts"] = fio.read_tensor(_require_file(args.test_acts, "test activations"))
        if args.train_pred and args.test_pred:
            kw["train_pred"] = fio.read_tensor(
                _require_file(args.train_pred, "train predictions")
            ).astype(np.int64)
            kw["test_pred"] = fio.read_tensor(
                _require_file(args.test_pred, "test predictions")
            ).astype(np.int64)
        score_map = scoring.scores_from_arrays(tensor, det, **kw)
        predicted = det.argmax(axis=1)
        labels = None
        if args.labels:
            labels = fio.read_tensor(_require_file(args.labels, "labels")).astype(np.int64)
        payload = _scores_payload(
            score_map,
            predicted,
            labels,
            provenance={"source": "files", "k": tensor.k},
        )
        _write_scores(st.out_dir, payload)
        manifest = fio.RunManifest("mc-score", st.seed, configs={"from_files": True})
        for p in (args.prob_tensor, args.det_probs, args.train_acts, args.test_acts):
            if p:
                manifest.add_input(p)
        fio.write_manifest(st.out_dir / "mc_score_manifest.json", manifest)
        return 0

    if args.model is None or args.data is None:
        raise UsageError("mc-score needs --model and --data (or --from-files)")
    model = mdl.load_model(_require_file(args.model, "model checkpoint"))
    data, _ = _load_dataset_dir(args.data, args.split)
    train_data, _ = _load_dataset_dir(args.data, "train")
    bundle = scoring.compute_scores(
        model,
        train_data,
        data.features,
        metric_ids=scoring.ALL_METRICS,
        k=st.k,
        seed=st.seed,
        threads=st.threads,
    )
    fio.write_tensor(st.out_dir / "det_probs.dstf", bundle.det_probs)
    fio.write_tensor(st.out_dir / "prob_tensor.dstf", bundle.prob_tensor.data)
    payload = _scores_payload(bundle.scores, bundle.predicted, data.labels, bundle.provenance)
    _write_scores(st.out_dir, payload)
    manifest = fio.RunManifest(
        "mc-score",
        st.seed,
        configs={"k": st.k, "split": args.split, "dropout_rate": model.dropout_rate},
    )
    manifest.add_input(args.model)
    manifest.add_input(Path(args.data) / "dataset.json")
    fio.write_manifest(st.out_dir / "mc_score_manifest.json", manifest)
    return 0


def _scores_from_json(path) -> tuple[dict[str, met.ScoreVector], np.ndarray | None]:
    payload = fio.read_json(_require_file(path, "scores file"))
    score_map = {}
    for mid, obj in payload["metrics"].items():
        invalid = [(int(i), r) for i, r in obj.get("invalid", [])]
        vals = [np.nan if v is None else v for v in obj["values"]]
        score_map[mid] = met.ScoreVector(mid, np.asarray(vals), invalid=invalid)
    correct = np.asarray(payload["correct"], dtype=np.float64) if "correct" in payload else None
    return score_map, correct


def cmd_correlate(args, st: Settings) -> int:
    score_map, correct = _scores_from_json(args.scores)
    if correct is None:
        raise UsageError("scores file has no correctness column (was mc-score run with labels?)")
    order = [m for m in scoring.ALL_METRICS if m in score_map]
    report = stats.correlation_report([score_map[m] for m in order], correct)
    st.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = fio.RunManifest("correlate", st.seed, configs={})
    manifest.add_input(args.scores)
    fio.write_correlation_report(
        report,
        st.out_dir / "correlations.json",
        st.out_dir / "correlations.csv",
        manifest,
    )
    return 0


def cmd_curve(args, st: Settings) -> int:
    score_map, correct = _scores_from_json(args.scores)
    if correct is None:
        raise UsageError("scores file has no correctness column")
    if args.metric not in score_map:
        raise UsageError(f"metric {args.metric!r} not present in the scores file")
    curve = stats.decile_curve(score_map[args.metric], correct)
    st.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = fio.RunManifest("curve", st.seed, configs={"metric": args.metric})
    manifest.add_input(args.scores)
    fio.write_decile_curve(
        curve,
        st.out_dir / f"curve_{args.metric}.json",
        st.out_dir / f"curve_{args.metric}.csv",
        manifest,
    )
    return 0


def _trace_paths(traces_dir: Path, idx: int) -> tuple[Path, Path]:
    return traces_dir / f"trace_{idx:04d}.dstf", traces_dir / f"trace_{idx:04d}.json"


def _save_traces(traces_dir: Path, traces) -> None:
    traces_dir.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(traces):
        tpath, jpath = _trace_paths(traces_dir, i)
        fio.write_tensor(tpath, t.iterates)
        fio.write_json(
            jpath,
            {
                "original_index": t.original_index,
                "true_label": t.true_label,
                "predicted": t.predicted.tolist(),
                "success": t.success,
                "eps": t.eps,
                "iters_used": t.iters_used,
            },
        )


def _load_traces(traces_dir: Path) -> list[adv.AttackTrace]:
    traces = []
    idx = 0
    while True:
        tpath, jpath = _trace_paths(traces_dir, idx)
        if not tpath.exists():
            break
        side = fio.read_json(_require_file(jpath, "trace sidecar"))
        traces.append(
            adv.AttackTrace(
                original_index=side["original_index"],
                true_label=side["true_label"],
                iterates=fio.read_tensor(tpath),
                predicted=np.asarray(side["predicted"], dtype=np.int64),
                success=side["success"],
                eps=side["eps"],
            )
        )
        idx += 1
    if not traces:
        raise UsageError(f"no traces found in {traces_dir}")
    return traces


def cmd_attack(args, st: Settings) -> int:
    model = mdl.load_model(_require_file(args.model, "model checkpoint"))
    data, meta = _load_dataset_dir(args.data, args.split)
    clip = tuple(meta.get("feature_range", [0.0, 1.0]))
    pred = mdl.predict(model, data.features)
    correct_idx = np.flatnonzero(pred == data.labels)
    if len(correct_idx) < args.n_attacks:
        raise UsageError(
            f"only {len(correct_idx)} correctly classified points; "
            f"cannot attack {args.n_attacks}"
        )
    order = seeded_shuffle(len(correct_idx), child_rng(st.seed, "attack-choice"))
    chosen = correct_idx[order[: args.n_attacks]]
    traces = adv.attack_batch(
        model, data, chosen, eps=args.eps, max_iters=args.max_iters,
        clip=clip, threads=st.threads,
    )
    st.out_dir.mkdir(parents=True, exist_ok=True)
    _save_traces(st.out_dir / "traces", traces)
    n_success = sum(t.success for t in traces)
    summary = {
        "n_attacks": len(traces),
        "n_success": n_success,
        "flip_rate": n_success / len(traces),
        "eps": args.eps,
        "max_iters": args.max_iters,
        "median_iters_to_flip": float(
            np.median([t.iters_used for t in traces if t.success])
        )
        if n_success
        else None,
    }
    if args.trace_metrics:
        train_data, _ = _load_dataset_dir(args.data, "train")
        trends = adv.trace_metric_trends(
            model, train_data, traces, k=st.k, seed=st.seed
        )
        metric_cols = list(scoring.ALL_METRICS)
        fio.write_csv(
            st.out_dir / "trends.csv",
            ["trace", "original_index", "iteration", "predicted", *metric_cols],
            [
                [r["trace"], r["original_index"], r["iteration"], r["predicted"]]
                + [r[m] for m in metric_cols]
                for r in trends.rows
            ],
        )
        fio.write_json(
            st.out_dir / "trends.json",
            {
                "median_tau_vs_iteration": {
                    m: (None if np.isnan(v) else v) for m, v in trends.median_tau.items()
                },
                "flagged": [[i, r] for i, r in trends.flagged],
            },
        )
        summary["median_tau_vs_iteration"] = {
            m: (None if np.isnan(v) else v) for m, v in trends.median_tau.items()
        }
    fio.write_json(st.out_dir / "attacks.json", summary)
    manifest = fio.RunManifest(
        "attack",
        st.seed,
        configs={
            "eps": args.eps,
            "max_iters": args.max_iters,
            "n_attacks": args.n_attacks,
            "split": args.split,
            "clip": list(clip),
        },
    )
    manifest.add_input(args.model)
    fio.write_manifest(st.out_dir / "attack_manifest.json", manifest)
    return 0


def cmd_mix_correlate(args, st: Settings) -> int:
    model = mdl.load_model(_require_file(args.model, "model checkpoint"))
    real, _ = _load_dataset_dir(args.data, args.split)
    train_data, _ = _load_dataset_dir(args.data, "train")
    traces = _load_traces(Path(args.traces))
    mixed = adv.build_mixed_set(real, traces, mode=args.mode)
    bundle = scoring.compute_scores(
        model,
        train_data,
        mixed.features,
        metric_ids=scoring.ALL_METRICS,
        k=st.k,
        seed=st.seed,
        threads=st.threads,
    )
    correct = bundle.correctness(mixed.labels)
    score_map = bundle.scores
    if args.adv_only:
        mask = mixed.adversarial_mask()
        correct = correct[mask]
        score_map = {
            m: met.ScoreVector(m, sv.values[mask]) for m, sv in score_map.items()
        }
    order = [m for m in scoring.ALL_METRICS if m in score_map]
    report = stats.correlation_report([score_map[m] for m in order], correct)
    st.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = fio.RunManifest(
        "mix-correlate",
        st.seed,
        configs={
            "mode": args.mode,
            "adv_only": bool(args.adv_only),
            "k": st.k,
            "n_real": mixed.n_real,
            "n_adversarial": mixed.n_adversarial,
        },
    )
    manifest.add_input(args.model)
    fio.write_correlation_report(
        report,
        st.out_dir / "mixed_correlations.json",
        st.out_dir / "mixed_correlations.csv",
        manifest,
    )
    return 0


def cmd_retrain_sim(args, st: Settings) -> int:
    pool, _ = _load_dataset_dir(args.data, "pool")
    test, _ = _load_dataset_dir(args.data, "test")
    policy = selection.parse_policy(args.policy, seed=st.seed)
    cfg = selection.RetrainConfig(
        initial_size=args.initial_size,
        batch_size=args.select_batch,
        epochs_per_iteration=args.epochs,
        repetitions=args.reps,
        policy=policy,
        hidden_sizes=_parse_hidden(args.hidden),
        dropout_rate=st.dropout_rate,
        learning_rate=args.lr,
        momentum=args.momentum,
        sgd_batch_size=args.batch_size,
        k=st.k,
        seed=st.seed,
        warm_start=args.warm_start,
    )
    trace = selection.retrain_loop(pool, test, cfg, threads=st.threads)
    st.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = fio.RunManifest(
        "retrain-sim",
        st.seed,
        configs={
            "policy": policy.label,
            "initial_size": cfg.initial_size,
            "batch_size": cfg.batch_size,
            "epochs_per_iteration": cfg.epochs_per_iteration,
            "repetitions": cfg.repetitions,
            "k": cfg.k,
            "dropout_rate": cfg.dropout_rate,
            "warm_start": cfg.warm_start,
        },
    )
    manifest.add_input(Path(args.data) / "dataset.json")
    fio.write_retrain_trace(
        trace,
        st.out_dir / "retrain.json",
        st.out_dir / "retrain_trace.csv",
        st.out_dir / "retrain_epochs.csv",
        manifest,
    )
    return 0


def cmd_report(args, st: Settings) -> int:
    root = Path(args.dir) if args.dir else st.out_dir
    if not root.exists():
        raise UsageError(f"report directory not found: {root}")
    summary: dict = {"source_dir": str(root), "artifacts": {}}
    for name in (
        "correlations.json",
        "mixed_correlations.json",
        "attacks.json",
        "retrain.json",
        "trends.json",
    ):
        p = root / name
        if p.exists():
            summary["artifacts"][name] = fio.read_json(p)
    for p in sorted(root.glob("curve_*.json")):
        summary["artifacts"][p.name] = fio.read_json(p)
    st.out_dir.mkdir(parents=True, exist_ok=True)
    fio.write_json(st.out_dir / "summary.json", summary)
    return 0


# --- parser wiring ----------------------------------------------------------

def build_parser() -> JsonArgumentParser:
    parser = JsonArgumentParser(prog="dropselect", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--k", type=int, default=None)
    common.add_argument("--dropout-rate", type=float, default=None, dest="dropout_rate")
    common.add_argument("--out-dir", default=None, dest="out_dir")
    common.add_argument("--config", default=None)
    common.add_argument("--threads", type=int, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common])
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--sigma", type=float, default=0.06)
    p.add_argument("--overlap", type=float, default=0.08)
    p.add_argument("--ambiguous", type=float, default=0.14)
    p.add_argument("--tail", type=float, default=0.08)
    p.add_argument("--satellite", type=float, default=0.22)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--n-pool", type=int, default=5000)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", default="96,48")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("mc-score", parents=[common])
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--from-files", action="store_true")
    p.add_argument("--prob-tensor")
    p.add_argument("--det-probs")
    p.add_argument("--train-acts")
    p.add_argument("--test-acts")
    p.add_argument("--train-pred")
    p.add_argument("--test-pred")
    p.add_argument("--labels")
    p.set_defaults(fn=cmd_mc_score)

    p = sub.add_parser("correlate", parents=[common])
    p.add_argument("--scores", required=True)
    p.set_defaults(fn=cmd_correlate)

    p = sub.add_parser("curve", parents=[common])
    p.add_argument("--scores", required=True)
    p.add_argument("--metric", required=True)
    p.set_defaults(fn=cmd_curve)

    p = sub.add_parser("attack", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--n-attacks", type=int, default=100)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--trace-metrics", action="store_true")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("mix-correlate", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--traces", required=True)
    p.add_argument(
        "--mode",
        default=adv.FINAL_ONLY,
        choices=[adv.FINAL_ONLY, adv.FINAL_PLUS_PENULTIMATE],
    )
    p.add_argument("--adv-only", action="store_true")
    p.set_defaults(fn=cmd_mix_correlate)

    p = sub.add_parser("retrain-sim", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--policy", default="random")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--initial-size", type=int, default=1000)
    p.add_argument("--select-batch", type=int, default=500)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--hidden", default="96,48")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--warm-start", action="store_true")
    p.set_defaults(fn=cmd_retrain_sim)

    p = sub.add_parser("report", parents=[common])
    p.add_argument("--dir", default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        settings = _resolve_settings(args)
    except UsageError as e:
        _emit_error("usage", str(e))
        return USAGE_EXIT
    with limit_blas_threads(1):
        try:
            return args.fn(args, settings)
        except UsageError as e:
            _emit_error("usage", str(e))
            return USAGE_EXIT
        except (
            fio.TensorFormatError,
            mdl.TrainingDivergedError,
            scoring.ScoringError,
            stats.SampleCapExceededError,
            ValueError,
            OSError,
        ) as e:
            _emit_error("runtime", f"{type(e).__name__}: {e}")
            return RUNTIME_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
