"""Command-line surface: annotate -> assess -> distill -> predict, plus theory
checks/sweeps and synthetic data generation.

Every output artifact is written atomically (temp file + rename) and paired
with a <artifact>.manifest.json recording the command, config echo, seed,
inputs/outputs, tool version, and wall-clock duration. Exit codes: 0 success,
1 input error, 2 runtime failure. API tokens are read from an environment
variable, never from flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

import annodistill
from annodistill import annotate as ann
from annodistill import metrics, refinery, theory
from annodistill.classifiers import LinearSoftmaxClassifier, MLPClassifier
from annodistill.core import (
    CandidateNoiseSpec,
    CandidateSet,
    Dataset,
    DatasetFormatError,
    atomic_write_text,
    gen_synthetic,
    load_dataset,
    save_dataset,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2


def _echo_value(v):
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return str(v)


def _write_manifests(command: str, args_echo: dict, inputs: list, outputs: list[Path], seed, t0: float) -> None:
    config = {
        k: _echo_value(v) for k, v in args_echo.items() if k not in ("func", "config") and not callable(v)
    }
    manifest = {
        "command": command,
        "version": annodistill.__version__,
        "seed": seed,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.monotonic() - t0, 6),
        "created_unix": time.time(),
    }
    for out in outputs:
        atomic_write_text(Path(str(out) + ".manifest.json"), json.dumps(manifest, indent=1) + "\n")


def load_config_file(path) -> dict[str, str]:
    """Flat key=value config; '#' starts a comment. Keys mirror flag names."""
    cfg: dict[str, str] = {}
    for lineno, raw in enumerate(open(path, encoding="utf-8"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _resolve(args, cfg: dict[str, str], key: str, default, cast=float):
    """Precedence: explicit flag > config file > built-in default."""
    flag_val = getattr(args, key, None)
    if flag_val is not None:
        return flag_val
    if key in cfg:
        raw = cfg[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes")
        return cast(raw)
    return default


def _out_path(args, name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg) -> int:
    t0 = time.monotonic()
    seed = int(_resolve(args, cfg, "seed", 0, int))
    spec = CandidateNoiseSpec(
        inclusion=float(_resolve(args, cfg, "inclusion", 0.85)),
        mean_size=float(_resolve(args, cfg, "mean_size", 2.0)),
    )
    dataset = gen_synthetic(
        C=int(_resolve(args, cfg, "classes", 4, int)),
        per_class=int(_resolve(args, cfg, "per_class", 500, int)),
        d=int(_resolve(args, cfg, "dim", 16, int)),
        sep=float(_resolve(args, cfg, "sep", 3.0)),
        noise_spec=spec,
        seed=seed,
    )
    out = _out_path(args, args.out)
    save_dataset(dataset, out)
    _write_manifests("synth", vars(args), [], [out], seed, t0)
    print(f"wrote {out} ({len(dataset)} samples, C={dataset.n_classes}, d={dataset.feature_dim})")
    return EXIT_OK


def _client_for(args, config: ann.LlmClientConfig):
    if args.replay:
        return ann.ReplayClient(args.replay), False
    if not config.endpoint:
        raise ValueError("either --replay or --endpoint is required")
    return ann.HttpChatClient(config), True


def cmd_annotate(args, cfg) -> int:
    t0 = time.monotonic()
    dataset = load_dataset(args.dataset)
    strategy = ann.PromptStrategy(kind=ann.StrategyKind(args.strategy))
    sc_samples = int(_resolve(args, cfg, "sc_samples", 1, int))
    sc_mode = None
    if args.sc_mode is not None:
        sc_mode = "all" if args.sc_mode == "all" else int(args.sc_mode)
    default_temp = ann.SELF_CONSISTENCY_TEMPERATURE if sc_samples > 1 else ann.ANNOTATE_TEMPERATURE
    config = ann.LlmClientConfig(
        endpoint=_resolve(args, cfg, "endpoint", "", str) or "",
        model=_resolve(args, cfg, "model", "", str) or "",
        temperature=float(_resolve(args, cfg, "temperature", default_temp)),
        n_samples=sc_samples,
        max_concurrency=int(_resolve(args, cfg, "max_concurrency", 4, int)),
        timeout=float(_resolve(args, cfg, "timeout", 30.0)),
        retry=int(_resolve(args, cfg, "retry", 2, int)),
    )
    client, live = _client_for(args, config)
    aliases = None
    if args.aliases == "trec":
        aliases = ann.TREC_ALIASES
    elif args.aliases:
        aliases = {k: int(v) for k, v in json.loads(Path(args.aliases).read_text()).items()}
    pool = ann.load_pool(args.pool) if args.pool else None
    out = _out_path(args, args.out)
    outputs = [out]
    replay_log = None
    if live:
        log_path = _out_path(args, args.out + ".replay.log")
        replay_log = ann.ReplayLogWriter(log_path)
        outputs.append(log_path)
    records = ann.annotate(
        dataset,
        strategy,
        client,
        pool=pool,
        config=config,
        few_shot_k=int(_resolve(args, cfg, "few_shot", 0, int)),
        sc_mode=sc_mode,
        aliases=aliases,
        replay_log=replay_log,
    )
    ann.save_annotations(records, out)
    _write_manifests("annotate", vars(args), [args.dataset], outputs, None, t0)
    failures = [r for r in records if not r.ok]
    print(f"wrote {out} ({len(records)} records, {len(failures)} failed)")
    if failures:
        for r in failures[:20]:
            print(f"  sample {r.sample_id}: {r.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_assess(args, cfg) -> int:
    t0 = time.monotonic()
    dataset = load_dataset(args.dataset)
    records = ann.load_annotations(args.annotations)
    gold_by_id = {s.id: s.gold for s in dataset.samples}
    candidates, gold = [], []
    strategy = "-"
    for r in records:
        if not r.ok:
            continue
        if gold_by_id.get(r.sample_id) is None:
            raise ValueError(f"sample {r.sample_id!r} has no gold label; cannot assess")
        candidates.append(r.parsed)
        gold.append(gold_by_id[r.sample_id])
        strategy = r.strategy.value
    report = metrics.assess(candidates, gold, dataset.n_classes)
    row = report.csv_row(dataset=args.dataset_label or Path(args.dataset).stem, strategy=strategy)
    print(metrics.AssessmentReport.CSV_HEADER)
    print(row)
    if args.out:
        out = _out_path(args, args.out)
        atomic_write_text(out, metrics.AssessmentReport.CSV_HEADER + "\n" + row + "\n")
        _write_manifests("assess", vars(args), [args.dataset, args.annotations], [out], None, t0)
    return EXIT_OK


def _refinery_config(args, cfg) -> refinery.RefineryConfig:
    return refinery.RefineryConfig(
        epochs=int(_resolve(args, cfg, "epochs", 50, int)),
        warmup_epochs=int(_resolve(args, cfg, "warmup_epochs", 5, int)),
        batch_size=int(_resolve(args, cfg, "batch_size", 32, int)),
        learning_rate=float(_resolve(args, cfg, "learning_rate", 0.1)),
        weight_decay=float(_resolve(args, cfg, "weight_decay", 1e-4)),
        delta=float(_resolve(args, cfg, "delta", 0.5)),
        gamma=float(_resolve(args, cfg, "gamma", 0.85)),
        tau=float(_resolve(args, cfg, "tau", 0.99)),
        varsigma=float(_resolve(args, cfg, "varsigma", 4.0)),
        eta_ramp_epochs=int(_resolve(args, cfg, "eta_ramp_epochs", 10, int)),
        eta_max=float(_resolve(args, cfg, "eta_max", 1.0)),
        jitter_scale=float(_resolve(args, cfg, "jitter_scale", 0.05)),
        seed=int(_resolve(args, cfg, "seed", 0, int)),
    )


def _candidate_map(dataset: Dataset, annotations_path: str | None) -> dict[str, CandidateSet]:
    if annotations_path:
        records = ann.load_annotations(annotations_path)
        return {r.sample_id: r.parsed for r in records if r.ok}
    return dict(dataset.candidates)


def _write_predictions(out: Path, dataset: Dataset, labels: np.ndarray, probs: np.ndarray) -> None:
    lines = []
    for s, lab, p in zip(dataset.samples, labels, probs):
        lines.append(json.dumps({"id": s.id, "label": int(lab), "probs": [float(x) for x in p]}))
    atomic_write_text(out, "\n".join(lines) + "\n")


def cmd_distill(args, cfg) -> int:
    t0 = time.monotonic()
    dataset = load_dataset(args.dataset)
    config = _refinery_config(args, cfg)
    candidates = _candidate_map(dataset, args.annotations)
    trainable = [s for s in dataset.samples if s.id in candidates]
    dropped = len(dataset) - len(trainable)
    if dropped:
        print(f"note: {dropped} samples lack candidate sets and are excluded from training", file=sys.stderr)
    if not trainable:
        raise ValueError("no samples with candidate sets to train on")
    train_set = Dataset(dataset.label_space, tuple(trainable), {s.id: candidates[s.id] for s in trainable})
    rng = np.random.default_rng(config.seed)
    if args.classifier == "mlp":
        clf = MLPClassifier(dataset.feature_dim, dataset.n_classes, hidden=args.hidden, rng=rng)
    else:
        clf = LinearSoftmaxClassifier(dataset.feature_dim, dataset.n_classes)
    result = refinery.train(train_set, train_set.candidates, clf, config)

    prefix = args.out_prefix
    model_out = _out_path(args, prefix + ".model.json")
    history_out = _out_path(args, prefix + ".history.csv")
    preds_out = _out_path(args, prefix + ".predictions.jsonl")
    refinery.save_model(model_out, result.classifier, dataset.label_space, config, config.seed)
    atomic_write_text(history_out, refinery.history_to_csv(result.history))
    labels, probs = refinery.predict(result.classifier, dataset)
    _write_predictions(preds_out, dataset, labels, probs)
    inputs = [args.dataset] + ([args.annotations] if args.annotations else [])
    _write_manifests("distill", vars(args), inputs, [model_out, history_out, preds_out], config.seed, t0)
    final = result.history[-1]
    acc = "" if final.train_acc is None else f", train_acc={final.train_acc:.4f}"
    print(f"wrote {model_out} (epochs={config.epochs}{acc})")
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    t0 = time.monotonic()
    bundle = refinery.load_model(args.model)
    dataset = load_dataset(args.dataset)
    labels, probs = refinery.predict(bundle.classifier, dataset)
    out = _out_path(args, args.out)
    _write_predictions(out, dataset, labels, probs)
    _write_manifests("predict", vars(args), [args.model, args.dataset], [out], bundle.seed, t0)
    print(f"wrote {out}")
    return EXIT_OK


def _theory_params(args, cfg) -> theory.TheoryParams:
    return theory.TheoryParams(
        C=int(_resolve(args, cfg, "classes", 2, int)),
        m=int(_resolve(args, cfg, "m", 100, int)),
        a=float(_resolve(args, cfg, "a", 0.8)),
        b=float(_resolve(args, cfg, "b", 0.2)),
        lam=float(_resolve(args, cfg, "lam", 0.01)),
    )


def _noise_for(args, params: theory.TheoryParams) -> theory.NoiseMatrix:
    if args.noise_matrix:
        R = np.asarray(json.loads(Path(args.noise_matrix).read_text()), dtype=float)
        return theory.NoiseMatrix(R)
    if args.rho is None:
        raise ValueError("either --rho or --noise-matrix is required")
    return theory.NoiseMatrix.symmetric(params.C, float(args.rho))


def cmd_theory_check(args, cfg) -> int:
    t0 = time.monotonic()
    params = _theory_params(args, cfg)
    noise = _noise_for(args, params)
    th, ph, ps = theory.theta_phi_psi(params)
    rep1 = theory.condition_top1(noise, th, ph)
    rep2 = theory.condition_top2(noise)
    lines = [
        f"params: C={params.C} m={params.m} a={params.a} b={params.b} lambda={params.lam}",
        f"theta={th:.6f} phi={ph:.6f} psi={ps:.6f} top1_threshold={theory.top1_threshold(params):.6f}",
        rep1.render().rstrip(),
        rep2.render().rstrip(),
    ]
    for mode in ("teacher", "top1", "top2"):
        acc = theory.simulate_distillation(params, noise, mode)
        lines.append(f"accuracy[{mode}] (infinite-m) = {acc:.6f}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = _out_path(args, args.out)
        atomic_write_text(out, text)
        _write_manifests("theory-check", vars(args), [], [out], None, t0)
    return EXIT_OK


def _parse_grid(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError("grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0:
        raise ValueError("grid step must be positive")
    return [float(x) for x in np.arange(start, stop + step / 2, step)]


def cmd_theory_sweep(args, cfg) -> int:
    t0 = time.monotonic()
    params = _theory_params(args, cfg)
    if args.rhos:
        grid = [float(x) for x in args.rhos.split(",")]
    else:
        grid = _parse_grid(args.grid)
    rows = theory.phase_sweep(params, grid)
    csv_text = theory.sweep_to_csv(rows)
    print(csv_text, end="")
    if args.out:
        out = _out_path(args, args.out)
        atomic_write_text(out, csv_text)
        _write_manifests("theory-sweep", vars(args), [], [out], None, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="annodistill", description=__doc__)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".", help="directory for output artifacts")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic candidate-annotated dataset")
    sp.add_argument("--classes", "--C", dest="classes", type=int, default=None)
    sp.add_argument("--per-class", dest="per_class", type=int, default=None)
    sp.add_argument("--dim", type=int, default=None)
    sp.add_argument("--sep", type=float, default=None)
    sp.add_argument("--inclusion", type=float, default=None)
    sp.add_argument("--mean-size", dest="mean_size", type=float, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    ap = sub.add_parser("annotate", help="query candidate annotations for a dataset")
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--strategy", required=True, choices=[k.value for k in ann.StrategyKind])
    ap.add_argument("--replay", help="replay log to serve responses from (offline mode)")
    ap.add_argument("--endpoint", default=None)
    ap.add_argument("--model", default=None)
    ap.add_argument("--temperature", type=float, default=None)
    ap.add_argument("--sc-samples", dest="sc_samples", type=int, default=None)
    ap.add_argument("--sc-mode", dest="sc_mode", default=None, help="'all' or an integer k")
    ap.add_argument("--pool", help="few-shot example pool (jsonl)")
    ap.add_argument("--few-shot", dest="few_shot", type=int, default=None)
    ap.add_argument("--aliases", help="'trec' or a json file of alias->index")
    ap.add_argument("--max-concurrency", dest="max_concurrency", type=int, default=None)
    ap.add_argument("--timeout", type=float, default=None)
    ap.add_argument("--retry", type=int, default=None)
    ap.add_argument("--out", required=True)
    ap.set_defaults(func=cmd_annotate)

    asp = sub.add_parser("assess", help="annotation-quality metrics against gold labels")
    asp.add_argument("--dataset", required=True)
    asp.add_argument("--annotations", required=True)
    asp.add_argument("--dataset-label", dest="dataset_label", default=None)
    asp.add_argument("--out", default=None)
    asp.set_defaults(func=cmd_assess)

    dp = sub.add_parser("distill", help="train a classifier from candidate annotations")
    dp.add_argument("--dataset", required=True)
    dp.add_argument("--annotations", default=None)
    dp.add_argument("--classifier", choices=["linear", "mlp"], default="linear")
    dp.add_argument("--hidden", type=int, default=32)
    dp.add_argument("--epochs", type=int, default=None)
    dp.add_argument("--warmup-epochs", dest="warmup_epochs", type=int, default=None)
    dp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    dp.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=None)
    dp.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    dp.add_argument("--delta", type=float, default=None)
    dp.add_argument("--gamma", type=float, default=None)
    dp.add_argument("--tau", type=float, default=None)
    dp.add_argument("--varsigma", type=float, default=None)
    dp.add_argument("--eta-ramp-epochs", dest="eta_ramp_epochs", type=int, default=None)
    dp.add_argument("--eta-max", "--eta", dest="eta_max", type=float, default=None)
    dp.add_argument("--jitter-scale", dest="jitter_scale", type=float, default=None)
    dp.add_argument("--out-prefix", dest="out_prefix", required=True)
    dp.set_defaults(func=cmd_distill)

    pp = sub.add_parser("predict", help="hard labels + distributions from a trained model")
    pp.add_argument("--model", required=True)
    pp.add_argument("--dataset", required=True)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_predict)

    tp = sub.add_parser("theory", help="noise-tolerance numerics")
    tsub = tp.add_subparsers(dest="theory_command", required=True)

    tc = tsub.add_parser("check", help="tolerance conditions and accuracies for one noise matrix")
    ts = tsub.add_parser("sweep", help="phase sweep over a noise grid")
    for q in (tc, ts):
        q.add_argument("--classes", "--C", dest="classes", type=int, default=None)
        q.add_argument("--m", type=int, default=None)
        q.add_argument("--a", type=float, default=None)
        q.add_argument("--b", type=float, default=None)
        q.add_argument("--lambda", dest="lam", type=float, default=None)
        q.add_argument("--out", default=None)
    tc.add_argument("--rho", type=float, default=None)
    tc.add_argument("--noise-matrix", dest="noise_matrix", default=None)
    tc.set_defaults(func=cmd_theory_check)
    ts.add_argument("--grid", default="0:0.49:0.01", help="start:stop:step (inclusive)")
    ts.add_argument("--rhos", default=None, help="comma-separated flip rates")
    ts.set_defaults(func=cmd_theory_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.INFO)
    cfg: dict[str, str] = {}
    try:
        if args.config:
            cfg = load_config_file(args.config)
        return args.func(args, cfg)
    except (refinery.TrainingDiverged, ann.TransportError, ann.FixtureMiss) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DatasetFormatError, FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
