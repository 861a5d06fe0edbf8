"""Command-line entry point.

Subcommands: gen-corpus, train, build-store, blend-train, evaluate,
ensemble-eval, sweep, report. Every artifact embeds the config and seed
that produced it, and rerunning a subcommand with identical inputs and
seeds reproduces its outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 I/O failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (CorpusConfig, compute_priors, generate_corpus, load_corpus,
                     save_corpus, summary_text)
from .experiments import ExperimentRunner, ExperimentSpec, aggregate, collect_points
from .metrics import analytic_macs, cost_report, frame_error_rate, wer_proxy
from .models import (BLSTMModel, CNNModel, count_parameters, desk_blstm_config,
                     desk_deep_cnn_config, desk_wide_cnn_config)
from .softlabels import build_store, load_store, save_store
from .trainer import DivergenceError, TrainConfig, train_model, write_history_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


def _outpath(path):
    """Relative outputs land in $FRAMEBLEND_OUTDIR when it is set."""
    base = os.environ.get("FRAMEBLEND_OUTDIR")
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


def _load_yaml(path):
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _apply_overrides(config, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a mapping")
        node[parts[-1]] = value
    return config


def _dataclass_from(cls, data, context):
    known = set(cls.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ConfigError(f"{context}: unknown fields {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _build_model(kind, n_classes, model_cfg, seed):
    rng = np.random.default_rng(seed)
    cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in (model_cfg or {}).items()}
    try:
        if kind == "cnn-deep":
            return CNNModel.initialize(desk_deep_cnn_config(n_classes=n_classes, **cfg), rng)
        if kind == "cnn-wide":
            return CNNModel.initialize(desk_wide_cnn_config(n_classes=n_classes, **cfg), rng)
        if kind == "blstm":
            return BLSTMModel.initialize(desk_blstm_config(n_classes=n_classes, **cfg), rng)
    except TypeError as exc:
        raise ConfigError(f"model section: {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r} (expected cnn-deep, cnn-wide, blstm)")


def _train_defaults(kind):
    if kind == "blstm":
        return dict(learning_rate=0.05, patience=3, lr_decay=2.0 / 3.0,
                    min_learning_rate=1e-5, monitor="fer", rollback=True)
    return dict()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args):
    data = _apply_overrides(_load_yaml(args.config), args.override)
    if args.seed is not None:
        data["seed"] = args.seed
    config = _dataclass_from(CorpusConfig, data, "corpus config")
    corpus = generate_corpus(config)
    out = _outpath(args.out)
    save_corpus(out, corpus)
    if args.summary:
        with open(_outpath(args.summary), "w") as fh:
            fh.write(summary_text(corpus))
    print(f"wrote {out}: {len(corpus.train)} train / {len(corpus.validation)} validation "
          f"utterances, {corpus.total_train_frames} train frames")
    return EXIT_OK


def _run_training(args, lam=0.0, store=None, c_max=0, tau=0.0):
    corpus = load_corpus(args.corpus)
    data = _apply_overrides(_load_yaml(args.config), args.override)
    model_cfg = data.pop("model", {})
    train_cfg = data.pop("train", {})
    if data:
        raise ConfigError(f"unknown config sections {sorted(data)} (expected model, train)")
    kind = args.model
    defaults = _train_defaults(kind)
    defaults.update(train_cfg)
    if args.seed is not None:
        defaults["seed"] = args.seed
    defaults.update(lam=lam, c_max=c_max, tau=tau)
    config = _dataclass_from(TrainConfig, defaults, "train config")
    model = _build_model(kind, corpus.n_classes, model_cfg, config.seed)
    model, state = train_model(model, corpus, config, store=store,
                               progress=lambda r: print(
                                   f"epoch {r.epoch}: lr {r.learning_rate:.2e} "
                                   f"train {r.train_loss:.4f} val {r.val_loss:.4f} "
                                   f"fer {r.val_fer:.2f}"))
    out = _outpath(args.out)
    save_checkpoint(out, model, extra_provenance={"train_config": asdict(config),
                                                  "corpus": os.path.basename(args.corpus)})
    if args.history:
        write_history_csv(_outpath(args.history), state,
                          provenance=json.dumps({"train_config": asdict(config)}, sort_keys=True))
    print(f"wrote {out} (best epoch {state.best_epoch}, best {config.monitor} "
          f"{state.best_value:.4f})")
    return EXIT_OK


def cmd_train(args):
    return _run_training(args)


def cmd_blend_train(args):
    store = load_store(args.store)
    lam = float(args.lam)
    c_max = int(args.c_max) if args.c_max else 0
    tau = float(args.tau) if args.tau else 0.0
    return _run_training(args, lam=lam, store=store, c_max=c_max, tau=tau)


def cmd_build_store(args):
    corpus = load_corpus(args.corpus)
    teachers = []
    for path in args.teachers.split(","):
        model, _ = load_checkpoint(path)
        teachers.append(model)
    weights = [float(w) for w in args.weights.split(",")] if args.weights else None
    result = build_store(teachers, corpus, int(args.c_max), float(args.tau), weights=weights)
    out = _outpath(args.out)
    save_store(out, result.store,
               extra_provenance={"teachers": args.teachers.split(","),
                                 "weights": weights,
                                 "coverage_curve": result.coverage_curve.tolist()})
    if args.coverage:
        with open(_outpath(args.coverage), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["c", "mass_covered"])
            for c, m in enumerate(result.coverage_curve, start=1):
                writer.writerow([c, round(float(m), 9)])
    from .softlabels import store_stats
    stats = store_stats(result.store)
    print(f"wrote {out}: {len(result.store)} records, mean retained "
          f"{stats.mean_retained:.2f}, mean covered mass {stats.mean_covered_mass * 100:.2f}%")
    return EXIT_OK


def cmd_evaluate(args):
    corpus = load_corpus(args.corpus)
    model, prov = load_checkpoint(args.model)
    priors = compute_priors(corpus.train, corpus.n_classes)
    fer = frame_error_rate(model, corpus.validation)
    wer, counts = wer_proxy(model, corpus.validation, priors)
    row = {"model": os.path.basename(args.model), "kind": model.kind,
           "fer": round(fer, 6), "wer_proxy": round(wer, 6),
           "substitutions": counts.substitutions, "deletions": counts.deletions,
           "insertions": counts.insertions, "reference_tokens": counts.reference_length,
           "parameters": count_parameters(model), "macs": analytic_macs(model.config)}
    if args.out:
        with open(_outpath(args.out), "w", newline="") as fh:
            fh.write(f"# {json.dumps({'model': args.model, 'corpus': args.corpus})}\n")
            writer = csv.DictWriter(fh, fieldnames=list(row))
            writer.writeheader()
            writer.writerow(row)
    print(f"{row['model']}: FER {fer:.2f}%  WER-proxy {wer:.2f} "
          f"(S={counts.substitutions} D={counts.deletions} I={counts.insertions} "
          f"N={counts.reference_length})  params {row['parameters']}")
    return EXIT_OK


def cmd_ensemble_eval(args):
    corpus = load_corpus(args.corpus)
    paths = args.models.split(",")
    if len(paths) < 2:
        raise ConfigError("ensemble-eval needs at least two --models")
    models = [load_checkpoint(p)[0] for p in paths]
    priors = compute_priors(corpus.train, corpus.n_classes)
    from .corpus import extract_windows
    from .models import predict_posteriors

    per_utt = []
    for utt in corpus.validation:
        pairs = [(0, t) for t in range(utt.length)]
        windows = extract_windows([utt], pairs)
        per_utt.append((utt.labels, [predict_posteriors(m, windows) for m in models]))

    gammas = [float(g) for g in args.gammas.split(",")]
    rows = []
    from .metrics import AlignmentCounts, align, collapse_repeats, word_error_rate
    for gamma in gammas:
        if len(models) != 2:
            raise ConfigError("--gammas sweep requires exactly two models")
        wrong, n = 0, 0
        counts = AlignmentCounts(0, 0, 0, 0)
        for labels, posts in per_utt:
            mix = gamma * posts[0] + (1 - gamma) * posts[1]
            wrong += int((mix.argmax(axis=1) != labels).sum())
            n += labels.shape[0]
            counts = counts + align(collapse_repeats(labels),
                                    collapse_repeats((mix / priors).argmax(axis=1)))
        rows.append({"gamma": gamma, "fer": round(wrong / n * 100.0, 6),
                     "wer_proxy": round(word_error_rate(counts), 6)})
        print(f"gamma {gamma}: FER {rows[-1]['fer']:.2f}%  WER-proxy {rows[-1]['wer_proxy']:.2f}")
    if args.out:
        with open(_outpath(args.out), "w", newline="") as fh:
            fh.write(f"# {json.dumps({'models': paths, 'corpus': args.corpus})}\n")
            writer = csv.DictWriter(fh, fieldnames=["gamma", "fer", "wer_proxy"])
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def cmd_sweep(args):
    data = _apply_overrides(_load_yaml(args.spec), args.override)
    try:
        spec = ExperimentSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep spec: {exc}") from exc
    runner = ExperimentRunner(spec, log=print)
    rows = runner.run(jobs=args.jobs)
    print(f"sweep complete: {len(rows)} point rows in {spec.outdir}")
    return EXIT_OK


def cmd_report(args):
    rows = collect_points(args.runs)
    if not rows:
        raise ConfigError(f"{args.runs}: no point results found")
    agg = aggregate(rows)
    by_exp = {}
    for row in agg:
        by_exp.setdefault(row["experiment"], []).append(row)

    def param_count_of(name):
        path = os.path.join(args.runs, "models", name + ".ckpt")
        if not os.path.exists(path):
            return ""
        model, _ = load_checkpoint(path)
        return count_parameters(model)

    report_rows = []

    def add(name, row, params, factor=None):
        report_rows.append({
            "model": name, "fer": round(row["fer_mean"], 4),
            "wer_proxy": round(row["wer_proxy_mean"], 4), "parameters": params,
            "mac_factor": round(factor if factor is not None else row["mac_factor"], 4),
            "n_seeds": row["n_seeds"]})

    if "baseline-student" in by_exp:
        add("baseline cnn student", by_exp["baseline-student"][0], param_count_of("baseline_s0"))
    if "teacher" in by_exp:
        add("blstm teacher", by_exp["teacher"][0], param_count_of("teacher_s0"))
    if "ensemble" in by_exp:
        half = [r for r in by_exp["ensemble"] if abs(r["gamma"] - 0.5) < 1e-12]
        if half:
            base = param_count_of("baseline_s0")
            teach = param_count_of("teacher_s0")
            params = base + teach if base != "" and teach != "" else ""
            add("teacher + student ensemble (gamma=0.5)", half[0], params)
    if "blend-student" in by_exp:
        best = min(by_exp["blend-student"], key=lambda r: r["fer_mean"])
        add(f"blended student (lam={best['lam']}, c={best['c']})", best,
            param_count_of("baseline_s0"))
    if "self-distill" in by_exp:
        add("self-distilled student", by_exp["self-distill"][0], param_count_of("baseline_s0"))

    if args.timing:
        # measured wall-time factors are machine dependent; computed on request only
        named = {}
        if os.path.exists(os.path.join(args.runs, "models", "baseline_s0.ckpt")):
            named["baseline cnn student"] = load_checkpoint(
                os.path.join(args.runs, "models", "baseline_s0.ckpt"))[0]
        if os.path.exists(os.path.join(args.runs, "models", "teacher_s0.ckpt")):
            named["blstm teacher"] = load_checkpoint(
                os.path.join(args.runs, "models", "teacher_s0.ckpt"))[0]
        if len(named) == 2:
            named["teacher + student ensemble (gamma=0.5)"] = list(named.values())
        rep = cost_report(named, "baseline cnn student", n_windows=args.timing_windows)
        factors = {e.name: e.time_factor for e in rep.entries}
        for row in report_rows:
            row["time_factor"] = round(factors.get(row["model"], float("nan")), 4)

    out = _outpath(args.out) if args.out else None
    fields = list(report_rows[0].keys())
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(f"# {json.dumps({'runs': args.runs})}\n")
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(report_rows)
    widths = {f: max(len(f), *(len(str(r[f])) for r in report_rows)) for f in fields}
    print("  ".join(f.ljust(widths[f]) for f in fields))
    for row in report_rows:
        print("  ".join(str(row[f]).ljust(widths[f]) for f in fields))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="frameblend",
                                     description="frame classification with teacher-guided blending")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted config override, value parsed as YAML")

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--config", help="corpus config YAML")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="also write a plain-text summary")
    add_common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model on hard labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default="cnn-deep", help="cnn-deep | cnn-wide | blstm")
    p.add_argument("--config", help="YAML with model/train sections")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch CSV history")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("blend-train", help="train a student against a soft-label store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--lam", required=True, help="soft-label weight in [0, 1]")
    p.add_argument("--c-max", help="re-truncate the store to this cap")
    p.add_argument("--tau", help="re-truncate with this mass threshold")
    p.add_argument("--model", default="cnn-deep")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    add_common(p)
    p.set_defaults(func=cmd_blend_train)

    p = sub.add_parser("build-store", help="save truncated teacher posteriors")
    p.add_argument("--corpus", required=True)
    p.add_argument("--teachers", required=True, help="comma-separated checkpoints")
    p.add_argument("--weights", help="comma-separated mixture weights")
    p.add_argument("--c-max", required=True)
    p.add_argument("--tau", default="0.99")
    p.add_argument("--out", required=True)
    p.add_argument("--coverage", help="write the mass-coverage curve CSV")
    p.set_defaults(func=cmd_build_store)

    p = sub.add_parser("evaluate", help="FER and WER-proxy of a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble-eval", help="mixing-weight sweep for two checkpoints")
    p.add_argument("--corpus", required=True)
    p.add_argument("--models", required=True, help="comma-separated checkpoints (first gets gamma)")
    p.add_argument("--gammas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ensemble_eval)

    p = sub.add_parser("sweep", help="run the full experiment grid")
    p.add_argument("--spec", required=True, help="experiment spec YAML")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate sweep results into a summary table")
    p.add_argument("--runs", required=True, help="sweep output directory")
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true",
                   help="add measured wall-time factors (machine dependent)")
    p.add_argument("--timing-windows", type=int, default=1000)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
