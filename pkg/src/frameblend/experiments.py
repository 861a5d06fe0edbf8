"""Grid experiments: baselines, teachers, blended students, ensembles.

A sweep walks the (blend weight x retained-classes) grid for students
and the mixing-weight grid for two-model ensembles, repeating every
point over the listed seeds. Each grid point persists its own CSV row
atomically, so an interrupted sweep resumes where it stopped and reruns
are idempotent given identical seeds and configs.
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import compute_priors, extract_windows, load_corpus
from .metrics import (AlignmentCounts, align, analytic_macs, collapse_repeats,
                      frame_error_rate, wer_proxy, word_error_rate)
from .models import (BLSTMModel, CNNModel, desk_blstm_config, desk_deep_cnn_config,
                     desk_wide_cnn_config, predict_posteriors)
from .softlabels import build_store, load_store, save_store
from .trainer import TrainConfig, train_model, write_history_csv

POINT_FIELDS = ["experiment", "seed", "lam", "c", "gamma", "fer", "wer_proxy", "mac_factor"]


@dataclass
class ExperimentSpec:
    corpus: str
    outdir: str
    seeds: tuple = (0, 1, 2)
    lambda_grid: tuple = (0.25, 0.5, 0.75)
    c_grid: tuple = (1, 3, 10)
    gamma_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    store_tau: float = 0.99
    self_distill: bool = True
    self_distill_lam: float = 0.5
    self_distill_c: int = 10
    student: dict = field(default_factory=dict)        # architecture + size overrides
    teacher: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)          # TrainConfig overrides (students)
    teacher_train: dict = field(default_factory=dict)  # TrainConfig overrides (teacher)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment spec fields: {sorted(extra)}")
        d = dict(d)
        for key in ("seeds", "lambda_grid", "c_grid", "gamma_grid"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def build_student(spec, n_classes, seed):
    arch = spec.student.get("architecture", "cnn-deep")
    kwargs = {k: tuple(v) if isinstance(v, list) else v
              for k, v in spec.student.items() if k != "architecture"}
    rng = np.random.default_rng(seed)
    if arch == "cnn-deep":
        return CNNModel.initialize(desk_deep_cnn_config(n_classes=n_classes, **kwargs), rng)
    if arch == "cnn-wide":
        return CNNModel.initialize(desk_wide_cnn_config(n_classes=n_classes, **kwargs), rng)
    raise ValueError(f"unknown student architecture {arch!r}")


def build_teacher(spec, n_classes, seed):
    kind = spec.teacher.get("kind", "blstm")
    kwargs = {k: v for k, v in spec.teacher.items() if k != "kind"}
    rng = np.random.default_rng(seed)
    if kind == "blstm":
        return BLSTMModel.initialize(desk_blstm_config(n_classes=n_classes, **kwargs), rng)
    raise ValueError(f"unknown teacher kind {kind!r}")


def _train_config(overrides, seed, lam=0.0, c_max=0, tau=0.0, teacher=False):
    base = dict(batch_size=32, batches_per_epoch=40, learning_rate=0.02,
                momentum=0.9, lr_decay=0.5, patience=2, min_learning_rate=2e-3,
                max_epochs=30)
    if teacher:
        base.update(learning_rate=0.05, monitor="fer", rollback=True,
                    lr_decay=2.0 / 3.0, patience=2, min_learning_rate=5e-3)
    base.update(overrides)
    base.update(seed=seed, lam=lam, c_max=c_max, tau=tau)
    return TrainConfig(**base)


def _atomic_write_rows(path, rows):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=POINT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    os.replace(tmp, path)


def _point_row(experiment, seed, lam, c, gamma, fer, wer, mac_factor):
    return {"experiment": experiment, "seed": seed, "lam": lam, "c": c, "gamma": gamma,
            "fer": round(fer, 6), "wer_proxy": round(wer, 6), "mac_factor": round(mac_factor, 6)}


class ExperimentRunner:
    """Stateful helper carrying the corpus and the output layout."""

    def __init__(self, spec, log=None):
        self.spec = spec
        self.log = log or (lambda msg: None)
        self.corpus = load_corpus(spec.corpus)
        self.outdir = spec.outdir
        os.makedirs(os.path.join(self.outdir, "points"), exist_ok=True)
        os.makedirs(os.path.join(self.outdir, "models"), exist_ok=True)
        os.makedirs(os.path.join(self.outdir, "stores"), exist_ok=True)
        self.priors = compute_priors(self.corpus.train, self.corpus.n_classes)
        self._base_macs = analytic_macs(build_student(spec, self.corpus.n_classes, 0).config)
        self._store_cache = None

    def model_path(self, name):
        return os.path.join(self.outdir, "models", name + ".ckpt")

    def point_path(self, name):
        return os.path.join(self.outdir, "points", name + ".csv")

    def store_path(self, name):
        return os.path.join(self.outdir, "stores", name + ".bin")

    def mac_factor(self, model):
        return analytic_macs(model.config) / self._base_macs

    def evaluate_model(self, model):
        fer = frame_error_rate(model, self.corpus.validation)
        wer, _ = wer_proxy(model, self.corpus.validation, self.priors)
        return fer, wer

    def train_point(self, name, experiment, model, seed, lam=0.0, c=0, store=None,
                    teacher=False):
        """Train + evaluate one grid point unless its artifacts already exist."""
        path = self.point_path(name)
        if os.path.exists(path) and os.path.exists(self.model_path(name)):
            return
        self.log(f"[{name}] training")
        overrides = self.spec.teacher_train if teacher else self.spec.train
        config = _train_config(overrides, seed, lam=lam,
                               c_max=c, tau=self.spec.store_tau if c else 0.0,
                               teacher=teacher)
        model, state = train_model(model, self.corpus, config, store=store)
        save_checkpoint(self.model_path(name), model,
                        extra_provenance={"train_config": asdict(config), "point": name})
        write_history_csv(os.path.join(self.outdir, "models", name + ".history.csv"),
                          state, provenance=json.dumps({"point": name, "seed": seed}))
        fer, wer = self.evaluate_model(model)
        _atomic_write_rows(path, [_point_row(experiment, seed, lam, c, 0.0, fer, wer,
                                             self.mac_factor(model))])
        self.log(f"[{name}] fer {fer:.2f} wer-proxy {wer:.2f}")

    def load_model(self, name):
        model, _ = load_checkpoint(self.model_path(name))
        return model

    # -- phases -------------------------------------------------------------
    def phase_baselines(self, jobs=1):
        tasks = []
        for seed in self.spec.seeds:
            tasks.append((f"baseline_s{seed}", seed, False))
            tasks.append((f"teacher_s{seed}", seed, True))
        _run_tasks(self, "baseline", tasks, jobs)

    def run_baseline_task(self, task):
        name, seed, teacher = task
        build = build_teacher if teacher else build_student
        model = build(self.spec, self.corpus.n_classes, seed)
        self.train_point(name, "teacher" if teacher else "baseline-student",
                         model, seed, teacher=teacher)

    def teacher_store(self):
        """Average the two best teachers (by validation FER) into one store."""
        path = self.store_path("teacher")
        if os.path.exists(path):
            return load_store(path)
        ranked = []
        for seed in self.spec.seeds:
            model = self.load_model(f"teacher_s{seed}")
            ranked.append((frame_error_rate(model, self.corpus.validation), seed, model))
        ranked.sort(key=lambda r: (r[0], r[1]))
        chosen = ranked[:2] if len(ranked) >= 2 else ranked[:1]
        cap = max(self.spec.c_grid)
        self.log(f"[store] teacher seeds {[r[1] for r in chosen]}, cap {cap}")
        result = build_store([r[2] for r in chosen], self.corpus, cap, self.spec.store_tau)
        save_store(path, result.store,
                   extra_provenance={"teachers": [f"teacher_s{r[1]}" for r in chosen],
                                     "coverage_curve": result.coverage_curve.tolist()})
        return result.store

    def phase_students(self, jobs=1):
        tasks = []
        cap = max(self.spec.c_grid)
        for seed in self.spec.seeds:
            for lam in self.spec.lambda_grid:
                tasks.append((f"blend_s{seed}_lam{lam}_c{cap}", seed, lam, cap))
            for c in self.spec.c_grid:
                if c != cap:
                    tasks.append((f"blend_s{seed}_lam0.5_c{c}", seed, 0.5, c))
        _run_tasks(self, "student", tasks, jobs)

    def run_student_task(self, task):
        name, seed, lam, c = task
        if self._store_cache is None:
            self._store_cache = load_store(self.store_path("teacher"))
        model = build_student(self.spec, self.corpus.n_classes, 1000 + seed)
        self.train_point(name, "blend-student", model, seed, lam=lam, c=c,
                         store=self._store_cache)

    def phase_self_distill(self, jobs=1):
        if not self.spec.self_distill:
            return
        path = self.store_path("self")
        if not os.path.exists(path):
            teacher = self.load_model(f"baseline_s{self.spec.seeds[0]}")
            result = build_store([teacher], self.corpus, self.spec.self_distill_c,
                                 self.spec.store_tau)
            save_store(path, result.store,
                       extra_provenance={"teachers": [f"baseline_s{self.spec.seeds[0]}"],
                                         "coverage_curve": result.coverage_curve.tolist()})
        tasks = [(f"selfdistill_s{seed}", seed) for seed in self.spec.seeds]
        _run_tasks(self, "selfdistill", tasks, jobs)

    def run_selfdistill_task(self, task):
        name, seed = task
        store = load_store(self.store_path("self"))
        model = build_student(self.spec, self.corpus.n_classes, 2000 + seed)
        self.train_point(name, "self-distill", model, seed,
                         lam=self.spec.self_distill_lam, c=self.spec.self_distill_c,
                         store=store)

    def phase_ensembles(self):
        """Mixing-weight sweep; member posteriors are computed once."""
        for seed in self.spec.seeds:
            name = f"ensemble_s{seed}"
            path = self.point_path(name)
            if os.path.exists(path):
                continue
            student = self.load_model(f"baseline_s{seed}")
            teacher = self.load_model(f"teacher_s{seed}")
            factor = self.mac_factor(student) + self.mac_factor(teacher)
            per_utt = []
            for utt in self.corpus.validation:
                pairs = [(0, t) for t in range(utt.length)]
                windows = extract_windows([utt], pairs)
                per_utt.append((utt.labels,
                                predict_posteriors(student, windows),
                                predict_posteriors(teacher, windows)))
            rows = []
            for gamma in self.spec.gamma_grid:
                wrong, n = 0, 0
                counts = AlignmentCounts(0, 0, 0, 0)
                for labels, ps, pt in per_utt:
                    mix = gamma * pt + (1.0 - gamma) * ps
                    wrong += int((mix.argmax(axis=1) != labels).sum())
                    n += labels.shape[0]
                    hyp = collapse_repeats((mix / self.priors).argmax(axis=1))
                    counts = counts + align(collapse_repeats(labels), hyp)
                rows.append(_point_row("ensemble", seed, 0.0, 0, gamma,
                                       wrong / n * 100.0, word_error_rate(counts), factor))
                self.log(f"[{name}] gamma {gamma} fer {rows[-1]['fer']:.2f}")
            _atomic_write_rows(path, rows)

    def run(self, jobs=1):
        self.phase_baselines(jobs)
        self._store_cache = self.teacher_store()
        self.phase_students(jobs)
        self.phase_self_distill(jobs)
        self.phase_ensembles()
        rows = collect_points(self.outdir)
        prov = json.dumps({"spec": asdict(self.spec)}, sort_keys=True)
        write_aggregate_csv(os.path.join(self.outdir, "aggregate.csv"), rows, provenance=prov)
        write_figure_csvs(self.outdir, rows, provenance=prov)
        return rows


def _run_tasks(runner, kind, tasks, jobs):
    method = {"baseline": runner.run_baseline_task,
              "student": runner.run_student_task,
              "selfdistill": runner.run_selfdistill_task}[kind]
    if jobs <= 1:
        for task in tasks:
            method(task)
        return
    # workers re-load the corpus and stores from disk; per-point files are
    # written atomically, so partial results survive interruption
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_worker_task, asdict(runner.spec), kind, task)
                   for task in tasks]
        for f in futures:
            f.result()


def _worker_task(spec_dict, kind, task):
    spec = ExperimentSpec.from_dict(spec_dict)
    runner = ExperimentRunner(spec)
    {"baseline": runner.run_baseline_task,
     "student": runner.run_student_task,
     "selfdistill": runner.run_selfdistill_task}[kind](task)


def collect_points(outdir):
    rows = []
    points_dir = os.path.join(outdir, "points")
    for name in sorted(os.listdir(points_dir)):
        if not name.endswith(".csv"):
            continue
        with open(os.path.join(points_dir, name), newline="") as fh:
            for row in csv.DictReader(fh):
                row["seed"] = int(row["seed"])
                row["c"] = int(row["c"])
                for key in ("lam", "gamma", "fer", "wer_proxy", "mac_factor"):
                    row[key] = float(row[key])
                rows.append(row)
    return rows


def aggregate(rows):
    """Mean FER / WER-proxy over seeds for every distinct grid point."""
    groups = {}
    for row in rows:
        key = (row["experiment"], row["lam"], row["c"], row["gamma"])
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups):
        grp = groups[key]
        out.append({"experiment": key[0], "lam": key[1], "c": key[2], "gamma": key[3],
                    "n_seeds": len(grp),
                    "fer_mean": round(float(np.mean([r["fer"] for r in grp])), 6),
                    "wer_proxy_mean": round(float(np.mean([r["wer_proxy"] for r in grp])), 6),
                    "mac_factor": grp[0]["mac_factor"]})
    return out


AGGREGATE_FIELDS = ["experiment", "lam", "c", "gamma", "n_seeds", "fer_mean",
                    "wer_proxy_mean", "mac_factor"]


def write_aggregate_csv(path, rows, provenance=None):
    agg = aggregate(rows)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_FIELDS)
        writer.writeheader()
        for row in agg:
            writer.writerow(row)
    os.replace(tmp, path)


def write_figure_csvs(outdir, rows, provenance=None):
    """One CSV per result figure: FER/WER-proxy of the ensemble against
    the mixing weight, and of the blended student against the blend
    weight for each retained-class cap."""
    agg = aggregate(rows)

    def dump(path, fieldnames, out_rows):
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            for row in out_rows:
                writer.writerow(row)
        os.replace(tmp, path)

    ens = [r for r in agg if r["experiment"] == "ensemble"]
    for metric in ("fer", "wer_proxy"):
        dump(os.path.join(outdir, f"fig_ensemble_{metric}.csv"),
             ["gamma", f"{metric}_mean", "n_seeds"],
             [{"gamma": r["gamma"], f"{metric}_mean": r[f"{metric}_mean"],
               "n_seeds": r["n_seeds"]} for r in sorted(ens, key=lambda r: r["gamma"])])

    stu = [r for r in agg if r["experiment"] in ("blend-student", "baseline-student")]
    for metric in ("fer", "wer_proxy"):
        dump(os.path.join(outdir, f"fig_student_{metric}.csv"),
             ["lam", "c", f"{metric}_mean", "n_seeds"],
             [{"lam": r["lam"], "c": r["c"], f"{metric}_mean": r[f"{metric}_mean"],
               "n_seeds": r["n_seeds"]}
              for r in sorted(stu, key=lambda r: (r["c"], r["lam"]))])
