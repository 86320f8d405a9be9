"""End-to-end evaluation: data, classifier, attack, purification, scoring.

Every random choice derives from ``RunConfig.seed`` through fixed
sub-streams, so ``evaluate`` is reproducible bit for bit (timings aside).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, bpda_eot, check_ball, pgd, spsa
from .classifier import (LabeledDataset, Mlp1, SoftmaxLinear, class_mean_patterns,
                         make_gmm_image_dataset, train)
from .diffusion import GaussianMixtureModel, GMMDenoiser
from .errors import ConfigError, StageError
from .guidance import GuidanceConfig
from .numerics import RandomSource
from .purifier import PurifyConfig, purify, resolve
from .schedule import linear_schedule

# sub-stream indices of RunConfig.seed
TRAIN_DATA, EVAL_DATA, MODEL_INIT, TRAINING, ATTACK, PURIFY = range(1, 7)

SWEEP_AXES = ("Tc", "M", "a", "respace_K", "gamma")


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta1: float = 1e-4
    betaT: float = 2e-2
    policy: str = "small"

    def build(self):
        return linear_schedule(self.T, self.beta1, self.betaT, self.policy)


@dataclass
class DataConfig:
    num_classes: int = 4
    H: int = 8
    W: int = 8
    C: int = 1
    n_train: int = 500
    n_eval: int = 200
    contrast: float = 0.1
    var: float = 0.001
    background: float = 0.5


@dataclass
class ClassifierConfig:
    kind: str = "linear"  # linear | mlp
    hidden: int = 32
    init_std: float = 1.5  # linear: weight std; mlp: multiplier of the 1/sqrt(d) first-layer scale
    epochs: int = 40
    lr: float = 0.1
    batch_size: int = 50

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown classifier kind {self.kind!r}")


def _build(cls, value):
    if isinstance(value, cls):
        return value
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**value)


@dataclass
class RunConfig:
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    purify: PurifyConfig = field(default_factory=PurifyConfig)
    defense: bool = True
    eval_size: int | None = None  # None -> whole eval split
    out_dir: str | None = None

    def __post_init__(self):
        self.schedule = _build(ScheduleConfig, self.schedule)
        self.data = _build(DataConfig, self.data)
        self.classifier = _build(ClassifierConfig, self.classifier)
        self.attack = _build(AttackConfig, self.attack)
        if isinstance(self.purify, dict):
            purify_args = dict(self.purify)
            if isinstance(purify_args.get("guidance"), dict):
                purify_args["guidance"] = _build(GuidanceConfig, purify_args["guidance"])
            self.purify = _build(PurifyConfig, purify_args)
        if self.data.n_train % self.data.num_classes or self.data.n_eval % self.data.num_classes:
            raise ConfigError("n_train and n_eval must be multiples of num_classes")
        if self.eval_size is not None and not 1 <= self.eval_size <= self.data.n_eval:
            raise ConfigError("eval_size must be within 1..n_eval")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown RunConfig keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})


@dataclass
class ImageRecord:
    label: int
    clean_pred: int
    adv_pred: int
    purified_pred: int
    linf: float


@dataclass
class EvalReport:
    standard_accuracy: float
    robust_accuracy: float
    undefended_standard_accuracy: float
    undefended_robust_accuracy: float
    records: list[ImageRecord]
    timings: dict[str, float]
    seeds: dict[str, int]
    config: dict

    def __post_init__(self):
        if not self.records:
            raise ValueError("an EvalReport needs at least one per-image record")
        for name in ("standard_accuracy", "robust_accuracy",
                     "undefended_standard_accuracy", "undefended_robust_accuracy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")

    def summary(self) -> str:
        return (f"standard {self.standard_accuracy:.4f}  robust {self.robust_accuracy:.4f}  "
                f"(undefended: standard {self.undefended_standard_accuracy:.4f}  "
                f"robust {self.undefended_robust_accuracy:.4f})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["records"] = [ImageRecord(**r) for r in d["records"]]
        return cls(**d)


@dataclass
class Benchmark:
    """Everything ``evaluate`` builds before attacking: data, prior, model, schedule."""

    train: LabeledDataset
    eval: LabeledDataset
    gmm: GaussianMixtureModel
    model: SoftmaxLinear | Mlp1
    schedule: object
    history: list[float]


def data_prior(dc: DataConfig) -> GaussianMixtureModel:
    """The mixture the toy data is drawn from; depends on the data config only."""
    means = class_mean_patterns(dc.num_classes, dc.H, dc.W, dc.C, dc.contrast, dc.background)
    return GaussianMixtureModel(np.full(dc.num_classes, 1.0 / dc.num_classes), means, max(dc.var, 1e-12))


def build_model(cfg: RunConfig, train_set: LabeledDataset):
    dc, cc = cfg.data, cfg.classifier
    rng = RandomSource(cfg.seed)
    shape = (dc.H, dc.W, dc.C)
    if cc.kind == "linear":
        model = SoftmaxLinear.init(shape, dc.num_classes, rng.spawn(MODEL_INIT), cc.init_std)
    else:
        model = Mlp1.init(shape, dc.num_classes, cc.hidden, rng.spawn(MODEL_INIT), cc.init_std)
    return train(model, train_set, cc.epochs, cc.lr, rng.spawn(TRAINING), cc.batch_size)


def build_datasets(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset, GaussianMixtureModel]:
    rng = RandomSource(cfg.seed)
    dc = cfg.data
    common = dict(num_classes=dc.num_classes, H=dc.H, W=dc.W, C=dc.C, contrast=dc.contrast,
                  var=dc.var, background=dc.background)
    train_set, gmm = make_gmm_image_dataset(n_per_class=dc.n_train // dc.num_classes,
                                            rng=rng.spawn(TRAIN_DATA), **common)
    eval_set, _ = make_gmm_image_dataset(n_per_class=dc.n_eval // dc.num_classes,
                                         rng=rng.spawn(EVAL_DATA), **common)
    if cfg.eval_size is not None:
        eval_set = eval_set.subset(slice(0, cfg.eval_size))
    return train_set, eval_set, gmm


def build_benchmark(cfg: RunConfig) -> Benchmark:
    train_set, eval_set, gmm = build_datasets(cfg)
    model, history = build_model(cfg, train_set)
    return Benchmark(train_set, eval_set, gmm, model, cfg.schedule.build(), history)


def make_purifier(cfg: RunConfig, bench: Benchmark):
    """Batch purifier ``f(x, rng)`` for the configured defence."""
    denoiser = GMMDenoiser(bench.gmm)
    resolve(cfg.purify, bench.schedule)  # fail early on a bad config

    def f(x, rng):
        return purify(x, cfg.purify, denoiser, bench.schedule, rng)

    return f


def run_attack(cfg: RunConfig, bench: Benchmark, purifier, x, y) -> np.ndarray:
    ac = cfg.attack
    rng = RandomSource(cfg.seed).spawn(ATTACK)
    model = bench.model
    if ac.kind == "none":
        return x.copy()
    if ac.kind == "pgd":
        return pgd(model, x, y, ac, rng)
    if ac.kind == "bpda_eot":
        return bpda_eot(model, purifier if cfg.defense else (lambda z, r: z), x, y, ac, rng)
    if ac.kind == "spsa":
        calls = [0]

        def loss_fn(z, labels):
            calls[0] += 1
            if cfg.defense:
                z = purifier(z, rng.spawn(20_000, calls[0]))
            return model.loss_and_input_grad(z, labels)[0]

        return spsa(loss_fn, model.num_classes, x, y, ac, rng)
    raise ConfigError(f"unknown attack kind {ac.kind!r}")


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, exc) from exc


def evaluate(cfg: RunConfig, bench: Benchmark | None = None) -> EvalReport:
    """Standard and robust accuracy of classifier-after-purifier.

    The purifier restarts the same sub-stream for clean and attacked
    inputs, so identical inputs purify identically.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    if bench is None:
        bench = _stage("setup", build_benchmark, cfg)
    timings["setup"] = time.perf_counter() - t0
    x, y = bench.eval.images, bench.eval.labels
    purifier = _stage("purifier", make_purifier, cfg, bench) if cfg.defense else None

    t0 = time.perf_counter()
    x_adv = _stage("attack", run_attack, cfg, bench, purifier, x, y)
    timings["attack"] = time.perf_counter() - t0
    check_ball(x, x_adv, cfg.attack.gamma)

    if cfg.defense:
        t0 = time.perf_counter()
        x_clean_p = _stage("purify", purifier, x, RandomSource(cfg.seed).spawn(PURIFY))
        timings["purify_clean"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        x_adv_p = _stage("purify", purifier, x_adv, RandomSource(cfg.seed).spawn(PURIFY))
        timings["purify_adv"] = time.perf_counter() - t0
    else:
        x_clean_p, x_adv_p = x, x_adv

    model = bench.model
    clean_pred = model.predict(x)
    adv_pred = model.predict(x_adv)
    pur_clean_pred = model.predict(x_clean_p)
    pur_adv_pred = model.predict(x_adv_p)
    linf = np.abs(x_adv - x).reshape(len(x), -1).max(axis=1)
    records = [ImageRecord(int(a), int(b), int(c), int(d), float(e))
               for a, b, c, d, e in zip(y, clean_pred, adv_pred, pur_adv_pred, linf)]
    return EvalReport(
        standard_accuracy=float(np.mean(pur_clean_pred == y)),
        robust_accuracy=float(np.mean(pur_adv_pred == y)),
        undefended_standard_accuracy=float(np.mean(clean_pred == y)),
        undefended_robust_accuracy=float(np.mean(adv_pred == y)),
        records=records,
        timings=timings,
        seeds={"seed": cfg.seed, **{name: idx for name, idx in zip(
            ("train_data", "eval_data", "model_init", "training", "attack", "purify"),
            (TRAIN_DATA, EVAL_DATA, MODEL_INIT, TRAINING, ATTACK, PURIFY))}},
        config=cfg.to_dict(),
    )


def with_axis(cfg: RunConfig, axis: str, value) -> RunConfig:
    d = cfg.to_dict()
    if axis == "Tc":
        d["purify"]["Tc"] = int(value)
    elif axis == "M":
        d["purify"]["M"] = int(value)
    elif axis == "a":
        d["purify"]["guidance"]["a"] = float(value)
    elif axis == "respace_K":
        d["purify"]["respace_K"] = None if value is None else int(value)
    elif axis == "gamma":
        d["attack"]["gamma"] = float(value)
        d["purify"]["guidance"]["gamma"] = float(value)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return RunConfig.from_dict(d)


def sweep(cfg: RunConfig, axis: str, values) -> list[tuple[object, EvalReport]]:
    """One ``evaluate`` per value on a shared benchmark (same seed, same trained model)."""
    configs = [with_axis(cfg, axis, v) for v in values]
    bench = build_benchmark(cfg)
    return [(v, evaluate(c, bench)) for v, c in zip(values, configs)]


def sweep_table(axis: str, results) -> list[dict]:
    rows = []
    for value, rep in results:
        rows.append({axis: value, "standard_accuracy": f"{rep.standard_accuracy:.4f}",
                     "robust_accuracy": f"{rep.robust_accuracy:.4f}",
                     "undefended_robust_accuracy": f"{rep.undefended_robust_accuracy:.4f}",
                     "purify_seconds": f"{rep.timings.get('purify_adv', 0.0):.4f}"})
    return rows


def write_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def report_write(r: EvalReport, path: str | Path) -> None:
    """JSON report at ``path`` plus per-image records in ``<stem>_records.csv``."""
    path = Path(path)
    if not r.records:
        raise ValueError("refusing to write a report without per-image records")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(r.to_dict(), indent=2))
        write_csv([asdict(rec) for rec in r.records], path.with_name(path.stem + "_records.csv"))
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def report_read(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
