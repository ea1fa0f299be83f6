"""Experiment orchestration: configs, training runs, sweeps, grids.

A run is fully determined by (config, seed). All randomness, including
data generation, curation draws, init, shuffling, and augmentation, is
derived from the seed through named SeedSequence children, so repeated
runs are bit-identical and results files can be regenerated at will.

Results land as JSON: one file per (config hash, seed), one aggregate
per config, and per-sweep tables. Aggregates report per-seed values,
their mean, and the standard error (sample std / sqrt(n_seeds)); a
single seed yields stderr 0 flagged as single_trial.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import typing
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import (
    AugmentSpec,
    ClassProfile,
    Dataset,
    augment_two_views,
    class_profile,
    curate_exponential,
    gen_gaussian_mixture,
    grow_majority,
    load_csv,
    make_balanced_sampler,
)
from .diagnostics import CollapseReport, MetricsReport, collapse_report, metrics_report
from .losses import (
    FocalSpec,
    JointLossSpec,
    ReweightSpec,
    SmoothingSpec,
    VicRegSpec,
    cross_entropy_vec,
    focal_vec,
    one_hot,
    reweight_class_weights,
    smoothed_targets,
    vicreg_loss,
)
from .models import (
    forward_stack,
    mlp_predict,
    named_to_mlp,
    params_to_named,
    projector_init,
    mlp_init,
)
from .optim import OptimState, SamSpec, TrainConfig, cosine_lr, ema_update, init_state, sam_step, sgd_update
from .autodiff import NumericalError, Tape, backward, reduce_sum

logger = logging.getLogger(__name__)

IMPROVEMENT_MODES = ("paper_a1", "relative_to_baseline")
SWEEP_AXES = ("batch_size", "r_train", "r_test", "n_majority", "method")

METHOD_PRESETS = (
    "erm",
    "resample",
    "reweight",
    "drw",
    "focal",
    "smoothed",
    "smoothed_inverse",
    "sam",
    "sam_a",
    "sam_a_inverse",
    "joint_ssl",
    "sam_a_smoothed",
    "sam_a_smoothed_inverse",
)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class DataSpec:
    """Where samples come from: a synthetic mixture or CSV files."""

    kind: str = "gaussian"
    classes: int = 5
    train_per_class: int = 500
    test_per_class: int = 200
    dim: int = 2
    mean_radius: float = 3.0
    sigma: float = 0.75
    train_path: str | None = None
    test_path: str | None = None
    label_col: str = "label"
    test_frac: float = 0.2

    def __post_init__(self):
        if self.kind not in ("gaussian", "csv"):
            raise ValueError(f"kind must be gaussian or csv, got {self.kind!r}")
        if self.kind == "csv" and not self.train_path:
            raise ValueError("csv data needs train_path")
        if not 0.0 < self.test_frac < 1.0:
            raise ValueError("test_frac must be in (0, 1)")


SUPERVISED_LOSSES = ("ce", "smoothed", "focal", "reweighted")


@dataclass
class MethodSpec:
    """Exactly one supervised loss plus optional add-ons."""

    loss: str = "ce"
    smoothing: SmoothingSpec = field(default_factory=SmoothingSpec)
    focal: FocalSpec = field(default_factory=FocalSpec)
    reweight: ReweightSpec = field(default_factory=ReweightSpec)
    sam: SamSpec = field(default_factory=SamSpec)
    joint_ssl: bool = False
    vicreg: VicRegSpec = field(default_factory=VicRegSpec)
    joint: JointLossSpec = field(default_factory=JointLossSpec)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    projector: list[int] | None = None
    resample: bool = False

    def __post_init__(self):
        if self.loss not in SUPERVISED_LOSSES:
            raise ValueError(f"loss must be one of {SUPERVISED_LOSSES}, got {self.loss!r}")
        if self.projector is not None and len(self.projector) < 2:
            raise ValueError("projector needs at least input and output sizes")


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    method: MethodSpec = field(default_factory=MethodSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    r_train: float | None = None
    r_test: float | None = None
    majority_size: int | None = None
    n_minority: int = 200
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ema_decay: float = 0.999
    use_ema_eval: bool = True
    stop_at_train_acc: float | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("duplicate seeds")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        for name in ("r_train", "r_test"):
            r = getattr(self, name)
            if r is not None and not 0.0 < r <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {r}")
        if self.majority_size is not None and self.r_train is not None:
            raise ValueError("majority_size and r_train are mutually exclusive")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must be in [0, 1]")
        if self.method.resample and self.method.loss == "reweighted":
            warnings.warn("combining the balanced resampler with reweighted loss double-counts rarity")


def _strict_from_dict(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path + '.' if path else ''}{key}")
        target = hints.get(key)
        if dataclasses.is_dataclass(target) and value is not None:
            kwargs[key] = _strict_from_dict(target, value, f"{path + '.' if path else ''}{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a config from a JSON document; unknown keys are errors."""
    return _strict_from_dict(ExperimentConfig, doc, "")


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def apply_method(config: ExperimentConfig, name: str) -> ExperimentConfig:
    """Return a copy of config switched to a named method preset."""
    if name not in METHOD_PRESETS:
        raise ConfigError(f"unknown method {name!r}; choose from {METHOD_PRESETS}")
    cfg = config_from_dict(config_to_dict(config))
    m = cfg.method
    m.loss = "ce"
    m.sam.mode = "off"
    m.joint_ssl = False
    m.resample = False
    if name == "resample":
        m.resample = True
    elif name == "reweight":
        m.loss = "reweighted"
        m.reweight.defer_epoch = 0
    elif name == "drw":
        m.loss = "reweighted"
        m.reweight.defer_epoch = cfg.train.epochs // 2
    elif name == "focal":
        m.loss = "focal"
    elif name == "smoothed":
        m.loss = "smoothed"
    elif name == "smoothed_inverse":
        m.loss = "smoothed"
        m.smoothing.mode = "inverse_proportion"
    elif name == "sam":
        m.sam.mode = "sam"
    elif name == "sam_a":
        m.sam.mode = "sam_a_paper"
    elif name == "sam_a_inverse":
        m.sam.mode = "sam_a_inverse"
    elif name == "joint_ssl":
        m.joint_ssl = True
    elif name == "sam_a_smoothed":
        m.loss = "smoothed"
        m.sam.mode = "sam_a_paper"
    elif name == "sam_a_smoothed_inverse":
        m.loss = "smoothed"
        m.smoothing.mode = "inverse_proportion"
        m.sam.mode = "sam_a_inverse"
    return cfg


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------


def _stratified_split(dataset: Dataset, test_frac: float, rng: np.random.Generator):
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(dataset.y == c))
        cut = max(1, int(round(members.size * test_frac)))
        if cut >= members.size:
            raise ValueError(f"class {dataset.class_names[c]} too small to split")
        test_idx.append(members[:cut])
        train_idx.append(members[cut:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return (
        Dataset(dataset.X[tr], dataset.y[tr], list(dataset.class_names)),
        Dataset(dataset.X[te], dataset.y[te], list(dataset.class_names)),
    )


def _seed_children(seed: int):
    keys = ("data_train", "data_test", "curate_train", "curate_test", "init", "batches", "augment")
    children = np.random.SeedSequence(seed).spawn(len(keys))
    return dict(zip(keys, children))


def build_pools(config: ExperimentConfig, seed: int):
    """Uncurated train and test pools for one trial seed."""
    ss = _seed_children(seed)
    d = config.data
    if d.kind == "gaussian":
        train = gen_gaussian_mixture(
            d.classes, d.train_per_class, d.dim, d.mean_radius, d.sigma, seed=ss["data_train"]
        )
        test = gen_gaussian_mixture(
            d.classes, d.test_per_class, d.dim, d.mean_radius, d.sigma, seed=ss["data_test"]
        )
        return train, test
    train = load_csv(d.train_path, d.label_col)
    if d.test_path:
        test = load_csv(d.test_path, d.label_col)
        if test.class_names != train.class_names:
            raise ValueError("train and test files disagree on class names")
        return train, test
    return _stratified_split(train, d.test_frac, np.random.default_rng(ss["data_test"]))


def curate_train_split(config: ExperimentConfig, pool: Dataset, seed: int) -> Dataset:
    ss = _seed_children(seed)
    if config.majority_size is not None:
        return grow_majority(
            pool, config.majority_size, config.n_minority, seed=ss["curate_train"]
        )
    if config.r_train is not None:
        return curate_exponential(pool, config.r_train, seed=ss["curate_train"])
    return pool


def curate_test_split(
    config: ExperimentConfig, pool: Dataset, seed: int, r_test: float | None = None
) -> Dataset:
    ss = _seed_children(seed)
    r = config.r_test if r_test is None else r_test
    if r is not None:
        return curate_exponential(pool, r, seed=ss["curate_test"])
    return pool


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    """Everything needed to evaluate or probe a finished run."""

    mlp_sizes: list[int]
    proj_sizes: list[int] | None
    raw: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    use_ema_eval: bool
    train_split: Dataset
    profile: ClassProfile
    train_acc_trajectory: list[float]
    epochs_to_full_fit: int | None

    @property
    def eval_named(self) -> dict[str, np.ndarray]:
        return self.ema if self.use_ema_eval else self.raw

    @property
    def final_train_accuracy(self) -> float:
        return self.train_acc_trajectory[-1]

    def eval_mlp(self):
        return named_to_mlp(self.eval_named, self.mlp_sizes)

    def checkpoint_named(self) -> dict[str, np.ndarray]:
        named = dict(self.raw)
        for k, v in self.ema.items():
            named[f"ema.{k}"] = v
        return named


@dataclass
class TrialResult:
    seed: int
    config_hash: str
    metrics: MetricsReport
    collapse: CollapseReport
    train_acc_trajectory: list[float]
    final_train_accuracy: float
    epochs_to_full_fit: int | None
    model: TrainedModel

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "metrics": self.metrics.to_dict(),
            "collapse": self.collapse.to_dict(),
            "train_acc_trajectory": list(self.train_acc_trajectory),
            "final_train_accuracy": self.final_train_accuracy,
            "epochs_to_full_fit": self.epochs_to_full_fit,
        }


def _iter_batches(n: int, batch_size: int, rng: np.random.Generator, min_batch: int):
    """Shuffled index chunks; a too-small trailing chunk merges backward."""
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size < min_batch:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _projector_sizes(config: ExperimentConfig) -> list[int] | None:
    if not config.method.joint_ssl:
        return None
    if config.method.projector is not None:
        sizes = list(config.method.projector)
    else:
        sizes = [config.hidden[-1], 32, 32]
    if sizes[0] != config.hidden[-1]:
        raise ConfigError(
            f"projector input {sizes[0]} does not match last hidden width {config.hidden[-1]}"
        )
    return sizes


def train_model(config: ExperimentConfig, seed: int) -> TrainedModel:
    """Run one training trial; see run_training for the full report."""
    ss = _seed_children(seed)
    train_pool, _ = build_pools(config, seed)
    train_split = curate_train_split(config, train_pool, seed)
    profile = class_profile(train_split)
    k = train_split.num_classes
    mlp_sizes = [train_split.d] + list(config.hidden) + [k]
    init_rng = np.random.default_rng(ss["init"])
    mlp = mlp_init(mlp_sizes, seed=init_rng.integers(2**32))
    named = params_to_named(mlp, "mlp")
    proj_sizes = _projector_sizes(config)
    if proj_sizes is not None:
        proj = projector_init(proj_sizes, seed=init_rng.integers(2**32))
        named.update(params_to_named(proj, "proj"))
    state = init_state(named, config.ema_decay)

    method = config.method
    tc = config.train
    batch_rng = np.random.default_rng(ss["batches"])
    augment_rng = np.random.default_rng(ss["augment"])
    class_w = reweight_class_weights(profile)
    steps_per_epoch = math.ceil(train_split.n / tc.batch_size)
    sampler = (
        make_balanced_sampler(train_split, tc.batch_size, seed=ss["batches"])
        if method.resample
        else None
    )
    min_batch = 2 if method.joint_ssl else 1
    n_mlp_layers = len(mlp_sizes) - 1

    def make_loss_and_grads(xb, yb, views, epoch):
        """Bind one batch; the result maps params (+ ascent weights) to loss and grads."""

        def loss_and_grads(params_named, example_weights):
            tape = Tape()
            leaves = {name: tape.leaf(arr, name=name) for name, arr in params_named.items()}
            mlp_leaves = {n: v for n, v in leaves.items() if n.startswith("mlp.")}
            logits, _ = forward_stack(tape.constant(xb), mlp_leaves, n_mlp_layers, "mlp")
            if method.loss == "smoothed":
                vec = cross_entropy_vec(tape, logits, smoothed_targets(yb, profile, method.smoothing))
            elif method.loss == "focal":
                vec = focal_vec(tape, logits, yb, method.focal)
            else:
                vec = cross_entropy_vec(tape, logits, one_hot(yb, k))
            if method.loss == "reweighted" and epoch >= method.reweight.defer_epoch:
                base_w = class_w[yb]
            else:
                base_w = np.ones(yb.size)
            if example_weights is None:
                supervised = reduce_sum(vec * tape.constant(base_w)) * (1.0 / yb.size)
            else:
                supervised = reduce_sum(vec * tape.constant(base_w * example_weights)) * (
                    1.0 / float(example_weights.sum())
                )
            if method.joint_ssl:
                proj_leaves = {n: v for n, v in leaves.items() if n.startswith("proj.")}
                embeddings = []
                for view in views:
                    _, penult = forward_stack(tape.constant(view), mlp_leaves, n_mlp_layers, "mlp")
                    emb, _ = forward_stack(penult, proj_leaves, len(proj_sizes) - 1, "proj")
                    embeddings.append(emb)
                ssl = vicreg_loss(tape, embeddings[0], embeddings[1], method.vicreg)
                total = ssl + supervised * method.joint.lam
            else:
                total = supervised
            grads = backward(tape, total)
            return float(total.value), {name: grads[leaves[name].idx] for name in leaves}

        return loss_and_grads

    trajectory: list[float] = []
    epochs_to_full_fit = None
    for epoch in range(tc.epochs):
        lr = cosine_lr(epoch, tc)
        if sampler is not None:
            batches = [next(sampler) for _ in range(steps_per_epoch)]
        else:
            batches = _iter_batches(train_split.n, tc.batch_size, batch_rng, min_batch)
        for step, batch_idx in enumerate(batches):
            xb = train_split.X[batch_idx]
            yb = train_split.y[batch_idx]
            views = None
            if method.joint_ssl:
                views = augment_two_views(xb, method.augment, augment_rng)
            loss_and_grads = make_loss_and_grads(xb, yb, views, epoch)
            try:
                if method.sam.mode != "off":
                    named, state, _ = sam_step(
                        named, state, lr, tc, method.sam, loss_and_grads,
                        batch_labels=yb, profile=profile,
                    )
                else:
                    _, grads = loss_and_grads(named, None)
                    named, state = sgd_update(named, grads, lr, tc, state)
                    state = ema_update(state, named)
            except NumericalError as exc:
                raise NumericalError(
                    f"training diverged at epoch {epoch}, step {step} (seed {seed}): {exc}"
                ) from exc
        preds, _, _ = mlp_predict(named_to_mlp(named, mlp_sizes), train_split.X)
        acc = float((preds == train_split.y).mean())
        trajectory.append(acc)
        logger.debug("seed %d epoch %d lr %.4f train_acc %.4f", seed, epoch, lr, acc)
        if epochs_to_full_fit is None and acc == 1.0:
            epochs_to_full_fit = epoch + 1
        if config.stop_at_train_acc is not None and acc >= config.stop_at_train_acc:
            break

    return TrainedModel(
        mlp_sizes=mlp_sizes,
        proj_sizes=proj_sizes,
        raw=named,
        ema=state.ema,
        use_ema_eval=config.use_ema_eval,
        train_split=train_split,
        profile=profile,
        train_acc_trajectory=trajectory,
        epochs_to_full_fit=epochs_to_full_fit,
    )


def evaluate_model(model: TrainedModel, test_split: Dataset) -> tuple[MetricsReport, CollapseReport]:
    """Test metrics plus collapse statistics on the training features."""
    mlp = model.eval_mlp()
    test_preds, _, _ = mlp_predict(mlp, test_split.X)
    metrics = metrics_report(test_preds, test_split.y, model.profile)
    train_preds, _, train_feats = mlp_predict(mlp, model.train_split.X)
    collapse = collapse_report(train_feats, model.train_split.y, train_preds, model.profile)
    return metrics, collapse


def run_training(config: ExperimentConfig, seed: int) -> TrialResult:
    """Train and evaluate one (config, seed) trial."""
    model = train_model(config, seed)
    _, test_pool = build_pools(config, seed)
    test_split = curate_test_split(config, test_pool, seed)
    metrics, collapse = evaluate_model(model, test_split)
    return TrialResult(
        seed=seed,
        config_hash=config_hash(config),
        metrics=metrics,
        collapse=collapse,
        train_acc_trajectory=model.train_acc_trajectory,
        final_train_accuracy=model.final_train_accuracy,
        epochs_to_full_fit=model.epochs_to_full_fit,
        model=model,
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class TrialAggregate:
    """Per-seed values with mean and standard error of the mean."""

    values: list[float]
    mean: float
    stderr: float
    single_trial: bool

    def to_dict(self) -> dict:
        return {
            "values": list(self.values),
            "mean": self.mean,
            "stderr": self.stderr,
            "single_trial": self.single_trial,
        }


def aggregate(values) -> TrialAggregate:
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("nothing to aggregate")
    mean = float(np.mean(vals))
    if len(vals) == 1:
        return TrialAggregate(vals, mean, 0.0, True)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    return TrialAggregate(vals, mean, stderr, False)


AGGREGATED_METRICS = (
    "overall",
    "minority",
    "majority",
    "few",
    "medium",
    "many",
    "final_train_accuracy",
    "minority_mean_cdnv",
    "mean_cdnv",
    "ncc_agreement",
    "ncc_agreement_minority",
)


def _metric_value(result: TrialResult, key: str) -> float:
    if hasattr(result.metrics, key):
        return getattr(result.metrics, key)
    if hasattr(result.collapse, key):
        return getattr(result.collapse, key)
    return getattr(result, key)


@dataclass
class AggregateResult:
    config_hash: str
    config: ExperimentConfig
    results: list[TrialResult]
    aggregates: dict[str, TrialAggregate]

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "config": config_to_dict(self.config),
            "seeds": [r.seed for r in self.results],
            "aggregates": {k: v.to_dict() for k, v in self.aggregates.items()},
        }


def _jsonify(obj):
    """Make a document strictly JSON-serializable; NaN becomes null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _jsonify(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonify(doc), fh, indent=2, allow_nan=False)
        fh.write("\n")


def run_all_seeds(config: ExperimentConfig, out_dir=None) -> AggregateResult:
    """Run every configured seed sequentially and aggregate.

    Values in each aggregate are ordered by ascending seed so the
    output is independent of execution order.
    """
    results = [run_training(config, seed) for seed in config.seeds]
    results.sort(key=lambda r: r.seed)
    aggregates = {}
    for key in AGGREGATED_METRICS:
        vals = [_metric_value(r, key) for r in results]
        aggregates[key] = aggregate(vals)
    out = AggregateResult(config_hash(config), config, results, aggregates)
    if out_dir is not None:
        _write_aggregate(out, out_dir)
    return out


def _write_aggregate(agg: AggregateResult, out_dir) -> None:
    from pathlib import Path

    from .models import save_checkpoint

    run_dir = Path(out_dir) / agg.config_hash
    run_dir.mkdir(parents=True, exist_ok=True)
    for r in agg.results:
        _write_json(run_dir / f"seed_{r.seed}.json", r.to_dict())
        meta = {
            "mlp_sizes": r.model.mlp_sizes,
            "proj_sizes": r.model.proj_sizes,
            "config_hash": agg.config_hash,
            "seed": r.seed,
        }
        save_checkpoint(run_dir / f"checkpoint_seed_{r.seed}.json", r.model.checkpoint_named(), meta)
    _write_json(run_dir / "aggregate.json", agg.to_dict())


# ---------------------------------------------------------------------------
# Comparisons, sweeps, ratio grids
# ---------------------------------------------------------------------------


def percent_improvement(acc: float, baseline_acc: float, mode: str = "paper_a1") -> float:
    """Improvement of acc over a baseline accuracy.

    paper_a1 normalizes by the candidate: (acc - base) / acc.
    relative_to_baseline normalizes by the baseline: (acc - base) / base.
    """
    if mode not in IMPROVEMENT_MODES:
        raise ValueError(f"mode must be one of {IMPROVEMENT_MODES}, got {mode!r}")
    if mode == "paper_a1":
        if acc == 0:
            raise ValueError("paper_a1 improvement undefined at acc = 0")
        return (acc - baseline_acc) / acc
    if baseline_acc == 0:
        raise ValueError("relative improvement undefined at baseline 0")
    return (acc - baseline_acc) / baseline_acc


@dataclass
class SweepRow:
    value: object
    aggregates: dict[str, TrialAggregate]
    improvement: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "aggregates": {k: v.to_dict() for k, v in self.aggregates.items()},
            "percent_improvement": self.improvement,
        }


@dataclass
class SweepResult:
    axis: str
    values: list
    baseline: object
    improvement_mode: str
    rows: list[SweepRow]
    improvement_variance: float

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "values": list(self.values),
            "baseline": self.baseline,
            "improvement_mode": self.improvement_mode,
            "rows": [r.to_dict() for r in self.rows],
            "improvement_variance": self.improvement_variance,
        }

    def to_csv(self, path) -> None:
        import csv as _csv

        cols = ["value", "overall_mean", "overall_stderr", "minority_mean", "minority_stderr",
                "majority_mean", "majority_stderr", "percent_improvement"]
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([
                    row.value,
                    repr(row.aggregates["overall"].mean),
                    repr(row.aggregates["overall"].stderr),
                    repr(row.aggregates["minority"].mean),
                    repr(row.aggregates["minority"].stderr),
                    repr(row.aggregates["majority"].mean),
                    repr(row.aggregates["majority"].stderr),
                    repr(row.improvement),
                ])


def _config_for_axis_value(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    cfg = config_from_dict(config_to_dict(config))
    if axis == "batch_size":
        cfg.train.batch_size = int(value)
    elif axis == "r_train":
        cfg.r_train = float(value)
    elif axis == "r_test":
        cfg.r_test = float(value)
    elif axis == "n_majority":
        cfg.majority_size = int(value)
        cfg.r_train = None
    elif axis == "method":
        cfg = apply_method(cfg, str(value))
    return cfg


def run_sweep(
    config: ExperimentConfig,
    axis: str,
    values: list,
    out_dir=None,
    baseline=None,
    improvement_mode: str | None = None,
) -> SweepResult:
    """Vary one axis, aggregate per value, and tabulate improvements.

    The improvement column compares each row's mean overall accuracy to
    the baseline row (batch size 128 when sweeping batch_size and it is
    present, the erm preset when sweeping methods, else the first
    value). The baseline row's improvement is exactly zero by
    construction. improvement_variance is the sample variance of the
    improvement column.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if len(set(map(str, values))) != len(values):
        raise ConfigError("duplicate sweep values")
    if baseline is None:
        if axis == "batch_size" and 128 in values:
            baseline = 128
        elif axis == "method" and "erm" in values:
            baseline = "erm"
        else:
            baseline = values[0]
    if baseline not in values:
        raise ConfigError(f"baseline {baseline!r} is not among the sweep values")
    if improvement_mode is None:
        improvement_mode = "paper_a1" if axis == "batch_size" else "relative_to_baseline"
    if improvement_mode not in IMPROVEMENT_MODES:
        raise ConfigError(f"improvement_mode must be one of {IMPROVEMENT_MODES}")

    per_value = {}
    for value in values:
        cfg = _config_for_axis_value(config, axis, value)
        per_value[str(value)] = run_all_seeds(cfg, out_dir=out_dir)
    base_acc = per_value[str(baseline)].aggregates["overall"].mean
    rows = []
    for value in values:
        agg = per_value[str(value)]
        acc = agg.aggregates["overall"].mean
        if value == baseline:
            imp = 0.0
        else:
            imp = percent_improvement(acc, base_acc, improvement_mode)
        rows.append(SweepRow(value=value, aggregates=agg.aggregates, improvement=imp))
    imps = [r.improvement for r in rows]
    variance = float(np.var(imps, ddof=1)) if len(imps) > 1 else 0.0
    result = SweepResult(
        axis=axis,
        values=list(values),
        baseline=baseline,
        improvement_mode=improvement_mode,
        rows=rows,
        improvement_variance=variance,
    )
    if out_dir is not None:
        from pathlib import Path

        sweep_dir = Path(out_dir)
        sweep_dir.mkdir(parents=True, exist_ok=True)
        _write_json(sweep_dir / f"sweep_{axis}.json", result.to_dict())
        result.to_csv(sweep_dir / f"sweep_{axis}.csv")
    return result


def misalignment(grid: dict[tuple[float, float], float]) -> float:
    """Mean |best training ratio - test ratio| over the test ratios.

    grid maps (r_train, r_test) to accuracy. For each test ratio the
    best training ratio maximizes accuracy; exact ties go to the
    candidate closest to the test ratio (then to the smaller ratio).
    """
    if not grid:
        raise ValueError("empty accuracy grid")
    test_ratios = sorted({rt for (_, rt) in grid})
    gaps = []
    for rt in test_ratios:
        candidates = [(rtr, acc) for (rtr, t), acc in grid.items() if t == rt]
        if not candidates:
            raise ValueError(f"no entries for test ratio {rt}")
        best = sorted(candidates, key=lambda p: (-p[1], abs(p[0] - rt), p[0]))[0][0]
        gaps.append(abs(best - rt))
    return float(np.mean(gaps))


def misalignment_steps(grid: dict[tuple[float, float], float]) -> float:
    """Mean grid-index distance between best training and test ratios.

    Test ratios must appear among the training ratios so both live on
    the same ladder; the answer is in units of grid steps.
    """
    if not grid:
        raise ValueError("empty accuracy grid")
    train_ratios = sorted({r for (r, _) in grid})
    pos = {r: i for i, r in enumerate(train_ratios)}
    test_ratios = sorted({rt for (_, rt) in grid})
    missing = [rt for rt in test_ratios if rt not in pos]
    if missing:
        raise ValueError(f"test ratios {missing} not on the training-ratio ladder")
    gaps = []
    for rt in test_ratios:
        candidates = [(rtr, acc) for (rtr, t), acc in grid.items() if t == rt]
        best = sorted(candidates, key=lambda p: (-p[1], abs(p[0] - rt), p[0]))[0][0]
        gaps.append(abs(pos[best] - pos[rt]))
    return float(np.mean(gaps))


@dataclass
class RatioGridResult:
    train_ratios: list[float]
    test_ratios: list[float]
    seeds: list[int]
    per_seed: list[dict[tuple[float, float], float]]
    mean_grid: dict[tuple[float, float], float]
    misalignment_per_seed: list[float]
    misalignment_steps_per_seed: list[float]
    misalignment_mean: float
    misalignment_steps_mean: float

    def to_dict(self) -> dict:
        def grid_doc(g):
            return [
                {"r_train": rt, "r_test": rs, "accuracy": acc}
                for (rt, rs), acc in sorted(g.items())
            ]

        return {
            "train_ratios": list(self.train_ratios),
            "test_ratios": list(self.test_ratios),
            "seeds": list(self.seeds),
            "per_seed": [grid_doc(g) for g in self.per_seed],
            "mean_grid": grid_doc(self.mean_grid),
            "misalignment_per_seed": list(self.misalignment_per_seed),
            "misalignment_steps_per_seed": list(self.misalignment_steps_per_seed),
            "misalignment_mean": self.misalignment_mean,
            "misalignment_steps_mean": self.misalignment_steps_mean,
        }


def run_ratio_grid(
    config: ExperimentConfig,
    train_ratios: list[float],
    test_ratios: list[float],
    out_dir=None,
) -> RatioGridResult:
    """Accuracy over the full r_train x r_test grid, per seed.

    Each (seed, r_train) model is trained once and evaluated against
    every curated test split, so the grid stays affordable.
    """
    if not train_ratios or not test_ratios:
        raise ConfigError("both ratio lists must be non-empty")
    per_seed = []
    for seed in config.seeds:
        grid: dict[tuple[float, float], float] = {}
        for rt in train_ratios:
            cfg = config_from_dict(config_to_dict(config))
            cfg.r_train = float(rt)
            model = train_model(cfg, seed)
            _, test_pool = build_pools(cfg, seed)
            for rs in test_ratios:
                test_split = curate_test_split(cfg, test_pool, seed, r_test=float(rs))
                preds, _, _ = mlp_predict(model.eval_mlp(), test_split.X)
                grid[(float(rt), float(rs))] = float((preds == test_split.y).mean())
        per_seed.append(grid)
    mean_grid = {
        key: float(np.mean([g[key] for g in per_seed])) for key in per_seed[0]
    }
    mis = [misalignment(g) for g in per_seed]
    steps = [misalignment_steps(g) for g in per_seed]
    result = RatioGridResult(
        train_ratios=[float(r) for r in train_ratios],
        test_ratios=[float(r) for r in test_ratios],
        seeds=list(config.seeds),
        per_seed=per_seed,
        mean_grid=mean_grid,
        misalignment_per_seed=mis,
        misalignment_steps_per_seed=steps,
        misalignment_mean=float(np.mean(mis)),
        misalignment_steps_mean=float(np.mean(steps)),
    )
    if out_dir is not None:
        from pathlib import Path

        grid_dir = Path(out_dir)
        grid_dir.mkdir(parents=True, exist_ok=True)
        _write_json(grid_dir / "ratio_grid.json", result.to_dict())
    return result
