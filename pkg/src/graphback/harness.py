"""Experiment orchestration: metrics, per-cell runs, sweeps, the baseline
comparison, and the cross-architecture transfer study.

One experiment cell = (dataset, model tag, p, t) evaluated over several
seeds. Each seed gets its own train/test split (split seed = run seed), the
clean and backdoored model share the weight-initialization seed so the
accuracy drop isolates the poisoning effect, and the benign test set used
for both accuracies is the untouched original. Aggregates report mean and
min-max spread.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .attack import (
    STREAM_ER_TEST,
    STREAM_TEST_INJECT,
    AttackConfig,
    build_attack_testset,
    build_er_attack_testset,
    er_baseline_trigger,
    generate_er_poisoned_trainset,
    generate_poisoned_trainset,
    select_semantic_trigger,
)
from .datasets import Dataset, DataSplit, split_dataset
from .errors import GraphBackError, UsageError
from .models import ARCHITECTURES, GcnModel, TrainConfig, accuracy, init_model, predict_many, train

# Default forced-output class per corpus; override with --target-label.
DEFAULT_TARGET_LABELS = {
    "AIDS": 0,
    "NCI1": 0,
    "Mutagenicity": 1,
    "BZR_MD": 0,
    "TWITTER-Real-Graph-Partial": 1,
}


def default_target_label(dataset_name: str) -> int:
    if dataset_name in DEFAULT_TARGET_LABELS:
        return DEFAULT_TARGET_LABELS[dataset_name]
    if "TWITTER" in dataset_name.upper():
        return 1
    return 0


def compute_asr(model: GcnModel, attack_set, target_label: int) -> float:
    """Fraction of the triggered samples the model classifies as the target
    label."""
    attack_set = list(attack_set)
    if not attack_set:
        raise UsageError("attack set is empty")
    preds = predict_many(model, attack_set)
    return float(np.mean(preds == target_label))


def compute_cad(acc_clean: float, acc_backdoored: float) -> float:
    """Clean-accuracy drop: benign accuracy of the clean model minus benign
    accuracy of the backdoored model. Negative when poisoning happened to
    help."""
    for name, v in (("acc_clean", acc_clean), ("acc_backdoored", acc_backdoored)):
        if not 0.0 <= v <= 1.0:
            raise UsageError(f"{name} must be in [0, 1], got {v}")
    return acc_clean - acc_backdoored


@dataclass(frozen=True)
class SeedRunResult:
    """Metrics from one seed of one cell. clean_asr is the clean model's
    target-label rate on the same attack set, reported for context (it
    should sit near the base rate, far below the backdoored ASR)."""

    seed: int
    acc_clean: float
    acc_backdoor: float
    asr: float
    clean_asr: float
    trigger_class: int | None = None

    def __post_init__(self):
        for name in ("acc_clean", "acc_backdoor", "asr", "clean_asr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise UsageError(f"{name} must be in [0, 1], got {v}")

    @property
    def cad(self) -> float:
        # computed, never stored: the two columns cannot drift apart
        return compute_cad(self.acc_clean, self.acc_backdoor)


@dataclass(frozen=True)
class MetricsRow:
    """One experiment cell with its per-seed results; aggregate statistics
    are derived on access."""

    dataset: str
    model: str          # "gcn", "sage", or "<arch>-er" for the baseline
    p: float
    t: int
    runs: tuple

    def __post_init__(self):
        if not self.runs:
            raise UsageError("metrics row needs at least one seed run")

    @property
    def seed_count(self) -> int:
        return len(self.runs)

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.runs]))

    @property
    def acc_clean_mean(self) -> float:
        return self._mean("acc_clean")

    @property
    def acc_backdoor_mean(self) -> float:
        return self._mean("acc_backdoor")

    @property
    def asr_mean(self) -> float:
        return self._mean("asr")

    @property
    def asr_min(self) -> float:
        return float(min(r.asr for r in self.runs))

    @property
    def asr_max(self) -> float:
        return float(max(r.asr for r in self.runs))

    @property
    def cad_mean(self) -> float:
        return self._mean("cad")

    @property
    def clean_asr_mean(self) -> float:
        return self._mean("clean_asr")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a CLI run needs; JSON config files set these same fields.
    p values are fractions of the training set (the CLI accepts percents and
    normalizes before building this)."""

    dataset_dir: str = ""
    target_label: int | None = None     # None -> per-dataset default
    p: float = 0.03
    t: int = 1
    p_values: tuple = (0.01, 0.03, 0.05, 0.07)
    t_values: tuple = (1, 2, 3)
    seeds: tuple = (0, 1, 2, 3, 4)
    model: str = "gcn"
    out_dir: str = "results"
    train_fraction: float = 0.8
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    hidden_channels: int = 32
    er_nodes: int = 4
    er_prob: float = 0.8

    def __post_init__(self):
        if not self.seeds:
            raise UsageError("need at least one seed")
        if not self.p_values or not self.t_values:
            raise UsageError("p_values and t_values must be nonempty")
        if self.model not in ARCHITECTURES:
            raise UsageError(f"unknown model {self.model!r}, expected one of {ARCHITECTURES}")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, max_epochs=self.epochs, seed=seed)


def load_experiment_config(path: str, base: ExperimentConfig) -> ExperimentConfig:
    """Overlay a JSON config file on top of a base config; file values win.
    Unknown keys are an error, list fields become tuples, and p-like values
    get the same >= 1 means percent normalization as the CLI."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    valid = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - valid
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    updates = {}
    for key, value in raw.items():
        if key == "p":
            value = normalize_rate(value)
        elif key == "p_values":
            value = tuple(normalize_rate(v) for v in value)
        elif key in ("t_values", "seeds"):
            value = tuple(int(v) for v in value)
        updates[key] = value
    return dc_replace(base, **updates)


def normalize_rate(value: float) -> float:
    """Poisoning rates >= 1 are percents (3 -> 0.03), < 1 are fractions."""
    value = float(value)
    if value <= 0:
        raise UsageError(f"poisoning rate must be positive, got {value}")
    return value / 100.0 if value >= 1.0 else value


def _clean_key(dataset: Dataset, arch: str, seed: int, split: DataSplit, tc: TrainConfig,
               hidden: int) -> tuple:
    return (dataset.name, len(dataset.graphs), arch, hidden, seed, split.seed,
            split.train_fraction, tc.learning_rate, tc.weight_decay, tc.batch_size, tc.max_epochs)


def run_cell(dataset: Dataset, split: DataSplit | None, attack_config: AttackConfig,
             train_config: TrainConfig, model_tag: str, seeds=(0, 1, 2, 3, 4),
             method: str = "semantic", er_nodes: int = 4, er_prob: float = 0.8,
             train_fraction: float = 0.8, hidden_channels: int = 32,
             clean_cache: dict | None = None, verbose: bool = False) -> MetricsRow:
    """Run one cell over the given seeds and aggregate.

    When ``split`` is None each seed draws its own split (split seed = run
    seed), matching a fresh random 80/20 partition per repetition; passing a
    split pins it across seeds. ``clean_cache`` (dict) memoizes clean models
    across cells that share (dataset, arch, seed, split, training config),
    since the clean model does not depend on p or t.
    """
    if model_tag not in ARCHITECTURES:
        raise UsageError(f"unknown model {model_tag!r}, expected one of {ARCHITECTURES}")
    if method not in ("semantic", "er"):
        raise UsageError(f"unknown poisoning method {method!r}")
    runs = []
    for seed in seeds:
        try:
            runs.append(_run_seed(dataset, split, attack_config, train_config, model_tag, int(seed),
                                  method, er_nodes, er_prob, train_fraction, hidden_channels,
                                  clean_cache, verbose))
        except GraphBackError as exc:
            raise type(exc)(
                f"cell {dataset.name}/{model_tag}/{method} p={attack_config.poisoning_rate} "
                f"t={attack_config.trigger_size} seed={seed}: {exc}"
            ) from exc
    tag = model_tag if method == "semantic" else f"{model_tag}-er"
    return MetricsRow(dataset=dataset.name, model=tag, p=attack_config.poisoning_rate,
                      t=attack_config.trigger_size, runs=tuple(runs))


def _run_seed(dataset, split, attack_config, train_config, arch, seed, method, er_nodes, er_prob,
              train_fraction, hidden_channels, clean_cache, verbose) -> SeedRunResult:
    run_split = split if split is not None else split_dataset(dataset, train_fraction, seed)
    tc = dc_replace(train_config, seed=seed)
    ac = dc_replace(attack_config, seed=seed)
    target = ac.target_label

    t0 = time.time()
    key = _clean_key(dataset, arch, seed, run_split, tc, hidden_channels)
    clean_model = clean_cache.get(key) if clean_cache is not None else None
    if clean_model is None:
        init = init_model(arch, dataset.node_class_vocab_size, dataset.num_graph_labels,
                          hidden_channels, seed=seed)
        clean_model, _ = train(init, dataset, run_split.train_indices, tc)
        if clean_cache is not None:
            clean_cache[key] = clean_model

    if method == "semantic":
        report = select_semantic_trigger(dataset, run_split, target)
        ac = ac.with_trigger(report.trigger_class)
        poisoned, _ = generate_poisoned_trainset(dataset, run_split, ac)
        attack_set = build_attack_testset(dataset, run_split, ac.trigger_class, ac.trigger_size,
                                          target, np.random.default_rng([seed, STREAM_TEST_INJECT]))
        trigger_class = ac.trigger_class
    else:
        pattern = er_baseline_trigger(er_nodes, er_prob, seed)
        poisoned, _ = generate_er_poisoned_trainset(dataset, run_split, ac, pattern)
        attack_set, _ = build_er_attack_testset(dataset, run_split, pattern, target,
                                                np.random.default_rng([seed, STREAM_ER_TEST]))
        trigger_class = None

    # same initialization seed as the clean model, by construction
    init = init_model(arch, dataset.node_class_vocab_size, dataset.num_graph_labels,
                      hidden_channels, seed=seed)
    backdoor_model, _ = train(init, poisoned, run_split.train_indices, tc)

    # benign accuracies on the untouched original test graphs for BOTH models
    acc_clean = accuracy(clean_model, dataset, run_split.test_indices)
    acc_backdoor = accuracy(backdoor_model, dataset, run_split.test_indices)
    asr = compute_asr(backdoor_model, attack_set, target)
    clean_asr = compute_asr(clean_model, attack_set, target)
    if verbose:
        print(f"  seed {seed}: acc_clean {acc_clean:.4f}  acc_backdoor {acc_backdoor:.4f}  "
              f"asr {asr:.4f}  clean_asr {clean_asr:.4f}  ({time.time() - t0:.1f} s)")
    return SeedRunResult(seed=seed, acc_clean=acc_clean, acc_backdoor=acc_backdoor, asr=asr,
                         clean_asr=clean_asr, trigger_class=trigger_class)


def _cell_from_config(dataset: Dataset, config: ExperimentConfig, p: float, t: int,
                      model: str, method: str, clean_cache: dict, verbose: bool) -> MetricsRow:
    target = config.target_label if config.target_label is not None else default_target_label(dataset.name)
    ac = AttackConfig(target_label=target, poisoning_rate=p, trigger_size=t)
    return run_cell(dataset, None, ac, config.train_config(0), model, seeds=config.seeds,
                    method=method, er_nodes=config.er_nodes, er_prob=config.er_prob,
                    train_fraction=config.train_fraction, hidden_channels=config.hidden_channels,
                    clean_cache=clean_cache, verbose=verbose)


def asr_monotonicity_flags(rows) -> list[str]:
    """Human-readable notes for every drop in mean ASR between consecutive
    sweep rows (the expected trend is a monotone increase with p)."""
    flags = []
    for prev, cur in zip(rows, rows[1:]):
        if cur.asr_mean < prev.asr_mean:
            flags.append(f"mean ASR decreased from p={prev.p:g} ({prev.asr_mean:.4f}) "
                         f"to p={cur.p:g} ({cur.asr_mean:.4f})")
    return flags


def sweep_poisoning_rates(dataset: Dataset, config: ExperimentConfig,
                          verbose: bool = False) -> tuple[list[MetricsRow], list[str]]:
    """One cell per p at fixed t (default 1); also reports any drop in mean
    ASR as p grows."""
    cache: dict = {}
    rows = [_cell_from_config(dataset, config, p, config.t, config.model, "semantic", cache, verbose)
            for p in config.p_values]
    return rows, asr_monotonicity_flags(rows)


def sweep_trigger_sizes(dataset: Dataset, config: ExperimentConfig,
                        verbose: bool = False) -> list[MetricsRow]:
    """One cell per t at fixed p (default 3%)."""
    cache: dict = {}
    return [_cell_from_config(dataset, config, config.p, t, config.model, "semantic", cache, verbose)
            for t in config.t_values]


def run_baseline_comparison(dataset: Dataset, config: ExperimentConfig,
                            verbose: bool = False) -> list[MetricsRow]:
    """Semantic attack vs the fixed random-subgraph baseline at the same
    (p, t); returns the two rows [semantic, baseline]."""
    cache: dict = {}
    return [
        _cell_from_config(dataset, config, config.p, config.t, config.model, "semantic", cache, verbose),
        _cell_from_config(dataset, config, config.p, config.t, config.model, "er", cache, verbose),
    ]


def run_transferability(dataset: Dataset, config: ExperimentConfig,
                        verbose: bool = False) -> list[MetricsRow]:
    """Same pipeline against the GraphSAGE architecture (the attack never
    looks at the model, so nothing else changes)."""
    cfg = dc_replace(config, model="sage")
    return [_cell_from_config(dataset, cfg, cfg.p, cfg.t, "sage", "semantic", {}, verbose)]
