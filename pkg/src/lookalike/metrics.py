"""Top-k ranking metrics and the repeated expansion experiment harness.

For every (class, repetition) pair the harness samples a seed, builds a
training set, fits the tree ensemble, scores the remaining pool, expands to
the top-k, and evaluates precision/recall at k against the class members
left outside the seed. Per-pair RNG streams are derived from the master
seed by hashing (class, repetition), so repetitions are order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import UserBase, child_seed
from .errors import ConfigError, DataError
from .expansion import expand, score_pool
from .training import bounding_box, build_training_set, sample_seed
from .trees import TreeParams, decision_grid, fit
from .tsne import Embedding

METRIC_FORMAT = "%.17g"
REPORT_HEADER = "class,repetition,strategy,n1,n0,k,p_at_k,r_at_k"


@dataclass
class EvalCase:
    """A ranked audience of size k against the true positive pool members."""

    a_true: set
    a_k: list
    k: int
    excluded_seed: set | None = None

    def __post_init__(self):
        self.a_true = set(self.a_true)
        self.a_k = list(self.a_k)
        if not self.a_true:
            raise DataError("A_true is empty")
        if len(self.a_k) != self.k:
            raise DataError(f"|A_k| = {len(self.a_k)} but k = {self.k}")
        if self.excluded_seed is not None and set(self.a_k) & set(
            self.excluded_seed
        ):
            raise DataError("A_k overlaps the excluded seed")


def precision_at_k(case: EvalCase) -> float:
    return len(case.a_true & set(case.a_k)) / len(case.a_k)


def recall_at_k(case: EvalCase) -> float:
    return len(case.a_true & set(case.a_k)) / len(case.a_true)


@dataclass
class ExperimentConfig:
    n1: int = 250
    n0: int = 250
    k: int = 7000
    strategy: str = "uniform"
    repetitions: int = 30
    classes: list | None = None  # None -> every class present
    rng_seed: int = 0
    padding: float = 0.05
    counter_class: int | None = None
    grid_resolution: int = 200
    tree_params: TreeParams = field(default_factory=TreeParams)

    def __post_init__(self):
        if self.n1 < 1 or self.n0 < 1 or self.k < 1 or self.repetitions < 1:
            raise ConfigError("n1, n0, k and repetitions must be positive")


@dataclass
class ExperimentRow:
    class_tag: int
    repetition: int
    strategy: str
    n1: int
    n0: int
    k: int
    p_at_k: float
    r_at_k: float


@dataclass
class ExperimentReport:
    rows: list
    per_class: dict  # class -> (mean P@k, mean R@k)
    mean_p_at_k: float
    mean_r_at_k: float
    config: dict


def rep_seeds(master: int, class_tag: int, repetition: int):
    """Three derived integer seeds: seed sampling, negatives, tree fitting."""
    state = child_seed(master, "experiment", class_tag, repetition).generate_state(3)
    return tuple(int(v) for v in state)


def _one_repetition(base, emb, cfg, class_tag, repetition, strategy, n0):
    s_sample, s_train, s_fit = rep_seeds(cfg.rng_seed, class_tag, repetition)
    seed_aud = sample_seed(base, emb, class_tag, cfg.n1, s_sample)
    train = build_training_set(
        emb,
        seed_aud,
        strategy,
        n0,
        s_train,
        counter_class_tag=cfg.counter_class,
        base=base,
        padding=cfg.padding,
    )
    model = fit(train, cfg.tree_params, s_fit)
    scored = score_pool(model, emb, seed_aud)
    if cfg.k > len(scored):
        raise ConfigError(f"k={cfg.k} exceeds pool size {len(scored)}")
    result = expand(scored, cfg.k, seed_aud)
    seed_set = set(seed_aud.member_ids.tolist())
    a_true = set(base.ids[base.labels == class_tag].tolist()) - seed_set
    case = EvalCase(
        a_true=a_true,
        a_k=result.audience.tolist(),
        k=cfg.k,
        excluded_seed=seed_set,
    )
    row = ExperimentRow(
        class_tag=int(class_tag),
        repetition=repetition,
        strategy=strategy,
        n1=cfg.n1,
        n0=n0,
        k=cfg.k,
        p_at_k=precision_at_k(case),
        r_at_k=recall_at_k(case),
    )
    return row, seed_aud, model, result


def _check_inputs(base: UserBase, emb: Embedding, cfg: ExperimentConfig):
    if base.labels is None:
        raise DataError("experiments need a labeled user base")
    if not np.array_equal(base.ids, emb.ids):
        raise DataError("user base and embedding ids are misaligned")
    if cfg.classes is not None:
        present = set(np.unique(base.labels).tolist())
        missing = [c for c in cfg.classes if c not in present]
        if missing:
            raise DataError(f"classes absent from the base: {missing}")
        return list(cfg.classes)
    return np.unique(base.labels).tolist()


def run_experiment(
    base: UserBase, emb: Embedding, cfg: ExperimentConfig
) -> ExperimentReport:
    """The repeated expansion task over every configured class."""
    classes = _check_inputs(base, emb, cfg)
    rows = []
    for class_tag in classes:
        for rep in range(cfg.repetitions):
            row, _, _, _ = _one_repetition(
                base, emb, cfg, class_tag, rep, cfg.strategy, cfg.n0
            )
            rows.append(row)
    return _build_report(rows, cfg)


def _build_report(rows, cfg: ExperimentConfig) -> ExperimentReport:
    per_class = {}
    for class_tag in sorted({r.class_tag for r in rows}):
        sub = [r for r in rows if r.class_tag == class_tag]
        per_class[class_tag] = (
            float(np.mean([r.p_at_k for r in sub])),
            float(np.mean([r.r_at_k for r in sub])),
        )
    return ExperimentReport(
        rows=rows,
        per_class=per_class,
        mean_p_at_k=float(np.mean([r.p_at_k for r in rows])),
        mean_r_at_k=float(np.mean([r.r_at_k for r in rows])),
        config=_config_snapshot(cfg),
    )


def _config_snapshot(cfg: ExperimentConfig) -> dict:
    return {
        "n1": cfg.n1,
        "n0": cfg.n0,
        "k": cfg.k,
        "strategy": cfg.strategy,
        "repetitions": cfg.repetitions,
        "classes": cfg.classes,
        "rng_seed": cfg.rng_seed,
        "padding": cfg.padding,
        "counter_class": cfg.counter_class,
        "grid_resolution": cfg.grid_resolution,
        "n_trees": cfg.tree_params.n_trees,
        "min_samples_split": cfg.tree_params.min_samples_split,
    }


@dataclass
class ImbalanceRow:
    class_tag: int
    repetition: int
    ratio: float
    n1: int
    n0: int
    region_count: int
    p_at_k: float
    r_at_k: float


@dataclass
class ImbalanceReport:
    rows: list
    resolution: int
    config: dict


def imbalance_sweep(
    base: UserBase, emb: Embedding, cfg: ExperimentConfig, ratios
) -> ImbalanceReport:
    """Decision-region size and metrics as n1/n0 grows past 1.

    Every ratio within one (class, repetition) reuses the same seed sample;
    only the negative count changes (n0 = round(n1 / ratio)).
    """
    classes = _check_inputs(base, emb, cfg)
    if not ratios:
        raise ConfigError("need at least one ratio")
    box = bounding_box(emb, cfg.padding)
    rows = []
    for class_tag in classes:
        for rep in range(cfg.repetitions):
            for ratio in ratios:
                if ratio <= 0:
                    raise ConfigError(f"ratio must be positive, got {ratio}")
                n0 = max(1, int(round(cfg.n1 / ratio)))
                row, _, model, _ = _one_repetition(
                    base, emb, cfg, class_tag, rep, cfg.strategy, n0
                )
                _, _, values = decision_grid(model, box, cfg.grid_resolution)
                rows.append(
                    ImbalanceRow(
                        class_tag=int(class_tag),
                        repetition=rep,
                        ratio=float(ratio),
                        n1=cfg.n1,
                        n0=n0,
                        region_count=int((values >= 0.5).sum()),
                        p_at_k=row.p_at_k,
                        r_at_k=row.r_at_k,
                    )
                )
    return ImbalanceReport(
        rows=rows, resolution=cfg.grid_resolution, config=_config_snapshot(cfg)
    )


@dataclass
class BaselineReport:
    rows: list  # ExperimentRow for both strategies
    seed_samples: dict  # repetition -> sorted seed ids (shared by strategies)
    config: dict


def baseline_comparison(
    base: UserBase,
    emb: Embedding,
    cfg: ExperimentConfig,
    seed_class: int,
    counter_class: int,
) -> BaselineReport:
    """Uniform negatives vs a counter class, on identical seed samples."""
    cfg = replace(cfg, classes=[seed_class], counter_class=counter_class)
    _check_inputs(base, emb, cfg)
    rows = []
    seed_samples = {}
    for rep in range(cfg.repetitions):
        for strategy in ("uniform", "counter_class"):
            row, seed_aud, _, _ = _one_repetition(
                base, emb, cfg, seed_class, rep, strategy, cfg.n0
            )
            rows.append(row)
            ids = seed_aud.member_ids.tolist()
            if rep in seed_samples and seed_samples[rep] != ids:
                raise DataError("strategies diverged on the seed sample")
            seed_samples[rep] = ids
    return BaselineReport(
        rows=rows, seed_samples=seed_samples, config=_config_snapshot(cfg)
    )


def report_to_csv(rows) -> str:
    """Stable CSV rendering shared by the experiment and baseline reports."""
    lines = [REPORT_HEADER]
    for r in rows:
        lines.append(
            f"{r.class_tag},{r.repetition},{r.strategy},{r.n1},{r.n0},{r.k},"
            f"{METRIC_FORMAT % r.p_at_k},{METRIC_FORMAT % r.r_at_k}"
        )
    return "\n".join(lines) + "\n"


def summary_dict(report: ExperimentReport) -> dict:
    return {
        "per_class": {
            str(c): {"p_at_k": p, "r_at_k": r}
            for c, (p, r) in report.per_class.items()
        },
        "mean_p_at_k": report.mean_p_at_k,
        "mean_r_at_k": report.mean_r_at_k,
        "config": report.config,
    }
