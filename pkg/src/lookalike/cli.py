"""Command-line pipeline: embed, expand, simulate, oracle.

Configuration is a flat key=value file with '#' comments. Every run writes
a manifest JSON (config hash, seeds, version, timings) next to its outputs.
Exit codes: 0 ok, 1 oracle check failed, 2 config error, 3 data error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .errors import ConfigError, DataError, DivergenceError

_FLOAT_KEYS = {
    "perplexity",
    "learning_rate",
    "exaggeration",
    "init_scale",
    "ratio",
    "padding",
    "leaf_smoothing",
}
_INT_KEYS = {
    "per_class",
    "iterations",
    "out_dims",
    "n1",
    "n0",
    "trees",
    "k_features",
    "min_samples_split",
    "repetitions",
    "grid_resolution",
    "counter_class",
    "baseline_seed_class",
    "baseline_counter_class",
    "seed",
}


@dataclass
class RunConfig:
    images: str = ""
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    features_csv: str = ""
    embedding_csv: str = ""
    per_class: int = 0
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    exaggeration: float = 12.0
    init_scale: float = 1e-4
    out_dims: int = 2
    strategy: str = "uniform"
    n1: int = 150
    n0: int = 150
    ratio: float = 0.0  # when > 0, overrides n0 = round(n1 / ratio)
    padding: float = 0.05
    counter_class: int = -1
    trees: int = 100
    k_features: int = 0  # 0 -> ceil(sqrt(dims))
    min_samples_split: int = 2
    leaf_smoothing: float = 0.0
    classes: str = ""  # comma-separated, empty -> all
    repetitions: int = 5
    k: str = "350"  # absolute count or percentage like "10%"
    grid_resolution: int = 200
    ratios: str = ""  # comma-separated imbalance ratios
    baseline_seed_class: int = -1
    baseline_counter_class: int = -1
    seed: int = 42
    out: str = "out"

    def canonical(self) -> str:
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, float):
                parts.append(f"{f.name}=%.17g" % v)
            else:
                parts.append(f"{f.name}={v}")
        return "\n".join(parts) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def class_list(self):
        if not self.classes.strip():
            return None
        return [int(v) for v in self.classes.split(",") if v.strip()]

    def ratio_list(self):
        if not self.ratios.strip():
            return []
        return [float(v) for v in self.ratios.split(",") if v.strip()]


def parse_config(path) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}") from exc
    return RunConfig(**values)


def _require_paths(cfg: RunConfig, keys) -> None:
    for key in keys:
        value = getattr(cfg, key)
        if value and not Path(value).exists():
            raise ConfigError(f"{key} path does not exist: {value}")


def _effective_n0(cfg: RunConfig) -> int:
    if cfg.ratio > 0:
        return max(1, int(round(cfg.n1 / cfg.ratio)))
    return cfg.n0


class _Manifest:
    def __init__(self, command: str, cfg: RunConfig, out_dir: Path):
        self.doc = {
            "command": command,
            "version": __version__,
            "config_hash": cfg.config_hash(),
            "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
            "seed": cfg.seed,
            "outputs": [],
            "timings_sec": {},
        }
        self.out_dir = out_dir
        self._t0 = time.time()
        self._stage_start = self._t0

    def stage(self, name: str) -> None:
        now = time.time()
        self.doc["timings_sec"][name] = round(now - self._stage_start, 3)
        self._stage_start = now

    def add_output(self, path: Path) -> None:
        self.doc["outputs"].append(str(path))

    def write(self, extra: dict | None = None) -> None:
        self.doc["timings_sec"]["total"] = round(time.time() - self._t0, 3)
        if extra:
            self.doc.update(extra)
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _load_base(cfg: RunConfig):
    """Read the user base from IDX or CSV inputs, per the config."""
    from . import data

    if cfg.features_csv:
        ids, feats, labels = data.read_matrix_csv(cfg.features_csv)
        base = data.UserBase(ids=ids, features=feats, labels=labels)
    elif cfg.images:
        base = data.parse_idx_images(Path(cfg.images).read_bytes())
        if cfg.labels:
            labels = data.parse_idx_labels(Path(cfg.labels).read_bytes())
            if len(labels) != base.n_users:
                raise DataError(
                    f"{len(labels)} labels for {base.n_users} images"
                )
            base = data.UserBase(
                ids=base.ids, features=base.features, labels=labels
            )
        if cfg.test_images:
            test = data.parse_idx_images(Path(cfg.test_images).read_bytes())
            if cfg.test_labels:
                tl = data.parse_idx_labels(Path(cfg.test_labels).read_bytes())
                test = data.UserBase(ids=test.ids, features=test.features, labels=tl)
            base = data.merge_train_test(base, test)
    else:
        raise ConfigError("config needs either features_csv or images")
    if cfg.per_class > 0:
        base = data.stratified_subsample(base, cfg.per_class, cfg.seed)
    return base


def _out_dir(cfg: RunConfig, override) -> Path:
    out = Path(override) if override else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_embed(cfg: RunConfig, out_override=None) -> int:
    from . import tsne

    _require_paths(
        cfg, ["images", "labels", "test_images", "test_labels", "features_csv"]
    )
    if not (cfg.images or cfg.features_csv):
        raise ConfigError("config needs either features_csv or images")
    out = _out_dir(cfg, out_override)
    manifest = _Manifest("embed", cfg, out)
    base = _load_base(cfg)
    manifest.stage("load")

    tsne_cfg = tsne.TsneConfig(
        perplexity=cfg.perplexity,
        iterations=cfg.iterations,
        learning_rate=cfg.learning_rate,
        early_exaggeration_factor=cfg.exaggeration,
        init_scale=cfg.init_scale,
        n_components=cfg.out_dims,
        rng_seed=cfg.seed,
    )
    emb = tsne.run_tsne(base.features, tsne_cfg, ids=base.ids)
    manifest.stage("tsne")

    target = out / (Path(cfg.embedding_csv).name if cfg.embedding_csv else "embedding.csv")
    tsne.save_embedding(target, emb, labels=base.labels)
    manifest.add_output(target)

    preservation = tsne.neighborhood_preservation(
        base.features, emb.coords, k=min(10, base.n_users - 1)
    )
    manifest.stage("quality")
    print(f"final_kl={emb.meta.final_kl:.6f}")
    print(f"neighborhood_preservation_k10={preservation:.4f}")
    manifest.write(
        {
            "final_kl": emb.meta.final_kl,
            "initial_kl": emb.meta.initial_kl,
            "neighborhood_preservation_k10": preservation,
        }
    )
    return 0


def _load_embedding_base(cfg: RunConfig):
    """Embedding CSV (with labels when present) doubles as the user base."""
    from . import tsne
    from .data import UserBase

    if not cfg.embedding_csv:
        raise ConfigError("embedding_csv is required for this command")
    _require_paths(cfg, ["embedding_csv"])
    emb, labels = tsne.load_embedding(cfg.embedding_csv)
    base = UserBase(ids=emb.ids, features=emb.coords, labels=labels)
    return base, emb


def cmd_expand(cfg: RunConfig, seed_file, m_spec, out_override=None) -> int:
    from . import expansion, training, trees
    from .data import matrix_to_csv

    base, emb = _load_embedding_base(cfg)
    if not Path(seed_file).exists():
        raise ConfigError(f"seed file does not exist: {seed_file}")
    out = _out_dir(cfg, out_override)
    manifest = _Manifest("expand", cfg, out)

    raw = [ln.strip() for ln in Path(seed_file).read_text().splitlines()]
    try:
        seed_ids = [int(v) for v in raw if v]
    except ValueError as exc:
        raise DataError(f"seed file has non-integer ids: {exc}") from exc
    known = set(emb.ids.tolist())
    offenders = [i for i in seed_ids if i not in known]
    if offenders:
        raise DataError(f"seed ids not in base (first 10): {offenders[:10]}")
    seed = training.SeedAudience(member_ids=seed_ids)
    manifest.stage("load")

    n0 = _effective_n0(cfg)
    train = training.build_training_set(
        emb,
        seed,
        cfg.strategy,
        n0,
        cfg.seed,
        counter_class_tag=cfg.counter_class if cfg.counter_class >= 0 else None,
        base=base,
        padding=cfg.padding,
    )
    params = trees.TreeParams(
        n_trees=cfg.trees,
        n_candidate_features=cfg.k_features or None,
        min_samples_split=cfg.min_samples_split,
        leaf_smoothing=cfg.leaf_smoothing,
    )
    model = trees.fit(train, params, cfg.seed)
    manifest.stage("fit")

    scored = expansion.score_pool(model, emb, seed)
    m = expansion.resolve_audience_size(m_spec, emb.n_points)
    result = expansion.expand(scored, m, seed)
    manifest.stage("score")

    ranked_path = out / "audience.csv"
    with open(ranked_path, "w", encoding="ascii") as fh:
        fh.write("rank,id,score\n")
        for rank, (uid, score) in enumerate(result.ranked, start=1):
            fh.write("%d,%d,%.17g\n" % (rank, uid, score))
    manifest.add_output(ranked_path)
    print(f"audience_size={len(result.audience)}")
    manifest.write(
        {
            "m_requested": str(m_spec),
            "m_resolved": m,
            "truncated": result.manifest["truncated"],
            "strategy": cfg.strategy,
            "audience_size": int(len(result.audience)),
        }
    )
    return 0


def _write_figure_data(out, base, emb, cfg, seed_class):
    """Training set, decision grid and top-k scatter for one repetition."""
    import numpy as np

    from . import metrics as M
    from . import training, trees

    s_sample, s_train, s_fit = M.rep_seeds(cfg.rng_seed, seed_class, 0)
    seed_aud = training.sample_seed(base, emb, seed_class, cfg.n1, s_sample)
    train = training.build_training_set(
        emb, seed_aud, cfg.strategy, cfg.n0, s_train,
        counter_class_tag=cfg.counter_class, base=base, padding=cfg.padding,
    )
    model = trees.fit(train, cfg.tree_params, s_fit)

    train_path = out / f"training_set_class{seed_class}.csv"
    with open(train_path, "w", encoding="ascii") as fh:
        fh.write("x,y,label\n")
        for p, l in zip(train.points, train.labels):
            fh.write("%.17g,%.17g,%d\n" % (p[0], p[1], l))

    box = training.bounding_box(emb, cfg.padding)
    xs, ys, values = trees.decision_grid(model, box, cfg.grid_resolution)
    grid_path = out / f"decision_grid_class{seed_class}.csv"
    with open(grid_path, "w", encoding="ascii") as fh:
        fh.write("x,y,p1\n")
        for i in range(len(xs)):
            for j in range(len(ys)):
                fh.write("%.17g,%.17g,%.17g\n" % (xs[i], ys[j], values[i, j]))

    from .expansion import expand, score_pool

    scored = score_pool(model, emb, seed_aud)
    result = expand(scored, min(cfg.k, len(scored)), seed_aud)
    rows = emb.rows_for(np.asarray(result.audience))
    scatter_path = out / f"audience_scatter_class{seed_class}.csv"
    score_of = dict(result.ranked)
    with open(scatter_path, "w", encoding="ascii") as fh:
        fh.write("rank,id,x,y,score\n")
        for rank, (uid, row) in enumerate(zip(result.audience, rows), start=1):
            fh.write(
                "%d,%d,%.17g,%.17g,%.17g\n"
                % (rank, uid, emb.coords[row, 0], emb.coords[row, 1], score_of[uid])
            )
    return [train_path, grid_path, scatter_path]


def cmd_simulate(
    cfg: RunConfig, out_override=None, only_class=None, baseline_class=None
) -> int:
    from . import metrics as M
    from . import trees
    from .expansion import resolve_audience_size

    base, emb = _load_embedding_base(cfg)
    if base.labels is None:
        raise DataError("simulate needs labels in the embedding CSV")
    out = _out_dir(cfg, out_override)
    manifest = _Manifest("simulate", cfg, out)

    classes = cfg.class_list()
    if only_class is not None:
        classes = [only_class]
    params = trees.TreeParams(
        n_trees=cfg.trees,
        n_candidate_features=cfg.k_features or None,
        min_samples_split=cfg.min_samples_split,
        leaf_smoothing=cfg.leaf_smoothing,
    )
    exp_cfg = M.ExperimentConfig(
        n1=cfg.n1,
        n0=_effective_n0(cfg),
        k=resolve_audience_size(cfg.k, emb.n_points),
        strategy=cfg.strategy,
        repetitions=cfg.repetitions,
        classes=classes,
        rng_seed=cfg.seed,
        padding=cfg.padding,
        counter_class=cfg.counter_class if cfg.counter_class >= 0 else None,
        grid_resolution=cfg.grid_resolution,
        tree_params=params,
    )

    report = M.run_experiment(base, emb, exp_cfg)
    report_path = out / "report.csv"
    report_path.write_text(M.report_to_csv(report.rows), encoding="ascii")
    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(M.summary_dict(report), indent=2, sort_keys=True) + "\n"
    )
    manifest.add_output(report_path)
    manifest.add_output(summary_path)
    manifest.stage("experiment")
    print(f"mean_p_at_k={report.mean_p_at_k:.4f}")
    print(f"mean_r_at_k={report.mean_r_at_k:.4f}")

    extra = {
        "mean_p_at_k": report.mean_p_at_k,
        "mean_r_at_k": report.mean_r_at_k,
        "k_resolved": exp_cfg.k,
    }

    counter_cls = baseline_class
    if counter_cls is None and cfg.baseline_counter_class >= 0:
        counter_cls = cfg.baseline_counter_class
    if counter_cls is not None:
        if only_class is not None:
            seed_for_baseline = only_class
        elif cfg.baseline_seed_class >= 0:
            seed_for_baseline = cfg.baseline_seed_class
        else:
            seed_for_baseline = (classes or sorted(set(base.labels.tolist())))[0]
        baseline = M.baseline_comparison(
            base, emb, exp_cfg, seed_for_baseline, counter_cls
        )
        baseline_path = out / "baseline.csv"
        baseline_path.write_text(M.report_to_csv(baseline.rows), encoding="ascii")
        manifest.add_output(baseline_path)
        manifest.stage("baseline")
        by_strategy = {}
        for r in baseline.rows:
            by_strategy.setdefault(r.strategy, []).append(r.p_at_k)
        extra["baseline_mean_p_at_k"] = {
            s: sum(v) / len(v) for s, v in by_strategy.items()
        }

    ratios = cfg.ratio_list()
    if ratios:
        sweep = M.imbalance_sweep(base, emb, exp_cfg, ratios)
        sweep_path = out / "imbalance.csv"
        with open(sweep_path, "w", encoding="ascii") as fh:
            fh.write("class,repetition,ratio,n1,n0,region_count,p_at_k,r_at_k\n")
            for r in sweep.rows:
                fh.write(
                    "%d,%d,%.17g,%d,%d,%d,%.17g,%.17g\n"
                    % (
                        r.class_tag,
                        r.repetition,
                        r.ratio,
                        r.n1,
                        r.n0,
                        r.region_count,
                        r.p_at_k,
                        r.r_at_k,
                    )
                )
        manifest.add_output(sweep_path)
        manifest.stage("imbalance")

    fig_class = classes[0] if classes else int(base.labels.min())
    for p in _write_figure_data(out, base, emb, exp_cfg, fig_class):
        manifest.add_output(p)
    manifest.stage("figures")
    manifest.write(extra)
    return 0


def cmd_oracle(cfg: RunConfig, out_override=None) -> int:
    import numpy as np

    from . import oracle as O
    from . import synthetic, training, trees

    out = _out_dir(cfg, out_override)
    manifest = _Manifest("oracle", cfg, out)
    checks = []

    def check(name, ok, detail=""):
        checks.append({"name": name, "passed": bool(ok), "detail": detail})
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())

    normal_uniform = O.UnivariateScenario(
        f=O.NormalDensity(3.0, 1.0), g=O.UniformDensity(-6.0, 12.0)
    )
    normal_normal = O.UnivariateScenario(
        f=O.NormalDensity(3.0, 1.0), g=O.NormalDensity(1.0, 1.0)
    )
    probes = np.linspace(-5.5, 11.5, 211)

    for name, scenario in (
        ("normal_vs_uniform", normal_uniform),
        ("normal_vs_normal", normal_normal),
    ):
        swapped = scenario.swapped()
        sums_ok = all(
            O.analytic_posterior(x, scenario) + O.analytic_posterior(x, swapped)
            == 1.0
            for x in probes
        )
        check(f"{name}: posteriors sum to one exactly", sums_ok)

    post_u = [O.analytic_posterior(x, normal_uniform) for x in probes]
    peak = probes[int(np.argmax(post_u))]
    check(
        "uniform regime: posterior peaks at the seed mean",
        abs(peak - 3.0) < 0.1,
        f"peak at {peak:.3f}",
    )
    right = [O.analytic_posterior(x, normal_normal) for x in np.linspace(3, 11, 81)]
    check(
        "normal regime: posterior keeps growing right of the seed mean",
        all(b > a for a, b in zip(right, right[1:])),
    )

    roots = O.decision_thresholds(normal_uniform)
    expected = np.sqrt(2 * np.log(18.0 / np.sqrt(2 * np.pi)))
    ok = len(roots) == 2 and all(
        abs(r - e) < 1e-6 for r, e in zip(roots, [3 - expected, 3 + expected])
    )
    check(
        "normal-vs-uniform thresholds match the closed form",
        ok,
        f"roots={[round(r, 6) for r in roots]}",
    )

    # Classifier-vs-KDE rank agreement on the 2-D cluster fixture.
    seed_pts = synthetic.gaussian_cluster(250, (0.0, 0.0), 1.0, cfg.seed)
    box = training.BoundingBox(lows=[-4.0, -4.0], highs=[4.0, 4.0])
    negatives = training.sample_uniform_negatives(box, 250, cfg.seed)
    train = training.TrainingSet(
        points=np.vstack([seed_pts, negatives]),
        labels=np.concatenate([np.ones(250, dtype=int), np.zeros(250, dtype=int)]),
        n0=250,
        n1=250,
        strategy="uniform",
    )
    model = trees.fit(train, trees.TreeParams(), cfg.seed)
    kde = O.KdeOracle(
        centers=seed_pts,
        bandwidth=O.silverman_bandwidth(seed_pts),
        box=box,
    )
    gx, gy = np.meshgrid(
        np.linspace(box.lows[0], box.highs[0], 50),
        np.linspace(box.lows[1], box.highs[1], 40),
        indexing="ij",
    )
    probes_2d = np.column_stack([gx.ravel(), gy.ravel()])
    tree_scores = trees.predict_scores(model, probes_2d)
    kde_scores = O.kde_posterior(kde, probes_2d)
    agreement = O.rank_agreement(tree_scores, kde_scores)
    check(
        "classifier vs KDE rank agreement >= 0.9",
        agreement >= 0.9,
        f"spearman={agreement:.4f}",
    )

    grid_path = out / "oracle_probe_grid.csv"
    with open(grid_path, "w", encoding="ascii") as fh:
        fh.write("x,y,p1,kde_posterior\n")
        for p, t, kv in zip(probes_2d, tree_scores, kde_scores):
            fh.write("%.17g,%.17g,%.17g,%.17g\n" % (p[0], p[1], t, kv))
    manifest.add_output(grid_path)

    report_path = out / "oracle_report.json"
    report_path.write_text(json.dumps({"checks": checks}, indent=2) + "\n")
    manifest.add_output(report_path)
    all_ok = all(c["passed"] for c in checks)
    manifest.write({"all_passed": all_ok, "rank_agreement": float(agreement)})
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lookalike",
        description="Audience expansion by density estimation via classification.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=False, help="key=value config file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master RNG seed (overrides config)")
        p.add_argument("--threads", type=int, help="cap numeric thread pools")

    p_embed = sub.add_parser("embed", help="compute and persist the 2-D map")
    add_common(p_embed)

    p_expand = sub.add_parser("expand", help="score the pool and rank the audience")
    add_common(p_expand)
    p_expand.add_argument("--seed-file", required=True, help="newline-delimited ids")
    p_expand.add_argument("--m", required=True, help="audience size (count or N%%)")

    p_sim = sub.add_parser("simulate", help="repeated expansion experiment")
    add_common(p_sim)
    p_sim.add_argument("--only-class", type=int, default=None)
    p_sim.add_argument("--baseline-class", type=int, default=None)

    p_oracle = sub.add_parser("oracle", help="analytic and KDE validation checks")
    add_common(p_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            _limit_threads(args.threads)
        if args.command == "embed":
            return cmd_embed(cfg, args.out)
        if args.command == "expand":
            return cmd_expand(cfg, args.seed_file, args.m, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.only_class, args.baseline_class)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


def _limit_threads(n: int) -> None:
    import threadpoolctl

    threadpoolctl.threadpool_limits(max(1, n))
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
