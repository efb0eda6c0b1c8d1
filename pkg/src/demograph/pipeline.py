"""End-to-end runs and the sensitivity-grid experiment runner.

All randomness in a run flows from one root seed: every stage derives its
own seed as ``fnv1a64("<root>:<stage name>")`` truncated to 63 bits, so
stages are independently reproducible and a rerun with the same config is
byte-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embed, lpfeatures
from .errors import ConfigError, ValidationError
from .graph import Graph, load_directed_edges, load_edge_list
from .labelprop import LabelState, PropagationConfig, propagate_trace
from .model import (FeatureMatrix, ModelParams, SplitSpec, TrainHyper,
                    auc_rank, balance_classes, evaluate, fnv1a64,
                    join_features, predict, split, train_logistic, train_mlp,
                    train_softmax)

__all__ = [
    "ExperimentGrid",
    "PipelineConfig",
    "derive_seed",
    "format_metrics_table",
    "format_pivot",
    "read_labels",
    "run_pipeline",
    "run_sensitivity",
    "write_sensitivity_csv",
]

logger = logging.getLogger(__name__)


def derive_seed(root_seed: int, stage: str) -> int:
    """Stage-specific RNG seed derived from the run's root seed."""
    return fnv1a64(f"{root_seed}:{stage}") & (2 ** 63 - 1)


# ---------------------------------------------------------------------------
# Sensitivity grids
# ---------------------------------------------------------------------------

@dataclass
class ExperimentGrid:
    """Cross-product of strategies, their parameter values, and superstep
    counts, with optional repetitions over re-sampled seed reveals."""

    strategies: list[str] = field(default_factory=lambda: ["alpha"])
    alphas: list[float] = field(default_factory=lambda: [0.2, 0.5, 0.8])
    betas: list[float] = field(default_factory=lambda: [0.8])
    gammas: list[float] = field(default_factory=lambda: [0.9])
    ks: list[int] = field(default_factory=lambda: list(range(1, 11)))
    repetitions: int = 1
    rng_seed: int = 0

    def params_for(self, strategy: str) -> list[float]:
        return {"alpha": self.alphas, "beta": self.betas,
                "gamma": self.gammas}[strategy]

    def validate(self) -> None:
        if not self.strategies:
            raise ConfigError("grid needs at least one strategy")
        for s in self.strategies:
            if s not in ("alpha", "beta", "gamma"):
                raise ConfigError(f"unknown strategy {s!r}")
            if not self.params_for(s):
                raise ConfigError(f"no parameter values for strategy {s!r}")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    def cells(self) -> list[tuple[str, float]]:
        return [(s, p) for s in self.strategies for p in self.params_for(s)]


def _sample_reveal(truth: np.ndarray, reveal: float,
                   seed: int) -> LabelState:
    labeled = np.flatnonzero(truth >= 0)
    if labeled.size == 0:
        raise ConfigError("truth labels are empty; nothing to reveal")
    count = max(1, int(round(reveal * labeled.size)))
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.permutation(labeled)[:count])
    return LabelState.from_seed_values(len(truth), picked,
                                       truth[picked].astype(np.float64))


def _run_cell(g: Graph, truth: np.ndarray, grid: ExperimentGrid,
              seeds: LabelState | None, reveal: float | None,
              strategy: str, param: float, rep: int) -> list[dict]:
    if seeds is not None:
        rep_seeds = seeds
    else:
        rep_seeds = _sample_reveal(
            truth, reveal, derive_seed(grid.rng_seed, f"reveal-{rep}"))
    cfg = PropagationConfig(strategy=strategy, alpha=param, beta=param,
                            gamma=param, iterations=max(grid.ks))
    base = {"strategy": strategy, "param": param, "rep": rep}
    try:
        snapshots = propagate_trace(g, rep_seeds, cfg, grid.ks)
    except Exception as exc:  # record and continue with the rest of the grid
        return [{**base, "iterations": k, "auc": None, "coverage": None,
                 "error": str(exc)} for k in sorted(grid.ks)]
    hidden_pool = (truth >= 0) & ~rep_seeds.is_seed
    rows = []
    for k in sorted(grid.ks):
        state = snapshots[k]
        row = {**base, "iterations": k, "auc": None,
               "coverage": state.coverage, "error": ""}
        try:
            scores = np.where(state.is_active, state.values[:, 0], 0.5)
            row["auc"] = auc_rank(scores[hidden_pool], truth[hidden_pool] == 1)
        except Exception as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def run_sensitivity(g: Graph, truth: np.ndarray, grid: ExperimentGrid,
                    seeds: LabelState | None = None,
                    reveal: float | None = None,
                    workers: int = 1) -> list[dict]:
    """Evaluate every grid cell on the labels withheld from the seeds.

    ``truth`` is a per-node array of binary labels with -1 for unknown.
    Pass fixed ``seeds``, or a ``reveal`` fraction to sample a fresh seed
    set per repetition.  AUC is computed over every hidden labeled node;
    nodes the propagation never reached score the maximum-entropy 0.5, so
    low coverage shows up as tie mass rather than a shrunken test set.
    Cell failures are recorded in the row's ``error`` field and the run
    continues.  Cells are independent; ``workers`` > 1 runs them in a
    thread pool, and rows always come out in canonical order (strategy,
    parameter, repetition, iterations) regardless of completion order.
    """
    grid.validate()
    truth = np.asarray(truth, dtype=np.int64)
    if len(truth) != g.node_count:
        raise ValidationError("truth array does not match the graph")
    if seeds is None and reveal is None:
        raise ConfigError("need either fixed seeds or a reveal fraction")
    if seeds is not None and not seeds.is_seed.any():
        raise ConfigError("seed state has no seeds")
    cells = [(strategy, param, rep) for strategy, param in grid.cells()
             for rep in range(grid.repetitions)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda cell: _run_cell(g, truth, grid, seeds, reveal, *cell),
                cells))
    else:
        results = [_run_cell(g, truth, grid, seeds, reveal, *cell)
                   for cell in cells]
    return [row for cell_rows in results for row in cell_rows]


def write_sensitivity_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("strategy,param,iterations,rep,auc,coverage,error\n")
        for r in rows:
            auc = "" if r["auc"] is None else f"{r['auc']:.17g}"
            cov = "" if r["coverage"] is None else f"{r['coverage']:.17g}"
            fh.write(f"{r['strategy']},{r['param']:g},{r['iterations']},"
                     f"{r['rep']},{auc},{cov},{r['error']}\n")


def format_pivot(rows: list[dict]) -> str:
    """Text table: one row per (strategy, parameter), one column per K.

    Repetitions are averaged; failed cells render as ``-``.
    """
    ks = sorted({r["iterations"] for r in rows})
    groups: dict[tuple[str, float], dict[int, list[float]]] = {}
    for r in rows:
        cell = groups.setdefault((r["strategy"], r["param"]), {})
        if r["auc"] is not None:
            cell.setdefault(r["iterations"], []).append(r["auc"])
    header = f"{'strategy':<10}{'param':>8} | " + " ".join(f"K={k:<5d}" for k in ks)
    lines = [header, "-" * len(header)]
    for (strategy, param) in sorted(groups):
        cells = []
        for k in ks:
            vals = groups[(strategy, param)].get(k)
            cells.append(f"{np.mean(vals):7.4f}" if vals else f"{'-':>7}")
        lines.append(f"{strategy:<10}{param:>8g} | " + " ".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

_CONFIG_DEFAULTS = {
    "edges": None, "labels": None, "cumf": None, "out": None,
    "task": "gender", "ages": "0", "regimes": "all",
    "model": "lr", "hidden": "256,256,256", "epochs": "4",
    "minibatch": "3000", "rate": "0.1", "l2": "0.0", "balance": "0",
    "split": "hash", "train_frac": "", "root_seed": "0", "min_degree": "0",
    "lp_splits": "3", "lp_alpha": "0.3", "lp_iters": "3",
    "emb_mode": "skipgram", "emb_dim": "50", "emb_window": "",
    "emb_epochs": "5", "emb_negatives": "5", "emb_min_count": "5",
    "emb_rate": "0.025", "emb_bidirectional": "0",
}

_KNOWN_BLOCKS = ("cumf", "lp", "emb")


@dataclass
class PipelineConfig:
    """Flat key=value run configuration; see ``_CONFIG_DEFAULTS`` for keys."""

    settings: dict[str, str]

    @classmethod
    def from_file(cls, path, overrides: dict[str, str] | None = None
                  ) -> "PipelineConfig":
        settings = dict(_CONFIG_DEFAULTS)
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{line_no}: expected key=value")
                key, _, value = stripped.partition("=")
                key, value = key.strip(), value.strip()
                if key not in settings:
                    raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
                settings[key] = value
        for key, value in (overrides or {}).items():
            if key not in settings:
                raise ConfigError(f"override names unknown key {key!r}")
            settings[key] = value
        return cls(settings)

    @classmethod
    def from_settings(cls, **kwargs: str) -> "PipelineConfig":
        settings = dict(_CONFIG_DEFAULTS)
        for key, value in kwargs.items():
            if key not in settings:
                raise ConfigError(f"unknown config key {key!r}")
            settings[key] = str(value)
        return cls(settings)

    def __getitem__(self, key: str) -> str:
        return self.settings[key]

    def flag(self, key: str) -> bool:
        return self.settings[key] in ("1", "true", "yes", "on")

    def regimes(self) -> list[str]:
        return [r.strip() for r in self["regimes"].split(",") if r.strip()]

    def regime_blocks(self, regime: str) -> list[str]:
        if regime == "all":
            return list(_KNOWN_BLOCKS)
        blocks = regime.split("+")
        for b in blocks:
            if b not in _KNOWN_BLOCKS:
                raise ConfigError(f"unknown feature block {b!r} in regime "
                                  f"{regime!r}")
        return blocks

    def check_inputs(self) -> None:
        required = {"edges": self["edges"], "labels": self["labels"]}
        if any("cumf" in self.regime_blocks(r) for r in self.regimes()):
            required["cumf"] = self["cumf"]
        missing = [key for key, value in required.items() if not value]
        if missing:
            raise ConfigError(f"config is missing required keys: {missing}")
        absent = [value for value in required.values()
                  if value and not Path(value).exists()]
        if absent:
            raise ConfigError(f"input files do not exist: {absent}")


def read_labels(path, task: str = "gender", ages: bool = False) -> dict[str, int]:
    """Read ``<name><TAB><label>`` truth files as name -> class index."""
    from .labelprop import age_bucket
    labels: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 2:
                raise ValidationError(
                    f"{path}:{line_no}: expected 2 tokens, got {len(tokens)}")
            name, raw = tokens
            if name in labels:
                continue
            try:
                value = int(float(raw))
            except ValueError as exc:
                raise ValidationError(
                    f"{path}:{line_no}: bad label {raw!r}") from exc
            if task == "gender":
                if value not in (0, 1):
                    raise ValidationError(
                        f"{path}:{line_no}: gender label must be 0 or 1")
            else:
                value = age_bucket(value) if ages else value
                if not 0 <= value < 7:
                    raise ValidationError(
                        f"{path}:{line_no}: age bucket must lie in [0, 7)")
            labels[name] = value
    if not labels:
        raise ConfigError(f"{path}: no labels found")
    return labels


def _lp_block(cfg: PipelineConfig, g: Graph, labels: dict[str, int],
              train_names: list[str], n_classes: int,
              root: int) -> FeatureMatrix:
    from .labelprop import LabelState
    train_in_graph = [n for n in train_names if n in g]
    if not train_in_graph:
        raise ConfigError("no training labels fall inside the graph")
    idx = [g.index_of(n) for n in train_in_graph]
    if n_classes == 1:
        seeds = LabelState.from_seed_values(
            g.node_count, idx, [float(labels[n]) for n in train_in_graph])
    else:
        seeds = LabelState.from_seed_classes(
            g.node_count, idx, [labels[n] for n in train_in_graph],
            num_classes=n_classes)
    plan = lpfeatures.make_partitions(idx, int(cfg["lp_splits"]),
                                      derive_seed(root, "lp-partitions"))
    prop_cfg = PropagationConfig(alpha=float(cfg["lp_alpha"]),
                                 iterations=int(cfg["lp_iters"]))
    block = lpfeatures.lp_features(g, seeds, plan, prop_cfg)
    values = np.hstack([block.imputed(), block.present.astype(np.float64)])
    columns = block.column_names() + block.presence_names()
    return FeatureMatrix(list(g.names), columns, values)


def _emb_block(cfg: PipelineConfig, g: Graph, edges_path,
               root: int) -> FeatureMatrix:
    directed = load_directed_edges(edges_path)
    sentences = embed.build_sentences(directed, derive_seed(root, "sentences"),
                                      bidirectional=cfg.flag("emb_bidirectional"))
    window = int(cfg["emb_window"]) if cfg["emb_window"] else None
    train_cfg = embed.TrainConfig(
        mode=cfg["emb_mode"], dim=int(cfg["emb_dim"]), window=window,
        negatives=int(cfg["emb_negatives"]), rate=float(cfg["emb_rate"]),
        epochs=int(cfg["emb_epochs"]), min_count=int(cfg["emb_min_count"]),
        rng_seed=derive_seed(root, "embed"))
    table = embed.train_embeddings(sentences, train_cfg)
    table = embed.fill_missing_embeddings(g, table)
    nodes = [t for t in table.tokens if t in g]
    rows = np.stack([table.get(t) for t in nodes]) if nodes else np.zeros((0, table.dim))
    columns = [f"emb_{i}" for i in range(table.dim)]
    return FeatureMatrix(nodes, columns, rows)


def _train_model(cfg: PipelineConfig, x: np.ndarray, y: np.ndarray,
                 n_classes: int, seed: int) -> ModelParams:
    hyper = TrainHyper(rate=float(cfg["rate"]), epochs=int(cfg["epochs"]),
                       minibatch=int(cfg["minibatch"]), l2=float(cfg["l2"]),
                       rng_seed=seed)
    if cfg.flag("balance"):
        keep = balance_classes(y, np.random.default_rng(
            derive_seed(seed, "balance")))
        x, y = x[keep], y[keep]
    if cfg["model"] == "mlp":
        hidden = [int(h) for h in cfg["hidden"].split(",") if h]
        return train_mlp(x, y, hidden, n_classes=n_classes, hyper=hyper)
    if cfg["model"] != "lr":
        raise ConfigError(f"unknown model {cfg['model']!r}")
    if n_classes == 2:
        return train_logistic(x, y, hyper)
    return train_softmax(x, y, n_classes, hyper)


def run_pipeline(cfg: PipelineConfig) -> list[dict]:
    """Ingest, feature generation, training, and evaluation per regime.

    Returns one metrics record per regime; writes them as JSON lines when
    the config names an ``out`` path.  Identical config and root seed give
    byte-identical reports.
    """
    cfg.check_inputs()
    root = int(cfg["root_seed"])
    task = cfg["task"]
    if task not in ("gender", "age"):
        raise ConfigError(f"unknown task {task!r}")
    n_classes = 2 if task == "gender" else 7
    g = load_edge_list(cfg["edges"], min_degree=int(cfg["min_degree"]))
    labels = read_labels(cfg["labels"], task, cfg.flag("ages"))

    spec = SplitSpec(mode=cfg["split"],
                     train_fraction=(float(cfg["train_frac"])
                                     if cfg["train_frac"] else None),
                     rng_seed=derive_seed(root, "split"))
    train_names, test_names = split(list(labels), spec)

    needed = {b for r in cfg.regimes() for b in cfg.regime_blocks(r)}
    blocks: dict[str, FeatureMatrix] = {}
    if "cumf" in needed:
        blocks["cumf"] = FeatureMatrix.from_csv(cfg["cumf"])
    if "lp" in needed:
        lp_classes = 1 if task == "gender" else 7
        blocks["lp"] = _lp_block(cfg, g, labels, train_names, lp_classes, root)
    if "emb" in needed:
        blocks["emb"] = _emb_block(cfg, g, cfg["edges"], root)

    records = []
    for regime in cfg.regimes():
        features = join_features({b: blocks[b] for b in cfg.regime_blocks(regime)})
        train_rows = [n for n in train_names if n in features]
        test_rows = [n for n in test_names if n in features]
        if not train_rows or not test_rows:
            raise ConfigError(f"regime {regime!r}: empty train or test side "
                              "after joining features")
        x_train = features.rows_for(train_rows)
        y_train = np.array([labels[n] for n in train_rows])
        x_test = features.rows_for(test_rows)
        y_test = np.array([labels[n] for n in test_rows])
        params = _train_model(cfg, x_train, y_train, n_classes,
                              derive_seed(root, f"train:{regime}"))
        metrics = evaluate(predict(params, x_test), y_test)
        records.append({"regime": regime, "n_train": len(train_rows),
                        "n_test": len(test_rows), **metrics})

    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return records


def format_metrics_table(records: list[dict]) -> str:
    header = (f"{'regime':<12}{'n_train':>9}{'n_test':>8}{'auc':>10}"
              f"{'accuracy':>10}{'cross_entropy':>15}")
    lines = [header, "-" * len(header)]
    for r in records:
        auc = "-" if r.get("auc") is None else f"{r['auc']:.4f}"
        lines.append(f"{r['regime']:<12}{r['n_train']:>9}{r['n_test']:>8}"
                     f"{auc:>10}{r['accuracy']:>10.4f}"
                     f"{r['cross_entropy']:>15.4f}")
    return "\n".join(lines)
