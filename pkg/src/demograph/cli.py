"""Command-line entry points.

Exit codes: 0 on success, 1 on validation/config errors (including bad
flags), 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, embed, lpfeatures, synth
from .errors import ConfigError, ValidationError
from .graph import (load_directed_edges, load_edge_list, write_edge_list,
                    write_node_map)
from .labelprop import (PropagationConfig, propagate,
                        read_node_vectors, read_seed_labels, write_label_state)
from .model import (FeatureMatrix, SplitSpec, TrainHyper, evaluate,
                    join_features, predict, split)
from .pipeline import (ExperimentGrid, PipelineConfig, derive_seed,
                       format_metrics_table, format_pivot, read_labels,
                       run_pipeline, run_sensitivity, write_sensitivity_csv)


class _UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage problems map to exit code 1."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_version(parser):
    parser.add_argument("--version", action="version",
                        version=f"demograph {__version__}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="demograph",
                     description="Demographic inference over following graphs")
    _add_version(parser)
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser)

    p = sub.add_parser("ingest",
                       help="load, filter, and canonicalize an edge list")
    _add_version(p)
    p.add_argument("--edges", required=True)
    p.add_argument("--min-degree", type=int, default=0,
                   help="drop nodes following fewer than this many others")
    p.add_argument("--no-symmetrize", action="store_true",
                   help="require the file to already list both directions")
    p.add_argument("--out-edges")
    p.add_argument("--out-nodes")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("propagate",
                       help="run label propagation and write node scores")
    _add_version(p)
    p.add_argument("--graph", required=True, help="edge-list file")
    p.add_argument("--seeds", required=True)
    p.add_argument("--strategy", choices=("alpha", "beta", "gamma"),
                   default="alpha")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--classes", type=int, choices=(1, 7), default=1)
    p.add_argument("--ages", action="store_true",
                   help="seed file holds raw ages, not bucket indices")
    p.add_argument("--min-degree", type=int, default=0)
    p.add_argument("--emit-inactive", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_propagate)

    p = sub.add_parser("lp-features",
                       help="ensemble propagation features over seed partitions")
    _add_version(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--seeds", required=True)
    p.add_argument("--splits", type=int, default=3)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--classes", type=int, choices=(1, 7), default=1)
    p.add_argument("--ages", action="store_true")
    p.add_argument("--min-degree", type=int, default=0)
    p.add_argument("--no-presence", action="store_true",
                   help="omit the presence indicator columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lp_features)

    p = sub.add_parser("sentences",
                       help="emit one neighbor sentence per node")
    _add_version(p)
    p.add_argument("--edges", required=True)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--bidirectional", action="store_true",
                   help="include followers as well as followed nodes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sentences)

    p = sub.add_parser("embed",
                       help="train word2vec vectors on a sentence corpus")
    _add_version(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("skipgram", "cbow"), default="skipgram")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--rate", type=float, default=0.025)
    p.add_argument("--subsample", type=float, default=0.0)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("coldstart",
                       help="fill missing embeddings by neighbor averaging")
    _add_version(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--min-degree", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_coldstart)

    p = sub.add_parser("synth",
                       help="generate a planted-partition dataset")
    _add_version(p)
    p.add_argument("--classes", type=int, choices=(2, 7), default=2)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--reveal", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--allow-antihomophily", action="store_true")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train",
                       help="train a classifier on joined feature blocks")
    _add_version(p)
    p.add_argument("--features", required=True,
                   help="comma-separated feature CSV paths")
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=("gender", "age"), default="gender")
    p.add_argument("--ages", action="store_true")
    p.add_argument("--model", choices=("lr", "mlp"), default="lr")
    p.add_argument("--hidden", default="256,256,256")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--minibatch", type=int, default=3000)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--balance", action="store_true")
    p.add_argument("--split", choices=("hash", "random"), default="hash")
    p.add_argument("--train-frac", type=float, default=None)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--predictions-out",
                   help="write test-side predictions as <name>\\t<p0,..>")
    p.add_argument("--metrics-out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval",
                       help="score predictions against truth labels")
    _add_version(p)
    p.add_argument("--predictions", required=True,
                   help="<name>\\t<v0[,v1..]> rows, e.g. propagate output")
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=("gender", "age"), default="gender")
    p.add_argument("--ages", action="store_true")
    p.add_argument("--metrics-out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline",
                       help="run ingest -> features -> train -> eval per regime")
    _add_version(p)
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("sensitivity",
                       help="propagation quality over a strategy/param/K grid")
    _add_version(p)
    p.add_argument("--edges", required=True)
    p.add_argument("--truth", required=True, help="full labels for evaluation")
    p.add_argument("--seeds", help="fixed revealed labels")
    p.add_argument("--reveal", type=float,
                   help="sample this seed fraction per repetition instead")
    p.add_argument("--strategies", default="alpha")
    p.add_argument("--alphas", default="0.2,0.5,0.8")
    p.add_argument("--betas", default="0.8")
    p.add_argument("--gammas", default="0.9")
    p.add_argument("--ks", default="1,2,3,4,5,6,7,8,9,10")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--workers", type=int, default=1,
                   help="run grid cells in this many threads")
    p.add_argument("--min-degree", type=int, default=0)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sensitivity)
    return parser


# ---------------------------------------------------------------------------
# Command bodies
# ---------------------------------------------------------------------------

def _cmd_ingest(args):
    g = load_edge_list(args.edges, min_degree=args.min_degree,
                       symmetrize=not args.no_symmetrize)
    if args.out_edges:
        write_edge_list(g, args.out_edges)
    if args.out_nodes:
        write_node_map(g, args.out_nodes)
    print(f"nodes={g.node_count} edges={g.edge_count} "
          f"mean_degree={2 * g.edge_count / max(1, g.node_count):.3f}")


def _cmd_propagate(args):
    g = load_edge_list(args.graph, min_degree=args.min_degree)
    seeds = read_seed_labels(args.seeds, g, num_classes=args.classes,
                             ages=args.ages)
    cfg = PropagationConfig(strategy=args.strategy, alpha=args.alpha,
                            beta=args.beta, gamma=args.gamma,
                            iterations=args.iters)
    state = propagate(g, seeds, cfg)
    write_label_state(args.out, g, state, emit_inactive=args.emit_inactive)
    print(f"coverage={state.coverage:.6f} seeds={state.seed_count} "
          f"nodes={g.node_count}")


def _cmd_lp_features(args):
    g = load_edge_list(args.graph, min_degree=args.min_degree)
    seeds = read_seed_labels(args.seeds, g, num_classes=args.classes,
                             ages=args.ages)
    plan = lpfeatures.make_partitions(np.flatnonzero(seeds.is_seed),
                                      args.splits, args.rng_seed)
    cfg = PropagationConfig(alpha=args.alpha, iterations=args.iters)
    block = lpfeatures.lp_features(g, seeds, plan, cfg)
    lpfeatures.write_lp_csv(block, g, args.out,
                            include_presence=not args.no_presence)
    print(f"wrote {block.node_count} rows x {args.splits} runs to {args.out}")


def _cmd_sentences(args):
    directed = load_directed_edges(args.edges)
    sentences = embed.build_sentences(directed, args.rng_seed,
                                      bidirectional=args.bidirectional)
    embed.write_corpus(sentences, args.out)
    print(f"wrote {len(sentences)} sentences to {args.out}")


def _cmd_embed(args):
    corpus = embed.read_corpus(args.corpus)
    cfg = embed.TrainConfig(mode=args.mode, dim=args.dim, window=args.window,
                            negatives=args.negatives, rate=args.rate,
                            epochs=args.epochs, min_count=args.min_count,
                            subsample=args.subsample, rng_seed=args.rng_seed)
    table = embed.train_embeddings(corpus, cfg)
    table.save(args.out)
    print(f"trained {len(table)} vectors of dim {table.dim}")


def _cmd_coldstart(args):
    g = load_edge_list(args.graph, min_degree=args.min_degree)
    table = embed.EmbeddingTable.load(args.embeddings)
    filled = embed.fill_missing_embeddings(g, table)
    filled.save(args.out)
    print(f"filled {len(filled) - len(table)} nodes by neighbor averaging")


def _cmd_synth(args):
    spec = synth.PlantedGraphSpec(
        per_class=args.per_class, classes=args.classes, p=args.p, q=args.q,
        reveal=args.reveal, noise=args.noise, rng_seed=args.rng_seed,
        allow_antihomophily=args.allow_antihomophily)
    data = synth.generate(spec)
    paths = synth.write_outputs(data, args.out_dir)
    print(f"nodes={data.node_count} edges={len(data.edges)} "
          f"seeds={len(data.seed_indices)} -> {args.out_dir}")
    return paths


def _cmd_train(args):
    paths = [p for p in args.features.split(",") if p]
    blocks = {}
    for path in paths:
        name = Path(path).stem
        if name in blocks:
            raise ConfigError(f"two feature files share the name {name!r}")
        blocks[name] = FeatureMatrix.from_csv(path)
    features = join_features(blocks) if len(blocks) > 1 else next(iter(blocks.values()))
    labels = read_labels(args.labels, args.task, args.ages)
    labeled = [n for n in labels if n in features]
    if not labeled:
        raise ConfigError("no labeled node has features")
    spec = SplitSpec(mode=args.split, train_fraction=args.train_frac,
                     rng_seed=args.rng_seed)
    train_names, test_names = split(labeled, spec)
    if not train_names or not test_names:
        raise ConfigError("split produced an empty train or test side")
    n_classes = 2 if args.task == "gender" else 7
    y_train = np.array([labels[n] for n in train_names])
    y_test = np.array([labels[n] for n in test_names])
    x_train = features.rows_for(train_names)
    x_test = features.rows_for(test_names)
    hyper = TrainHyper(rate=args.rate, epochs=args.epochs,
                       minibatch=args.minibatch, l2=args.l2,
                       rng_seed=args.rng_seed)
    if args.balance:
        from .model import balance_classes
        keep = balance_classes(y_train, np.random.default_rng(
            derive_seed(args.rng_seed, "balance")))
        x_train, y_train = x_train[keep], y_train[keep]
    if args.model == "mlp":
        from .model import train_mlp
        hidden = [int(h) for h in args.hidden.split(",") if h]
        params = train_mlp(x_train, y_train, hidden, n_classes=n_classes,
                           hyper=hyper)
    elif n_classes == 2:
        from .model import train_logistic
        params = train_logistic(x_train, y_train, hyper)
    else:
        from .model import train_softmax
        params = train_softmax(x_train, y_train, n_classes, hyper)
    probs = predict(params, x_test)
    metrics = evaluate(probs, y_test)
    if args.predictions_out:
        with open(args.predictions_out, "w", encoding="utf-8") as fh:
            for name, row in zip(test_names, probs):
                fh.write(name + "\t" + ",".join(f"{x:.17g}" for x in row) + "\n")
    _emit_metrics(metrics, args.metrics_out,
                  extra={"n_train": len(train_names), "n_test": len(test_names)})


def _cmd_eval(args):
    predictions = read_node_vectors(args.predictions)
    labels = read_labels(args.labels, args.task, args.ages)
    common = [n for n in labels if n in predictions]
    if not common:
        raise ConfigError("no prediction matches a labeled node")
    widths = {len(predictions[n]) for n in common}
    if len(widths) != 1:
        raise ValidationError(f"inconsistent prediction widths: {sorted(widths)}")
    probs = np.stack([predictions[n] for n in common])
    truth = np.array([labels[n] for n in common])
    _emit_metrics(evaluate(probs, truth), args.metrics_out,
                  extra={"n_eval": len(common)})


def _emit_metrics(metrics: dict, out_path, extra: dict | None = None):
    record = dict(metrics)
    if extra:
        record.update(extra)
    line = json.dumps(record, sort_keys=True)
    print(line)
    auc = "-" if metrics.get("auc") is None else f"{metrics['auc']:.4f}"
    print(f"{'auc':<15}{auc}")
    print(f"{'accuracy':<15}{metrics['accuracy']:.4f}")
    print(f"{'cross_entropy':<15}{metrics['cross_entropy']:.4f}")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _cmd_pipeline(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    cfg = PipelineConfig.from_file(args.config, overrides)
    records = run_pipeline(cfg)
    for record in records:
        print(json.dumps(record, sort_keys=True))
    print(format_metrics_table(records))


def _cmd_sensitivity(args):
    if not args.seeds and args.reveal is None:
        raise ConfigError("pass --seeds or --reveal")
    g = load_edge_list(args.edges, min_degree=args.min_degree)
    truth_map = read_labels(args.truth, "gender", False)
    truth = np.full(g.node_count, -1, dtype=np.int64)
    for name, value in truth_map.items():
        if name in g:
            truth[g.index_of(name)] = value
    seeds = None
    if args.seeds:
        seeds = read_seed_labels(args.seeds, g, num_classes=1)
    grid = ExperimentGrid(
        strategies=[s for s in args.strategies.split(",") if s],
        alphas=[float(x) for x in args.alphas.split(",") if x],
        betas=[float(x) for x in args.betas.split(",") if x],
        gammas=[float(x) for x in args.gammas.split(",") if x],
        ks=[int(x) for x in args.ks.split(",") if x],
        repetitions=args.reps, rng_seed=args.rng_seed)
    rows = run_sensitivity(g, truth, grid, seeds=seeds, reveal=args.reveal,
                           workers=args.workers)
    write_sensitivity_csv(rows, args.out)
    print(format_pivot(rows))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        args.func(args)
        return 0
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        print("run 'demograph --help' for usage", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc.filename}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 2
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
