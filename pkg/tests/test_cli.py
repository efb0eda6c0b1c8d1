"""Exercises every subcommand through main() and checks exit codes."""

from __future__ import annotations

import json

import pytest

from demograph.cli import main
from demograph.labelprop import read_node_vectors
from demograph.model import FeatureMatrix

SUBCOMMANDS = ["ingest", "propagate", "lp-features", "sentences", "embed",
               "coldstart", "synth", "train", "eval", "pipeline",
               "sensitivity"]


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    code = run(["synth", "--per-class", "80", "--p", "0.08", "--q", "0.008",
                "--reveal", "0.3", "--noise", "1.0", "--rng-seed", "4",
                "--out-dir", str(root)])
    assert code == 0
    return root


class TestHelpAndVersion:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
        assert "demograph" in capsys.readouterr().out

    @pytest.mark.parametrize("sub", SUBCOMMANDS)
    def test_every_subcommand_has_help_and_version(self, sub, capsys):
        with pytest.raises(SystemExit) as exc:
            run([sub, "--help"])
        assert exc.value.code == 0
        assert sub in capsys.readouterr().out
        with pytest.raises(SystemExit) as exc:
            run([sub, "--version"])
        assert exc.value.code == 0

    def test_unknown_subcommand_exits_1(self, capsys):
        assert run(["frobnicate"]) == 1

    def test_bad_flag_exits_1(self):
        assert run(["propagate", "--no-such-flag"]) == 1


class TestIngest(object):
    def test_ingest_writes_canonical_outputs(self, dataset, tmp_path, capsys):
        out_edges = tmp_path / "canon.tsv"
        out_nodes = tmp_path / "nodes.tsv"
        code = run(["ingest", "--edges", str(dataset / "edges.tsv"),
                    "--out-edges", str(out_edges),
                    "--out-nodes", str(out_nodes)])
        assert code == 0
        assert "nodes=" in capsys.readouterr().out
        assert out_edges.exists() and out_nodes.exists()

    def test_missing_file_exits_1(self):
        assert run(["ingest", "--edges", "/nonexistent/e.tsv"]) == 1


class TestPropagateAndEval:
    def test_propagate_then_eval(self, dataset, tmp_path, capsys):
        preds = tmp_path / "preds.tsv"
        code = run(["propagate", "--graph", str(dataset / "edges.tsv"),
                    "--seeds", str(dataset / "seeds.tsv"),
                    "--alpha", "0.3", "--iters", "3", "--out", str(preds)])
        assert code == 0
        assert "coverage=" in capsys.readouterr().out
        code = run(["eval", "--predictions", str(preds),
                    "--labels", str(dataset / "truth.tsv")])
        assert code == 0
        record = json.loads(capsys.readouterr().out.splitlines()[0])
        assert record["auc"] > 0.8

    def test_gamma_strategy_via_cli(self, dataset, tmp_path):
        preds = tmp_path / "preds.tsv"
        code = run(["propagate", "--graph", str(dataset / "edges.tsv"),
                    "--seeds", str(dataset / "seeds.tsv"),
                    "--strategy", "gamma", "--gamma", "0.9", "--iters", "2",
                    "--out", str(preds)])
        assert code == 0
        values = read_node_vectors(preds)
        assert all(0.0 <= v[0] <= 1.0 for v in values.values())

    def test_invalid_iterations_exit_1(self, dataset, tmp_path):
        assert run(["propagate", "--graph", str(dataset / "edges.tsv"),
                    "--seeds", str(dataset / "seeds.tsv"),
                    "--iters", "0", "--out", str(tmp_path / "x.tsv")]) == 1

    def test_emit_inactive_sentinel(self, tmp_path):
        edges = tmp_path / "e.tsv"
        edges.write_text("a\tb\nx\ty\n")
        seeds = tmp_path / "s.tsv"
        seeds.write_text("a\t1\n")
        out = tmp_path / "o.tsv"
        assert run(["propagate", "--graph", str(edges), "--seeds", str(seeds),
                    "--iters", "1", "--emit-inactive", "--out", str(out)]) == 0
        lines = dict(line.split("\t") for line in out.read_text().splitlines())
        assert lines["x"] == "nan" and lines["y"] == "nan"


class TestFeatureCommands:
    def test_lp_features_csv(self, dataset, tmp_path):
        out = tmp_path / "lp.csv"
        code = run(["lp-features", "--graph", str(dataset / "edges.tsv"),
                    "--seeds", str(dataset / "seeds.tsv"),
                    "--splits", "3", "--rng-seed", "1", "--iters", "3",
                    "--alpha", "0.3", "--out", str(out)])
        assert code == 0
        fm = FeatureMatrix.from_csv(out)
        assert fm.columns[:3] == ["lp_0", "lp_1", "lp_2"]

    def test_sentences_embed_coldstart_chain(self, dataset, tmp_path):
        corpus = tmp_path / "corpus.txt"
        emb = tmp_path / "emb.txt"
        filled = tmp_path / "emb_filled.txt"
        assert run(["sentences", "--edges", str(dataset / "edges.tsv"),
                    "--rng-seed", "2", "--bidirectional",
                    "--out", str(corpus)]) == 0
        assert run(["embed", "--corpus", str(corpus), "--dim", "8",
                    "--window", "3", "--min-count", "1", "--epochs", "1",
                    "--negatives", "3", "--rng-seed", "2",
                    "--out", str(emb)]) == 0
        assert run(["coldstart", "--graph", str(dataset / "edges.tsv"),
                    "--embeddings", str(emb), "--out", str(filled)]) == 0
        header = filled.read_text().splitlines()[0]
        count, dim = header.split()
        assert int(dim) == 8 and int(count) >= 1

    def test_embed_rejects_empty_vocab(self, tmp_path):
        corpus = tmp_path / "corpus.txt"
        corpus.write_text("a b\n")
        assert run(["embed", "--corpus", str(corpus), "--min-count", "5",
                    "--out", str(tmp_path / "e.txt")]) == 1


class TestTrain:
    def test_train_on_cumf_with_predictions(self, dataset, tmp_path, capsys):
        preds = tmp_path / "preds.tsv"
        metrics = tmp_path / "metrics.json"
        code = run(["train", "--features", str(dataset / "cumf.csv"),
                    "--labels", str(dataset / "truth.tsv"),
                    "--model", "lr", "--epochs", "30", "--minibatch", "64",
                    "--rate", "0.5", "--split", "hash",
                    "--train-frac", "0.75", "--rng-seed", "0",
                    "--predictions-out", str(preds),
                    "--metrics-out", str(metrics)])
        assert code == 0
        out = capsys.readouterr().out
        record = json.loads(out.splitlines()[0])
        assert record["auc"] > 0.6
        assert json.loads(metrics.read_text())["auc"] == record["auc"]
        rows = read_node_vectors(preds)
        some = next(iter(rows.values()))
        assert len(some) == 2 and abs(some.sum() - 1.0) < 1e-9

    def test_train_joined_blocks(self, dataset, tmp_path):
        lp = tmp_path / "lp.csv"
        assert run(["lp-features", "--graph", str(dataset / "edges.tsv"),
                    "--seeds", str(dataset / "seeds.tsv"), "--out", str(lp)]) == 0
        assert run(["train", "--features",
                    f"{dataset / 'cumf.csv'},{lp}",
                    "--labels", str(dataset / "truth.tsv"),
                    "--epochs", "20", "--minibatch", "64"]) == 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exits_2(self, dataset):
        assert run(["train", "--features", str(dataset / "cumf.csv"),
                    "--labels", str(dataset / "truth.tsv"),
                    "--model", "mlp", "--hidden", "8",
                    "--rate", "1e12", "--epochs", "3",
                    "--minibatch", "16"]) == 2


class TestPipelineCommand:
    def test_config_run_with_override(self, dataset, tmp_path, capsys):
        out = tmp_path / "metrics.jsonl"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"edges={dataset / 'edges.tsv'}\n"
            f"labels={dataset / 'truth.tsv'}\n"
            f"cumf={dataset / 'cumf.csv'}\n"
            "regimes=cumf,cumf+lp\nmodel=lr\nepochs=20\nminibatch=64\n"
            "rate=0.5\nroot_seed=5\n"
            f"out={out}\n")
        assert run(["pipeline", "--config", str(cfg)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 2
        capsys.readouterr()
        assert run(["pipeline", "--config", str(cfg),
                    "--set", "regimes=cumf"]) == 0
        assert len(out.read_text().splitlines()) == 1

    def test_missing_config_inputs_exit_1(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("edges=/no/such/file\nlabels=/none\nregimes=lp\n")
        assert run(["pipeline", "--config", str(cfg)]) == 1


class TestSensitivityCommand:
    def test_grid_csv_and_pivot(self, dataset, tmp_path, capsys):
        out = tmp_path / "sens.csv"
        code = run(["sensitivity", "--edges", str(dataset / "edges.tsv"),
                    "--truth", str(dataset / "truth.tsv"),
                    "--seeds", str(dataset / "seeds.tsv"),
                    "--strategies", "alpha,beta,gamma",
                    "--alphas", "0.2,0.8", "--betas", "0.8",
                    "--gammas", "0.9", "--ks", "1,2,3",
                    "--out", str(out)])
        assert code == 0
        assert "K=1" in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + (2 + 1 + 1) * 3

    def test_empty_seed_file_exits_1_before_running(self, dataset, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        out = tmp_path / "sens.csv"
        assert run(["sensitivity", "--edges", str(dataset / "edges.tsv"),
                    "--truth", str(dataset / "truth.tsv"),
                    "--seeds", str(empty), "--out", str(out)]) == 1
        assert not out.exists()

    def test_reveal_mode(self, dataset, tmp_path):
        out = tmp_path / "sens.csv"
        assert run(["sensitivity", "--edges", str(dataset / "edges.tsv"),
                    "--truth", str(dataset / "truth.tsv"),
                    "--reveal", "0.2", "--alphas", "0.3", "--ks", "1,2",
                    "--reps", "2", "--workers", "2", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 1 + 2 * 2


class TestSynthCommand:
    def test_rejects_antihomophily_without_flag(self, tmp_path):
        assert run(["synth", "--per-class", "10", "--p", "0.01", "--q", "0.5",
                    "--out-dir", str(tmp_path)]) == 1
        assert run(["synth", "--per-class", "10", "--p", "0.01", "--q", "0.5",
                    "--allow-antihomophily", "--out-dir", str(tmp_path)]) == 0
