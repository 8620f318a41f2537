import json
import sqlite3

import pytest

from sqlsynth.cli import main
from sqlsynth.dist import load_distribution


@pytest.fixture(scope="module")
def fitted(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_fit") / "dist.json"
    code = main(
        [
            "fit",
            "--schemas", str(dataset["schemas"]),
            "--corpus", str(dataset["corpus"]),
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


class TestFit:
    def test_distribution_counts(self, dataset, fitted, corpus):
        dist = load_distribution(fitted)
        assert dist.total == len(corpus)
        assert (fitted.parent / "manifest.json").exists()

    def test_coverage_printed(self, dataset, tmp_path, capsys):
        # Eval corpus: one covered template, one novel.
        eval_corpus = [
            {"db_id": "shop", "question": "q", "query": "select name from store where city = 'kiev'"},
            {"db_id": "shop", "question": "q", "query": "select distinct rating from store"},
        ]
        eval_path = tmp_path / "dev.json"
        eval_path.write_text(json.dumps(eval_corpus))
        code = main(
            [
                "fit",
                "--schemas", str(dataset["schemas"]),
                "--corpus", str(dataset["corpus"]),
                "--eval", str(eval_path),
                "--out", str(tmp_path / "d.json"),
            ]
        )
        assert code == 0
        assert "coverage: 0.5000" in capsys.readouterr().out

    def test_missing_file_exit_2(self, dataset, tmp_path):
        code = main(
            [
                "fit",
                "--schemas", str(dataset["schemas"]),
                "--corpus", str(tmp_path / "nope.json"),
                "--out", str(tmp_path / "d.json"),
            ]
        )
        assert code == 2


class TestSample:
    def test_sample_file(self, dataset, fitted, tmp_path):
        out = tmp_path / "samples.jsonl"
        code = main(
            [
                "sample",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--db", "shop",
                "-n", "25",
                "--out", str(out),
                "--seed", "3",
            ]
        )
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().strip().split("\n")]
        assert len(lines) == 25
        assert all(l["db_id"] == "shop" for l in lines)
        assert all("seed_trace" in l for l in lines)

    def test_sample_turns_pairs(self, dataset, fitted, tmp_path):
        out = tmp_path / "pairs.jsonl"
        code = main(
            [
                "sample",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--db", "shop",
                "-n", "10",
                "--turns", "2",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().strip().split("\n")]
        assert sum(1 for l in lines if "prev_sql" in l) >= 4

    def test_bad_db_exit_2(self, dataset, fitted, tmp_path):
        code = main(
            [
                "sample",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--db", "nonexistent",
                "-n", "1",
                "--out", str(tmp_path / "x.jsonl"),
            ]
        )
        assert code == 2


class TestSynth:
    def test_perfect_keep_rate_one(self, dataset, fitted, tmp_path, corpus):
        out_dir = tmp_path / "synth"
        code = main(
            [
                "synth",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--dbs", "shop",
                "--generator", "builtin:perfect",
                "--parser", "builtin:perfect",
                "-n", "30",
                "--original", str(dataset["corpus"]),
                "--out-dir", str(out_dir),
            ]
        )
        assert code == 0
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["keep_rate"] == 1.0
        combined = json.loads((out_dir / "adaptation_corpus.json").read_text())
        assert len(combined) == len(corpus) + summary["kept"]

    def test_lossy_keep_rate_low(self, dataset, tmp_path):
        # Filter-heavy distribution: dropping WHERE almost never preserves
        # the denotation, so the lossy pair keeps very little.
        from sqlsynth.canon import template_from_text
        from sqlsynth.dist import TemplateDistribution, save_distribution

        texts = {
            "select text1 where text2 = val": 3,
            "select number1 where text1 = val": 2,
            "select count ( * ) where number1 > val": 1,
        }
        dist_path = tmp_path / "filter_dist.json"
        save_distribution(
            TemplateDistribution(
                unigram=texts,
                bigram={},
                templates={t: template_from_text(t, 1) for t in texts},
            ),
            dist_path,
        )
        out_dir = tmp_path / "synth_lossy"
        code = main(
            [
                "synth",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(dist_path),
                "--dbs", "shop",
                "--generator", "builtin:lossy",
                "--parser", "builtin:lossy",
                "-n", "100",
                "--out-dir", str(out_dir),
            ]
        )
        assert code == 0
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["keep_rate"] < 0.2

    def test_nocycle_mode(self, dataset, fitted, tmp_path):
        out_dir = tmp_path / "synth_nocycle"
        code = main(
            [
                "synth",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--dbs", "shop",
                "--generator", "builtin:lossy",
                "--parser", "builtin:lossy",
                "-n", "40",
                "--consistency", "none",
                "--out-dir", str(out_dir),
            ]
        )
        assert code == 0
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["keep_rate"] == 1.0  # every parseable attempt kept

    def test_adapter_spawn_failure_exit_4(self, dataset, fitted, tmp_path):
        code = main(
            [
                "synth",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--dbs", "shop",
                "--generator", "cmd:definitely-not-a-command-zzz",
                "--parser", "builtin:perfect",
                "-n", "5",
                "--adapter-timeout", "2",
                "--out-dir", str(tmp_path / "s"),
            ]
        )
        assert code == 4


class TestEval:
    def test_gold_vs_gold(self, dataset, tmp_path, capsys):
        gold = json.loads(dataset["corpus"].read_text())[:5]
        gold_path = tmp_path / "gold.json"
        gold_path.write_text(json.dumps(gold))
        pred_path = tmp_path / "pred.txt"
        pred_path.write_text("\n".join(g["query"] for g in gold) + "\n")
        out_dir = tmp_path / "eval"
        code = main(
            [
                "eval",
                "--schemas", str(dataset["schemas"]),
                "--gold", str(gold_path),
                "--pred", str(pred_path),
                "--fuzz-instances", "3",
                "--scratch", str(tmp_path / "scratch"),
                "--out-dir", str(out_dir),
            ]
        )
        assert code == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["overall"]["em"] == 1.0
        assert report["overall"]["ex"] == 1.0
        assert report["overall"]["fx"] == 1.0

    def test_fx_disabled(self, dataset, tmp_path):
        gold = json.loads(dataset["corpus"].read_text())[:2]
        gold_path = tmp_path / "gold.json"
        gold_path.write_text(json.dumps(gold))
        pred_path = tmp_path / "pred.txt"
        pred_path.write_text("\n".join(g["query"] for g in gold) + "\n")
        out_dir = tmp_path / "eval0"
        code = main(
            [
                "eval",
                "--schemas", str(dataset["schemas"]),
                "--gold", str(gold_path),
                "--pred", str(pred_path),
                "--fuzz-instances", "0",
                "--out-dir", str(out_dir),
            ]
        )
        assert code == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert "fx" not in report["overall"]

    def test_misalignment_exit_5(self, dataset, tmp_path):
        gold = json.loads(dataset["corpus"].read_text())[:3]
        gold_path = tmp_path / "gold.json"
        gold_path.write_text(json.dumps(gold))
        pred_path = tmp_path / "pred.txt"
        pred_path.write_text("select 1\n")
        code = main(
            [
                "eval",
                "--schemas", str(dataset["schemas"]),
                "--gold", str(gold_path),
                "--pred", str(pred_path),
                "--out-dir", str(tmp_path / "e"),
            ]
        )
        assert code == 5


class TestFuzzDb:
    def test_standalone_instance(self, dataset, tmp_path):
        out = tmp_path / "instance.sqlite"
        code = main(
            [
                "fuzz-db",
                "--schemas", str(dataset["schemas"]),
                "--db", "shop",
                "--instance", "2",
                "--rows", "5:10",
                "--scratch", str(tmp_path / "scratch"),
                "--out", str(out),
            ]
        )
        assert code == 0
        conn = sqlite3.connect(out)
        try:
            n = conn.execute("select count ( * ) from store").fetchone()[0]
        finally:
            conn.close()
        assert 5 <= n <= 10


def test_deterministic_given_seed(dataset, fitted, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        assert main(
            [
                "sample",
                "--schemas", str(dataset["schemas"]),
                "--dist", str(fitted),
                "--db", "shop",
                "-n", "15",
                "--seed", "77",
                "--out", str(out),
            ]
        ) == 0
        outs.append(out.read_text())
    assert outs[0] == outs[1]
