import json

import pytest

from rotnli import cli
from rotnli import training as T
from rotnli.report import parse

TINY = ["--n-entities", "60", "--per-relation", "20", "--proxy-size", "200"]
FAST = ["--lr", "0.01", "--d", "8", "--max-epochs", "2"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert cli.main(["generate", "--out", str(out), "--seed", "3", *TINY]) == 0
    return out


def test_parse_config_text():
    cfg = cli.parse_config_text("# comment\nlr = 0.01  # trailing\n\nd=16\nfrozen =\n")
    assert cfg == {"lr": 0.01, "d": 16, "frozen": ""}
    with pytest.raises(cli.UsageError, match="unknown key"):
        cli.parse_config_text("colour = red")
    with pytest.raises(cli.UsageError, match="line 2"):
        cli.parse_config_text("lr = 1\nnonsense")
    with pytest.raises(cli.UsageError):
        cli.parse_config_text("d = many")


def test_flags_override_file(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("lr = 0.01\nk = 5\n")
    args = cli.build_parser().parse_args(["train", "--out", "x", "--config", str(conf), "--k", "1", "--seed", "4"])
    cfg = cli.build_config(args)
    assert (cfg.lr, cfg.k, cfg.seed) == (0.01, 1, 4)
    assert cfg.batch_size == 16


def test_shipped_desk_config_parses():
    from pathlib import Path

    text = (Path(__file__).parent.parent / "configs" / "desk.conf").read_text()
    cfg = T.RunConfig(**cli.parse_config_text(text))
    assert cfg.lr == 0.01 and cfg.k == 3 and cfg.margin == 0.5


def test_config_hash_tracks_values():
    assert cli.config_hash(T.RunConfig()) == cli.config_hash(T.RunConfig())
    assert cli.config_hash(T.RunConfig()) != cli.config_hash(T.RunConfig(lr=0.01))


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["launch", "--out", "x"],
        ["train"],
        ["train", "--out", "x", "--method", "svm"],
        ["train", "--out", "x", "--lr", "-1"],
        ["train", "--out", "x", "--config", "/nonexistent/file.conf"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["train", "--out", str(tmp_path / "o"), "--corpus", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "bad.tsv"
    bad.write_text("Q1\tA\tP361\n")
    assert cli.main(["generate", "--out", str(tmp_path / "g"), "--triples", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_divergence_exits_3(corpus_dir, tmp_path, monkeypatch):
    real = T.loss_and_grads
    monkeypatch.setattr(T, "loss_and_grads", lambda *a, **k: (float("inf"), real(*a, **k)[1]))
    code = cli.main(["train", "--out", str(tmp_path), "--corpus", str(corpus_dir), *FAST])
    assert code == 3


def test_generate_outputs(corpus_dir):
    names = {p.name for p in corpus_dir.iterdir()}
    for mode in ("lexicalized", "delexicalized", "proxy"):
        assert {f"{mode}_{s}.jsonl" for s in ("train", "dev", "test")} <= names
    assert {"triples.tsv", "manifest.json"} <= names
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    assert manifest["seed"] == manifest["corpus"]["seed"] == 3
    assert manifest["corpus"]["triples"] == 14 * 20 and manifest["proxy_size"] == 200


def test_train_eval_report(corpus_dir, tmp_path):
    run, res = tmp_path / "run", tmp_path / "res"
    assert cli.main(["train", "--out", str(run), "--corpus", str(corpus_dir), "--method", "fine-tune", *FAST]) == 0
    assert {"encoder.npz", "artifact.json", "head.npz", "train_log.jsonl", "manifest.json"} <= {p.name for p in run.iterdir()}
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["method"] == "fine-tune" and len(manifest["config_hash"]) == 64
    assert "numpy" in manifest["versions"]
    assert cli.main(["eval", "--out", str(res), "--corpus", str(corpus_dir), "--artifact", str(run), *FAST]) == 0
    rec = json.loads((res / "eval-fine-tune-lexicalized.json").read_text())
    assert 0.0 <= rec["accuracy"] <= 1.0
    assert cli.main(["report", "--out", str(res)]) == 0
    rows = parse((res / "report.tsv").read_text())
    assert [r.method for r in rows] == ["fine-tune"] and rows[0].accuracy_lexicalized == rec["accuracy"]
    assert (res / "accuracy.png").exists()


def test_probe_fewshot_forget_commands(corpus_dir, tmp_path):
    out = tmp_path / "res"
    common = ["--out", str(out), "--corpus", str(corpus_dir), *FAST]
    assert cli.main(["probe", *common, "--n", "100"]) == 0
    assert cli.main(["fewshot", *common, "--method", "random-label", "--schedule", "8,16"]) == 0
    assert cli.main(["forget", *common, "--method", "knn-fixed", "--max-epochs", "3"]) == 0
    fs = json.loads((out / "fewshot-random-label-0.json").read_text())
    assert fs["samples"] in (None, 8, 16)
    fg = json.loads((out / "forgetting-knn-fixed-0.json").read_text())
    assert fg["delta"] == pytest.approx(fg["before"] - fg["after"])
    assert cli.main(["report", "--out", str(tmp_path / "rep"), "--results", str(out)]) == 0
    methods = [r.method for r in parse((tmp_path / "rep" / "report.tsv").read_text())]
    assert methods == ["random-label", "knn-fixed", "untrained-probe"]
    assert (tmp_path / "rep" / "fewshot.png").exists() and (tmp_path / "rep" / "forgetting.png").exists()


def test_bad_schedule_is_a_usage_error(corpus_dir, tmp_path):
    argv = ["fewshot", "--out", str(tmp_path), "--corpus", str(corpus_dir), "--schedule", "16,8"]
    assert cli.main(argv) == 1


def test_report_without_results_is_a_data_error(tmp_path):
    assert cli.main(["report", "--out", str(tmp_path)]) == 2
