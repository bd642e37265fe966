import json

import pytest

from legogen.cli import main
from legogen.dataset import load_dataset, loads_dataset
from legogen.lego import check_validity


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A tiny three-class dataset plus GIN and generator checkpoints built through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    ds = d / "ds.jsonl"
    assert main(["dataset", "gen", "--out", str(ds), "--per-class", "6", "--classes", "bar", "wall",
                 "table", "--min-bricks", "6", "--max-bricks", "12", "--seed", "1"]) == 0
    assert main(["train", "gin", "--dataset", str(ds), "--out", str(d / "gin.json"),
                 "--epochs", "5", "--hidden", "8"]) == 0
    assert main(["train", "dgmlg", "--dataset", str(ds), "--out-dir", str(d / "run"),
                 "--epochs", "2", "--node-dim", "8", "--lr", "1e-3", "--gin", str(d / "gin.json"),
                 "--eval-n", "12", "--eval-restricted", "--max-nodes", "10"]) == 0
    return d


def test_no_args_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_command(capsys):
    assert main(["dataset", "gen", "--bogus"]) == 1
    assert main(["fly"]) == 1
    assert "usage" in capsys.readouterr().err


def test_dataset_outputs(work, capsys):
    d = load_dataset(work / "ds.jsonl")
    assert len(d) == 18 and d.class_names == ["bar", "table", "wall"]
    assert main(["dataset", "stats", "--dataset", str(work / "ds.jsonl")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["records"] == 18
    out = work / "aug.jsonl"
    assert main(["dataset", "augment", "--dataset", str(work / "ds.jsonl"), "--out", str(out)]) == 0
    assert len(load_dataset(out)) == 72


def test_invalid_dataset_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"class":"a","nodes":[{"o":"x"},{"o":"x"}],"edges":[]}\n')
    assert main(["dataset", "stats", "--dataset", str(bad)]) == 2
    assert "record 0" in capsys.readouterr().err
    assert main(["dataset", "stats", "--dataset", str(tmp_path / "missing.jsonl")]) == 2


def test_training_artifacts(work):
    run = work / "run"
    names = sorted(p.name for p in run.iterdir())
    assert {"epoch_0000.json", "epoch_0001.json", "best.json", "history.csv"} <= set(names)
    lines = (run / "history.csv").read_text().splitlines()
    assert len(lines) == 3


def test_generate_restricted_class(work):
    out = work / "wall.jsonl"
    assert main(["generate", "--model", str(work / "run" / "best.json"), "--out", str(out),
                 "--n", "200", "--class", "wall", "--restricted", "--max-nodes", "6", "--seed", "3"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 200
    recs = loads_dataset(out.read_text()).records
    assert all(r.class_name == "wall" for r in recs)
    assert all(check_validity(r.graph).valid for r in recs)
    meta = json.loads(lines[0])["meta"]
    assert meta["seed"] == 3 and meta["restricted"] is True and "epoch" in meta


def test_generate_is_deterministic(work):
    a, b = work / "a.jsonl", work / "b.jsonl"
    for p in (a, b):
        assert main(["generate", "--model", str(work / "run" / "best.json"), "--out", str(p),
                     "--n", "10", "--dataset", str(work / "ds.jsonl"), "--max-nodes", "8", "--seed", "5"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_evaluate_and_nn(work, capsys):
    rep = work / "rep.json"
    assert main(["evaluate", "--dataset", str(work / "ds.jsonl"), "--gin", str(work / "gin.json"),
                 "--baseline", "--n", "12", "--out", str(rep), "--csv", str(work / "rep.csv")]) == 0
    r = json.loads(rep.read_text())
    assert r["pct_valid"] == 100.0 and r["n_generated"] == 12
    assert main(["evaluate", "--dataset", str(work / "ds.jsonl"), "--gin", str(work / "gin.json"),
                 "--samples", str(work / "ds.jsonl")]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["pct_novel"] == 0.0 and r["precision"] == 1.0
    assert main(["nn", "--dataset", str(work / "ds.jsonl"), "--gin", str(work / "gin.json"),
                 "--samples", str(work / "ds.jsonl"), "--out", str(work / "nn.json")]) == 0


def test_permute_row_count(work):
    out = work / "perm.csv"
    assert main(["permute", "--dataset", str(work / "ds.jsonl"), "--gin", str(work / "gin.json"),
                 "--iterations", "4", "--degree-every", "2", "--seed", "7", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 5


def test_config_overrides_flags(work):
    cfg = work / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 2}))
    out = work / "perm2.csv"
    assert main(["permute", "--dataset", str(work / "ds.jsonl"), "--gin", str(work / "gin.json"),
                 "--iterations", "9", "--out", str(out), "--config", str(cfg)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 3


def test_config_unknown_key(work):
    cfg = work / "bad_cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["dataset", "stats", "--dataset", str(work / "ds.jsonl"), "--config", str(cfg)]) == 1


def test_export_ldraw(work):
    out = work / "one.ldr"
    assert main(["export", "ldraw", "--input", str(work / "ds.jsonl"), "--index", "0",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines and all(l.startswith("1 ") and l.endswith("3001.dat") for l in lines)
