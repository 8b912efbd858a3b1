import argparse
import csv
import json

import pytest

from refqa.cli import ablation_cells, build_parser, main, resolve_configs
from refqa.model import ModelConfig


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(d), "--n", "120", "--clusters", "6", "--seed", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def model_path(data_dir, tmp_path_factory):
    p = tmp_path_factory.mktemp("model") / "m.rfqm"
    assert main(["train", "--data", str(data_dir), "--out", str(p), "--epochs", "2", "--lr", "1e-3"]) == 0
    return p


def _error(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


# -- synth ------------------------------------------------------------------------------------

def test_synth_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "synth", "--out", tmp_path / name, "--n", 50, "--clusters", 5, "--seed", 7)[0] == 0
    for f in ("manifest.jsonl", "prompt_emb.rfq", "visual.rfq", "align.rfq"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_manifest_lines(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path, "--n", 100, "--clusters", 10)
    assert code == 0
    assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 100
    payload = json.loads(out)
    assert payload["n"] == 100 and payload["train"] == 80 and payload["test"] == 20


def test_synth_rejects_single_cluster(tmp_path, capsys):
    code, out, err = run(capsys, "synth", "--out", tmp_path, "--clusters", 1)
    assert code == 1 and out == ""
    assert _error(err)["error"] == "usage"


def test_synth_mos_scale(tmp_path, capsys):
    run(capsys, "synth", "--out", tmp_path, "--n", 40, "--clusters", 4, "--mos-scale", 1, 5, "--noise", 0)
    mos = [json.loads(line)["mos"] for line in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    assert min(mos) >= 1.0 - 1e-9 and max(mos) <= 5.0 + 1e-9


# -- usage errors ------------------------------------------------------------------------------

def test_unknown_flag_rejected(data_dir, capsys):
    code, _, err = run(capsys, "train", "--data", data_dir, "--bogus", 1)
    assert code == 1
    assert "bogus" in _error(err)["message"]


def test_unknown_command_rejected(capsys):
    assert run(capsys, "serve")[0] == 1


def test_every_flag_documented():
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    assert set(sub.choices) == {"synth", "train", "eval", "predict", "retrieve", "gradcheck", "ablate", "pool-stats"}
    for name, sp in sub.choices.items():
        for action in sp._actions:
            if action.option_strings:
                assert action.help, f"{name} {action.option_strings} lacks help"
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    assert "--config" in capsys.readouterr().out


# -- config precedence ---------------------------------------------------------------------------

def _args(argv):
    return build_parser().parse_args(["train", "--data", "x"] + argv)


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 7, "lr": 0.01, "tau": 0.6, "d_h": 16}))
    mcfg, tcfg = resolve_configs(_args([]))
    assert tcfg.epochs == 20 and mcfg.tau == 0.7  # defaults
    mcfg, tcfg = resolve_configs(_args(["--config", str(cfg)]))
    assert (tcfg.epochs, tcfg.lr, mcfg.tau, mcfg.d_h) == (7, 0.01, 0.6, 16)  # file over defaults
    mcfg, tcfg = resolve_configs(_args(["--config", str(cfg), "--epochs", "3", "--tau", "0.8"]))
    assert (tcfg.epochs, tcfg.lr, mcfg.tau) == (3, 0.01, 0.8)  # flags over file
    mcfg, _ = resolve_configs(_args(["--no-visual-refs"]))
    assert mcfg.refs_visual is False and mcfg.refs_align is True


def test_config_unknown_field(tmp_path, data_dir, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"momentum": 0.9}))
    code, _, err = run(capsys, "train", "--data", data_dir, "--config", cfg)
    assert code == 1 and "momentum" in _error(err)["message"]


# -- train / eval / predict -------------------------------------------------------------------------

def test_train_reports_json(data_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--data", data_dir, "--epochs", 2, "--lr", "1e-3", "--out", tmp_path / "m")
    assert code == 0
    payload = json.loads(out)
    assert len(payload["report"]["epochs"]) == 2
    assert payload["report"]["eval"]["n"] == 24
    assert "wall_time" not in payload["report"]
    code, out2, _ = run(capsys, "train", "--data", data_dir, "--epochs", 2, "--lr", "1e-3", "--out", tmp_path / "m2")
    assert out2 == out
    assert (tmp_path / "m").read_bytes() == (tmp_path / "m2").read_bytes()
    _, out3, _ = run(capsys, "train", "--data", data_dir, "--epochs", 1, "--timing")
    assert "wall_time" in json.loads(out3)["report"]


def test_eval_and_csv(data_dir, model_path, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--data", data_dir, "--model", model_path, "--csv", tmp_path / "e.csv")
    assert code == 0
    result = json.loads(out)
    assert set(result) >= {"srcc", "plcc", "krcc", "rmse", "n"}
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert len(rows) == result["n"] == 24 and set(rows[0]) == {"id", "mos", "score"}
    assert run(capsys, "eval", "--data", data_dir, "--model", model_path)[1] == out


def test_predict_jsonl(data_dir, model_path, capsys):
    code, out, _ = run(capsys, "predict", "--data", data_dir, "--model", model_path)
    assert code == 0
    lines = [json.loads(x) for x in out.strip().splitlines()]
    assert len(lines) == 120 and all(r["score"] > 0 for r in lines)
    code, out, _ = run(capsys, "predict", "--data", data_dir, "--model", model_path, "--ids", lines[0]["id"])
    assert json.loads(out) == lines[0]
    code, _, err = run(capsys, "predict", "--data", data_dir, "--model", model_path, "--ids", "nope")
    assert code == 2 and _error(err)["error"] == "data"


def test_corrupt_model_exit_code(data_dir, tmp_path, capsys):
    bad = tmp_path / "bad.rfqm"
    bad.write_bytes(b"RFQMjunk")
    code, _, err = run(capsys, "eval", "--data", data_dir, "--model", bad)
    assert code == 2
    assert _error(err)["type"] in {"ModelFormatError", "VersionMismatchError"}


def test_missing_dataset_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "pool-stats", "--data", tmp_path / "nowhere")
    assert code == 2 and _error(err)["error"] == "manifest"


# -- retrieve / pool-stats / gradcheck -----------------------------------------------------------------

def test_retrieve(data_dir, capsys):
    sid = json.loads((data_dir / "manifest.jsonl").read_text().splitlines()[0])["id"]
    code, out, _ = run(capsys, "retrieve", "--data", data_dir, "--id", sid, "--tau", 0.7)
    assert code == 0
    g = json.loads(out)
    assert g["query"] == sid and sid not in [r["id"] for r in g["refs"]]
    assert all(r["weight"] > 0.7 for r in g["refs"])
    code, out, _ = run(capsys, "retrieve", "--data", data_dir, "--id", sid, "--max-refs", 2)
    assert len(json.loads(out)["refs"]) == 2
    assert run(capsys, "retrieve", "--data", data_dir, "--id", "missing")[0] == 2


def test_pool_stats_json_and_table_agree(data_dir, capsys):
    code, out, _ = run(capsys, "pool-stats", "--data", data_dir)
    assert code == 0
    rows = json.loads(out)["rows"]
    assert [r["tau"] for r in rows] == [0.3, 0.5, 0.6, 0.7, 0.8]
    avgs = [r["avg"] for r in rows]
    assert all(a >= b for a, b in zip(avgs, avgs[1:]))
    _, table, _ = run(capsys, "pool-stats", "--data", data_dir, "--format", "table")
    body = table.strip().splitlines()[2:]
    assert len(body) == len(rows)
    for line, r in zip(body, rows):
        tau, mn, mx, avg = line.split()
        assert float(tau) == r["tau"] and int(mn) == r["min"] and int(mx) == r["max"]
        assert float(avg) == pytest.approx(r["avg"], abs=5e-5)


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck", "--batches", 2, "--dim", 3)
    assert code == 0 and json.loads(out)["passed"] is True


def test_gradcheck_failure_is_numeric_exit(capsys):
    code, _, err = run(capsys, "gradcheck", "--batches", 1, "--dim", 3, "--tol", 0)
    assert code == 3 and _error(err)["error"] == "numeric"


# -- ablate ----------------------------------------------------------------------------------------

def test_ablation_cells():
    cells = ablation_cells(ModelConfig(), ["feature", "aggregation"])
    assert [(c["feature"], c["aggregation"]) for c, _ in cells] == [
        ("diff", "graph"), ("diff", "avg"), ("self", "graph"), ("self", "avg")]
    assert len(ablation_cells(ModelConfig(), ["feature", "aggregation", "visual_refs", "align_refs"])) == 16
    labels = [c["branches"] for c, _ in ablation_cells(ModelConfig(), ["branches"])]
    assert labels == ["visual+align", "visual", "align"]


def test_ablate_rows_and_determinism(data_dir, capsys):
    argv = ["ablate", "--data", data_dir, "--axes", "feature,aggregation", "--epochs", 1, "--repeats", 2,
            "--lr", "1e-3"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    rows = json.loads(out)["rows"]
    assert len(rows) == 4 and all("srcc" in r and "srcc_std" in r for r in rows)
    assert run(capsys, *argv)[1] == out
    _, table, _ = run(capsys, *argv, "--format", "table")
    assert "±" in table and len(table.strip().splitlines()) == 6


def test_ablate_unknown_axis(data_dir, capsys):
    code, _, err = run(capsys, "ablate", "--data", data_dir, "--axes", "depth")
    assert code == 1 and "depth" in _error(err)["message"]


def test_ablate_records_cell_failures_and_continues(data_dir, capsys):
    # a batch larger than the training split leaves no full batch, so every cell fails on its own
    code, out, _ = run(capsys, "ablate", "--data", data_dir, "--axes", "branches", "--epochs", 1, "--repeats", 1,
                       "--batch-size", 200)
    assert code == 0
    rows = json.loads(out)["rows"]
    assert len(rows) == 3 and all("error" in r for r in rows)
