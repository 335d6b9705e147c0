import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from setmtpp import cli
from setmtpp.config import ConfigError, load_config, parse_config
from setmtpp.training import TrainingAborted

CONFIG = """
[run]
seed = 3

[paths]
data = data/seqs.jsonl
vocab = data/vocab.json
output_dir = out

[simulate]
source = poisson
n_sequences = 40
horizon = 6
rate = 1.5
rho = 0.3,0.5,0.2

[model]
backbone = nh
head = bernoulli
E = 3
H = 4

[training]
epochs = 2
batch_size = 16

[query]
kind = hitting
n_samples = 30
n_integration = 50
max_queries = 3
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "run.ini").write_text(CONFIG)
    return tmp_path


def run(workdir, *args, config="run.ini"):
    cmd, rest = args[0], args[1:]
    return cli.main([cmd, "--config", str(workdir / config), *rest])


def header_hash(path):
    first = path.read_text().splitlines()[0]
    assert first.startswith("# config_hash=")
    return first.split("=", 1)[1]


def test_full_pipeline(workdir, capsys):
    assert run(workdir, "simulate") == 0
    assert (workdir / "data" / "seqs.jsonl").exists()
    assert run(workdir, "train") == 0
    model = workdir / "out" / "model.json"
    first = model.read_bytes()
    h = header_hash(workdir / "out" / "history.csv")
    assert h == load_config(workdir / "run.ini").hash()

    assert run(workdir, "train") == 0
    assert model.read_bytes() == first

    assert run(workdir, "evaluate", "--model", str(model)) == 0
    ev = next((workdir / "out").glob("eval_*.csv"))
    assert header_hash(ev) == h
    assert "seq_id,neg_L,neg_L_time,neg_L_set" in ev.read_text()

    q = workdir / "q.json"
    q.write_text(json.dumps({"kind": "a_before_b", "history": [{"t": 0.5, "items": ["i0"]}],
                             "t_start": 1.0, "A": ["i1"], "B": ["i2"], "t": 2.0, "n_samples": 20}))
    capsys.readouterr()
    assert run(workdir, "query", "--model", str(model), "--query", str(q)) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["config_hash"] == h and res["kind"] == "a_before_b"
    assert set(res["importance"]["scenarios"]) == {"A_first", "B_first", "both_first", "neither"}
    assert sum(res["importance"]["scenarios"].values()) == pytest.approx(1.0, abs=1e-6)
    assert json.loads((workdir / "out" / "query.json").read_text()) == res

    assert run(workdir, "bench", "--models", str(model), "--split", "all") == 0
    summary = workdir / "out" / "bench_summary_hitting.csv"
    assert header_hash(summary) == h
    battery = next((workdir / "out").glob("battery_hitting_*.csv"))
    lines = [l for l in battery.read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 1 + 3


def test_query_from_file_history(workdir, capsys):
    assert run(workdir, "simulate") == 0
    assert run(workdir, "train") == 0
    q = workdir / "q.json"
    q.write_text(json.dumps({"kind": "hitting", "history": {"file": str(workdir / "data" / "seqs.jsonl"),
                                                            "index": 0, "n_events": 2},
                             "A": ["i0", "i2"], "t": 1.0, "n_samples": 10}))
    capsys.readouterr()
    assert run(workdir, "query", "--model", str(workdir / "out" / "model.json"), "--query", str(q)) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0.0 <= res["importance"]["estimate"] <= 1.0


@pytest.mark.parametrize("query,code", [
    ({"kind": "hitting", "A": ["i0"], "t": -1.0}, 2),
    ({"kind": "a_before_b", "A": ["i0"], "B": ["i0"], "t": 1.0}, 2),
    ({"kind": "a_before_b", "A": ["i0"], "t": 1.0}, 2),
    ({"kind": "marginal", "A": ["i0"], "t": 1.0}, 2),
    ({"kind": "hitting", "A": ["zz"], "t": 1.0}, 2),
    ({"kind": "hitting", "A": [], "t": 1.0}, 2),
])
def test_query_errors(workdir, query, code):
    run(workdir, "simulate")
    run(workdir, "train")
    q = workdir / "q.json"
    q.write_text(json.dumps(query))
    assert run(workdir, "query", "--model", str(workdir / "out" / "model.json"), "--query", str(q)) == code


def test_config_and_data_errors(workdir):
    (workdir / "bad.ini").write_text(CONFIG + "\n[model]\n")
    assert run(workdir, "train", config="bad.ini") == 2
    (workdir / "bad2.ini").write_text(CONFIG.replace("epochs = 2", "epochs = 2\nepoch = 3"))
    assert run(workdir, "train", config="bad2.ini") == 2
    (workdir / "bad3.ini").write_text(CONFIG + "\n[extra]\nx = 1\n")
    assert run(workdir, "train", config="bad3.ini") == 2
    (workdir / "bad4.ini").write_text(CONFIG.replace("epochs = 2", "epochs = two"))
    assert run(workdir, "train", config="bad4.ini") == 2
    assert run(workdir, "train", config="missing.ini") == 2
    assert run(workdir, "train") == 3                      # data file not there yet
    assert run(workdir, "evaluate", "--model", str(workdir / "nope.json")) == 3
    (workdir / "garbage.json").write_text("{not json")
    run(workdir, "simulate")
    assert run(workdir, "evaluate", "--model", str(workdir / "garbage.json")) == 3
    assert cli.main(["--threads", "0", "train", "--config", str(workdir / "run.ini")]) == 2


def test_missing_required_path(workdir):
    (workdir / "nopaths.ini").write_text(CONFIG.replace("data = data/seqs.jsonl\n", ""))
    assert run(workdir, "simulate", config="nopaths.ini") == 2


def test_numerical_abort_exit_code(workdir, monkeypatch):
    run(workdir, "simulate")

    def boom(*a, **kw):
        raise TrainingAborted("non-finite loss or gradient", 1.0, 0, 0)

    monkeypatch.setattr(cli, "train", boom)
    assert run(workdir, "train") == 4


def test_parse_config_defaults_and_paths(tmp_path):
    cfg = parse_config("[paths]\ndata = x.jsonl\n", tmp_path)
    assert cfg.paths.data == str((tmp_path / "x.jsonl").resolve())
    assert cfg.training.lr == 1e-3 and cfg.training.batch_size == 128 and cfg.training.epochs == 300
    assert cfg.training.clip == 1e4 and cfg.training.warmup_frac == 0.01
    assert cfg.query.n_samples == 1000 and cfg.query.n_integration == 2000
    assert parse_config("[run]\nseed = 1\n").hash() != parse_config("[run]\nseed = 2\n").hash()
    with pytest.raises(ConfigError):
        parse_config("[data]\ntrain_frac = 0.9\n")
    with pytest.raises(ConfigError):
        parse_config("[simulate]\nsource = other\n")


def test_module_entry_point(workdir):
    r = subprocess.run([sys.executable, "-m", "setmtpp", "simulate", "--config", str(workdir / "run.ini")],
                       capture_output=True, text=True, timeout=120)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "setmtpp", "train", "--config", str(workdir / "nothing.ini")],
                       capture_output=True, text=True, timeout=120)
    assert r.returncode == 2 and r.stderr.startswith("error:")


def test_readme_config_block_parses(tmp_path):
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    block = re.search(r"```ini\n(.*?)```", readme, re.S).group(1)
    cfg = parse_config(block, tmp_path)
    assert cfg == parse_config("[paths]\ndata = sequences.jsonl\nvocab = vocab.json\noutput_dir = out\n", tmp_path)
