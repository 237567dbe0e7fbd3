import csv

import numpy as np
import pytest

from tgmz.checkpoint import MAGIC, capture, dumps, load_checkpoint, loads, restore, save_checkpoint
from tgmz.cli import main
from tgmz.config import RunConfig, parse_config, parse_config_text
from tgmz.data import load_dataset
from tgmz.errors import CompatibilityError, ConfigError, FormatError
from tgmz.evaluation import parse_metrics_line
from tgmz.model import LOG_FIELDS, rng_streams
from tgmz.runner import checkpoint_roundtrip, probe_outputs, run_evaluate, run_train

TINY = """
[synthetic]
n_classes = 8
n_seen = 6
d_x = 10
d_a = 4
per_class = 20

[episode]
tasks = 2
K = 2
N = 3
episodes = {episodes}

[tae]
d_e = 6

[meta]
alpha1 = 0.01
alpha2 = 0.01
beta1 = 0.01
beta2 = 0.01

[synthesis]
samples = 20

[head]
hidden = 16
epochs = 5

[run]
seed = 3
out = {out}
{extra}
"""


def tiny_config(tmp_path, name="run", episodes=10, extra=""):
    path = tmp_path / f"{name}.ini"
    path.write_text(TINY.format(episodes=episodes, out=tmp_path / name, extra=extra))
    return path


# ---------------------------------------------------------------- config

def test_defaults_from_dataset_path_only(tmp_path):
    cfg = parse_config_text("[data]\npath = /some/where\n")
    assert cfg.synthesis.samples == 100 and cfg.synthesis.sigma == 1.0 and cfg.meta.sigma == 1.0
    assert (cfg.meta.alpha1, cfg.meta.beta1) == (1e-3, 1e-4)
    assert (cfg.episode.tasks, cfg.episode.K, cfg.episode.N) == (4, 3, 5)


def test_config_errors_name_the_key():
    with pytest.raises(ConfigError, match="meta"):
        parse_config_text("[data]\npath = x\n[meta]\nbeta1 = -0.1\n")
    with pytest.raises(ConfigError, match="tae.bogus"):
        parse_config_text("[data]\npath = x\n[tae]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="episode.K"):
        parse_config_text("[data]\npath = x\n[episode]\nK = three\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[data]\npath = x\n[extras]\na = 1\n")
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config_text("[run]\nseed = 1\n")


def test_config_round_trip(tmp_path):
    cfg = parse_config(tiny_config(tmp_path, extra="disable_alignment = yes"))
    again = parse_config_text(cfg.emit())
    assert again == cfg and again.hash() == cfg.hash()
    assert again.run.disable_alignment is True
    shared = parse_config_text(cfg.emit().replace("map_seed = none", "map_seed = 9"))
    assert shared.synthetic.map_seed == 9 and parse_config_text(shared.emit()) == shared


def test_hashes_track_relevant_fields(tmp_path):
    base = parse_config(tiny_config(tmp_path))
    moved = parse_config_text(base.emit().replace(f"out = {tmp_path / 'run'}", "out = elsewhere"))
    assert moved.hash() == base.hash()
    more = parse_config_text(base.emit().replace("samples = 20", "samples = 30"))
    assert more.hash() != base.hash() and more.train_hash() == base.train_hash()
    lr = parse_config_text(base.emit().replace("lr_tc = 0.001", "lr_tc = 0.002"))
    assert lr.train_hash() != base.train_hash()


# ---------------------------------------------------------------- checkpoint

@pytest.fixture
def trained(tmp_path):
    return run_train(parse_config(tiny_config(tmp_path)))


def test_checkpoint_round_trip_is_bitwise(trained, tmp_path):
    rep = checkpoint_roundtrip(trained.model, trained.state, rng_streams(0), tmp_path / "rt.tgmz")
    assert rep.passed and rep.n_tensors == len(trained.model.params)


def test_checkpoint_restores_states_and_streams(trained):
    ck = load_checkpoint(trained.checkpoint)
    model, state, streams = restore(ck)
    assert state.episode == 10 and state.adam_tc.t == 10
    for n in trained.state.adam_tc.m:
        assert np.array_equal(state.adam_tc.m[n], trained.state.adam_tc.m[n])
    assert set(streams) == {"sampling", "noise", "init", "head"}
    p1, p2 = probe_outputs(trained.model), probe_outputs(model)
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


def test_float32_model_round_trips(tmp_path):
    res = run_train(parse_config(tiny_config(tmp_path, episodes=3, extra="precision = 32")))
    assert res.model.dtype == np.float32
    rep = checkpoint_roundtrip(res.model, res.state, None, tmp_path / "f32.tgmz")
    assert rep.passed


def test_damaged_checkpoints_are_rejected(trained, tmp_path):
    raw = trained.checkpoint.read_bytes()
    assert raw.startswith(MAGIC)
    bad = tmp_path / "bad.tgmz"
    for blob in (raw[:len(raw) // 2], raw[:-1], b"XXXXXX" + raw[6:],
                 raw[:6] + (2).to_bytes(4, "little") + raw[10:],
                 raw[:200] + bytes([raw[200] ^ 1]) + raw[201:]):
        bad.write_bytes(blob)
        with pytest.raises(FormatError):
            load_checkpoint(bad)


def test_dumps_is_stable(trained):
    ck = capture(trained.model, trained.state, None, "h")
    assert dumps(ck) == dumps(loads(dumps(ck)))


# ---------------------------------------------------------------- train / evaluate

def test_train_writes_one_log_row_per_episode(trained):
    rows = list(csv.reader(open(trained.log)))
    assert tuple(rows[0]) == LOG_FIELDS
    assert len(rows) == 11 and [int(r[0]) for r in rows[1:]] == list(range(10))
    assert all(v != "" for r in rows[1:] for v in r)


def test_training_is_reproducible(tmp_path):
    a = run_train(parse_config(tiny_config(tmp_path, "a")))
    b = run_train(parse_config(tiny_config(tmp_path, "b")))
    assert a.log.read_bytes() == b.log.read_bytes()
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    ra = run_evaluate(parse_config(tiny_config(tmp_path, "a")), a.checkpoint, "gzsl")
    rb = run_evaluate(parse_config(tiny_config(tmp_path, "b")), b.checkpoint, "gzsl")
    assert ra.lines() == rb.lines()


def test_disable_alignment_freezes_autoencoder(tmp_path):
    cfg = parse_config(tiny_config(tmp_path, extra="disable_alignment = true"))
    from tgmz.model import build_model

    init = build_model(10, 4, range(6), 2, cfg.tae, cfg.meta, rng_streams(3)["init"])
    res = run_train(cfg)
    for n, t in res.model.params.items():
        same = np.array_equal(t.data, init.params[n].data)
        if n.split(".")[0] in ("te", "td", "tdis"):
            assert same, n
    rows = list(csv.reader(open(res.log)))[1:]
    assert all(r[1] == "" and r[2] == "" for r in rows)


def test_evaluate_checks_config_hash(trained, tmp_path):
    other = tiny_config(tmp_path, "other", extra="seed = 4").read_text().replace("seed = 3\n", "")
    (tmp_path / "other.ini").write_text(other)
    with pytest.raises(CompatibilityError):
        run_evaluate(parse_config(tmp_path / "other.ini"), trained.checkpoint, "zsl")


def test_evaluate_writes_metrics_and_projection(trained, tmp_path):
    cfg = parse_config(tiny_config(tmp_path))
    rep = run_evaluate(cfg, trained.checkpoint, "gzsl", export=True)
    line = (tmp_path / "run" / "metrics_gzsl.txt").read_text().strip()
    rec = parse_metrics_line(line)
    assert rec["config_hash"] == cfg.hash() and rec["seed"] == 3
    assert abs(rep.H - (2 * rep.U * rep.S / (rep.U + rep.S) if rep.U + rep.S else 0.0)) <= 1e-12
    proj = (tmp_path / "run" / "projection_gzsl.txt").read_text().splitlines()
    assert len(proj) == 2 * 20  # two unseen classes x samples


def test_evaluation_is_inductive(trained):
    d = trained.dataset
    unseen_rows = set(np.flatnonzero(np.isin(d.Y, d.split.unseen)).tolist())
    assert not d.audit.rows_read("train") & unseen_rows


# ---------------------------------------------------------------- command line

def test_cli_end_to_end(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert main(["train", str(cfg)]) == 0
    ck = tmp_path / "run" / "checkpoint.tgmz"
    assert main(["eval", str(cfg), str(ck), "--setting", "gzsl", "--export-projection"]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("gzsl,")
    assert main(["check", str(ck)]) == 0
    assert "round-trip ok" in capsys.readouterr().out


def test_cli_data_commands(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert main(["gen-data", str(cfg), str(tmp_path / "a")]) == 0
    assert main(["gen-data", str(cfg), str(tmp_path / "b")]) == 0
    assert main(["fuse", str(tmp_path / "a"), str(tmp_path / "b"), str(tmp_path / "ab")]) == 0
    fused = load_dataset(tmp_path / "ab")
    assert fused.n_classes == 16 and len(fused.sources) == 2
    capsys.readouterr()
    # fusion evaluation on the fused directory
    text = TINY.format(episodes=3, out=tmp_path / "fr", extra="").replace(
        "[synthetic]\nn_classes = 8\nn_seen = 6\nd_x = 10\nd_a = 4\nper_class = 20\n",
        f"[data]\npath = {tmp_path / 'ab'}\n")
    (tmp_path / "fused.ini").write_text(text)
    assert main(["train", str(tmp_path / "fused.ini")]) == 0
    assert main(["eval", str(tmp_path / "fused.ini"), str(tmp_path / "fr" / "checkpoint.tgmz"),
                 "--setting", "fusion"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split(",")[0] for ln in lines[-3:]] == ["fusion", "fusion:a", "fusion:b"]


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.tgmz"
    bad.write_bytes(b"nope")
    assert main(["check", str(bad)]) == 2
    assert "FormatError" in capsys.readouterr().err
    (tmp_path / "c.ini").write_text("[data]\npath = x\n[meta]\nalpha1 = -1\n")
    assert main(["train", str(tmp_path / "c.ini")]) == 2
    assert "ConfigError" in capsys.readouterr().err
