import csv
import json
import math

import numpy as np
import pytest

from moelab.cli import main as cli_main
from moelab.config import CONFIG_SCHEMA, default_run_config, load_run_config
from moelab.data import byte_domain, load_corpus, synthetic_corpus, tokenize_bytes
from moelab.errors import (
    InvalidComparisonError,
    InvalidConfigError,
    InvalidInputError,
)
from moelab.metrics import weighted_jaccard
from moelab.model import ModelConfig
from moelab.persist import (
    load_checkpoint,
    log_columns,
    read_log,
    read_trace,
    save_checkpoint,
    write_trace,
)
from moelab.report import write_report
from moelab.simulate import SIM_COLUMNS, SimConfig, route_sim, write_sim_csv
from moelab.trainer import OptimizerState, TrainPlan, evaluate, eval_windows, train


# --- corpus --------------------------------------------------------------------

def test_bytes_tokenize_to_byte_values():
    assert tokenize_bytes(b"abc").tolist() == [97, 98, 99]


def test_split_sizes(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes(bytes(1000))
    split = load_corpus(path, 0.1)
    assert len(split.train) == 900
    assert len(split.eval) == 100


def test_same_file_same_hashes(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes(b"hello corpus " * 100)
    a = load_corpus(path, 0.2)
    b = load_corpus(path, 0.2)
    assert a.train_hash == b.train_hash
    assert a.eval_hash == b.eval_hash


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes(b"")
    with pytest.raises(InvalidInputError):
        load_corpus(path, 0.1)


def test_bad_split_rejected(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes(bytes(100))
    for frac in (0.0, 1.0, -0.5):
        with pytest.raises(InvalidConfigError):
            load_corpus(path, frac)


def test_synthetic_corpus_deterministic_and_ascii():
    a = synthetic_corpus(50_000, seed=5)
    b = synthetic_corpus(50_000, seed=5)
    assert a == b
    assert len(a) == 50_000
    assert a != synthetic_corpus(50_000, seed=6)


def test_byte_domains():
    assert byte_domain(ord("a")) == "alpha"
    assert byte_domain(ord("7")) == "digit"
    assert byte_domain(ord(" ")) == "space"
    assert byte_domain(ord(".")) == "punct"
    assert byte_domain(200) == "other"


# --- shared tiny run fixture --------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    corpus_path = root / "corpus.txt"
    corpus_path.write_bytes(synthetic_corpus(120_000, seed=9))
    split = load_corpus(corpus_path, 0.1)
    config = ModelConfig(routing_mode="et", seq_len=64, dtype="float32")
    plan = TrainPlan(
        total_steps=30,
        eval_every=15,
        et_warmup_steps=5,
        batch_tokens=512,
        eval_tokens=1024,
        seed=2,
    )
    run_dir = root / "run_a"
    result = train(
        plan, config, split.train, split.eval, run_dir=run_dir, stream_hash=split.eval_hash
    )
    return root, corpus_path, split, config, plan, run_dir, result


# --- checkpoints ----------------------------------------------------------------------

def test_checkpoint_round_trip_bit_identical_eval(tiny_run):
    root, _, split, config, plan, run_dir, result = tiny_run
    params, config2, plan2, optimizer, controllers, meta = load_checkpoint(
        result.checkpoint_path
    )
    assert config2 == config
    assert plan2 == plan
    assert meta["schema"] == 1
    tokens, targets = eval_windows(split.eval, plan.eval_tokens, config.seq_len)
    ce_a, _ = evaluate(result.params, config, result.controllers, tokens, targets)
    ce_b, _ = evaluate(params, config2, controllers, tokens, targets)
    assert ce_a == ce_b  # exact: arrays round-trip losslessly


def test_checkpoint_preserves_optimizer_and_thresholds(tiny_run):
    *_, config, plan, run_dir, result = tiny_run[2:]  # noqa: F841
    params, _, _, optimizer, controllers, _ = load_checkpoint(result.checkpoint_path)
    assert optimizer.step == result.optimizer.step
    layer = result.params and sorted(result.controllers)[0]
    np.testing.assert_array_equal(
        controllers[layer].c, result.controllers[layer].c
    )
    for name in result.params:
        np.testing.assert_array_equal(
            optimizer.m[name], result.optimizer.m[name]
        )


# --- traces -----------------------------------------------------------------------------

def test_trace_round_trip(tiny_run):
    *_, run_dir, result = tiny_run[4:]
    trace = read_trace(result.trace_paths[-1])
    assert trace.n_experts == 8
    assert trace.n_layers == 1
    assert trace.n_tokens == 1024
    assert weighted_jaccard(trace, trace) == 1.0
    assert set(trace.domains) <= {"alpha", "digit", "space", "punct", "other"}


def test_trace_refuses_mismatched_stream(tiny_run, tmp_path):
    *_, result = tiny_run[4:]
    trace = read_trace(result.trace_paths[-1])
    other = read_trace(result.trace_paths[-1])
    other.stream_hash = "deadbeef"
    with pytest.raises(InvalidComparisonError):
        weighted_jaccard(trace, other)


def test_trace_rejects_wrong_kind(tmp_path):
    path = tmp_path / "bogus.jsonl"
    path.write_text(json.dumps({"kind": "nonsense"}) + "\n")
    with pytest.raises(InvalidInputError):
        read_trace(path)


# --- run log -----------------------------------------------------------------------------

def test_log_header_golden(tiny_run):
    *_, run_dir, result = tiny_run[4:]
    with open(run_dir / "log.csv") as fh:
        header = fh.readline().strip()
    assert header == ",".join(log_columns(8))
    assert header == (
        "step,split,ce_loss,aux_loss,"
        "f_0,f_1,f_2,f_3,f_4,f_5,f_6,f_7,"
        "c_0,c_1,c_2,c_3,c_4,c_5,c_6,c_7,"
        "saturation,starvation,lr"
    )


def test_log_round_trip_types(tiny_run):
    *_, run_dir, result = tiny_run[4:]
    rows = read_log(run_dir / "log.csv")
    assert rows[0]["step"] == 0
    assert rows[0]["split"] == "train"
    assert math.isfinite(rows[0]["ce_loss"])
    evals = [r for r in rows if r["split"] == "eval"]
    assert len(evals) == 2


# --- run config ----------------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    doc = default_run_config("tc_aux")
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    cfg = load_run_config(path)
    assert cfg.model.routing_mode == "tc_aux"
    assert cfg.train.mup_lambda == pytest.approx(math.sqrt(768 / 64))
    assert cfg.sim.n_experts == cfg.model.n_routed_experts


def test_config_rejects_unknown_keys(tmp_path):
    doc = default_run_config()
    doc["model"]["n_expert"] = 4  # typo
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(InvalidConfigError, match="n_expert"):
        load_run_config(path)
    doc = default_run_config()
    doc["extra_section"] = {}
    path.write_text(json.dumps(doc))
    with pytest.raises(InvalidConfigError, match="extra_section"):
        load_run_config(path)


def test_config_rejects_wrong_schema(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"schema": 99}))
    with pytest.raises(InvalidConfigError):
        load_run_config(path)


def test_config_seed_override(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(default_run_config()))
    cfg = load_run_config(path, seed=77)
    assert cfg.train.seed == 77
    assert cfg.sim.seed == 77


# --- route-sim ----------------------------------------------------------------------------

def test_sim_et_usage_near_target():
    cfg = SimConfig(mode="et", steps=120, warmup_steps=20, pool_tokens=1024, seed=0)
    records = route_sim(cfg)
    late = [r for r in records if r.step >= 60]
    mean_usage = np.mean([r.usage for r in late])
    assert mean_usage == pytest.approx(1 / 8, rel=0.1)
    # thresholds applied directly: deviation is exactly zero post warmup
    assert all(r.cutoff_deviation == 0.0 for r in late)


def test_sim_ec_usage_exact_and_cutoff_wanders():
    cfg = SimConfig(mode="ec", steps=50, pool_tokens=512, seed=1)
    records = route_sim(cfg)
    assert all(r.usage == pytest.approx(1 / 8, rel=1e-12) for r in records)
    late = [r for r in records if r.step >= 25]
    assert np.std([r.cutoff_deviation for r in late]) > 0


def test_sim_csv_golden_columns(tmp_path):
    records = route_sim(SimConfig(steps=3, pool_tokens=64, seed=0))
    path = write_sim_csv(records, tmp_path / "sim.csv")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert header == SIM_COLUMNS


def test_sim_validation():
    with pytest.raises(InvalidConfigError):
        SimConfig(mode="nope")
    with pytest.raises(InvalidConfigError):
        SimConfig(pool_tokens=4, expansion=8)


# --- report -----------------------------------------------------------------------------

def test_report_tables_and_headers(tiny_run, tmp_path):
    root, _, split, config, plan, run_dir, result = tiny_run
    out = tmp_path / "report"
    paths = write_report([run_dir], out)
    assert set(paths) == {
        "loss_curve",
        "cutoff_usage",
        "fanout_position",
        "fanout_loss",
        "expert_ratio",
        "consistency",
    }
    for name, path in paths.items():
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        assert header[0] in ("run", "trace_a")
        assert rows, name  # every table has content for this run


# --- CLI --------------------------------------------------------------------------------

def test_cli_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli_main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_codec_bounds_paper_configuration(capsys):
    rc = cli_main(["codec", "bounds", "--G", "2", "--E", "8", "--layers", "9"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "50.532" in out


def test_cli_codec_roundtrip(capsys):
    rc = cli_main(["codec", "roundtrip", "--length", "16", "--count", "4", "--seed", "3"])
    assert rc == 0
    assert "MISMATCH" not in capsys.readouterr().out


def test_cli_compare_traces_self_is_one(tiny_run, capsys, tmp_path):
    *_, result = tiny_run[4:]
    trace = str(result.trace_paths[-1])
    out_csv = tmp_path / "cmp.csv"
    rc = cli_main(["compare-traces", trace, trace, "--out", str(out_csv)])
    assert rc == 0
    with open(out_csv) as fh:
        reader = csv.DictReader(fh)
        row = next(reader)
    assert float(row["weighted_jaccard"]) == 1.0
    assert float(row["joint_jsd"]) == 0.0


def test_cli_missing_file_exits_1(capsys, tmp_path):
    rc = cli_main(["route-sim", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.csv")])
    assert rc == 1


def test_cli_route_sim_and_train(tmp_path, capsys):
    config_path = tmp_path / "run.json"
    doc = default_run_config("et")
    doc["model"].update({"seq_len": 64})
    doc["train"].update(
        {"total_steps": 10, "eval_every": 5, "et_warmup_steps": 2, "batch_tokens": 256, "eval_tokens": 512}
    )
    doc["sim"].update({"steps": 5, "pool_tokens": 128})
    config_path.write_text(json.dumps(doc))
    corpus_path = tmp_path / "corpus.txt"
    corpus_path.write_bytes(synthetic_corpus(80_000, seed=4))

    rc = cli_main(["route-sim", str(config_path), "--out", str(tmp_path / "sim.csv"), "--seed", "1"])
    assert rc == 0
    assert (tmp_path / "sim.csv").exists()

    rc = cli_main([
        "train", str(config_path), "--corpus", str(corpus_path),
        "--out", str(tmp_path / "run"), "--seed", "5",
    ])
    assert rc == 0
    assert (tmp_path / "run" / "log.csv").exists()
    out = capsys.readouterr().out
    assert "final eval ce" in out
