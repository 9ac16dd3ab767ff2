"""Command-line interface: subcommands, formats, exit codes."""

import json

import numpy as np
import pytest

from sstc.cli import main
from sstc.codes import CodeParams, build_table
from sstc.store import (LayerFormat, ModelFile, encode_layer, read_model,
                        serialize_model, write_model)

from conftest import random_sst_trits


def _records(capsys):
    out = capsys.readouterr().out
    return [json.loads(line) for line in out.strip().splitlines() if line.strip()]


def test_tables_default_matches_published_table(capsys):
    assert main(["tables", "--format", "records"]) == 0
    recs = _records(capsys)
    by_code = {r["code"]: r for r in recs}
    assert by_code["(16,4)"]["entries"] == 34113
    assert by_code["(16,4)"]["table_kb"] == pytest.approx(136.452)
    assert by_code["(16,4)"]["address_bits"] == 16
    assert by_code["(8,1)"]["entries"] == 17
    assert by_code["(8,1)"]["table_kb"] == pytest.approx(0.034)
    assert by_code["(4,1)"]["entries"] == 9
    assert [r["address_bits"] for r in recs] == [16, 13, 10, 8, 5, 4]


def test_tables_custom_code(capsys):
    assert main(["tables", "--codes", "1,1", "--format", "records"]) == 0
    rec = _records(capsys)[0]
    assert rec["entries"] == 3
    assert rec["address_bits"] == 2
    assert rec["table_kb"] == pytest.approx(6 / 8 / 1000)  # 2*1*3 = 6 bits


def test_tables_rejects_oversized_code(capsys):
    # 3^16 = 43,046,721 entries is over the default table cap
    assert main(["tables", "--codes", "16,16", "--format", "records"]) == 1
    assert "43046721" in capsys.readouterr().err
    assert main(["tables", "--codes", "16,99"]) == 1


def _write_float_npz(path, rng, dims=(12, 16, 3)):
    arrays = {}
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        arrays[f"W{i}"] = rng.normal(size=(b, a)).astype(np.float32)
        arrays[f"b{i}"] = rng.normal(size=b).astype(np.float32)
    np.savez(path, **arrays)
    return path


def test_compress_report_verify_roundtrip(tmp_path, capsys):
    rng = np.random.default_rng(0)
    npz = _write_float_npz(tmp_path / "float.npz", rng, dims=(12, 16, 3))
    out = tmp_path / "model.sstw"
    policy = tmp_path / "policy.txt"
    policy.write_text("default format=sst n=4 k=1 orientation=column\n"
                      "layer1 format=ternary\n")
    code = main(["compress", "--input", str(npz), "--output", str(out),
                 "--policy", str(policy), "--format", "records"])
    assert code == 0
    capsys.readouterr()
    model = read_model(out)
    assert str(model.layers[0].format) == "sst(4,1)/column"
    assert model.layers[1].format.kind == "ternary2bit"

    assert main(["report", "--model", str(out), "--format", "records"]) == 0
    recs = _records(capsys)
    assert recs[-1]["compression_ratio"] > 1.0

    assert main(["verify", "--model", str(out), "--format", "records"]) == 0
    suites = _records(capsys)
    assert all(s["pass"] for s in suites)


def test_compress_is_idempotent_from_second_pass(tmp_path):
    rng = np.random.default_rng(1)
    npz = _write_float_npz(tmp_path / "float.npz", rng, dims=(12, 16, 4))
    first = tmp_path / "first.sstw"
    assert main(["compress", "--input", str(npz), "--output", str(first),
                 "--code", "4,1"]) == 0
    decompressed = tmp_path / "float.sstw"
    assert main(["decompress", "--input", str(first), "--output", str(decompressed)]) == 0
    second = tmp_path / "second.sstw"
    assert main(["compress", "--input", str(decompressed), "--output", str(second),
                 "--code", "4,1"]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_decompress_recovers_quantized_weights_exactly(tmp_path):
    rng = np.random.default_rng(2)
    npz = _write_float_npz(tmp_path / "float.npz", rng, dims=(12, 16, 4))
    out = tmp_path / "model.sstw"
    main(["compress", "--input", str(npz), "--output", str(out), "--code", "4,2"])
    dec = tmp_path / "back.sstw"
    assert main(["decompress", "--input", str(out), "--output", str(dec)]) == 0
    from sstc.store import decode_layer
    comp = read_model(out)
    back = read_model(dec)
    for a, b in zip(comp.layers, back.layers):
        assert np.allclose(decode_layer(a), decode_layer(b), atol=0)


def test_verify_detects_out_of_range_index(tmp_path, capsys):
    params = CodeParams(8, 1)  # T=17, 5-bit indices, so 31 is out of range
    layer = encode_layer(np.zeros((8, 2)), 1.0, LayerFormat("sst", params))
    bad = type(layer)(layer.format, layer.rows, layer.cols, layer.delta,
                      bytes([0xF8, 0x00]), layer.bias, layer.normalizer)
    path = tmp_path / "bad.sstw"
    write_model(ModelFile(layers=[bad]), path)
    assert main(["verify", "--model", str(path), "--format", "records"]) == 1
    suites = _records(capsys)
    failing = [s for s in suites if not s["pass"]]
    assert failing and "position 0" in failing[0]["detail"]


def test_verify_empty_model_passes(tmp_path):
    path = tmp_path / "empty.sstw"
    write_model(ModelFile(), path)
    assert main(["verify", "--model", str(path)]) == 0


def test_train_on_synthetic_writes_metrics_and_model(tmp_path, capsys):
    metrics = tmp_path / "metrics.jsonl"
    model_path = tmp_path / "trained.sstw"
    code = main(["train", "--data", "synthetic:samples=600,classes=3,dim=16,seed=5",
                 "--arch", "16,32,3", "--code", "8,2", "--epochs", "2",
                 "--float-epochs", "2", "--batch-size", "64", "--seed", "5",
                 "--out", str(model_path), "--metrics", str(metrics),
                 "--format", "records"])
    assert code == 0
    lines = [json.loads(l) for l in metrics.read_text().strip().splitlines()]
    quantized_epochs = [l for l in lines if l["stage"] == "(8,2)"]
    assert len(quantized_epochs) == 2
    assert all("train_loss" in l and "val_mcr" in l for l in lines)
    model = read_model(model_path)
    assert str(model.layers[0].format) == "sst(8,2)/column"
    assert main(["verify", "--model", str(model_path)]) == 0


def test_infer_on_perfect_toy_model(tmp_path, capsys):
    # memorize blobs with a float-trained model, then infer on the same data
    code = main(["train", "--data", "synthetic:samples=400,classes=3,dim=8,seed=6",
                 "--arch", "8,3", "--epochs", "40", "--lr", "0.01",
                 "--batch-size", "32", "--seed", "6",
                 "--out", str(tmp_path / "float_model.sstw"), "--format", "records"])
    assert code == 0
    capsys.readouterr()
    code = main(["infer", "--model", str(tmp_path / "float_model.sstw"),
                 "--data", "synthetic:samples=400,classes=3,dim=8,seed=6",
                 "--format", "records"])
    assert code == 0
    rec = _records(capsys)[-1]
    assert rec["samples"] == 400
    assert rec["mcr_percent"] <= 5.0


def test_infer_trace_reports_operation_counts(tmp_path, capsys):
    code = main(["train", "--data", "synthetic:samples=600,classes=3,dim=16,seed=9",
                 "--arch", "16,32,3", "--code", "8,2", "--epochs", "2",
                 "--float-epochs", "2", "--batch-size", "64", "--seed", "9",
                 "--out", str(tmp_path / "m.sstw"), "--format", "records"])
    assert code == 0
    capsys.readouterr()
    assert main(["infer", "--model", str(tmp_path / "m.sstw"),
                 "--data", "synthetic:samples=200,classes=3,dim=16,seed=9",
                 "--trace", "--format", "records"]) == 0
    recs = _records(capsys)
    traces = [r for r in recs if "table_lookups" in r]
    assert traces and all(t["max_ops_per_subvector"] <= t["op_budget"] for t in traces)
    assert traces[0]["table_lookups"] == (32 // 8) * 16


def test_train_is_deterministic_per_seed(tmp_path):
    out = []
    for name in ("a.sstw", "b.sstw"):
        assert main(["train", "--data", "synthetic:samples=400,classes=3,dim=16,seed=4",
                     "--arch", "16,16,3", "--code", "8,2", "--epochs", "2",
                     "--float-epochs", "1", "--batch-size", "64", "--seed", "4",
                     "--out", str(tmp_path / name), "--format", "records"]) == 0
        out.append((tmp_path / name).read_bytes())
    assert out[0] == out[1]


def test_train_gradual_schedule_and_multiple_seeds(tmp_path, capsys):
    metrics = tmp_path / "metrics.jsonl"
    assert main(["train", "--data", "synthetic:samples=400,classes=3,dim=16,seed=8",
                 "--arch", "16,16,3", "--code", "8,1", "--schedule", "4,2,1",
                 "--epochs", "1", "--float-epochs", "1", "--batch-size", "64",
                 "--seed", "8", "--seeds", "2", "--metrics", str(metrics),
                 "--format", "records"]) == 0
    summary = _records(capsys)[-1]
    assert summary["seeds"] == [8, 9]
    assert summary["mean_val_mcr_percent"] == pytest.approx(
        np.mean(summary["val_mcr_percent"]))
    stages = {json.loads(l)["stage"] for l in metrics.read_text().strip().splitlines()}
    assert stages == {"float", "(8,4)", "(8,2)", "(8,1)"}


def test_exit_codes():
    assert main(["report", "--model", "/nonexistent/path.sstw"]) == 2
    assert main(["tables", "--codes", "banana"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_report_toggles(tmp_path, capsys):
    params = CodeParams(8, 1)
    rng = np.random.default_rng(3)
    W = random_sst_trits(rng, 64, 64, params) * 0.5
    layer = encode_layer(W, 0.5, LayerFormat("sst", params), bias=np.zeros(64))
    path = tmp_path / "m.sstw"
    write_model(ModelFile(layers=[layer]), path)
    assert main(["report", "--model", str(path), "--exclude-tables",
                 "--exclude-bias", "--format", "records"]) == 0
    recs = _records(capsys)
    total = recs[-1]
    assert total["total_compressed_bits"] == 64 * 64 // 8 * 5
