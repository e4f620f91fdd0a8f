import json

import numpy as np
import pytest

from endiff.cli import main


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["audit", "--suite", "bogus"])
    assert exc.value.code == 2
    assert "bogus" in capsys.readouterr().err


def test_landscape_writes_tables(tmp_path, capsys):
    code, out, _ = run_cli(["landscape", "--family", "simple",
                            "--out", str(tmp_path)], capsys)
    assert code == 0
    csv = (tmp_path / "landscape_simple.csv").read_text().splitlines()
    assert csv[0] == "z_sq,f,delta"
    first = csv[1].split(",")
    assert first[0] == "0.00" and float(first[1]) == 2.0 and float(first[2]) == 0.0
    manifest = json.loads((tmp_path / "manifest_landscape.json").read_text())
    assert manifest["command"] == "landscape"
    assert manifest["outputs"]


def test_synth_then_train_then_eval(tmp_path, capsys):
    data = tmp_path / "data"
    code, out, _ = run_cli(["synth", "--per-block", "15", "--blocks", "2",
                            "--feat-dim", "4", "--feat-shift", "2.0",
                            "--seed", "1", "--out", str(data)], capsys)
    assert code == 0
    for name in ("features", "labels", "edges", "split"):
        assert (data / f"{name}.txt").exists()

    run = tmp_path / "run"
    code, out, _ = run_cli([
        "train", "--features", str(data / "features.txt"),
        "--labels", str(data / "labels.txt"),
        "--edges", str(data / "edges.txt"),
        "--split", str(data / "split.txt"),
        "--epochs", "5", "--hidden", "4", "--layers", "1",
        "--out", str(run)], capsys)
    assert code == 0
    summary = json.loads(out.strip().splitlines()[-1])
    assert "test_metric" in summary
    assert (run / "checkpoint.json").exists()
    hist = (run / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,val_metric,test_metric"
    assert len(hist) == 6
    manifest = json.loads((run / "manifest_train.json").read_text())
    assert len(manifest["input_digests"]) == 4

    code, out, _ = run_cli([
        "eval", "--features", str(data / "features.txt"),
        "--labels", str(data / "labels.txt"),
        "--edges", str(data / "edges.txt"),
        "--split", str(data / "split.txt"),
        "--checkpoint", str(run / "checkpoint.json"),
        "--out", str(tmp_path / "eval")], capsys)
    assert code == 0
    values = json.loads(out.strip().splitlines()[-1])
    assert values["metric"] == "accuracy"
    assert 0.0 <= values["test"] <= 1.0


def test_train_reruns_are_byte_identical(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = ["train", "--synth", "sbm", "--per-block", "12", "--epochs", "4",
            "--hidden", "4", "--layers", "1", "--seed", "5"]
    assert run_cli(args + ["--out", str(out1)], capsys)[0] == 0
    assert run_cli(args + ["--out", str(out2)], capsys)[0] == 0
    assert (out1 / "history.csv").read_bytes() == (out2 / "history.csv").read_bytes()
    assert (out1 / "checkpoint.json").read_bytes() == (out2 / "checkpoint.json").read_bytes()


def test_train_missing_dataset_is_runtime_error(tmp_path, capsys):
    code, _, err = run_cli(["train", "--out", str(tmp_path)], capsys)
    assert code == 1
    assert "error" in err


def test_train_malformed_file_names_file_and_line(tmp_path, capsys):
    f = tmp_path / "features.txt"
    f.write_text("1.0\nbroken\n")
    l = tmp_path / "labels.txt"
    l.write_text("0\n1\n")
    code, _, err = run_cli(["train", "--features", str(f),
                            "--labels", str(l), "--out", str(tmp_path)], capsys)
    assert code == 1
    assert "features.txt:2" in err


def test_eval_shape_mismatch_is_runtime_error(tmp_path, capsys):
    data = tmp_path / "d"
    run_cli(["synth", "--per-block", "10", "--feat-dim", "4",
             "--out", str(data), "--seed", "0"], capsys)
    run = tmp_path / "r"
    run_cli(["train", "--features", str(data / "features.txt"),
             "--labels", str(data / "labels.txt"),
             "--epochs", "2", "--hidden", "4", "--layers", "1",
             "--out", str(run)], capsys)
    other = tmp_path / "d2"
    run_cli(["synth", "--per-block", "10", "--feat-dim", "6",
             "--out", str(other), "--seed", "0"], capsys)
    code, _, err = run_cli(["eval",
                            "--features", str(other / "features.txt"),
                            "--labels", str(other / "labels.txt"),
                            "--checkpoint", str(run / "checkpoint.json"),
                            "--out", str(tmp_path / "e")], capsys)
    assert code == 1


def test_diffuse_identity_coupling_constant_energy(tmp_path, capsys):
    code, out, _ = run_cli(["diffuse", "--coupling", "identity", "--steps", "5",
                            "--n", "10", "--dim", "3",
                            "--out", str(tmp_path)], capsys)
    assert code == 0
    csv_path = json.loads(out.strip().splitlines()[-1])["csv"]
    rows = [line.split(",") for line in
            open(csv_path).read().strip().splitlines()[1:]]
    energies = [float(r[1]) for r in rows[1:]]  # step 0 has no energy
    assert all(abs(e - energies[0]) < 1e-12 for e in energies)
    diversities = [float(r[2]) for r in rows]
    assert all(abs(d - diversities[0]) < 1e-12 for d in diversities)


def test_diffuse_attention_runs(tmp_path, capsys):
    code, out, _ = run_cli(["diffuse", "--coupling", "attention",
                            "--penalty", "advanced", "--steps", "4",
                            "--tau", "0.25", "--out", str(tmp_path)], capsys)
    assert code == 0


def test_diffuse_source_preserves_diversity(tmp_path, capsys):
    a = tmp_path / "nosrc"
    b = tmp_path / "src"
    for out_dir, extra in ((a, []), (b, ["--use-source"])):
        code, _, _ = run_cli(["diffuse", "--coupling", "gcn_sym",
                              "--steps", "500", "--n", "16", "--seed", "3",
                              "--out", str(out_dir)] + extra, capsys)
        assert code == 0

    def final_ratio(d):
        lines = open(next(d.glob("trajectory_*.csv"))).read().strip().splitlines()
        first = float(lines[1].split(",")[2])
        last = float(lines[-1].split(",")[2])
        return last / first

    assert final_ratio(a) < 1e-4
    assert final_ratio(b) > 1e-2


def test_audit_single_suite_report(tmp_path, capsys):
    code, out, _ = run_cli(["audit", "--suite", "linear_equiv",
                            "--out", str(tmp_path)], capsys)
    assert code == 0
    report = json.loads((tmp_path / "audit_linear_equiv.json").read_text())
    assert report["passed"] is True
    assert report["max_abs_diff"] <= 1e-10
    assert "linear_equiv: pass" in out


def test_audit_violation_exit_code(tmp_path, capsys, monkeypatch):
    import endiff.cli as cli

    monkeypatch.setattr(cli, "run_suite",
                        lambda name, **kw: {"suite": name, "passed": False,
                                            "violations": 3})
    code, out, _ = run_cli(["audit", "--suite", "thm1",
                            "--out", str(tmp_path)], capsys)
    assert code == 3
    assert "FAIL" in out


def test_config_file_merges_with_flags_winning(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"family": "advanced", "dim-scale": 4.0}))
    code, out, _ = run_cli(["landscape", "--config", str(cfg),
                            "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "landscape_advanced.csv").exists()
    # explicit flag beats the config value
    code, out, _ = run_cli(["landscape", "--config", str(cfg),
                            "--family", "softmax",
                            "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "landscape_softmax.csv").exists()
