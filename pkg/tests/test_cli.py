import json


from dcsparse.cli import main
from dcsparse.mlr import load_model


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_gen_train_cycle(tmp_path, capsys):
    data = tmp_path / "toy.libsvm"
    code, out, _ = run_cli(capsys, "gen", "--kind", "sim1", "--n", "400",
                           "--seed", "3", "--out", str(data))
    assert code == 0
    info = json.loads(out)
    assert info["n"] == 400 and info["d"] == 50 and info["Q"] == 4

    model_path = tmp_path / "model.bin"
    code, out, _ = run_cli(capsys, "train", "--data", str(data),
                           "--algo", "sdca", "--q", "2", "--penalty", "exp",
                           "--alpha", "2", "--lambda", "0.01",
                           "--max-epochs", "15", "--seed", "1",
                           "--out", str(model_path))
    assert code == 0
    result = json.loads(out)
    assert 0 <= result["test_accuracy"] <= 100
    assert result["stop_reason"]
    model, penalty, rho, extra = load_model(model_path)
    assert model.d == 50 and penalty.lam == 0.01
    assert extra["algorithm"] == "sdca"


def test_gen_spec_file(tmp_path, capsys):
    spec = tmp_path / "gen.spec"
    spec.write_text("kind=sim3\nn_per_class=30\nd=150\nseed=2\n")
    out_path = tmp_path / "sim3.csv"
    code, out, _ = run_cli(capsys, "gen", "--spec", str(spec),
                           "--format", "csv", "--out", str(out_path))
    assert code == 0
    info = json.loads(out)
    assert info["n"] == 120 and info["d"] == 150


def test_path_and_report_cycle(tmp_path, capsys):
    data = tmp_path / "toy.libsvm"
    run_cli(capsys, "gen", "--kind", "sim1", "--n", "400", "--seed", "5",
            "--out", str(data))
    spec = {
        "data": {"path": str(data), "format": "libsvm"},
        "algorithm": "sdca",
        "alpha_grid": [2.0],
        "lambdas": [0.1, 0.001],
        "repetitions": 1,
        "seed": 4,
        "max_epochs": 10,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    run_dir = tmp_path / "run"
    code, out, _ = run_cli(capsys, "path", "--spec", str(spec_path),
                           "--out", str(run_dir), "--no-figures")
    assert code == 0
    assert json.loads(out)["records"] == 2
    assert (run_dir / "summary.csv").exists()
    assert (run_dir / "manifest.json").exists()

    rerender = tmp_path / "rerender"
    code, out, _ = run_cli(capsys, "report", "--run-dir", str(run_dir),
                           "--out", str(rerender))
    assert code == 0
    assert (rerender / "summary.csv").read_text() == \
        (run_dir / "summary.csv").read_text()
    assert (rerender / "figures" / "accuracy_vs_lambda.png").exists()


def test_error_record_and_exit_code(tmp_path, capsys):
    code, out, err = run_cli(capsys, "train", "--data",
                             str(tmp_path / "missing.libsvm"))
    assert code == 1
    record = json.loads(err)
    assert record["error"] and record["message"]
    assert out == ""
