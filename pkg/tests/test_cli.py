import csv
import io
import json

import numpy as np
import pytest

from gmrconv.cli import EXIT_ASSERT, EXIT_OK, EXIT_USAGE, main
from gmrconv.io import save_gmr
from gmrconv.kernel import init_layer, materialize_kernel

TINY_BENCH = ["bench", "--k", "3,5", "--channels", "4", "--spatial", "8", "--repeats", "3",
              "--warmup", "1", "--batch", "1"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _rows(text):
    return list(csv.DictReader(io.StringIO("\n".join(text.splitlines()[1:]))))


def test_bench_csv(capsys):
    code, out, err = run(TINY_BENCH, capsys)
    assert code == EXIT_OK
    assert out.startswith("# gmrconv bench report v1; input_sha256=")
    rows = _rows(out)
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"direct_dense", "direct_materialized_gmr", "efficient_gmr"}
    assert all(float(r["total_seconds"]) > 0 for r in rows)
    assert "input checksum" in err


def test_bench_stable_output_is_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(TINY_BENCH + ["--stable-output", "--format", "json", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    payload = json.loads(a.read_text())
    assert payload["kind"] == "bench"
    assert all(r["total_seconds"] == 0 for r in payload["results"])


def test_bench_macs_reflect_op_count(capsys):
    code, out, _ = run(["bench", "--k", "9", "--channels", "16", "--spatial", "12", "--repeats", "1",
                        "--warmup", "0", "--batch", "1", "--methods", "direct_dense,efficient_gmr"],
                       capsys)
    rows = {r["method"]: int(r["macs"]) for r in _rows(out)}
    assert rows["efficient_gmr"] < rows["direct_dense"]


@pytest.mark.parametrize("argv", [
    ["bench", "--repeats", "0"],
    ["bench", "--warmup", "-1"],
    ["bench", "--k", "x"],
    ["bench", "--methods", "fft"],
    ["equiv", "--angles", "a,b"],
    ["nosuch"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_USAGE


def test_bad_geometry_is_usage_error(capsys):
    assert main(["params", "--k", "4"]) == EXIT_USAGE


def test_params(capsys):
    code, out, _ = run(["params", "--k", "9", "--rings", "5", "--channels", "64"], capsys)
    assert code == 0
    row = _rows(out)[0]
    assert (int(row["gmr_params"]), int(row["dense_params"])) == (20485, 331776)
    assert abs(float(row["compression"]) - 16.19) <= 0.01


def test_equiv_assert_passes(capsys):
    code, out, _ = run(["equiv", "--k", "5", "--channels", "2", "--spatial", "24",
                        "--angles", "0:360:90", "--trials", "2", "--assert"], capsys)
    assert code == EXIT_OK
    rows = _rows(out)
    assert [r["angle"] for r in rows] == ["0", "90", "180", "270"]
    assert all(float(r["mean_error"]) <= 1e-10 for r in rows)


def test_equiv_json_reproducible(capsys):
    argv = ["equiv", "--k", "3", "--channels", "1", "--spatial", "16", "--angles", "45",
            "--trials", "1", "--format", "json", "--basis", "nearest"]
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv, capsys)
    assert a == b
    assert json.loads(a)["meta"]["exact_symmetry_error"] <= 1e-10


def test_dump_kernel(tmp_path, capsys):
    p = init_layer(2, 3, 5, seed=2)
    path = tmp_path / "k.gmr"
    save_gmr(path, p)
    code, out, _ = run(["dump-kernel", str(path), "--ring", "1"], capsys)
    assert code == 0
    grid = np.array([[float(v) for v in line.split(",")] for line in out.splitlines()[1:]])
    assert np.array_equal(grid, p.basis().M[1])
    code, out, _ = run(["dump-kernel", str(path), "--out-channel", "2", "--in-channel", "0"], capsys)
    grid = np.array([[float(v) for v in line.split(",")] for line in out.splitlines()[1:]])
    assert np.array_equal(grid, materialize_kernel(p)[2, 0])
    code, out, _ = run(["dump-kernel", str(path)], capsys)
    assert out.count("# out") == 6


def test_dump_kernel_errors(tmp_path, capsys):
    bad = tmp_path / "bad.gmr"
    bad.write_bytes(b"NOTAGMR!" + b"\0" * 16)
    with pytest.raises(SystemExit) as info:
        main(["dump-kernel", str(bad)])
    assert info.value.code == EXIT_USAGE
    good = tmp_path / "good.gmr"
    save_gmr(good, init_layer(1, 1, 3))
    with pytest.raises(SystemExit):
        main(["dump-kernel", str(good), "--ring", "7"])


def test_train_demo_tiny_config_fails_assert(tmp_path, capsys):
    cfg = {"base_channels": 2, "gmr_epochs": 1, "dense_epochs": 1, "angles": [0, 45],
           "dataset": {"size": 16, "train_per_class": 4, "test_per_class": 2}}
    path = tmp_path / "demo.json"
    path.write_text(json.dumps(cfg))
    out_dir = tmp_path / "run"
    code = main(["train-demo", str(path), "--out", str(out_dir), "--stable-output", "--assert"])
    capsys.readouterr()
    # a one-epoch run cannot reach the accuracy bar
    assert code == EXIT_ASSERT
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert set(metrics["twins"]) == {"gmr", "dense"}
    assert metrics["seconds"] == 0.0
    for name in ("train.gmrdata", "test.gmrdata", "gmr_twin.gmrnet", "dense_twin.gmrnet"):
        assert (out_dir / name).exists()


def test_train_demo_rejects_unknown_settings(tmp_path):
    path = tmp_path / "demo.json"
    path.write_text(json.dumps({"learning_rate": 1}))
    with pytest.raises(SystemExit) as info:
        main(["train-demo", str(path)])
    assert info.value.code == EXIT_USAGE
