import json
import subprocess
import sys

import numpy as np
import pytest

from slm import cli
from slm.train import TrainConfig

SYNTH = ["--L", "2", "--features", "20", "--samples", "200"]
QUICK = ["--epochs", "2", "--batch", "64"]


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_synth_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, _, _ = run(["synth", "--L", "2", "--features", "20", "--samples", "100", "--seed", "1", "--out", str(d)], capsys)
        assert code == 0
    assert (a / "synth.csv").read_bytes() == (b / "synth.csv").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 1
    assert set(manifest["outputs"]) == {"synth.csv", "salient.tsv"}


def test_train_outputs_and_manifest(tmp_path, capsys):
    code, out, _ = run(["train", *SYNTH, *QUICK, "--target-features", "4", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["selected"] == 4
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for name in manifest["outputs"]:
        assert (tmp_path / name).is_file()
    assert {"metrics.tsv", "selection.tsv", "losses.tsv", "model.npz", "losses.png", "mask.png"} <= set(manifest["outputs"])
    for name in ("metrics.tsv", "selection.tsv", "losses.tsv"):
        h, header, rows = cli.read_tsv(tmp_path / name)
        assert h == manifest["manifest_hash"]
        assert all(len(r) == len(header) for r in rows)
    _, header, rows = cli.read_tsv(tmp_path / "losses.tsv")
    assert header[:4] == ["step", "epoch", "target_count", "support_size"]
    # only the unscalable all-ones start may miss its target
    assert all(r[2] == r[3] or r[-1] == "true" for r in rows)
    assert all(r[-1] == "false" for r in rows[1:])
    _, _, sel = cli.read_tsv(tmp_path / "selection.tsv")
    assert sum(r[4] == "true" for r in sel) == 4
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_train_select_all_features(tmp_path, capsys):
    code, out, _ = run(["train", *SYNTH, *QUICK, "--target-features", "20", "--no-plots", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["selected"] == 20
    assert not (tmp_path / "losses.png").exists()


def test_train_from_csv(tmp_path, capsys):
    run(["synth", *SYNTH, "--out", str(tmp_path / "d")], capsys)
    code, out, _ = run(
        ["train", "--data", str(tmp_path / "d" / "synth.csv"), *QUICK, "--target-features", "3", "--out", str(tmp_path / "t")],
        capsys,
    )
    assert code == 0
    assert "salient" not in json.loads(out)


def test_env_var_sets_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert run(["synth", *SYNTH], capsys)[0] == 0
    assert (tmp_path / "env" / "synth.csv").is_file()
    # an explicit flag still wins
    assert run(["synth", *SYNTH, "--out", str(tmp_path / "flag")], capsys)[0] == 0
    assert (tmp_path / "flag" / "synth.csv").is_file()


@pytest.mark.parametrize(
    "config,flags,expected",
    [
        ({}, [], {"n_epochs": TrainConfig().n_epochs, "mi_weight": 1.0, "tempering": True}),
        ({"n_epochs": 7, "mi_weight": 0.5}, [], {"n_epochs": 7, "mi_weight": 0.5}),
        ({"n_epochs": 7}, ["--epochs", "3"], {"n_epochs": 3}),
        ({"tempering": True}, ["--no-tempering"], {"tempering": False}),
        ({"hsic_enabled": False}, ["--hsic"], {"hsic_enabled": True}),
        ({"learning_rate": 0.1}, ["--lr", "0.02", "--mi-weight", "2"], {"learning_rate": 0.02, "mi_weight": 2.0}),
        ({}, ["--no-mi", "--no-rcs", "--no-scaling"], {"mi_enabled": False, "rcs_enabled": False, "scaling": False}),
        ({"rcs_reduction": "sum"}, ["--hidden", "8", "--layers", "2"], {"rcs_reduction": "sum", "hidden_units": 8, "n_layers": 2}),
    ],
)
def test_config_precedence(tmp_path, config, flags, expected):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config))
    args = cli.build_parser().parse_args(["train", "--config", str(path), *flags])
    cfg = cli.resolve_config(args)
    for key, value in expected.items():
        assert getattr(cfg, key) == value


@pytest.mark.parametrize(
    "argv,kind",
    [
        (["train", "--bogus"], "usage"),
        (["frobnicate"], "usage"),
        (["train", "--epochs", "zero"], "usage"),
        (["train", "--data", "missing.csv"], "input"),
        (["train", "--config", "missing.json"], "input"),
    ],
)
def test_errors_are_single_line(argv, kind, capsys):
    code, _, err = run(argv, capsys)
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith(f"error: {kind}: ")


@pytest.mark.parametrize(
    "content,fragment",
    [
        ('{"n_epochs": "ten"}', "expects int"),
        ('{"nope": 1}', "unknown key 'nope'"),
        ("[1, 2]", "JSON object"),
        ("{bad json", "invalid JSON"),
        ('{"n_epochs": 0}', "n_epochs must be positive"),
    ],
)
def test_config_errors(tmp_path, capsys, content, fragment):
    path = tmp_path / "c.json"
    path.write_text(content)
    code, _, err = run(["train", *SYNTH, "--config", str(path), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_USAGE
    assert err.startswith("error: config: ") and fragment in err


def test_target_larger_than_features_is_input_error(tmp_path, capsys):
    code, _, err = run(["train", *SYNTH, *QUICK, "--target-features", "50", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_INPUT
    assert "exceeds 20 features" in err


def test_compare_table(tmp_path, capsys):
    code, out, _ = run(
        ["compare", "--L", "2", "--features", "30", "--samples", "300", *QUICK, "--k", "5", "10", "--seeds", "2", "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0
    _, header, rows = cli.read_tsv(tmp_path / "compare.tsv")
    assert header == ["seed", "k", "method", "n_selected", "salient", "test_accuracy", "test_auc"]
    methods = {r[2] for r in rows}
    assert methods == {"SLM", "Fisher", "AnovaF", "BinnedMI", "LinearCoef", "RandomK", "AllFeatures"}
    assert len(rows) == 2 * (2 * 6 + 1)
    assert all(int(r[3]) == int(r[1]) for r in rows)
    assert (tmp_path / "compare.png").is_file()
    assert set(json.loads(out)) == methods


def test_compare_rejects_bad_k(tmp_path, capsys):
    code, _, err = run(["compare", *SYNTH, *QUICK, "--k", "40", "--out", str(tmp_path)], capsys)
    assert code != 0 and "k=40" in err


def test_ablate_grid(tmp_path, capsys):
    code, out, _ = run(["ablate", *SYNTH, *QUICK, "--target-features", "5", "--seeds", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    _, header, rows = cli.read_tsv(tmp_path / "ablation.tsv")
    assert len(rows) == 8
    assert {(r[2], r[3]) for r in rows} == {("true", "true"), ("false", "true"), ("true", "false"), ("false", "false")}
    _, _, summary = cli.read_tsv(tmp_path / "ablation_summary.tsv")
    assert [r[0] for r in summary] == ["full", "no_mi", "no_tempering", "neither"]
    assert (tmp_path / "ablation.png").is_file()


def test_deterministic_metrics(tmp_path, capsys):
    for d in ("a", "b"):
        run(["train", *SYNTH, *QUICK, "--target-features", "4", "--no-plots", "--out", str(tmp_path / d)], capsys)
    assert (tmp_path / "a" / "losses.tsv").read_bytes() == (tmp_path / "b" / "losses.tsv").read_bytes()


def test_checkpoint_holds_mask(tmp_path, capsys):
    from slm import net

    run(["train", *SYNTH, *QUICK, "--target-features", "4", "--no-plots", "--out", str(tmp_path)], capsys)
    model, _, extra = net.load_checkpoint(tmp_path / "model.npz")
    assert model.n_inputs == 20
    assert np.count_nonzero(extra["mask_weights"]) == 4


def test_write_atomic_leaves_no_temp_on_failure(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(tmp_path / "x.tsv", b"data")
    assert list(tmp_path.iterdir()) == []


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "slm.cli", "synth", *SYNTH, "--out", str(tmp_path)], capture_output=True, text=True
    )
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "slm.cli", "train", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("error: usage:")


def test_failed_run_leaves_no_output_dir(tmp_path, capsys):
    out = tmp_path / "never"
    code, _, _ = run(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(out)], capsys)
    assert code == cli.EXIT_INPUT
    assert not out.exists()


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(["synth", *SYNTH, "--out", str(blocker / "sub")], capsys)
    assert code == cli.EXIT_INPUT
    assert err.startswith("error: output: cannot create output directory")


def test_figures_skipped_without_matplotlib(tmp_path, capsys, monkeypatch):
    import slm

    # a None entry makes the import fail as if matplotlib were absent
    monkeypatch.setitem(sys.modules, "slm.plotting", None)
    monkeypatch.delattr(slm, "plotting", raising=False)
    code, _, err = run(["train", *SYNTH, *QUICK, "--target-features", "4", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "skipping figures" in err
    assert not (tmp_path / "losses.png").exists()
    assert (tmp_path / "metrics.tsv").is_file()
