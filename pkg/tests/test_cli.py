import json

import pytest

from dvib import cli, data
from dvib.evaluation import grid_from_csv

FAST = ["--epochs", "2", "--hidden", "16", "--d-s", "4", "--d-p", "3", "--probe-epochs", "50"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def factor_file(tmp_path):
    assert run("generate", "--preset", "factor", "--n", "300", "--d-x", "16", "--d-y", "16", "--seed", "7",
               "--out", tmp_path / "gen") == 0
    return tmp_path / "gen" / "factor.dvds"


def test_generate_echoes_parameters(tmp_path):
    assert run("generate", "--preset", "factor", "--n", "5000", "--seed", "7", "--out", tmp_path) == 0
    meta = json.loads((tmp_path / "factor.json").read_text())
    assert meta == {"generator": "factor", "seed": 7, "n": 5000, "k_shared": 10, "k_px": 5, "k_py": 4,
                    "d_x": 64, "d_y": 64, "noise_sd": 0.1}
    assert data.load_dataset(tmp_path / "factor.dvds").meta == meta
    sidecar = json.loads((tmp_path / "generate.config.json").read_text())
    assert sidecar["command"] == "generate" and sidecar["n"] == 5000 and sidecar["k_px"] == 5


def test_generate_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run("generate", "--preset", "glyph", "--n", "200", "--seed", "3", "--out", tmp_path / sub) == 0
    assert (tmp_path / "a" / "glyph.dvds").read_bytes() == (tmp_path / "b" / "glyph.dvds").read_bytes()


def test_generate_invalid_preset(tmp_path, capsys):
    assert run("generate", "--preset", "cifar", "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "factor" in err and "glyph" in err and "idx" in err


def test_generate_bad_parameters_are_config_errors(tmp_path):
    assert run("generate", "--preset", "factor", "--n", "1", "--out", tmp_path) == 1


def test_generate_idx_preset(tmp_path, rng):
    raw = rng.integers(0, 256, (20, 8, 8))
    data.write_idx(tmp_path / "img", tmp_path / "lab", raw, rng.integers(0, 3, 20))
    assert run("generate", "--preset", "idx", "--images", tmp_path / "img", "--labels", tmp_path / "lab",
               "--out", tmp_path) == 0
    ds = data.load_dataset(tmp_path / "idx.dvds")
    assert ds.x.shape == (20, 64)
    assert run("generate", "--preset", "idx", "--images", tmp_path / "nope", "--labels", tmp_path / "lab",
               "--out", tmp_path) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 111, "seed": 4, "d_x": 20}))
    assert run("generate", "--config", cfg, "--n", "222", "--out", tmp_path) == 0
    meta = json.loads((tmp_path / "factor.json").read_text())
    assert (meta["n"], meta["seed"], meta["d_x"], meta["d_y"]) == (222, 4, 20, 64)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("generate", "--config", cfg, "--out", tmp_path) == 1
    assert run("generate", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2


def test_train_artifacts(tmp_path, factor_file):
    out = tmp_path / "run"
    assert run("train", "--model", "dvib", "--data", factor_file, "--lambda", "1.0", "--beta", "0.001",
               "--seed", "7", "--out", out, *FAST) == 0
    for name in ("model.dvck", "train_log.csv", "grid.csv", "train.config.json"):
        assert (out / name).exists()
    assert len((out / "train_log.csv").read_text().splitlines()) == 1 + 2
    assert len(grid_from_csv((out / "grid.csv").read_text())) == 12
    sidecar = json.loads((out / "train.config.json").read_text())
    assert sidecar["lam"] == 1.0 and sidecar["beta"] == 0.001 and sidecar["epochs"] == 2


def test_train_vae_has_no_mi(tmp_path, factor_file):
    out = tmp_path / "vae"
    assert run("train", "--model", "vae", "--data", factor_file, "--out", out, *FAST) == 0
    lines = (out / "train_log.csv").read_text().splitlines()
    header = lines[0].split(",")
    mi = [float(line.split(",")[header.index("mi_shared")]) for line in lines[1:]]
    assert mi == [0.0, 0.0]
    assert len(grid_from_csv((out / "grid.csv").read_text())) == 3


def test_rerun_is_byte_identical(tmp_path, factor_file):
    for sub in ("a", "b"):
        assert run("train", "--data", factor_file, "--seed", "7", "--out", tmp_path / sub, *FAST) == 0
    for name in ("grid.csv", "train_log.csv", "model.dvck"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_matches_train_grid(tmp_path, factor_file):
    out = tmp_path / "run"
    assert run("train", "--data", factor_file, "--seed", "7", "--out", out, *FAST) == 0
    assert run("eval", "--checkpoint", out / "model.dvck", "--data", factor_file, "--out", tmp_path / "ev") == 0
    assert (tmp_path / "ev" / "grid.csv").read_text() == (out / "grid.csv").read_text()
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert set(summary["best_label_set"]) == {"z_x_s", "z_x_p", "z_y_s", "z_y_p"}


def test_eval_with_corruption(tmp_path, factor_file):
    out = tmp_path / "run"
    assert run("train", "--data", factor_file, "--seed", "7", "--out", out, *FAST) == 0
    assert run("eval", "--checkpoint", out / "model.dvck", "--data", factor_file, "--corrupt-x", "gaussian_noise:3",
               "--out", tmp_path / "ev") == 0
    grid = grid_from_csv((tmp_path / "ev" / "grid.csv").read_text())
    assert len(grid) == 12
    clean = {(r.representation, r.label_set): r.accuracy for r in grid_from_csv((out / "grid.csv").read_text())}
    noisy = {(r.representation, r.label_set): r.accuracy for r in grid}
    assert noisy[("z_x_s", "shared")] <= clean[("z_x_s", "shared")]
    # y-view encoders never see the corrupted x view
    assert noisy[("z_y_s", "shared")] == clean[("z_y_s", "shared")]


def test_eval_errors(tmp_path, factor_file):
    assert run("eval", "--checkpoint", tmp_path / "none.dvck", "--data", factor_file, "--out", tmp_path) == 2
    out = tmp_path / "run"
    assert run("train", "--data", factor_file, "--out", out, *FAST) == 0
    run("generate", "--preset", "factor", "--n", "100", "--d-x", "20", "--out", tmp_path / "other")
    assert run("eval", "--checkpoint", out / "model.dvck", "--data", tmp_path / "other" / "factor.dvds",
               "--out", tmp_path) == 1
    (tmp_path / "broken.dvck").write_bytes((out / "model.dvck").read_bytes()[:100])
    assert run("eval", "--checkpoint", tmp_path / "broken.dvck", "--data", factor_file, "--out", tmp_path) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_non_finite_exit_code(tmp_path, capsys):
    ds = data.gen_factor_dataset(n=100, d_x=16, d_y=16)
    ds.y[:] = float("inf")
    data.save_dataset(ds, tmp_path / "bad.dvds")
    code = run("train", "--data", tmp_path / "bad.dvds", "--out", tmp_path, *FAST)
    assert code == 3
    assert "recon_y_s" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert run("gradcheck", "--seed", "0") == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("ok")]
    assert len(lines) >= 8


def test_gradcheck_perturbed_term_fails(capsys):
    assert run("gradcheck", "--perturb", "bounds.js_mi_lower_bound") == 3
    captured = capsys.readouterr()
    assert "FAIL bounds.js_mi_lower_bound" in captured.out
    assert "bounds.js_mi_lower_bound" in captured.err
