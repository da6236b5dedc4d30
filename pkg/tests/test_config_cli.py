import numpy as np
import pytest

from sarmonet import cli
from sarmonet.config import KEYS, RunConfig, parse_config_text
from sarmonet.errors import ConfigError
from sarmonet.fileio import decode_pbm, read_sarf, write_sarf
from sarmonet.speckle import sample_speckle
from sarmonet.train import DESK_LAMBDA_KL

TINY = """
# tiny run
source = synthetic:ramp+constant
patch_size = 16
n_images = 2
image_size = 64
batch_size = 4
width = 4
depth = 5
epochs_phase1 = 1
epochs_phase2 = 0
"""


def test_parse_config():
    v = parse_config_text("seed = 3  # comment\n\nlooks=2\nuse_kl = off\n")
    assert v == {"seed": 3, "looks": 2, "use_kl": False}
    for bad in ("nokey\n", "bogus = 1\n", "seed = 1\nseed = 2\n", "seed = x\n", "use_kl = maybe\n"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)


def test_presets_and_overrides():
    desk = RunConfig()
    assert desk.train().width == 16 and desk.train().weights.lambda_kl == DESK_LAMBDA_KL
    paper = RunConfig({"preset": "paper"})
    t = paper.train()
    assert (t.batch_size, t.epochs_phase1, t.epochs_phase2, t.width, t.weights.lambda_kl) == \
        (128, 87, 35, 64, 1e4)
    c = RunConfig({"lambda_kl": 5.0, "width": 8}).with_overrides(seed=9)
    assert c.train().weights.lambda_kl == 5.0 and c.train().width == 8 and c.train().seed == 9
    assert c.dataset().seed == 9
    for bad in ({"preset": "huge"}, {"edge_window": 4}, {"batch_size": 0}, {"kl_pooling": "x"}):
        with pytest.raises(ConfigError):
            RunConfig(bad)


def test_dump_roundtrip():
    c = RunConfig({"seed": 4, "combine": "OR", "stride": 8})
    back = RunConfig(parse_config_text(c.dump()))
    assert all(back.get(k) == c.get(k) for k in KEYS)


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 1


def test_cli_bad_config(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense = 1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_cli_data_errors(tmp_path):
    (tmp_path / "junk.sarf").write_bytes(b"nope")
    assert cli.main(["infer", "--weights", str(tmp_path / "junk.sarf"), str(tmp_path / "junk.sarf"),
                     "--out", str(tmp_path)]) == 2
    a = tmp_path / "a.sarf"
    write_sarf(a, np.ones((8, 8)))
    b = tmp_path / "b.sarf"
    write_sarf(b, np.ones((8, 9)))
    assert cli.main(["eval", "--noisy", str(a), "--filtered", str(b), "--out", str(tmp_path)]) == 2
    assert cli.main(["eval", "--noisy", str(a), "--filtered", str(a), "--require-reference",
                     "--out", str(tmp_path)]) == 1
    assert cli.main(["detect", "--out", str(tmp_path)]) == 1


def test_cli_pipeline(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY)
    data, run = tmp_path / "data", tmp_path / "run"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    assert (data / "manifest.csv").exists()
    assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    assert (run / "model.monw").exists() and (run / "train_log.csv").exists()
    assert (run / "train_log.csv").read_text().startswith("step,l2,kl,grad,total,lr")

    img = tmp_path / "scene.sarf"
    clean = np.full((40, 48), 0.5)
    noisy = clean * sample_speckle(40, 48, 1, seed=1).values
    write_sarf(img, noisy)
    write_sarf(tmp_path / "clean.sarf", clean)
    out = tmp_path / "inf"
    assert cli.main(["infer", "--weights", str(run / "model.monw"), str(img), "--out", str(out)]) == 0
    filt = read_sarf(out / "scene_filtered.sarf")
    assert filt.shape == (40, 48)
    assert any((out / f"scene_filtered{s}").exists() for s in (".png", ".pgm"))

    ev = tmp_path / "ev"
    assert cli.main(["eval", "--noisy", str(img), "--filtered", str(out / "scene_filtered.sarf"),
                     "--clean", str(tmp_path / "clean.sarf"), "--out", str(ev)]) == 0
    head, row = (ev / "metrics.csv").read_text().splitlines()
    assert head.split(",")[1:] == ["ssim", "mse", "snr", "enl", "delta_h", "r_enl", "r_mu",
                                   "mu_ratio", "m_index", "d_kl"]
    assert "" not in row.split(",")

    det = tmp_path / "det"
    assert cli.main(["detect", "--ratio", str(out / "scene_ratio.sarf"), "--sar", str(img),
                     "--out", str(det)]) == 0
    mask = decode_pbm((det / "eh_mask.pbm").read_bytes())
    assert mask.shape == (40, 48)
    assert (det / "eh_points.csv").read_text().startswith("row,col,edge_hit,ks_hit")
    assert (det / "fit_summary.csv").exists() and (det / "fit_curves.csv").exists()


def test_cli_train_resume_matches(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY.replace("epochs_phase1 = 1", "epochs_phase1 = 2"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["train", "--config", str(cfg), "--out", str(a)]) == 0
    part = cfg.read_text() + "max_steps = 3\ncheckpoint_every = 3\n"
    cfg2 = tmp_path / "part.cfg"
    cfg2.write_text(part)
    assert cli.main(["train", "--config", str(cfg2), "--out", str(b)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", str(b), "--resume", "latest"]) == 0
    assert (a / "model.monw").read_bytes() == (b / "model.monw").read_bytes()
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "empty"),
                     "--resume", "latest"]) == 1


def test_cli_ablate(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY)
    assert cli.main(["ablate", "--config", str(cfg), "--variants", "L2,L", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines] == ["variant", "L2", "L"]
    assert cli.main(["ablate", "--config", str(cfg), "--variants", "L9", "--out", str(tmp_path)]) == 2
