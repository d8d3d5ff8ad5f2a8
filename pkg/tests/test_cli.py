import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boneage import checkpoint as ckpt
from boneage.cli import main
from boneage.config import SCHEMA, ConfigError, RunConfig
from boneage.dataset import DataError, read_index, write_index
from boneage.nn import AblationSpec, NetworkConfig, apply_ablation, build_network
from boneage.pnm import read_pgm, read_ppm, write_pgm
from boneage.training import NesterovSGD, PlateauScheduler

FAST = "train.epochs=2\nsynthetic.n_train=12\nsynthetic.n_val=4\naugment.crop_min=1.0\n" \
       "net.widths=2,4,4\nnet.mask_depths=1,1,1\nnet.feature_width=4\n"


# config


def test_config_defaults_and_round_trip():
    cfg = RunConfig()
    assert cfg["train.lr"] == 0.01 and cfg["train.momentum"] == 0.9 and cfg["train.weight_decay"] == 1e-4
    assert cfg["train.patience"] == 5 and cfg["loss.reg_variant"] == "mae"
    again = RunConfig.parse(cfg.to_text())
    assert again == cfg and again.to_text() == cfg.to_text()


def test_config_parse_comments_and_overrides():
    cfg = RunConfig.parse("# header\ntrain.lr = 0.05  # faster\n\nnet.widths=4,8,16\naugment.enabled=false\n")
    assert cfg["train.lr"] == 0.05 and cfg["net.widths"] == (4, 8, 16)
    assert cfg.augment_params() is None
    assert cfg.network_config().widths == (4, 8, 16)


@pytest.mark.parametrize("text", [
    "bogus.key=1",
    "train.lr=-1",
    "train.momentum=1.0",
    "net.widths=8,16",
    "loss.reg_variant=huber",
    "canny.low=0.5\ncanny.high=0.2",
    "train.epochs=ten",
    "no equals sign",
    "train.lr=0.1\ntrain.lr=0.2",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        RunConfig.parse(text)


_values = {
    "train.lr": st.floats(0, 10, allow_nan=False),
    "train.batch_size": st.integers(1, 512),
    "net.widths": st.tuples(st.integers(1, 64), st.integers(1, 64), st.integers(1, 64)),
    "augment.enabled": st.booleans(),
    "loss.reg_variant": st.sampled_from(["mae", "mse"]),
    "synthetic.gender_offset": st.floats(0, 100, allow_nan=False),
}


@settings(max_examples=50, deadline=None)
@given(st.fixed_dictionaries({}, optional=_values))
def test_config_round_trip_property(values):
    cfg = RunConfig(values)
    assert RunConfig.parse(cfg.to_text()).values == cfg.values
    for k, v in values.items():
        assert cfg[k] == v


def test_schema_covers_documented_keys():
    for key in ["canny.sigma", "canny.low", "canny.high", "net.input_size", "net.widths", "net.feature_width",
                "train.lr", "train.momentum", "train.weight_decay", "train.patience", "train.batch_size",
                "train.epochs", "train.seed", "loss.reg_variant"]:
        assert key in SCHEMA


# checkpoint


def _trained_state(tmp_path):
    cfg = NetworkConfig(widths=(2, 4, 4), mask_depths=(1, 1, 1), feature_width=4)
    net = build_network(cfg, 3)
    rng = np.random.default_rng(0)
    for p in net.parameters():
        p.data += rng.normal(0, 0.1, size=p.shape).astype(np.float32)
    net.set_target_scaling(70.0, 30.0)
    opt = NesterovSGD(net.parameters(), 0.01)
    for v in opt.velocities:
        v[...] = rng.normal(size=v.shape)
    sch = PlateauScheduler(opt)
    sch.step(3.0)
    sch.step(3.5)
    cp = ckpt.from_training(net, opt, sch, rng={"seed": 0, "next_epoch": 4}, meta={"epoch": 4})
    path = tmp_path / "m.ckpt"
    ckpt.save(path, cp)
    return net, path


def test_checkpoint_round_trip_is_byte_exact_and_forward_exact(tmp_path):
    net, path = _trained_state(tmp_path)
    raw = path.read_bytes()
    cp = ckpt.load(path)
    assert ckpt.encode(cp) == raw
    assert cp.scheduler["bad_epochs"] == 1 and cp.rng == {"next_epoch": 4, "seed": 0}
    assert list(cp.velocities) == [n for n, _ in net.named_parameters()]
    loaded = cp.build()
    img = np.random.default_rng(1).random((3, 1, 64, 64))
    g = np.array([[0.0], [1.0], [1.0]])
    net.eval()
    loaded.eval()
    np.testing.assert_array_equal(net(img, g)[0].data, loaded(img, g)[0].data)


def test_checkpoint_preserves_ablation(tmp_path):
    net = apply_ablation(build_network(NetworkConfig(widths=(2, 2, 2), feature_width=2)),
                         AblationSpec(frozenset({"Att3_2"}), gender=False))
    path = tmp_path / "a.ckpt"
    ckpt.save(path, ckpt.from_training(net))
    back = ckpt.load(path).build()
    assert not back.module("Att3_2").enabled and not back.gender_enabled


def test_checkpoint_bad_magic(tmp_path):
    _, path = _trained_state(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ckpt.BadMagic):
        ckpt.load(path)


def test_checkpoint_version_mismatch(tmp_path):
    _, path = _trained_state(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", ckpt.VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(ckpt.VersionMismatch):
        ckpt.load(path)


def test_checkpoint_truncation_at_any_length(tmp_path):
    _, path = _trained_state(tmp_path)
    raw = path.read_bytes()
    rng = np.random.default_rng(2)
    for cut in sorted(set([0, 3, 4, 7, 8, 20, len(raw) - 1] + list(rng.integers(8, len(raw), 30)))):
        with pytest.raises(ckpt.Truncation):
            ckpt.decode(raw[:cut])


def test_checkpoint_config_mismatch(tmp_path):
    _, path = _trained_state(tmp_path)
    with pytest.raises(ckpt.ConfigMismatch):
        ckpt.load(path, NetworkConfig())
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(path.read_bytes() + b"\0")


# dataset


def _write_dataset(tmp_path, n=3):
    items = [(f"img{i}", np.full((8, 8), 10 * i, np.uint8), i % 2 == 0, 12.0 * i) for i in range(n)]
    write_index(tmp_path / "index.csv", tmp_path / "images", items)
    return items


def test_index_round_trip(tmp_path):
    items = _write_dataset(tmp_path)
    rows = read_index(tmp_path / "index.csv", tmp_path / "images")
    assert [(r.image_id, r.male, r.age) for r in rows] == [(i, m, a) for i, _, m, a in items]
    np.testing.assert_array_equal(read_pgm(rows[1].path), items[1][1])


@pytest.mark.parametrize("body", [
    "id,age,male\n",
    "id,boneage,male\nimg0,abc,true\n",
    "id,boneage,male\nimg0,-3,true\n",
    "id,boneage,male\nimg0,12,maybe\n",
    "id,boneage,male\nimg0,12\n",
    "id,boneage,male\nmissing,12,true\n",
    "id,boneage,male\nimg0,12,true\nimg0,13,false\n",
])
def test_index_errors(tmp_path, body):
    _write_dataset(tmp_path)
    (tmp_path / "index.csv").write_text(body)
    with pytest.raises(DataError):
        read_index(tmp_path / "index.csv", tmp_path / "images")


def test_index_male_case_insensitive_and_ambiguous_ids(tmp_path):
    _write_dataset(tmp_path)
    (tmp_path / "index.csv").write_text("id,boneage,male\nimg0,12,TRUE\nimg1,5.5,False\n")
    rows = read_index(tmp_path / "index.csv", tmp_path / "images")
    assert [r.male for r in rows] == [True, False]
    (tmp_path / "images" / "img0.png").write_bytes(b"")
    with pytest.raises(DataError):
        read_index(tmp_path / "index.csv", tmp_path / "images")


# commands


@pytest.fixture
def fast_cfg(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST)
    return str(path)


def test_cli_preprocess_empty_index(tmp_path, fast_cfg):
    (tmp_path / "images").mkdir()
    (tmp_path / "index.csv").write_text("id,boneage,male\n")
    code = main(["preprocess", "--index", str(tmp_path / "index.csv"), "--images", str(tmp_path / "images"),
                 "--out", str(tmp_path / "out"), "--config", fast_cfg])
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["report.txt"]


def test_cli_preprocess_masks_and_is_deterministic(tmp_path, fast_cfg):
    assert main(["synth", "--out", str(tmp_path / "d"), "--n", "4", "--config", fast_cfg]) == 0
    blank = np.full((64, 64), 16, np.uint8)
    write_pgm(tmp_path / "d" / "images" / "blank.pgm", blank)
    with open(tmp_path / "d" / "index.csv", "a") as fh:
        fh.write("blank,10,true\n")
    args = ["preprocess", "--index", str(tmp_path / "d" / "index.csv"), "--images",
            str(tmp_path / "d" / "images"), "--config", fast_cfg]
    assert main(args + ["--out", str(tmp_path / "o1")]) == 0
    assert main(args + ["--out", str(tmp_path / "o2")]) == 0
    report = (tmp_path / "o1" / "report.txt").read_text()
    assert "blank\tEmptyForeground" in report
    names = sorted(p.name for p in (tmp_path / "o1").iterdir())
    assert len(names) == 9
    for name in names:
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()
    masked = read_pgm(tmp_path / "o1" / "train00000.pgm")
    mask = read_pgm(tmp_path / "o1" / "train00000_mask.pgm")
    assert set(np.unique(mask)) <= {0, 255}
    assert np.all(masked[mask == 0] == 0)


def test_cli_train_eval_predict(tmp_path, fast_cfg, capsys):
    ck, log = str(tmp_path / "m.ckpt"), str(tmp_path / "log.csv")
    assert main(["train", "--synthetic", "--config", fast_cfg, "--out-checkpoint", ck, "--log", log]) == 0
    lines = open(log).read().splitlines()
    assert lines[0] == "epoch,train_loss,val_mae_months,lr" and len(lines) == 3

    assert main(["synth", "--out", str(tmp_path / "d"), "--n", "3", "--config", fast_cfg]) == 0
    ev = ["eval", "--checkpoint", ck, "--index", str(tmp_path / "d" / "index.csv"),
          "--images", str(tmp_path / "d" / "images"), "--config", fast_cfg]
    capsys.readouterr()
    assert main(ev) == 0
    first = capsys.readouterr().out
    assert main(ev) == 0
    assert capsys.readouterr().out == first
    float(first)

    img = str(tmp_path / "d" / "images" / "train00000.pgm")
    pred = ["predict", "--checkpoint", ck, "--image", img, "--config", fast_cfg]
    assert main(pred + ["--gender", "male"]) == 0
    plain = float(capsys.readouterr().out)
    assert main(pred + ["--gender", "male", "--attention", str(tmp_path / "att")]) == 0
    assert float(capsys.readouterr().out) == plain
    files = sorted(p.name for p in (tmp_path / "att").iterdir())
    assert files == ["Att1_1.ppm", "Att2_1.ppm", "Att2_2.ppm", "Att3_1.ppm", "Att3_2.ppm", "Att3_3.ppm"]
    assert read_ppm(tmp_path / "att" / "Att1_1.ppm").shape == (16, 16, 3)
    assert main(pred + ["--gender", "female"]) == 0
    female = float(capsys.readouterr().out)
    cp = ckpt.load(ck)
    delta = float(cp.state["out.weight"][-1, 0]) * float(cp.state["age_scale"][0])
    assert plain - female == pytest.approx(delta, rel=1e-3, abs=1e-3)


def test_cli_training_is_reproducible(tmp_path, fast_cfg):
    logs = []
    for i in range(2):
        log = tmp_path / f"log{i}.csv"
        ck = tmp_path / f"m{i}.ckpt"
        assert main(["train", "--synthetic", "--config", fast_cfg, "--log", str(log),
                     "--out-checkpoint", str(ck)]) == 0
        logs.append(log.read_bytes())
    assert logs[0] == logs[1]
    assert (tmp_path / "m0.ckpt").read_bytes() == (tmp_path / "m1.ckpt").read_bytes()


def test_cli_error_codes(tmp_path, fast_cfg):
    assert main(["train", "--synthetic", "--ablate", "Att4_1", "--config", fast_cfg]) == 1
    assert main(["train", "--config", fast_cfg]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope=1\n")
    assert main(["train", "--synthetic", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    (tmp_path / "images").mkdir()
    (tmp_path / "index.csv").write_text("id,boneage,male\n")
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--index", str(tmp_path / "index.csv"),
                 "--images", str(tmp_path / "images")]) == 2
    garbage = tmp_path / "g.ckpt"
    garbage.write_bytes(b"GARBAGE!")
    assert main(["predict", "--checkpoint", str(garbage), "--image", "x.pgm", "--gender", "male"]) == 2
    diverge = tmp_path / "div.cfg"
    diverge.write_text(FAST + "train.lr=1e30\naugment.enabled=false\n")
    with np.errstate(all="ignore"):
        assert main(["train", "--synthetic", "--config", str(diverge)]) == 3


def test_cli_eval_empty_set_and_config_mismatch(tmp_path, fast_cfg):
    ck = str(tmp_path / "m.ckpt")
    assert main(["train", "--synthetic", "--config", fast_cfg, "--out-checkpoint", ck]) == 0
    (tmp_path / "images").mkdir()
    (tmp_path / "index.csv").write_text("id,boneage,male\n")
    ev = ["eval", "--checkpoint", ck, "--index", str(tmp_path / "index.csv"), "--images", str(tmp_path / "images")]
    assert main(ev + ["--config", fast_cfg]) == 2
    other = tmp_path / "other.cfg"
    other.write_text("net.widths=8,16,32\n")
    assert main(ev + ["--config", str(other)]) == 2


def test_cli_ablate_suite_table(tmp_path, fast_cfg, capsys):
    code = main(["ablate-suite", "--config", fast_cfg, "--seeds", "2", "--variants", "full;no-gender"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t") == ["variant", "seed0", "seed1", "mean", "delta_vs_full"]
    assert [l.split("\t")[0] for l in lines[1:]] == ["full", "no-gender"]
    assert lines[1].split("\t")[-1] == "+0.000"
