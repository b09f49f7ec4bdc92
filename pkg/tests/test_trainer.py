"""Trainer tests: config rules, training loop bookkeeping, few-shot draws,
early stopping, determinism, CSV logs, and checkpoint serialization.

Heavy assertions run on 16x16 corpora with a small architecture so the whole
file stays in the seconds range.
"""

import io
import json
import re
import struct

import numpy as np
import pytest

from splitlatent.autodiff import DiffTensor, no_grad
from splitlatent.datagen import SynthSpec, generate, load_batch, labels_for, load_manifest, merge_sources
from splitlatent.errors import ConfigError, FormatError
from splitlatent.losses import LossConfig, classification_loss, loss_rec, loss_total
from splitlatent.model import ArchConfig, activations, decode, encode, init_model, select
from splitlatent.residual import ResidualConfig, residual
from splitlatent.tensorio import read_tensor
from splitlatent.trainer import (
    FewShotSpec,
    TrainConfig,
    TrainReport,
    default_batch_size,
    fewshot_indices,
    fewshot_split_sizes,
    finetune,
    load_checkpoint,
    save_checkpoint,
    train_source,
)

ARCH = ArchConfig(
    input_channels=3, input_size=16, latent_maps=8, encoder_channels=(4, 4, 6, 8, 8), seed=0
)


@pytest.fixture(scope="module")
def source_man(tmp_path_factory):
    d = tmp_path_factory.mktemp("src")
    return generate(SynthSpec("patchsplice", n_per_class=30, size=16, seed=3, strength=1.0), d)


@pytest.fixture(scope="module")
def target_man(tmp_path_factory):
    d = tmp_path_factory.mktemp("tgt")
    return generate(SynthSpec("centerinpaint", n_per_class=30, size=16, seed=4, strength=1.0), d)


def quick_cfg(**kw):
    kw.setdefault("seed", 5)
    kw.setdefault("max_epochs", 6)
    return TrainConfig(**kw)


def eval_loss_acc(params, man, split, cfg):
    """Independent re-derivation of the documented forward pipeline."""
    x = residual(load_batch(man, split), cfg.residual)
    y = labels_for(man, split)
    with no_grad():
        xin = DiffTensor(x)
        code = encode(params, xin)
        a0, a1 = activations(code)
        z = select(code, y)
        xhat = decode(params, z)
        total = loss_total(loss_rec(xin, xhat), classification_loss(a0, a1, y, cfg.loss), cfg.loss)
        pred = (a1.value > a0.value).astype(np.int64)
    return total.item(), float(np.mean(pred == y))


# ----------------------------------------------------------------- configs


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 0.001
    assert cfg.batch_size == 64
    assert cfg.beta1 == 0.9
    assert cfg.beta2 == 0.999
    assert cfg.epsilon == 1e-7
    assert cfg.patience_epochs == 30
    assert cfg.max_epochs == 200
    assert cfg.gamma == 0.1
    assert isinstance(cfg.loss, LossConfig)
    assert cfg.loss.gamma == 0.1
    assert isinstance(cfg.residual, ResidualConfig)
    assert cfg.residual.enabled


def test_train_config_loss_built_from_gamma():
    assert TrainConfig(gamma=0.05).loss.gamma == 0.05
    head = TrainConfig(loss=LossConfig(gamma=0.1, head="cross_entropy"))
    assert head.loss.head == "cross_entropy"


@pytest.mark.parametrize(
    "kw",
    [
        {"batch_size": 0},
        {"patience_epochs": 0},
        {"max_epochs": 0},
        {"lr": 0.0},
        {"lr": -1.0},
        {"gamma": 0.2, "loss": LossConfig(gamma=0.1)},
    ],
)
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_default_batch_size_rule():
    # min(64, n/4), never below one image
    assert default_batch_size(2000) == 64
    assert default_batch_size(256) == 64
    assert default_batch_size(100) == 25
    assert default_batch_size(20) == 5
    assert default_batch_size(4) == 1
    assert default_batch_size(1) == 1


# ----------------------------------------------------------------- few-shot sizing


def test_fewshot_split_sizes():
    assert fewshot_split_sizes(0) == (0, 0)
    assert fewshot_split_sizes(1) == (1, 1)
    assert fewshot_split_sizes(2) == (2, 1)  # round(1.2) = 1
    assert fewshot_split_sizes(5) == (5, 3)
    assert fewshot_split_sizes(10) == (10, 6)  # round(6.0)
    assert fewshot_split_sizes(25) == (25, 15)


def test_fewshot_spec_validation():
    FewShotSpec(shots=0, seed=0)
    with pytest.raises(ConfigError):
        FewShotSpec(shots=-1, seed=0)


def test_fewshot_indices_disjoint_and_labeled(target_man):
    spec = FewShotSpec(shots=5, seed=9)
    draw = fewshot_indices(target_man, spec)
    entries = target_man.entries_for("train")
    assert sorted(draw.keys()) == ["train_fake", "train_real", "val_fake", "val_real"]
    assert len(draw["train_real"]) == len(draw["train_fake"]) == 5
    assert len(draw["val_real"]) == len(draw["val_fake"]) == 3
    for kind in ("real", "fake"):
        tr = set(int(i) for i in draw[f"train_{kind}"])
        va = set(int(i) for i in draw[f"val_{kind}"])
        assert not (tr & va), "train/val draws must not overlap"
        for i in tr | va:
            assert entries[i].label == kind
    again = fewshot_indices(target_man, FewShotSpec(shots=5, seed=9))
    for k in draw:
        assert np.array_equal(draw[k], again[k])
    other = fewshot_indices(target_man, FewShotSpec(shots=5, seed=10))
    assert any(not np.array_equal(draw[k], other[k]) for k in draw)


def test_fewshot_indices_exhaustion(target_man):
    # train split holds 21 per class: 13 shots + 8 val = 21 fits, 14 + 8 does not
    fewshot_indices(target_man, FewShotSpec(shots=13, seed=0))
    with pytest.raises(ConfigError, match="shots"):
        fewshot_indices(target_man, FewShotSpec(shots=14, seed=0))


# ----------------------------------------------------------------- train_source


def test_one_epoch_bookkeeping(source_man):
    params = init_model(ARCH)
    before = params.copy_values()
    report = train_source(params, source_man, quick_cfg(max_epochs=1))
    # rows for epoch 0 (pre-training) and epoch 1
    assert len(report.train_loss) == len(report.val_loss) == len(report.val_acc) == 2
    assert 0 <= report.best_epoch <= 1
    assert report.wall_seconds >= 0.0
    after = params.copy_values()
    assert any(not np.array_equal(a, b) for a, b in zip(after, before))


def test_loss_descent_on_separable_data(source_man):
    params = init_model(ARCH)
    report = train_source(params, source_man, quick_cfg(max_epochs=8))
    assert report.train_loss[report.best_epoch] < report.train_loss[0]
    assert report.best_epoch == int(np.argmin(report.val_loss))
    assert report.val_loss[report.best_epoch] == min(report.val_loss)


def test_train_determinism(source_man):
    r1 = train_source(init_model(ARCH), source_man, quick_cfg())
    p2 = init_model(ARCH)
    r2 = train_source(p2, source_man, quick_cfg())
    assert r1.train_loss == r2.train_loss
    assert r1.val_loss == r2.val_loss
    assert r1.val_acc == r2.val_acc
    assert r1.best_epoch == r2.best_epoch
    p3 = init_model(ARCH)
    train_source(p3, source_man, quick_cfg())
    assert all(np.array_equal(a, b) for a, b in zip(p2.copy_values(), p3.copy_values()))


def test_returned_params_are_best_epoch(source_man):
    params = init_model(ARCH)
    cfg = quick_cfg(max_epochs=8)
    report = train_source(params, source_man, cfg)
    loss, _ = eval_loss_acc(params, source_man, "val", cfg)
    assert loss == pytest.approx(min(report.val_loss), rel=1e-5)


def test_early_stopping_patience(source_man):
    cfg = quick_cfg(lr=0.05, patience_epochs=3, max_epochs=40)
    report = train_source(init_model(ARCH), source_man, cfg)
    epochs_run = len(report.val_loss) - 1
    assert epochs_run <= 40
    assert report.val_loss[report.best_epoch] == min(report.val_loss)
    assert report.best_epoch == report.val_loss.index(min(report.val_loss))
    if epochs_run < 40:  # stopped by patience: exactly 3 non-improving epochs after best
        assert epochs_run == report.best_epoch + 3


def test_empty_class_rejected(source_man, tmp_path):
    raw = json.loads((source_man.base_dir / "manifest.json").read_text())
    raw["entries"] = [
        e for e in raw["entries"] if not (e["split"] == "train" and e["label"] == "fake")
    ]
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(raw))
    broken = load_manifest(p)
    broken.base_dir = source_man.base_dir
    with pytest.raises(ConfigError, match="fake"):
        train_source(init_model(ARCH), broken, quick_cfg(max_epochs=1))


def test_multi_source_list_equals_merged(source_man, target_man):
    r1 = train_source(init_model(ARCH), [source_man, target_man], quick_cfg(max_epochs=2))
    r2 = train_source(
        init_model(ARCH), merge_sources([source_man, target_man]), quick_cfg(max_epochs=2)
    )
    assert r1.val_loss == r2.val_loss
    assert r1.train_loss == r2.train_loss


def test_csv_log(source_man, tmp_path):
    log = tmp_path / "train.csv"
    report = train_source(init_model(ARCH), source_man, quick_cfg(max_epochs=3), log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc"
    rows = lines[1:]
    assert len(rows) == len(report.train_loss)
    for i, row in enumerate(rows):
        assert re.fullmatch(r"\d+,\d+\.\d{6},\d+\.\d{6},\d+\.\d{6}", row)
        cells = row.split(",")
        assert int(cells[0]) == i  # epoch numbering starts at 0
        assert float(cells[1]) == pytest.approx(report.train_loss[i], abs=5e-7)
        assert float(cells[2]) == pytest.approx(report.val_loss[i], abs=5e-7)
        assert float(cells[3]) == pytest.approx(report.val_acc[i], abs=5e-7)


# ----------------------------------------------------------------- finetune


def test_finetune_zero_shot_passthrough(target_man):
    params = init_model(ARCH)
    before = params.copy_values()
    report = finetune(params, target_man, FewShotSpec(shots=0, seed=1), quick_cfg())
    assert all(np.array_equal(a, b) for a, b in zip(params.copy_values(), before))
    assert report.train_loss == [] and report.val_loss == [] and report.val_acc == []
    assert report.best_epoch == 0


def test_finetune_monotone_and_restores_best(source_man, target_man):
    params = init_model(ARCH)
    cfg = quick_cfg(max_epochs=4)
    train_source(params, source_man, cfg)
    spec = FewShotSpec(shots=4, seed=2)
    report = finetune(params, target_man, spec, cfg)
    assert len(report.val_loss) == 5  # epochs 0..4 inclusive
    # epoch 0 is a selection candidate: result never worse than zero-shot
    assert report.val_loss[report.best_epoch] <= report.val_loss[0]
    assert report.val_loss[report.best_epoch] == min(report.val_loss)


def test_finetune_determinism(source_man, target_man, tmp_path):
    params = init_model(ARCH)
    cfg = quick_cfg(max_epochs=3)
    train_source(params, source_man, cfg)
    ckpt = tmp_path / "src.ckpt"
    save_checkpoint(params, cfg, ckpt)

    runs = []
    for _ in range(2):
        p, _arch = load_checkpoint(ckpt)
        rep = finetune(p, target_man, FewShotSpec(shots=4, seed=7), cfg)
        runs.append((rep.val_loss, p.copy_values()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_finetune_shots_exceed_pool(target_man):
    with pytest.raises(ConfigError, match="shots"):
        finetune(init_model(ARCH), target_man, FewShotSpec(shots=14, seed=0), quick_cfg())


# ----------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    params = init_model(ARCH)
    cfg = quick_cfg()
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, cfg, path)
    loaded, arch = load_checkpoint(path)
    assert arch.to_dict() == ARCH.to_dict()
    assert all(
        np.array_equal(a, b) for a, b in zip(loaded.copy_values(), params.copy_values())
    )


def test_checkpoint_header_layout(tmp_path):
    params = init_model(ARCH)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, quick_cfg(), path)
    blob = path.read_bytes()
    assert blob[:4] == b"FTCK"
    assert blob[4] == 1
    (jlen,) = struct.unpack("<I", blob[5:9])
    meta = json.loads(blob[9 : 9 + jlen].decode("utf-8"))
    assert meta["arch"] == ARCH.to_dict()
    assert meta["gamma"] == 0.1
    assert blob[9 + jlen : 13 + jlen] == b"FTTN"


def test_checkpoint_tensor_order(tmp_path):
    params = init_model(ARCH)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, quick_cfg(), path)
    blob = path.read_bytes()
    (jlen,) = struct.unpack("<I", blob[5:9])
    f = io.BytesIO(blob[9 + jlen :])
    for t in params.tensors():
        arr = read_tensor(f)
        assert arr.shape == t.value.shape
        assert np.array_equal(arr, t.value)
    assert f.read(1) == b""


def test_checkpoint_deterministic_bytes(tmp_path):
    params = init_model(ARCH)
    save_checkpoint(params, quick_cfg(), tmp_path / "a.ckpt")
    save_checkpoint(params, quick_cfg(), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(init_model(ARCH), quick_cfg(), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert exc.value.offset == 0


def test_checkpoint_bad_version(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(init_model(ARCH), quick_cfg(), path)
    blob = bytearray(path.read_bytes())
    blob[4] = 2
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert exc.value.offset == 4


@pytest.mark.parametrize("keep", [3, 7, 40, -1])
def test_checkpoint_truncation(tmp_path, keep):
    path = tmp_path / "model.ckpt"
    save_checkpoint(init_model(ARCH), quick_cfg(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:keep] if keep >= 0 else blob[:-1])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_arch_mismatch(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(init_model(ARCH), quick_cfg(), path)
    other = ArchConfig(
        input_channels=3, input_size=16, latent_maps=4, encoder_channels=(4, 4, 6, 8, 4), seed=0
    )
    with pytest.raises(ConfigError, match="latent"):
        load_checkpoint(path, expect_arch=other)


def test_checkpoint_provenance_roundtrip(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(init_model(ARCH), quick_cfg(), path, provenance={"domains": ["patchsplice"]})
    blob = path.read_bytes()
    (jlen,) = struct.unpack("<I", blob[5:9])
    meta = json.loads(blob[9 : 9 + jlen].decode("utf-8"))
    assert meta["provenance"] == {"domains": ["patchsplice"]}
