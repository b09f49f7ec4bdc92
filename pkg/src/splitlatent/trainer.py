"""Source-domain training, few-shot fine-tuning, early stopping, checkpoints.

The loop is deterministic end to end: per-epoch shuffles and few-shot draws
come from seeded generators, so (seed, data, config) fully determine the
parameter trajectory and the saved checkpoint bytes.

Epoch numbering: epoch 0 is an evaluation-only row (no optimizer steps) and a
candidate for best-checkpoint selection, which keeps fine-tuning from ever
returning something worse than its starting point; epochs 1..max_epochs each
run one full pass of ADAM updates. Early stopping halts after
`patience_epochs` consecutive epochs without a strict validation-loss
improvement, and the best epoch's parameters are restored into the model.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import DiffTensor, no_grad
from .datagen import DatasetManifest, labels_for, load_batch, merge_sources
from .errors import ConfigError, FormatError
from .losses import LossConfig, classification_loss, loss_rec, loss_total
from .model import ArchConfig, ModelParams, activations, decode, encode, init_model, select
from .optim import AdamState, adam_step
from .residual import ResidualConfig, residual
from .tensorio import read_tensor, write_tensor

CHECKPOINT_MAGIC = b"FTCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    patience_epochs: int = 30
    max_epochs: int = 200
    gamma: float = 0.1
    seed: int = 0
    loss: LossConfig | None = None
    residual: ResidualConfig | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience_epochs < 1:
            raise ConfigError(f"patience_epochs must be >= 1, got {self.patience_epochs}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.loss is None:
            self.loss = LossConfig(gamma=self.gamma)
        elif self.loss.gamma != self.gamma:
            raise ConfigError(
                f"gamma mismatch: TrainConfig.gamma={self.gamma} but LossConfig.gamma={self.loss.gamma}"
            )
        if self.residual is None:
            self.residual = ResidualConfig()


@dataclass
class FewShotSpec:
    shots: int
    seed: int = 0

    def __post_init__(self):
        if self.shots < 0:
            raise ConfigError(f"shots must be >= 0, got {self.shots}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = 0
    wall_seconds: float = 0.0
    checkpoint_path: str | None = None

    @property
    def epochs(self) -> int:
        """Number of optimization epochs actually run (row 0 is evaluation only)."""
        return max(0, len(self.val_loss) - 1)

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "best_epoch": self.best_epoch,
            "wall_seconds": self.wall_seconds,
            "checkpoint_path": self.checkpoint_path,
        }


def default_batch_size(n_train: int) -> int:
    """Desk-scale default: a quarter of the training set, capped at 64."""
    return max(1, min(64, n_train // 4))


def fewshot_split_sizes(shots: int) -> tuple[int, int]:
    """(train, validation) examples per class for a few-shot budget."""
    if shots < 1:
        return 0, 0
    return shots, max(1, round(3 * shots / 5))


def fewshot_indices(man: DatasetManifest, spec: FewShotSpec) -> dict:
    """Seeded, balanced, without-replacement draw from the target train split.

    Returns index arrays into man.entries_for("train") under keys
    train_real/train_fake/val_real/val_fake; train and val never overlap.
    """
    entries = man.entries_for("train")
    pools = {
        "real": np.array([i for i, e in enumerate(entries) if e.label == "real"]),
        "fake": np.array([i for i, e in enumerate(entries) if e.label == "fake"]),
    }
    n_train, n_val = fewshot_split_sizes(spec.shots)
    need = n_train + n_val
    rng = np.random.default_rng([spec.seed, 211])
    out = {}
    for kind in ("real", "fake"):
        pool = pools[kind]
        if need > len(pool):
            raise ConfigError(
                f"{spec.shots} shots need {need} {kind} examples "
                f"(train + validation), target train split has {len(pool)}"
            )
        perm = pool[rng.permutation(len(pool))] if len(pool) else pool
        out[f"train_{kind}"] = perm[:n_train].astype(np.int64)
        out[f"val_{kind}"] = perm[n_train:need].astype(np.int64)
    return out


# ----------------------------------------------------------------- core loop


def _forward(params: ModelParams, xb: np.ndarray, yb: np.ndarray, loss_cfg: LossConfig):
    xin = DiffTensor(xb)
    code = encode(params, xin)
    a0, a1 = activations(code)
    z = select(code, yb)
    xhat = decode(params, z)
    total = loss_total(loss_rec(xin, xhat), classification_loss(a0, a1, yb, loss_cfg), loss_cfg)
    return total, a0, a1


def _eval_set(params, x, y, batch, loss_cfg):
    """Loss and accuracy over a full set, in deterministic fixed-size chunks."""
    total = 0.0
    correct = 0
    with no_grad():
        for start in range(0, len(y), batch):
            xb, yb = x[start : start + batch], y[start : start + batch]
            loss, a0, a1 = _forward(params, xb, yb, loss_cfg)
            total += loss.item() * len(yb)
            correct += int(np.sum((a1.value > a0.value).astype(np.int64) == yb))
    return total / len(y), correct / len(y)


def _run_epochs(params, x_train, y_train, x_val, y_val, cfg: TrainConfig):
    batch = min(cfg.batch_size, len(y_train))
    state = AdamState.for_params(
        params.tensors(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon
    )
    rows = []
    tl0, _ = _eval_set(params, x_train, y_train, batch, cfg.loss)
    vl, va = _eval_set(params, x_val, y_val, batch, cfg.loss)
    rows.append((0, tl0, vl, va))
    best_epoch, best_loss, best_values = 0, vl, params.copy_values()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, 101, epoch]).permutation(len(y_train))
        running, seen = 0.0, 0
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            loss, _, _ = _forward(params, x_train[idx], y_train[idx], cfg.loss)
            loss.backward()
            adam_step(params.tensors(), state)
            running += loss.item() * len(idx)
            seen += len(idx)
        vl, va = _eval_set(params, x_val, y_val, batch, cfg.loss)
        rows.append((epoch, running / seen, vl, va))
        if vl < best_loss:
            best_epoch, best_loss, best_values = epoch, vl, params.copy_values()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience_epochs:
                break
    params.load_values(best_values)
    return rows, best_epoch


def _write_log(path, rows) -> None:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    lines += [f"{e},{tl:.6f},{vl:.6f},{va:.6f}" for e, tl, vl, va in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _report(rows, best_epoch, wall, ckpt) -> TrainReport:
    return TrainReport(
        train_loss=[r[1] for r in rows],
        val_loss=[r[2] for r in rows],
        val_acc=[r[3] for r in rows],
        best_epoch=best_epoch,
        wall_seconds=wall,
        checkpoint_path=str(ckpt) if ckpt is not None else None,
    )


def _check_train_classes(man: DatasetManifest) -> None:
    by_domain = {}
    for e in man.entries_for("train"):
        by_domain.setdefault(e.domain, {"real": 0, "fake": 0})[e.label] += 1
    if not by_domain:
        raise ConfigError("train split is empty")
    for domain, counts in sorted(by_domain.items()):
        for label in ("real", "fake"):
            if counts[label] == 0:
                raise ConfigError(f"domain {domain!r} has no {label!r} examples in the train split")
    if not man.entries_for("val"):
        raise ConfigError("val split is empty; early stopping needs validation data")


# ----------------------------------------------------------------- entry points


def train_source(model: ModelParams, data, cfg: TrainConfig, *, log_path=None, checkpoint_path=None) -> TrainReport:
    """Train on one or more source domains (fakes pool into a single class)."""
    man = merge_sources(list(data)) if isinstance(data, (list, tuple)) else data
    _check_train_classes(man)
    x_train = residual(load_batch(man, "train"), cfg.residual)
    y_train = labels_for(man, "train")
    x_val = residual(load_batch(man, "val"), cfg.residual)
    y_val = labels_for(man, "val")

    start = time.perf_counter()
    rows, best_epoch = _run_epochs(model, x_train, y_train, x_val, y_val, cfg)
    wall = time.perf_counter() - start

    if log_path is not None:
        _write_log(log_path, rows)
    if checkpoint_path is not None:
        domains = sorted({e.domain for e in man.entries_for("train")})
        save_checkpoint(
            model,
            cfg,
            checkpoint_path,
            provenance={
                "kind": "source",
                "seed": cfg.seed,
                "domains": domains,
                "epochs": len(rows) - 1,
                "best_epoch": best_epoch,
                "best_val_loss": round(rows[best_epoch][2], 6),
            },
        )
    return _report(rows, best_epoch, wall, checkpoint_path)


def finetune(model: ModelParams, target: DatasetManifest, spec: FewShotSpec, cfg: TrainConfig, *, log_path=None, checkpoint_path=None) -> TrainReport:
    """Continue optimization on a balanced few-shot draw with fresh ADAM state.

    shots=0 is the zero-shot protocol: the model passes through untouched.
    """
    if spec.shots == 0:
        if checkpoint_path is not None:
            save_checkpoint(model, cfg, checkpoint_path, provenance={"kind": "zero-shot"})
        if log_path is not None:
            _write_log(log_path, [])
        return TrainReport(best_epoch=0, checkpoint_path=str(checkpoint_path) if checkpoint_path else None)

    draw = fewshot_indices(target, spec)
    n_train, n_val = fewshot_split_sizes(spec.shots)
    train_idx = np.concatenate([draw["train_real"], draw["train_fake"]])
    val_idx = np.concatenate([draw["val_real"], draw["val_fake"]])
    x_train = residual(load_batch(target, "train", indices=train_idx), cfg.residual)
    y_train = np.array([0] * n_train + [1] * n_train, dtype=np.int64)
    x_val = residual(load_batch(target, "train", indices=val_idx), cfg.residual)
    y_val = np.array([0] * n_val + [1] * n_val, dtype=np.int64)

    start = time.perf_counter()
    rows, best_epoch = _run_epochs(model, x_train, y_train, x_val, y_val, cfg)
    wall = time.perf_counter() - start

    if log_path is not None:
        _write_log(log_path, rows)
    if checkpoint_path is not None:
        domains = sorted({e.domain for e in target.entries_for("train")})
        save_checkpoint(
            model,
            cfg,
            checkpoint_path,
            provenance={
                "kind": "finetune",
                "seed": cfg.seed,
                "shots": spec.shots,
                "draw_seed": spec.seed,
                "domains": domains,
                "epochs": len(rows) - 1,
                "best_epoch": best_epoch,
                "best_val_loss": round(rows[best_epoch][2], 6),
            },
        )
    return _report(rows, best_epoch, wall, checkpoint_path)


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(model: ModelParams, cfg: TrainConfig, path, provenance: dict | None = None) -> None:
    """Header (magic, version, JSON metadata) followed by tensors in layer order."""
    meta = {
        "arch": model.arch.to_dict(),
        "gamma": cfg.loss.gamma,
        "provenance": provenance or {},
    }
    payload = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(bytes([CHECKPOINT_VERSION]))
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for t in model.tensors():
            write_tensor(f, t.value)


def _read_meta(f) -> dict:
    magic = f.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    version = f.read(1)
    if len(version) != 1:
        raise FormatError("truncated before version byte", offset=4)
    if version[0] != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version[0]}", offset=4)
    raw_len = f.read(4)
    if len(raw_len) != 4:
        raise FormatError("truncated metadata length", offset=5)
    (meta_len,) = struct.unpack("<I", raw_len)
    raw_meta = f.read(meta_len)
    if len(raw_meta) != meta_len:
        raise FormatError(f"metadata truncated at {len(raw_meta)}/{meta_len} bytes", offset=9)
    try:
        return json.loads(raw_meta.decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"unreadable checkpoint metadata: {exc}", offset=9) from exc


def read_checkpoint_meta(path) -> dict:
    """Checkpoint metadata (arch dict, gamma, provenance) without the tensors."""
    with open(path, "rb") as f:
        return _read_meta(f)


def load_checkpoint(path, expect_arch: ArchConfig | None = None) -> tuple[ModelParams, ArchConfig]:
    with open(path, "rb") as f:
        meta = _read_meta(f)
        try:
            arch = ArchConfig.from_dict(meta["arch"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"unreadable checkpoint metadata: {exc}", offset=9) from exc
        if expect_arch is not None and arch.to_dict() != expect_arch.to_dict():
            raise ConfigError(
                f"architecture mismatch: checkpoint has {arch.to_dict()}, expected {expect_arch.to_dict()}"
            )
        params = init_model(arch)
        values = [read_tensor(f) for _ in params.tensors()]
        if f.read(1) != b"":
            raise FormatError("trailing data after the last tensor", offset=f.tell() - 1)
    params.load_values(values)
    return params, arch
