"""Decision rule, accuracy reports, activation-scatter export, shot sweeps.

The classifier reads the two latent-half activations: a sample is called fake
exactly when the fake-half activation exceeds the real-half activation, with
ties going to real. Everything here runs over frozen parameters and keeps
deterministic sample order, so repeated evaluations produce byte-identical
artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import DiffTensor, no_grad
from .datagen import DatasetManifest, labels_for, load_batch
from .errors import ConfigError
from .model import ModelParams, activations, encode
from .residual import ResidualConfig, residual
from .trainer import FewShotSpec, TrainConfig, finetune, load_checkpoint

_EVAL_BATCH = 256


def decide(a0: float, a1: float) -> str:
    """Fake iff the fake-half activation strictly dominates; ties are real."""
    return "fake" if a1 > a0 else "real"


@dataclass
class EvalReport:
    accuracy: float
    acc_real: float
    acc_fake: float
    n_real: int
    n_fake: int
    mean_a0_real: float
    mean_a1_real: float
    mean_a0_fake: float
    mean_a1_fake: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "acc_real": self.acc_real,
            "acc_fake": self.acc_fake,
            "n_real": self.n_real,
            "n_fake": self.n_fake,
            "mean_a0_real": self.mean_a0_real,
            "mean_a1_real": self.mean_a1_real,
            "mean_a0_fake": self.mean_a0_fake,
            "mean_a1_fake": self.mean_a1_fake,
        }


@dataclass
class ShotCurve:
    points: list = field(default_factory=list)  # (shots, mean accuracy, std)
    runs: int = 0
    per_run: dict = field(default_factory=dict)  # shots -> per-run accuracies

    def to_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "runs": self.runs,
            "per_run": {str(k): v for k, v in self.per_run.items()},
        }


def report_from_activations(a0: np.ndarray, a1: np.ndarray, labels: np.ndarray) -> EvalReport:
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    labels = np.asarray(labels)
    pred = (a1 > a0).astype(np.int64)
    real = labels == 0
    fake = labels == 1
    n_real, n_fake = int(real.sum()), int(fake.sum())

    def acc(mask, n):
        return float(np.sum(pred[mask] == labels[mask]) / n) if n else 0.0

    def mean(arr, mask, n):
        return float(arr[mask].mean()) if n else 0.0

    correct = acc(real, n_real) * n_real + acc(fake, n_fake) * n_fake
    return EvalReport(
        accuracy=float(correct / (n_real + n_fake)),
        acc_real=acc(real, n_real),
        acc_fake=acc(fake, n_fake),
        n_real=n_real,
        n_fake=n_fake,
        mean_a0_real=mean(a0, real, n_real),
        mean_a1_real=mean(a1, real, n_real),
        mean_a0_fake=mean(a0, fake, n_fake),
        mean_a1_fake=mean(a1, fake, n_fake),
    )


def _split_activations(model: ModelParams, man: DatasetManifest, split: str, rc: ResidualConfig):
    entries = man.entries_for(split)
    if not entries:
        raise ConfigError(f"cannot evaluate: split {split!r} is empty")
    a0_parts, a1_parts = [], []
    with no_grad():
        for start in range(0, len(entries), _EVAL_BATCH):
            idx = range(start, min(start + _EVAL_BATCH, len(entries)))
            x = residual(load_batch(man, split, indices=idx), rc)
            a0, a1 = activations(encode(model, DiffTensor(x)))
            a0_parts.append(a0.value)
            a1_parts.append(a1.value)
    return np.concatenate(a0_parts), np.concatenate(a1_parts), labels_for(man, split)


def classify(model: ModelParams, image: np.ndarray, rc: ResidualConfig) -> tuple[str, float, float]:
    """Label one (C,H,W) image; returns (label, a0, a1)."""
    x = residual(np.asarray(image, dtype=np.float32), rc)
    if x.ndim == 3:
        x = x[None]
    with no_grad():
        a0, a1 = activations(encode(model, DiffTensor(x)))
    a0f, a1f = float(a0.value[0]), float(a1.value[0])
    return decide(a0f, a1f), a0f, a1f


def evaluate(model: ModelParams, man: DatasetManifest, split: str, rc: ResidualConfig) -> EvalReport:
    a0, a1, labels = _split_activations(model, man, split, rc)
    return report_from_activations(a0, a1, labels)


def export_scatter(model: ModelParams, man: DatasetManifest, split: str, rc: ResidualConfig, path) -> None:
    """One CSV row per sample, manifest order, full-precision activations.

    Full precision keeps a recount from the rows exactly equal to evaluate().
    """
    a0, a1, labels = _split_activations(model, man, split, rc)
    entries = man.entries_for(split)
    lines = ["sample_id,true_label,a0,a1"]
    lines += [
        f"{e.path},{int(y)},{float(v0)!r},{float(v1)!r}"
        for e, y, v0, v1 in zip(entries, labels, a0, a1)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def shot_sweep(source_ckpt, target: DatasetManifest, shots: list, cfg: TrainConfig, runs: int = 10, base_seed: int = 0) -> ShotCurve:
    """Fine-tune + evaluate per shot count, repeated over distinct seeds.

    Shot 0 is the zero-shot point (source checkpoint evaluated unchanged).
    Accuracy is measured on the target test split; std is over runs (ddof=0).
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    if not shots:
        raise ConfigError("shot list must not be empty")
    if any(b <= a for a, b in zip(shots, shots[1:])):
        raise ConfigError(f"shot counts must be strictly increasing, got {shots}")

    per_run: dict = {}
    points = []
    for shot in shots:
        accs = []
        for run in range(runs):
            seed = base_seed + run
            params, _arch = load_checkpoint(source_ckpt)
            finetune(params, target, FewShotSpec(shots=shot, seed=seed), replace(cfg, seed=seed))
            accs.append(evaluate(params, target, "test", cfg.residual).accuracy)
        per_run[shot] = accs
        points.append((shot, float(np.mean(accs)), float(np.std(accs))))
    return ShotCurve(points=points, runs=runs, per_run=per_run)
