"""Training objective: weighted reconstruction plus latent activation terms.

The activation loss drives each sample's in-class activation toward 1 and the
off-class activation toward 0; the combined loss is gamma * rec + act. Both
losses are batch means, so the gamma balance is independent of batch size.
The cross-entropy head is an ablation variant that reuses (a0, a1) as logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import DiffTensor
from .errors import ConfigError, ContractError

HEAD_ACTIVATION = "activation"
HEAD_CROSS_ENTROPY = "cross_entropy"


@dataclass
class LossConfig:
    gamma: float = 0.1
    head: str = HEAD_ACTIVATION
    reconstruction_enabled: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.head not in (HEAD_ACTIVATION, HEAD_CROSS_ENTROPY):
            raise ConfigError(f"unknown loss head {self.head!r}")

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.reconstruction_enabled else 0.0


def loss_rec(x: DiffTensor, x_hat: DiffTensor) -> DiffTensor:
    """Mean per-component L1 reconstruction error over the batch."""
    if x.value.shape != x_hat.value.shape:
        raise ContractError(f"reconstruction shape mismatch: {x.shape} vs {x_hat.shape}")
    return ops.l1_mean(ops.sub(x, x_hat))


def _class_targets(a0: DiffTensor, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    if labels.shape != a0.value.shape:
        raise ContractError(f"labels shape {labels.shape} does not match activations {a0.shape}")
    t1 = labels.astype(np.float32)
    t0 = 1.0 - t1
    return t0, t1


def loss_act(a0: DiffTensor, a1: DiffTensor, labels: np.ndarray) -> DiffTensor:
    """Batch mean of |a_c - 1| + |a_{1-c}| with c the true class."""
    t0, t1 = _class_targets(a0, labels)
    d0 = ops.mean_all(ops.absval(ops.sub(a0, DiffTensor(t0))))
    d1 = ops.mean_all(ops.absval(ops.sub(a1, DiffTensor(t1))))
    return ops.add(d0, d1)


def loss_cross_entropy(a0: DiffTensor, a1: DiffTensor, labels: np.ndarray) -> DiffTensor:
    """Batch mean of -log softmax((a0, a1))[label], the ablation head."""
    t0, t1 = _class_targets(a0, labels)
    # per-sample CE reduces to softplus(a_other - a_true), here (a1-a0)*(t0-t1)
    margin = ops.mul_const(ops.sub(a1, a0), t0 - t1)
    return ops.mean_all(ops.softplus(margin))


def loss_total(rec: DiffTensor, act: DiffTensor, cfg: LossConfig) -> DiffTensor:
    """gamma * rec + act; with reconstruction disabled, act alone."""
    if not cfg.reconstruction_enabled or cfg.gamma == 0.0:
        return act
    return ops.add(ops.scale(rec, cfg.gamma), act)


def classification_loss(a0: DiffTensor, a1: DiffTensor, labels: np.ndarray, cfg: LossConfig) -> DiffTensor:
    """The configured head applied to the batch activations."""
    if cfg.head == HEAD_CROSS_ENTROPY:
        return loss_cross_entropy(a0, a1, labels)
    return loss_act(a0, a1, labels)
