# ───────────────────────────────────────────────────────────────────────────────
# app/losses.py
"""Batch-softmax cross-entropy losses and the logistic GAN baseline.

Within one minibatch B = B₊ ∪ B₋ every sample x gets probability
s(x) = e^{−μ(x)} / Z_B. The discriminator's target puts 1/|B₊| on each real
sample and nothing on fakes; the generator's target is uniform over B. Both
losses are the cross-entropy of s against their target:

    L_D = (1/|B₊|) Σ_{B₊} μ + ln Z_B
    L_G = (1/|B|)  Σ_{B}  μ + ln Z_B

so ∂L/∂μ(y) = t(y) − s(y) for either target t.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from app.autodiff import (
    Graph,
    Tensor,
    Var,
    concat,
    elementwise,
    log_sum_exp,
    reshape,
    softmax,
)
from app.core import ContractViolation, DimensionError


def _as_vector(scores: Var, side: str) -> Var:
    if len(scores.shape) == 2 and scores.shape[1] == 1:
        scores = reshape(scores, (scores.shape[0],))
    if len(scores.shape) != 1:
        raise DimensionError(f"Batch.{side}", scores.shape, ("n",))
    if not np.all(np.isfinite(scores.value)):
        raise ContractViolation(f"Batch.{side}: scores must be finite")
    return scores


@dataclass
class Batch:
    """Discriminator scores on B₊ (real) and B₋ (generated), on one graph.

    Column vectors (n × 1, as the discriminator emits them) are flattened.
    """
    real_scores: Var
    fake_scores: Var

    def __post_init__(self) -> None:
        if self.real_scores.graph is not self.fake_scores.graph:
            raise ContractViolation("Batch: real and fake scores live on different graphs")
        self.real_scores = _as_vector(self.real_scores, "real_scores")
        self.fake_scores = _as_vector(self.fake_scores, "fake_scores")
        if self.n_real < 1 or self.n_fake < 1:
            raise ContractViolation(
                f"Batch needs |B+| >= 1 and |B-| >= 1, got {self.n_real} and {self.n_fake}"
            )

    @classmethod
    def from_arrays(cls, real, fake, graph: Graph | None = None) -> "Batch":
        """Register both score vectors as differentiable leaves."""
        real = np.asarray(real, dtype=np.float64)
        fake = np.asarray(fake, dtype=np.float64)
        if real.size == 0 or fake.size == 0:
            raise ContractViolation(
                f"Batch needs |B+| >= 1 and |B-| >= 1, got {real.size} and {fake.size}"
            )
        graph = graph or Graph()
        return cls(graph.leaf(real), graph.leaf(fake))

    @property
    def n_real(self) -> int:
        return self.real_scores.shape[0]

    @property
    def n_fake(self) -> int:
        return self.fake_scores.shape[0]

    @property
    def n(self) -> int:
        return self.n_real + self.n_fake

    def scores(self) -> Var:
        """μ over B, reals first."""
        return concat([self.real_scores, self.fake_scores])


@dataclass(frozen=True)
class SoftmaxTargets:
    t_D: Tensor
    t_G: Tensor


def softmax_targets(n_real: int, n_fake: int) -> SoftmaxTargets:
    if n_real < 1 or n_fake < 1:
        raise ContractViolation(f"targets need |B+| >= 1 and |B-| >= 1, got {n_real} and {n_fake}")
    t_D = np.concatenate([np.full(n_real, 1.0 / n_real), np.zeros(n_fake)])
    t_G = np.full(n_real + n_fake, 1.0 / (n_real + n_fake))
    return SoftmaxTargets(t_D=t_D, t_G=t_G)


def batch_softmax(scores: Union[Var, Tensor]) -> Union[Var, Tensor]:
    """s(x) = exp(−μ(x) − log_sum_exp(−μ)). Arrays in, array out; Var in, Var out."""
    if isinstance(scores, Var):
        if scores.value.size == 0:
            raise ContractViolation("batch_softmax: empty batch")
        return softmax(-scores)
    mu = np.asarray(scores, dtype=np.float64)
    if mu.size == 0:
        raise ContractViolation("batch_softmax: empty batch")
    return softmax(-Graph().constant(mu)).value


def log_partition(batch: Batch) -> float:
    """ln Z_B."""
    return float(log_sum_exp(-batch.scores()).value)


def d_loss_softmax(batch: Batch) -> Var:
    return batch.real_scores.mean() + log_sum_exp(-batch.scores())


def g_loss_softmax(batch: Batch) -> Var:
    mu = batch.scores()
    return mu.mean() + log_sum_exp(-mu)


def d_score_grad(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """∂L_D/∂μ over B (reals first): t_D − s."""
    real = np.asarray(real_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    targets = softmax_targets(real.size, fake.size)
    return targets.t_D - batch_softmax(np.concatenate([real, fake]))


def g_score_grad(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """∂L_G/∂μ over B (reals first): 1/|B| − s."""
    real = np.asarray(real_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    targets = softmax_targets(real.size, fake.size)
    return targets.t_G - batch_softmax(np.concatenate([real, fake]))


# ── Logistic baseline ─────────────────────────────────────────────────────────

def d_loss_gan_baseline(logits_real: Var, logits_fake: Var) -> Var:
    """mean softplus(−logit_real) + mean softplus(logit_fake)."""
    return (
        elementwise("softplus", -logits_real).mean()
        + elementwise("softplus", logits_fake).mean()
    )


def g_loss_gan_nonsaturating(logits_fake: Var) -> Var:
    """mean softplus(−logit_fake): maximizes log D(G(z))."""
    return elementwise("softplus", -logits_fake).mean()
