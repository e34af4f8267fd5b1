# ───────────────────────────────────────────────────────────────────────────────
# app/theory.py
"""Exact checks of the importance-sampling view on small finite state spaces.

Everything here is enumeration over K states, so partition functions are
exact and the discriminator/generator identities can be checked to ~1e-8.

Conventions:
  * an energy table ξ induces p^φ = e^{−ξ} / Σ e^{−ξ};
  * a discriminator table μ relates to ξ through e^{−ξ} = e^{−μ} q, with
    q = (p_D + p_G) / 2 when the batch is half real, half generated;
  * μ is identifiable only up to an additive constant, so fitted tables are
    always compared through their normalized ratios e^{−μ} / Σ e^{−μ}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp, rel_entr, softmax

from app.core import ContractViolation, ConvergenceError
from app.losses import d_score_grad

# Plain gradient descent settings for the convex fits.
FIT_STEP = 0.5
FIT_MAX_ITER = 100_000
FIT_TOL = 1e-10

_SUM_TOL = 1e-12


def _check_simplex(name: str, probs: np.ndarray) -> None:
    if probs.ndim != 1 or probs.size == 0:
        raise ContractViolation(f"{name}: expected a non-empty vector, got shape {probs.shape}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ContractViolation(f"{name}: probabilities must be finite and >= 0")
    if abs(probs.sum() - 1.0) > _SUM_TOL:
        raise ContractViolation(f"{name}: probabilities sum to {probs.sum()!r}, not 1")


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        _check_simplex("DiscreteDist", self.probs)

    @property
    def K(self) -> int:
        return self.probs.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.K, size=n, p=self.probs)


@dataclass(frozen=True)
class Proposal:
    """Known sampling distribution q."""
    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        _check_simplex("Proposal", self.probs)

    @classmethod
    def mixture(cls, p_D: DiscreteDist, p_G: DiscreteDist) -> "Proposal":
        """q = ½ p_D + ½ p_G: a batch with |B₊| = |B₋|."""
        return cls(0.5 * p_D.probs + 0.5 * p_G.probs)

    @property
    def K(self) -> int:
        return self.probs.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.K, size=n, p=self.probs)


@dataclass(frozen=True)
class EnergyModel:
    energies: np.ndarray

    def __post_init__(self) -> None:
        xi = np.asarray(self.energies, dtype=np.float64)
        if xi.ndim != 1 or xi.size == 0 or not np.all(np.isfinite(xi)):
            raise ContractViolation("EnergyModel: energies must be a non-empty finite vector")
        object.__setattr__(self, "energies", xi)

    @classmethod
    def from_discriminator(cls, mu_table: np.ndarray, q: Proposal) -> "EnergyModel":
        """ξ = μ − ln q, i.e. e^{−ξ} = e^{−μ} q."""
        if np.any(q.probs <= 0):
            raise ContractViolation("from_discriminator: q must be positive on every state")
        return cls(np.asarray(mu_table, dtype=np.float64) - np.log(q.probs))

    @property
    def K(self) -> int:
        return self.energies.size

    def log_partition(self) -> float:
        return float(logsumexp(-self.energies))

    def density(self) -> np.ndarray:
        return softmax(-self.energies)


@dataclass(frozen=True)
class ObservedSet:
    states: np.ndarray

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.int64).ravel()
        if states.size == 0:
            raise ContractViolation("ObservedSet must be non-empty")
        object.__setattr__(self, "states", states)

    def empirical(self, K: int) -> DiscreteDist:
        if self.states.min() < 0 or self.states.max() >= K:
            raise ContractViolation(f"ObservedSet holds states outside [0, {K})")
        counts = np.bincount(self.states, minlength=K).astype(np.float64)
        return DiscreteDist(counts / counts.sum())


@dataclass(frozen=True)
class ISBatch:
    """Batch Q from q with raw weights r(x′) = e^{−ξ(x′)} / q(x′)."""
    states: np.ndarray
    log_weights: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def R(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> np.ndarray:
        """r / R, computed in log space."""
        return softmax(self.log_weights)


def _as_dist(p: Union[DiscreteDist, np.ndarray, Sequence[float]]) -> np.ndarray:
    return p.probs if isinstance(p, (DiscreteDist, Proposal)) else np.asarray(p, dtype=np.float64)


# ── Maximum likelihood ────────────────────────────────────────────────────────

def mle_loss_population(model: EnergyModel, data_dist: DiscreteDist) -> float:
    """J with the observed set replaced by its distribution."""
    return float(data_dist.probs @ model.energies + model.log_partition())


def mle_loss_exact(model: EnergyModel, observed: ObservedSet) -> float:
    """J = (1/|O|) Σ_O ξ + ln Σ e^{−ξ}."""
    return mle_loss_population(model, observed.empirical(model.K))


def mle_grad_exact(model: EnergyModel, data_dist: DiscreteDist) -> np.ndarray:
    """∇_ξ J per state for a table parameterization: p_data − p^φ."""
    return data_dist.probs - model.density()


def draw_is_batch(model: EnergyModel, q: Proposal, n: int, rng: np.random.Generator) -> ISBatch:
    if n < 1:
        raise ContractViolation(f"IS batch size must be >= 1, got {n}")
    if np.any(q.probs <= 0):
        # p^φ is positive everywhere, so absolute continuity needs q > 0 everywhere.
        zero = int(np.argmin(q.probs))
        raise ContractViolation(f"proposal has zero mass on state {zero} where the model has mass")
    states = q.sample(n, rng)
    log_r = -model.energies[states] - np.log(q.probs[states])
    return ISBatch(states=states, log_weights=log_r)


def is_grad_estimate(
    model: EnergyModel,
    q: Proposal,
    n_samples: int,
    seed: int,
    *,
    data_dist: DiscreteDist,
) -> np.ndarray:
    """Self-normalized (biased) importance-sampling estimate of ∇_ξ J.

    B₊ is n_samples draws from the data, Q is n_samples draws from q; the model
    expectation becomes Σ_Q r ∇ξ / R.
    """
    rng = np.random.default_rng(seed)
    batch = draw_is_batch(model, q, n_samples, rng)
    observed = data_dist.sample(n_samples, rng)
    data_term = np.bincount(observed, minlength=model.K) / float(n_samples)
    model_term = np.bincount(batch.states, weights=batch.normalized(), minlength=model.K)
    return data_term - model_term


def reparam_weights(mu_table: np.ndarray, q: Proposal, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample weights of the model term in both forms.

    r/R form: r = e^{−ξ}/q with ξ = μ − ln q. Softmax form: e^{−μ}/Σ_Q e^{−μ}.
    """
    mu = np.asarray(mu_table, dtype=np.float64)
    states = np.asarray(states, dtype=np.int64)
    xi = EnergyModel.from_discriminator(mu, q).energies
    log_r = -xi[states] - np.log(q.probs[states])
    return softmax(log_r), softmax(-mu[states])


def reparam_grad_check(mu_table: np.ndarray, q: Proposal, seed: int, n_samples: int) -> float:
    """Max abs difference between the r/R and the softmax forms, on weights and
    on the resulting gradient vectors, over one batch drawn from q."""
    rng = np.random.default_rng(seed)
    states = q.sample(n_samples, rng)
    w_is, w_soft = reparam_weights(mu_table, q, states)
    K = q.K
    g_is = np.bincount(states, weights=w_is, minlength=K)
    g_soft = np.bincount(states, weights=w_soft, minlength=K)
    return float(max(np.max(np.abs(w_is - w_soft)), np.max(np.abs(g_is - g_soft))))


# ── Convex fits ───────────────────────────────────────────────────────────────

def _descend(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    what: str,
    step: float = FIT_STEP,
    max_iter: int = FIT_MAX_ITER,
    tol: float = FIT_TOL,
) -> np.ndarray:
    x = np.array(x0, dtype=np.float64)
    norm = math.inf
    for _ in range(max_iter):
        g = grad_fn(x)
        norm = float(np.linalg.norm(g))
        if norm < tol:
            return x
        x -= step * g
    raise ConvergenceError(what, max_iter, norm)


def _normalized_exp(log_values: np.ndarray) -> np.ndarray:
    z = log_values - log_values.max()
    w = np.exp(z)
    return w / w.sum()


def population_d_loss(mu_table: np.ndarray, p_D: DiscreteDist, q: Proposal) -> float:
    """Σ p_D μ + ln Σ q e^{−μ}: the infinite-batch discriminator objective."""
    mu = np.asarray(mu_table, dtype=np.float64)
    return float(p_D.probs @ mu + logsumexp(-mu, b=q.probs))


def optimal_discriminator_fit(
    p_D: DiscreteDist,
    p_G: DiscreteDist,
    init: Optional[np.ndarray] = None,
    seed: int = 0,
    **descent,
) -> np.ndarray:
    """Minimize the population discriminator objective over a μ table.

    The optimum satisfies p_D = q e^{−μ} / Σ q e^{−μ}, i.e. e^{−μ} ∝ p_D / q.
    """
    q = Proposal.mixture(p_D, p_G)
    if np.any(q.probs <= 0):
        raise ContractViolation("optimal_discriminator_fit: p_D + p_G must be positive on every state")
    log_q = np.log(q.probs)
    mu0 = np.random.default_rng(seed).normal(size=q.K) if init is None else init

    def grad(mu: np.ndarray) -> np.ndarray:
        return p_D.probs - _normalized_exp(log_q - mu)

    return _descend(grad, mu0, "optimal_discriminator_fit", **descent)


def first_order_residual(p_D: DiscreteDist, p_G: DiscreteDist, mu_table: np.ndarray) -> float:
    q = Proposal.mixture(p_D, p_G)
    w = _normalized_exp(np.log(q.probs) - np.asarray(mu_table, dtype=np.float64))
    return float(np.max(np.abs(p_D.probs - w)))


def discriminator_ratio(mu_table: np.ndarray) -> np.ndarray:
    """e^{−μ} / Σ e^{−μ}: the identifiable part of a μ table."""
    return _normalized_exp(-np.asarray(mu_table, dtype=np.float64))


def optimal_ratio(p_D: DiscreteDist, p_G: DiscreteDist) -> np.ndarray:
    """p_D / ((p_D + p_G)/2), normalized."""
    ratio = p_D.probs / Proposal.mixture(p_D, p_G).probs
    return ratio / ratio.sum()


def fit_energy_mle(observed: ObservedSet, num_states: int, seed: int = 0, **descent) -> EnergyModel:
    """Minimize J over an energy table; recovers the empirical distribution of O.

    Every state must be observed, otherwise the optimum sits at ξ = +∞.
    """
    empirical = observed.empirical(num_states).probs
    if np.any(empirical == 0):
        raise ContractViolation("fit_energy_mle: every state must appear in the observed set")
    xi0 = np.random.default_rng(seed).normal(size=num_states)
    xi = _descend(lambda xi: empirical - _normalized_exp(-xi), xi0, "fit_energy_mle", **descent)
    return EnergyModel(xi)


# ── Divergences and the generator objective ───────────────────────────────────

def kl(p, q) -> float:
    """Σ p ln(p/q), 0·ln(0/q) = 0, +inf where p > 0 = q."""
    return float(np.sum(rel_entr(_as_dist(p), _as_dist(q))))


class GeneratorDecomposition(NamedTuple):
    lhs_kl: float
    population_L_G: float
    js_sum: float


def generator_objective_decomposition(p_D: DiscreteDist, p_G: DiscreteDist) -> GeneratorDecomposition:
    """Population generator objective at the optimal discriminator vs. the
    symmetrized KL between p_D and m = (p_D + p_G)/2.

    lhs_kl: E_m[μ*] with e^{−μ*} = p_D/m (C = 1), which equals KL(m ‖ p_D).
    population_L_G: lhs term + ln E_m e^{−μ*} (zero at the optimum) + the
        potential −E_{p_D} ln(p_D + p_G), whose gradient in p_G is the
        large-batch limit of the ln Z_B gradient.
    js_sum: KL(m ‖ p_D) + KL(p_D ‖ m).

    population_L_G − js_sum = −E_{p_D} ln(2 p_D) for every p_G. A state where
    m > 0 but p_D = 0 makes KL(m ‖ p_D) infinite; all three come back as inf.
    """
    pd, pg = p_D.probs, p_G.probs
    m = 0.5 * pd + 0.5 * pg
    lhs = kl(m, pd)
    if not math.isfinite(lhs):
        return GeneratorDecomposition(math.inf, math.inf, math.inf)

    support = m > 0
    mu_star = np.zeros_like(m)
    mu_star[support] = -np.log(pd[support] / m[support])
    expected_mu = float(m[support] @ mu_star[support])
    log_mean_exp = float(logsumexp(-mu_star[support], b=m[support]))
    on_data = pd > 0
    rhs_potential = -float(pd[on_data] @ np.log(pd[on_data] + pg[on_data]))

    population = expected_mu + log_mean_exp + rhs_potential
    return GeneratorDecomposition(lhs, population, lhs + kl(pd, m))


def decomposition_constant(p_D: DiscreteDist) -> float:
    """−E_{p_D} ln(2 p_D): the p_G-free gap population_L_G − js_sum."""
    pd = p_D.probs[p_D.probs > 0]
    return -float(pd @ np.log(2.0 * pd))


def population_rhs_grad(p_D: DiscreteDist, p_G: DiscreteDist) -> np.ndarray:
    """−p_D / (p_D + p_G) per state: −E_{p_D}[∇p_G / (p_D + p_G)] for a table p_G."""
    total = p_D.probs + p_G.probs
    out = np.zeros_like(total)
    out[total > 0] = -p_D.probs[total > 0] / total[total > 0]
    return out


def generator_rhs_grad_estimate(p_D: DiscreteDist, p_G: DiscreteDist, n_samples: int, seed: int) -> np.ndarray:
    """Self-normalized batch form of the ln Z_B gradient in p_G at the optimal
    discriminator: B from m, weights p_D/m, each sample contributing
    −1/(p_D + p_G) at its own state."""
    m = Proposal.mixture(p_D, p_G)
    rng = np.random.default_rng(seed)
    states = m.sample(n_samples, rng)
    w = p_D.probs[states] / m.probs[states]
    if w.sum() <= 0:
        return np.zeros(m.K)
    contrib = -w / (p_D.probs[states] + p_G.probs[states])
    return np.bincount(states, weights=contrib, minlength=m.K) / w.sum()


# ── Batch discriminator gradient vs. exact MLE ────────────────────────────────

def softmax_d_grad_table(mu_table: np.ndarray, real_states: np.ndarray, fake_states: np.ndarray) -> np.ndarray:
    """∂L_D/∂μ for a table discriminator, accumulated per state."""
    mu = np.asarray(mu_table, dtype=np.float64)
    real_states = np.asarray(real_states, dtype=np.int64)
    fake_states = np.asarray(fake_states, dtype=np.int64)
    per_sample = d_score_grad(mu[real_states], mu[fake_states])
    states = np.concatenate([real_states, fake_states])
    return np.bincount(states, weights=per_sample, minlength=mu.size)


class CorrespondenceResult(NamedTuple):
    mean: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray


def gradient_correspondence(
    p_D: DiscreteDist,
    p_G: DiscreteDist,
    mu_table: np.ndarray,
    batch_size: int,
    seeds: Sequence[int],
) -> CorrespondenceResult:
    """Average the batch L_D gradient (B₊ ~ p_D, B₋ ~ p_G, equal sizes) over
    seeds, next to the exact MLE gradient of the reparameterized model."""
    grads = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        real = p_D.sample(batch_size, rng)
        fake = p_G.sample(batch_size, rng)
        grads.append(softmax_d_grad_table(mu_table, real, fake))
    grads = np.array(grads)
    model = EnergyModel.from_discriminator(mu_table, Proposal.mixture(p_D, p_G))
    stderr = grads.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros(p_D.K)
    return CorrespondenceResult(grads.mean(axis=0), stderr, mle_grad_exact(model, p_D))


def random_full_support(K: int, rng: np.random.Generator) -> DiscreteDist:
    """Dirichlet(1) draw mixed half-and-half with uniform, so every state has
    mass >= 1/(2K); keeps the convex fits well-conditioned."""
    p = 0.5 * rng.dirichlet(np.ones(K)) + 0.5 / K
    return DiscreteDist(p / p.sum())
