# ───────────────────────────────────────────────────────────────────────────────
# app/checks.py
"""
Self-verification suites behind the `theory-check` and `gradcheck` commands.

Each check yields a CheckResult {name, value, tolerance, pass}. Unless a check
says otherwise, it passes when value <= tolerance.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Sequence, Union

import numpy as np

from app.autodiff import (
    Graph,
    Var,
    add,
    concat,
    elementwise,
    finite_diff_check_many,
    log_sum_exp,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    reshape,
    softmax,
    sub,
    transpose,
)
from app.losses import (
    Batch,
    d_loss_gan_baseline,
    d_loss_softmax,
    g_loss_gan_nonsaturating,
    g_loss_softmax,
)
from app.nn import MlpSpec, forward, init_params
from app.theory import (
    DiscreteDist,
    EnergyModel,
    ObservedSet,
    Proposal,
    decomposition_constant,
    discriminator_ratio,
    first_order_residual,
    fit_energy_mle,
    generator_objective_decomposition,
    generator_rhs_grad_estimate,
    gradient_correspondence,
    is_grad_estimate,
    kl,
    mle_grad_exact,
    mle_loss_exact,
    mle_loss_population,
    optimal_discriminator_fit,
    optimal_ratio,
    population_rhs_grad,
    random_full_support,
    reparam_grad_check,
)

logger = logging.getLogger(__name__)

GRAD_TOL = 1e-6
FD_STEP = 1e-5
# denominator floor of the relative error
GRAD_FLOOR = 1e-8
GRAD_INSTANCES = 20


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        value = self.value if math.isfinite(self.value) else None
        return {"name": self.name, "value": value, "tolerance": self.tolerance, "pass": self.passed}


def _at_most(name: str, value: float, tolerance: float) -> CheckResult:
    return CheckResult(name, float(value), tolerance, bool(value <= tolerance))


def _central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    out = np.zeros_like(x)
    for i in range(x.size):
        plus, minus = x.copy(), x.copy()
        plus[i] += h
        minus[i] -= h
        out[i] = (f(plus) - f(minus)) / (2.0 * h)
    return out


# ── Theory suite ──────────────────────────────────────────────────────────────

def check_mle_loss(rng: np.random.Generator) -> List[CheckResult]:
    hand = abs(mle_loss_exact(EnergyModel([0.0, math.log(3.0)]), ObservedSet([0])) - math.log(4.0 / 3.0))
    uniform = abs(mle_loss_exact(EnergyModel(np.full(6, 2.5)), ObservedSet([1, 4, 4])) - math.log(6.0))

    # the gradient is bounded by 1 in absolute value, so absolute error is the natural scale
    worst = 0.0
    for _ in range(GRAD_INSTANCES):
        K = int(rng.integers(2, 17))
        data = random_full_support(K, rng)
        xi = rng.normal(size=K)
        numeric = _central_diff(lambda v: mle_loss_population(EnergyModel(v), data), xi)
        worst = max(worst, float(np.max(np.abs(numeric - mle_grad_exact(EnergyModel(xi), data)))))

    observed = ObservedSet(np.concatenate([np.arange(6), rng.integers(0, 6, size=30)]))
    fitted = fit_energy_mle(observed, 6, seed=int(rng.integers(1 << 31)))
    tv = 0.5 * float(np.sum(np.abs(fitted.density() - observed.empirical(6).probs)))
    return [
        _at_most("mle_loss_hand_value", hand, 1e-12),
        _at_most("mle_loss_uniform_is_lnK", uniform, 1e-12),
        _at_most("mle_grad_vs_finite_differences", worst, 1e-8),
        _at_most("mle_fit_recovers_empirical_tv", tv, 1e-6),
    ]


def check_is_estimator(rng: np.random.Generator) -> List[CheckResult]:
    K = 8
    data = random_full_support(K, rng)
    model = EnergyModel(rng.normal(size=K))
    q = Proposal.mixture(data, DiscreteDist(model.density()))
    exact = mle_grad_exact(model, data)

    def median_error(n: int) -> float:
        errs = [np.linalg.norm(is_grad_estimate(model, q, n, s, data_dist=data) - exact) for s in range(20)]
        return float(np.median(errs))

    ratio = median_error(100_000) / median_error(1_000)

    shifted = EnergyModel(model.energies + 3.7)
    scale = float(np.max(np.abs(
        is_grad_estimate(model, q, 500, 7, data_dist=data)
        - is_grad_estimate(shifted, q, 500, 7, data_dist=data)
    )))

    # five samples per side: noisy but still pointing the right way on average
    skewed = DiscreteDist(np.array([0.4, 0.2, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05]))
    flat = EnergyModel(np.zeros(8))
    q5 = Proposal.mixture(skewed, DiscreteDist(flat.density()))
    g = mle_grad_exact(flat, skewed)
    cosines = []
    for s in range(100):
        est = is_grad_estimate(flat, q5, 5, s, data_dist=skewed)
        norm = np.linalg.norm(est)
        cosines.append(0.0 if norm == 0 else float(est @ g / (norm * np.linalg.norm(g))))

    reparam = max(
        reparam_grad_check(rng.normal(scale=3.0, size=K), Proposal(random_full_support(K, rng).probs), s, 256)
        for s in range(20)
    )
    return [
        _at_most("is_error_ratio_1e5_vs_1e3", ratio, 0.2),
        _at_most("is_invariant_to_energy_shift", scale, 1e-12),
        CheckResult("is_small_batch_mean_cosine", float(np.mean(cosines)), 0.0, bool(np.mean(cosines) > 0.0)),
        _at_most("reparam_forms_agree", reparam, 1e-12),
    ]


def check_optimal_discriminator(rng: np.random.Generator, pairs: int = 50) -> List[CheckResult]:
    ratio_err = residual = 0.0
    for i in range(pairs):
        K = (2, 4, 8, 16)[i % 4]
        p_D, p_G = random_full_support(K, rng), random_full_support(K, rng)
        mu = optimal_discriminator_fit(p_D, p_G, seed=i)
        ratio_err = max(ratio_err, float(np.max(np.abs(discriminator_ratio(mu) - optimal_ratio(p_D, p_G)))))
        residual = max(residual, first_order_residual(p_D, p_G, mu))

    p_D, p_G = random_full_support(8, rng), random_full_support(8, rng)
    ratios = [discriminator_ratio(optimal_discriminator_fit(p_D, p_G, seed=100 + s)) for s in range(5)]
    spread = float(np.max(np.ptp(np.array(ratios), axis=0)))

    hand = optimal_ratio(DiscreteDist([0.4, 0.3, 0.2, 0.1]), DiscreteDist(np.full(4, 0.25)))
    expected = np.array([0.4 / 0.325, 0.3 / 0.275, 0.2 / 0.225, 0.1 / 0.175])
    fitted = discriminator_ratio(optimal_discriminator_fit(DiscreteDist([0.4, 0.3, 0.2, 0.1]), DiscreteDist(np.full(4, 0.25))))
    return [
        _at_most("optimal_d_ratio_matches_closed_form", ratio_err, 1e-6),
        _at_most("optimal_d_first_order_residual", residual, 1e-8),
        _at_most("optimal_d_init_invariance", spread, 1e-7),
        _at_most("optimal_d_hand_instance", float(np.max(np.abs(fitted - expected / expected.sum()))), 1e-6),
        _at_most("optimal_ratio_closed_form", float(np.max(np.abs(hand - expected / expected.sum()))), 1e-12),
    ]


def check_divergences(rng: np.random.Generator, pairs: int = 100) -> List[CheckResult]:
    hand = abs(kl([0.4, 0.6], [0.5, 0.5]) - (0.4 * math.log(0.8) + 0.6 * math.log(1.2)))
    delta = abs(kl([1.0, 0.0], [0.5, 0.5]) - math.log(2.0))

    negative = 0.0
    for _ in range(pairs):
        K = int(rng.integers(2, 17))
        p, q = random_full_support(K, rng), random_full_support(K, rng)
        negative = max(negative, -kl(p, q), abs(kl(p, p)))

    js = generator_objective_decomposition(DiscreteDist([0.5, 0.5]), DiscreteDist([1.0, 0.0])).js_sum
    js_expected = (0.75 * math.log(1.5) + 0.25 * math.log(0.5)) + (0.5 * math.log(2.0 / 3.0) + 0.5 * math.log(2.0))

    fixed = random_full_support(8, rng)
    gaps = []
    for _ in range(pairs):
        d = generator_objective_decomposition(fixed, random_full_support(8, rng))
        gaps.append(d.population_L_G - d.js_sum)
    spread = float(np.ptp(gaps))

    const_err = 0.0
    for i in range(pairs):
        K = (2, 4, 8, 16)[i % 4]
        p_D, p_G = random_full_support(K, rng), random_full_support(K, rng)
        d = generator_objective_decomposition(p_D, p_G)
        const_err = max(const_err, abs(d.population_L_G - d.js_sum - decomposition_constant(p_D)))
    return [
        _at_most("kl_hand_value", hand, 1e-12),
        _at_most("kl_delta_vs_uniform_is_ln2", delta, 1e-12),
        _at_most("kl_nonnegative_and_zero_on_diagonal", negative, 1e-12),
        _at_most("decomposition_hand_js_sum", abs(js - js_expected), 1e-12),
        _at_most("decomposition_gap_spread_over_p_G", spread, 1e-8),
        _at_most("decomposition_gap_is_constant", const_err, 1e-8),
    ]


def check_batch_correspondence(rng: np.random.Generator) -> List[CheckResult]:
    K, batch = 8, 2048
    p_D, p_G = random_full_support(K, rng), random_full_support(K, rng)
    mu = rng.normal(size=K)
    res = gradient_correspondence(p_D, p_G, mu, batch, seeds=range(50))
    allowance = 3.0 * res.stderr + 2.0 / (2 * batch)
    excess = float(np.max(np.abs(res.mean - res.exact) - allowance))

    pop = population_rhs_grad(p_D, p_G)

    def median_error(n: int) -> float:
        return float(np.median([
            np.linalg.norm(generator_rhs_grad_estimate(p_D, p_G, n, s) - pop) for s in range(20)
        ]))

    return [
        _at_most("batch_d_grad_within_3se_of_mle_grad", excess, 0.0),
        _at_most("generator_rhs_error_ratio_1e5_vs_1e3", median_error(100_000) / median_error(1_000), 0.2),
    ]


def run_theory_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    for suite in (check_mle_loss, check_is_estimator, check_optimal_discriminator,
                  check_divergences, check_batch_correspondence):
        results.extend(suite(rng))
    _log_results("theory", results)
    return results


# ── Gradient suite ────────────────────────────────────────────────────────────

def _rowwise_check(op: Callable[..., Var], xs: Sequence[np.ndarray]) -> float:
    """Worst relative error over every (output coordinate, input entry) pair.

    Each output coordinate is checked as its own scalar, so the round-off of a
    central difference scales with that coordinate rather than with a sum over
    the whole output.
    """
    graph = Graph()
    out_shape = op(*[graph.constant(x) for x in xs]).shape
    size = int(np.prod(out_shape, dtype=np.int64))
    if size == 1:
        return finite_diff_check_many(lambda vs: op(*vs), xs, h=FD_STEP, floor=GRAD_FLOOR)

    worst = 0.0
    for m in range(size):
        pick = np.zeros(out_shape)
        pick.flat[m] = 1.0

        def f(vs: List[Var], pick: np.ndarray = pick) -> Var:
            return reduce_sum(mul(op(*vs), vs[0].graph.constant(pick)))

        worst = max(worst, finite_diff_check_many(f, xs, h=FD_STEP, floor=GRAD_FLOOR))
    return worst


def gradient_cases(rng: np.random.Generator) -> Dict[str, Callable[[], float]]:
    """name -> zero-arg callable returning the worst relative error of one random instance.

    Inputs lie in [-3, 3] with |x| >= 0.1, which keeps relu and leaky_relu off
    their kink; log gets [0.1, 3].
    """

    def signed(*shape):
        return lambda: rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 3.0, size=shape)

    def positive(*shape):
        return lambda: rng.uniform(0.1, 3.0, size=shape)

    def case(op, *samplers):
        return lambda: _rowwise_check(op, [s() for s in samplers])

    def unary(op, sampler=None):
        return case(op, sampler or signed(3, 4))

    def batch_loss(loss_fn):
        def run():
            n_real, n_fake = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            return _rowwise_check(lambda r, f: loss_fn(Batch(r, f)), [signed(n_real)(), signed(n_fake)()])
        return run

    def mlp():
        spec = MlpSpec((2, 5, 4, 1), hidden_activation="leaky_relu")
        params = init_params(spec, int(rng.integers(1 << 31)))
        x = signed(6, 2)()
        return _rowwise_check(lambda *vs: forward(spec, list(vs), vs[0].graph.constant(x)), params.tensors())

    return {
        "matmul": case(matmul, signed(3, 4), signed(4, 2)),
        "add": case(add, signed(3, 4), signed(3, 4)),
        "add_bias": case(add, signed(3, 4), signed(4)),
        "sub": case(sub, signed(3, 4), signed(3, 4)),
        "mul": case(mul, signed(3, 4), signed(3, 4)),
        "transpose": unary(transpose),
        "reshape": unary(lambda x: reshape(x, (2, 6))),
        "concat": case(lambda a, b: concat([a, b]), signed(3), signed(5)),
        "sum": unary(reduce_sum),
        "mean": unary(reduce_mean),
        "relu": unary(lambda x: elementwise("relu", x)),
        "leaky_relu": unary(lambda x: elementwise("leaky_relu", x)),
        "tanh": unary(lambda x: elementwise("tanh", x)),
        "exp": unary(lambda x: elementwise("exp", x)),
        "log": unary(lambda x: elementwise("log", x), positive(3, 4)),
        "negate": unary(lambda x: elementwise("negate", x)),
        "scale": unary(lambda x: elementwise("scale", x, alpha=-1.7)),
        "shift": unary(lambda x: elementwise("shift", x, alpha=0.3)),
        "softplus": unary(lambda x: elementwise("softplus", x)),
        "sigmoid": unary(lambda x: elementwise("sigmoid", x)),
        "log_sum_exp": unary(log_sum_exp, signed(7)),
        "softmax": unary(softmax, signed(7)),
        "d_loss_softmax": batch_loss(d_loss_softmax),
        "g_loss_softmax": batch_loss(g_loss_softmax),
        "d_loss_gan_baseline": batch_loss(lambda b: d_loss_gan_baseline(b.real_scores, b.fake_scores)),
        "g_loss_gan_nonsaturating": batch_loss(lambda b: g_loss_gan_nonsaturating(b.fake_scores)),
        "mlp_forward": mlp,
    }


def run_gradient_checks(seed: int = 0, instances: int = GRAD_INSTANCES) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, case in gradient_cases(rng).items():
        worst = max(case() for _ in range(instances))
        results.append(_at_most(f"gradcheck_{name}", worst, GRAD_TOL))
    _log_results("gradient", results)
    return results


# ── Reporting ─────────────────────────────────────────────────────────────────

def _log_results(suite: str, results: Sequence[CheckResult]) -> None:
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        logger.info(f"[Checks] {suite} {r.name}: {r.value:.3e} (tol {r.tolerance:.1e}) {status}")
    failed = sum(not r.passed for r in results)
    logger.info(f"[Checks] {suite}: {len(results) - failed}/{len(results)} passed")


def all_passed(results: Sequence[CheckResult]) -> bool:
    return all(r.passed for r in results)


def write_report(path: Union[str, os.PathLike], suite: str, results: Sequence[CheckResult]) -> None:
    doc = {
        "suite": suite,
        "passed": all_passed(results),
        "checks": [r.to_dict() for r in results],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
