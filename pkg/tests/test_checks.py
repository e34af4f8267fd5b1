"""Tests for the self-verification suites (app/checks.py)."""
import json
import math
import os
import tempfile

import numpy as np

from app.checks import (
    GRAD_FLOOR,
    GRAD_INSTANCES,
    CheckResult,
    all_passed,
    check_divergences,
    check_mle_loss,
    check_optimal_discriminator,
    gradient_cases,
    run_gradient_checks,
    run_theory_checks,
    write_report,
)


def test_check_result_serializes_non_finite_values_as_null():
    d = CheckResult("x", math.nan, 1e-6, False).to_dict()
    assert d == {"name": "x", "value": None, "tolerance": 1e-6, "pass": False}


def test_all_passed():
    ok = CheckResult("a", 0.0, 1.0, True)
    bad = CheckResult("b", 2.0, 1.0, False)
    assert all_passed([ok, ok])
    assert not all_passed([ok, bad])


def test_gradient_cases_cover_every_differentiable_op():
    names = set(gradient_cases(np.random.default_rng(0)))
    for op in ("matmul", "add", "sub", "mul", "transpose", "reshape", "concat", "sum", "mean",
               "relu", "leaky_relu", "tanh", "exp", "log", "softplus", "sigmoid", "log_sum_exp",
               "softmax", "d_loss_softmax", "g_loss_softmax", "d_loss_gan_baseline",
               "g_loss_gan_nonsaturating", "mlp_forward"):
        assert op in names


def test_gradient_suite_passes():
    results = run_gradient_checks(seed=1, instances=3)
    failed = [(r.name, r.value) for r in results if not r.passed]
    assert failed == []


def test_gradient_suite_passes_at_the_tight_floor_with_every_instance():
    assert GRAD_FLOOR == 1e-8
    results = run_gradient_checks(seed=0, instances=GRAD_INSTANCES)
    assert len(results) == len(gradient_cases(np.random.default_rng(0)))
    assert all_passed(results), [(r.name, r.value) for r in results if not r.passed]


def test_individual_theory_suites_pass():
    rng = np.random.default_rng(2)
    for suite in (check_mle_loss, check_optimal_discriminator, check_divergences):
        results = suite(rng)
        assert results
        assert all_passed(results), [(r.name, r.value) for r in results if not r.passed]


def test_full_theory_suite_passes_and_reports():
    results = run_theory_checks(seed=0)
    assert all_passed(results), [(r.name, r.value) for r in results if not r.passed]
    names = [r.name for r in results]
    assert len(names) == len(set(names))

    path = os.path.join(tempfile.mkdtemp(prefix="ganlab_checks_"), "theory_report.json")
    write_report(path, "theory", results)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["suite"] == "theory"
    assert doc["passed"] is True
    assert len(doc["checks"]) == len(results)
    assert set(doc["checks"][0]) == {"name", "value", "tolerance", "pass"}
