"""Tests for the MLPs, latent sampler, Adam and checkpoints (app/nn.py)."""
import math
import os
import tempfile

import numpy as np
import pytest

from app.autodiff import finite_diff_check_many
from app.core import ContractViolation, DimensionError
from app.losses import Batch, g_loss_softmax
from app.nn import (
    AdamState,
    LatentSampler,
    MlpParams,
    MlpSpec,
    adam_step,
    forward,
    init_params,
    load_checkpoint,
    sample_latent,
    save_checkpoint,
)


# ── init_params / forward ───────────────────────────────────────────────────

def test_init_is_deterministic_per_seed():
    spec = MlpSpec((2, 8, 1))
    a, b = init_params(spec, 7), init_params(spec, 7)
    assert a.digest() == b.digest()
    assert init_params(spec, 8).digest() != a.digest()


def test_init_shapes():
    params = init_params(MlpSpec((2, 64, 1)), 0)
    assert [w.shape for w in params.weights] == [(64, 2), (1, 64)]
    assert [b.shape for b in params.biases] == [(64,), (1,)]
    assert all(np.all(b == 0) for b in params.biases)


def test_glorot_weights_are_centered():
    params = init_params(MlpSpec((100, 100, 1)), 1)
    w = params.weights[0].ravel()
    limit = math.sqrt(6.0 / 200)
    sigma = limit / math.sqrt(3.0)
    assert np.all(np.abs(w) <= limit)
    assert abs(w.mean()) < 4 * sigma / math.sqrt(w.size)


def test_forward_zero_params_gives_zero():
    spec = MlpSpec((3, 4, 2))
    params = MlpParams(
        weights=[np.zeros((4, 3)), np.zeros((2, 4))],
        biases=[np.zeros(4), np.zeros(2)],
    )
    out = forward(spec, params, np.ones((5, 3)))
    assert out.shape == (5, 2)
    assert np.all(out == 0)


def test_forward_identity_layer():
    spec = MlpSpec((3, 3))
    params = MlpParams(weights=[np.eye(3)], biases=[np.zeros(3)])
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(forward(spec, params, x), x)


def test_forward_rejects_wrong_input_width():
    spec = MlpSpec((2, 4, 1))
    with pytest.raises(DimensionError):
        forward(spec, init_params(spec, 0), np.ones((3, 5)))


def test_spec_rejects_bad_activation():
    with pytest.raises(ContractViolation):
        MlpSpec((2, 1), hidden_activation="sigmoid")


def test_discriminator_output_is_unbounded():
    spec = MlpSpec((2, 16, 1))
    params = init_params(spec, 3)
    small = np.abs(forward(spec, params, np.full((1, 2), 1.0)))[0, 0]
    large = np.abs(forward(spec, params, np.full((1, 2), 1e4)))[0, 0]
    assert large > 100 * small


def test_forward_is_pure():
    spec = MlpSpec((2, 8, 8, 1))
    params = init_params(spec, 4)
    x = np.random.default_rng(1).normal(size=(6, 2))
    before = params.digest()
    np.testing.assert_array_equal(forward(spec, params, x), forward(spec, params, x))
    assert params.digest() == before


def test_mlp_output_gradient_matches_finite_differences_per_row():
    rng = np.random.default_rng(2)
    spec = MlpSpec((2, 6, 5, 1), hidden_activation="leaky_relu")
    params = init_params(spec, 9)
    x = rng.choice([-1.0, 1.0], size=(7, 2)) * rng.uniform(0.1, 3.0, size=(7, 2))

    for row in x:
        def f(vs, row=row):
            return forward(spec, vs, vs[0].graph.constant(row[None, :])).sum()

        assert finite_diff_check_many(f, params.tensors()) < 1e-6


def test_generator_to_discriminator_composition_gradient():
    rng = np.random.default_rng(8)
    g_spec = MlpSpec((2, 8, 2))
    d_spec = MlpSpec((2, 8, 1))
    g_params, d_params = init_params(g_spec, 1), init_params(d_spec, 2)
    z, real = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))

    def loss(vs):
        graph = vs[0].graph
        fake = forward(g_spec, vs, graph.constant(z))
        batch = Batch(forward(d_spec, d_params, graph.constant(real)), forward(d_spec, d_params, fake))
        return g_loss_softmax(batch)

    assert finite_diff_check_many(loss, g_params.tensors()) < 1e-6


# ── Latent noise ────────────────────────────────────────────────────────────

def test_latent_sampler_reproducible_and_shaped():
    a, b = LatentSampler(2, seed=5), LatentSampler(2, seed=5)
    np.testing.assert_array_equal(sample_latent(a, 3), sample_latent(b, 3))
    np.testing.assert_array_equal(sample_latent(a, 3), sample_latent(b, 3))
    assert sample_latent(a, 1).shape == (1, 2)


def test_latent_moments():
    z = LatentSampler(1, seed=0).sample(100_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.02


# ── Adam ────────────────────────────────────────────────────────────────────

def test_adam_zero_gradient_leaves_params():
    params = init_params(MlpSpec((2, 3, 1)), 0)
    state = AdamState.for_params(params)
    new, _ = adam_step(params, [np.zeros_like(t) for t in params.tensors()], state)
    assert new.digest() == params.digest()


def test_adam_first_step_moves_by_lr():
    params = MlpParams(weights=[np.zeros((1, 1))], biases=[np.zeros(1)])
    state = AdamState.for_params(params, lr=0.01)
    new, state2 = adam_step(params, [np.array([[0.3]]), np.array([-2.0])], state)
    # bias-corrected m/√v = g/|g| at t = 1
    assert new.weights[0][0, 0] == pytest.approx(-0.01 * 0.3 / (0.3 + 1e-8))
    assert new.biases[0][0] == pytest.approx(0.01 * 2.0 / (2.0 + 1e-8))
    assert state2.t == 1 and state.t == 0


def test_adam_trajectories_are_bit_identical():
    def run():
        params = init_params(MlpSpec((2, 4, 1)), 3)
        state = AdamState.for_params(params)
        rng = np.random.default_rng(0)
        for _ in range(5):
            params, state = adam_step(params, [rng.normal(size=t.shape) for t in params.tensors()], state)
        return params.digest()

    assert run() == run()


def test_adam_rejects_mismatched_gradients():
    params = init_params(MlpSpec((2, 3, 1)), 0)
    state = AdamState.for_params(params)
    grads = [np.zeros_like(t) for t in params.tensors()]
    grads[0] = np.zeros((1, 1))
    with pytest.raises(DimensionError):
        adam_step(params, grads, state)


# ── Checkpoints ─────────────────────────────────────────────────────────────

def test_checkpoint_preserves_every_float():
    spec = MlpSpec((2, 5, 1), hidden_activation="relu")
    params = init_params(spec, 12)
    path = os.path.join(tempfile.mkdtemp(prefix="ganlab_ckpt_"), "checkpoint.json")
    save_checkpoint(path, {"discriminator": (spec, params)})
    loaded_spec, loaded = load_checkpoint(path)["discriminator"]
    assert loaded_spec == spec
    assert loaded.digest() == params.digest()
