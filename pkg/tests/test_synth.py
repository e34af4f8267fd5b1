"""Tests for the 2D mixture data, sample metrics and the SVG scatter."""
import math
import os
import tempfile
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from app.core import ContractViolation, DimensionError
from app.plotting import render_scatter_svg, write_scatter_svg
from app.synth import (
    GaussianMixture2D,
    SampleSet,
    default_min_count,
    histogram_js,
    mode_report,
    sample_mixture,
)


@pytest.fixture
def ring():
    return GaussianMixture2D.ring()


# ── Mixtures and sampling ───────────────────────────────────────────────────

def test_ring_geometry(ring):
    assert ring.n_modes == 8
    np.testing.assert_allclose(np.linalg.norm(ring.centers, axis=1), 2.0, atol=1e-15)
    assert ring.weights.sum() == pytest.approx(1.0)
    (x0, x1), (y0, y1) = ring.bounds()
    assert (x0, x1) == pytest.approx((-2.5, 2.5))
    assert (y0, y1) == pytest.approx((-2.5, 2.5))


def test_mixture_rejects_bad_weights():
    with pytest.raises(ContractViolation):
        GaussianMixture2D(np.zeros((2, 2)), 0.1, np.array([0.7, 0.7]))
    with pytest.raises(DimensionError):
        GaussianMixture2D(np.zeros((2, 2)), 0.1, np.array([1.0]))
    with pytest.raises(ContractViolation):
        GaussianMixture2D(np.zeros((1, 2)), 0.0, np.array([1.0]))


def test_shifted_moves_every_center(ring):
    moved = ring.shifted(3.0)
    np.testing.assert_allclose(moved.centers, ring.centers + 3.0)
    assert moved.centers.min() > 0


def test_tiny_std_lands_on_centers(ring):
    tight = GaussianMixture2D(ring.centers, 1e-12, ring.weights)
    pts = sample_mixture(tight, 1000, seed=0).points
    nearest = np.min(np.linalg.norm(pts[:, None, :] - tight.centers[None, :, :], axis=2), axis=1)
    assert np.all(nearest < 1e-9)


def test_single_center_sample_mean():
    mix = GaussianMixture2D(np.zeros((1, 2)), 1.0, np.array([1.0]))
    pts = sample_mixture(mix, 100_000, seed=1).points
    assert np.all(np.abs(pts.mean(axis=0)) < 0.02)


def test_sampling_is_deterministic_per_seed(ring):
    a = sample_mixture(ring, 500, seed=4)
    b = sample_mixture(ring, 500, seed=4)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.seed == 4
    assert not np.array_equal(a.points, sample_mixture(ring, 500, seed=5).points)


def test_sampling_needs_positive_n(ring):
    with pytest.raises(ContractViolation):
        sample_mixture(ring, 0, seed=0)


def test_sample_set_csv_keeps_every_digit(ring):
    samples = sample_mixture(ring, 64, seed=2)
    path = os.path.join(tempfile.mkdtemp(prefix="ganlab_csv_"), "samples.csv")
    samples.to_csv(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "x,y"
    assert len(lines) == 65
    np.testing.assert_array_equal(SampleSet.from_csv(path).points, samples.points)


def test_sample_set_rejects_wrong_shape():
    with pytest.raises(DimensionError):
        SampleSet(np.zeros((4, 3)))


# ── mode_report ─────────────────────────────────────────────────────────────

def test_samples_at_every_center(ring):
    report = mode_report(ring.centers, ring, min_count=1)
    assert report.covered == 8
    assert report.hq_fraction == 1.0
    assert report.counts.tolist() == [1] * 8


def test_collapse_signature(ring):
    report = mode_report(np.repeat(ring.centers[:1], 100, axis=0), ring, min_count=1)
    assert report.covered == 1
    assert report.hq_fraction == 1.0
    assert report.counts.sum() == 100


def test_true_draws_cover_the_ring(ring):
    report = mode_report(sample_mixture(ring, 10_000, seed=0), ring, radius_mult=3.0, min_count=50)
    assert report.covered == 8
    assert report.hq_fraction > 0.97


def test_uniform_noise_fraction_matches_disc_area(ring):
    (x0, x1), (y0, y1) = ring.bounds()
    rng = np.random.default_rng(3)
    n = 20_000
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    p = ring.n_modes * math.pi * (3.0 * ring.std) ** 2 / ((x1 - x0) * (y1 - y0))
    report = mode_report(pts, ring)
    assert abs(report.hq_fraction - p) <= 3.0 * math.sqrt(p * (1 - p) / n)


def test_mode_report_permutation_invariance(ring):
    rng = np.random.default_rng(6)
    pts = sample_mixture(ring, 800, seed=6).points
    base = mode_report(pts, ring)
    shuffled = mode_report(rng.permutation(pts), ring)
    assert shuffled.counts.tolist() == base.counts.tolist()
    order = rng.permutation(ring.n_modes)
    permuted_mix = GaussianMixture2D(ring.centers[order], ring.std, ring.weights[order])
    permuted = mode_report(pts, permuted_mix)
    assert permuted.counts.tolist() == base.counts[order].tolist()
    assert permuted.covered == base.covered
    assert permuted.hq_fraction == base.hq_fraction


def test_mode_report_bounds_and_arguments(ring):
    report = mode_report(sample_mixture(ring, 300, seed=7), ring)
    assert report.counts.sum() <= 300
    assert report.covered <= report.n_modes
    assert default_min_count(2048, 8) == 25
    assert default_min_count(5, 8) == 1
    with pytest.raises(ContractViolation):
        mode_report(ring.centers, ring, radius_mult=0.0)
    with pytest.raises(ContractViolation):
        mode_report(ring.centers, ring, min_count=0)


# ── histogram_js ────────────────────────────────────────────────────────────

def test_js_of_identical_sets_is_zero(ring):
    a = sample_mixture(ring, 2000, seed=8)
    assert histogram_js(a, sample_mixture(ring, 2000, seed=8)) == 0.0


def test_js_of_disjoint_deltas_approaches_ln2():
    a = np.zeros((500, 2))
    b = np.full((500, 2), 10.0)
    assert histogram_js(a, b) == pytest.approx(math.log(2.0), abs=1e-5)


def test_js_is_symmetric_and_bounded(ring):
    rng = np.random.default_rng(9)
    for seed in range(10):
        a = sample_mixture(ring, 400, seed=seed)
        b = SampleSet(rng.normal(size=(300, 2)))
        ab, ba = histogram_js(a, b), histogram_js(b, a)
        assert ab == ba
        assert 0.0 <= ab <= math.log(2.0)


def test_js_grows_with_separation():
    rng = np.random.default_rng(10)
    base = rng.normal(size=(20_000, 2))
    other = rng.normal(size=(20_000, 2))
    bounds = ((-6.0, 10.0), (-6.0, 6.0))
    near = histogram_js(base, other + [1.0, 0.0], bounds=bounds)
    far = histogram_js(base, other + [4.0, 0.0], bounds=bounds)
    assert far > near


def test_js_needs_two_bins():
    with pytest.raises(ContractViolation):
        histogram_js(np.zeros((3, 2)), np.ones((3, 2)), grid=1)


# ── SVG scatter ─────────────────────────────────────────────────────────────

def test_scatter_svg_is_well_formed(ring):
    real = sample_mixture(ring, 50, seed=0)
    fake = SampleSet(np.random.default_rng(1).normal(size=(30, 2)))
    svg = render_scatter_svg(real, fake, title="ring <seed=0>")
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    assert root.tag == f"{ns}svg"
    # one extra circle and one extra cross for the legend
    assert len(root.findall(f".//{ns}circle")) == 51
    assert len(root.findall(f".//{ns}path")) == 31
    texts = [t.text for t in root.iter(f"{ns}text")]
    assert "x" in texts and "y" in texts
    assert "ring <seed=0>" in texts
    assert "http" not in svg.replace("http://www.w3.org/2000/svg", "")


def test_scatter_svg_with_empty_real_set(ring):
    path = os.path.join(tempfile.mkdtemp(prefix="ganlab_svg_"), "scatter.svg")
    write_scatter_svg(path, SampleSet(np.zeros((0, 2))), sample_mixture(ring, 10, seed=0))
    assert ET.parse(path).getroot() is not None


def test_scatter_rejects_tiny_canvas(ring):
    s = sample_mixture(ring, 5, seed=0)
    with pytest.raises(ContractViolation):
        render_scatter_svg(s, s, width=100)
