import json
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from lrtranslate.data import Dataset
from lrtranslate.evaluation import EvalProtocol, MetricReport, config_hash, evaluate_model
from lrtranslate.generator import Generator, GeneratorConfig
from lrtranslate.metrics import (FeatureSet, ImportedEmbedder, PixelEmbedder, RandomConvEmbedder,
                                 density_coverage, fid, frechet_distance, perceptual_distance)
from lrtranslate.synthetic import synthetic_images
from lrtranslate.validation import ConfigurationError, ValidationError


def brute_density_coverage(real, fake, k):
    """Exhaustive double loop over plain Python lists."""
    real = [list(map(float, r)) for r in real]
    fake = [list(map(float, f)) for f in fake]
    radii = []
    for i, ri in enumerate(real):
        dists = sorted(math.dist(ri, rj) for j, rj in enumerate(real) if j != i)
        radii.append(dists[k - 1])
    hits = 0
    covered = 0
    for i, ri in enumerate(real):
        inside = [math.dist(ri, fj) <= radii[i] for fj in fake]
        hits += sum(inside)
        covered += any(inside)
    return hits / (k * len(fake)), covered / len(real)


def random_instance(rng, integer):
    n_real = int(rng.integers(6, 33))
    n_fake = int(rng.integers(1, 33))
    dim = int(rng.integers(1, 6))
    if integer:
        return rng.integers(-3, 4, (n_real, dim)).astype(float), rng.integers(-3, 4, (n_fake, dim)).astype(float)
    return rng.normal(size=(n_real, dim)), rng.normal(0.3, 1.2, size=(n_fake, dim))


class TestFID:
    def test_identical_sets(self):
        feats = np.random.default_rng(0).normal(size=(50, 8))
        assert fid(feats, feats) < 1e-6

    def test_univariate_closed_form(self):
        assert frechet_distance(np.array([0.0]), np.array([[1.0]]),
                                np.array([1.0]), np.array([[1.0]])) == pytest.approx(1.0, abs=1e-4)
        # (mu1 - mu2)^2 + s1^2 + s2^2 - 2 s1 s2 with s1 = 2, s2 = 0.5
        assert frechet_distance([0.0], [[4.0]], [3.0], [[0.25]]) == pytest.approx(9 + 2.25, abs=1e-12)

    def test_diagonal_closed_form(self):
        rng = np.random.default_rng(1)
        v1, v2 = rng.uniform(0.5, 2, 4), rng.uniform(0.5, 2, 4)
        m1, m2 = rng.normal(size=4), rng.normal(size=4)
        expected = ((m1 - m2) ** 2).sum() + ((np.sqrt(v1) - np.sqrt(v2)) ** 2).sum()
        assert frechet_distance(m1, np.diag(v1), m2, np.diag(v2)) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_scale_homogeneity(self, c):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(40, 5)), rng.normal(0.5, 2.0, size=(60, 5))
        assert fid(c * a, c * b) == pytest.approx(c ** 2 * fid(a, b), rel=1e-4)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(30, 6)), rng.normal(1, 1.5, size=(45, 6))
        assert abs(fid(a, b) - fid(b, a)) < 1e-6

    def test_rank_deficient_ok(self):
        # fewer samples than dims gives a singular covariance; still PSD
        rng = np.random.default_rng(4)
        value = fid(rng.normal(size=(5, 20)), rng.normal(size=(7, 20)))
        assert np.isfinite(value) and value >= 0

    def test_non_psd_rejected(self):
        with pytest.raises(ValidationError, match="positive semidefinite"):
            frechet_distance(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))

    def test_input_guards(self):
        with pytest.raises(ValidationError):
            fid(np.zeros((1, 3)), np.zeros((5, 3)))
        with pytest.raises(ValidationError):
            fid(np.zeros((5, 3)), np.zeros((5, 4)))
        with pytest.raises(ValidationError):
            fid(np.full((5, 3), np.nan), np.zeros((5, 3)))

    def test_feature_set(self):
        fs = FeatureSet(np.ones((4, 2)), "pixels")
        assert len(fs) == 4 and fid(fs, fs) == 0.0


class TestDensityCoverage:
    @pytest.mark.parametrize("integer", [False, True])
    def test_matches_brute_force(self, integer):
        rng = np.random.default_rng(10 + integer)
        for _ in range(25):
            real, fake = random_instance(rng, integer)
            assert density_coverage(real, fake, k=5) == brute_density_coverage(real, fake, 5)

    def test_chunking_is_exact(self):
        rng = np.random.default_rng(5)
        real, fake = rng.normal(size=(40, 3)), rng.normal(size=(30, 3))
        assert density_coverage(real, fake, chunk=7) == density_coverage(real, fake)

    def test_far_fakes(self):
        real = np.random.default_rng(0).normal(size=(20, 3))
        assert density_coverage(real, real + 1e3) == (0.0, 0.0)

    def test_identical_sets(self):
        real = np.random.default_rng(1).normal(size=(30, 4))
        density, coverage = density_coverage(real, real.copy())
        assert coverage == 1.0
        assert density == brute_density_coverage(real, real, 5)[0]

    def test_duplicate_reals(self):
        real = np.zeros((8, 2))
        assert density_coverage(real, np.zeros((2, 2)), k=3) == (8 * 2 / (3 * 2), 1.0)
        assert density_coverage(real, np.full((2, 2), 1e-9), k=3) == (0.0, 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        real, fake = random_instance(rng, seed % 2 == 0)
        value = density_coverage(real, fake)
        assert density_coverage(rng.permutation(real), rng.permutation(fake)) == value

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_coverage_monotone(self, seed):
        rng = np.random.default_rng(seed)
        real, fake = random_instance(rng, False)
        extra = rng.normal(size=(5, real.shape[1]))
        assert density_coverage(real, np.vstack([fake, extra]))[1] >= density_coverage(real, fake)[1]

    def test_guards(self):
        with pytest.raises(ValidationError):
            density_coverage(np.zeros((5, 2)), np.zeros((3, 2)), k=5)
        with pytest.raises(ValidationError):
            density_coverage(np.zeros((8, 2)), np.zeros((3, 2)), k=0)


def rand_images(b, size=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(b, 3, size, size, generator=g) * 2 - 1


class TestPerceptual:
    @pytest.mark.parametrize("embedder", [PixelEmbedder(), RandomConvEmbedder(seed=1)])
    def test_zero_on_identical(self, embedder):
        a = rand_images(3)
        assert perceptual_distance(a, a.clone(), embedder) == 0.0

    @pytest.mark.parametrize("embedder", [PixelEmbedder(), RandomConvEmbedder(seed=1)])
    def test_symmetric(self, embedder):
        a, b = rand_images(3, seed=1), rand_images(3, seed=2)
        assert abs(perceptual_distance(a, b, embedder) - perceptual_distance(b, a, embedder)) < 1e-7

    def test_pixel_hand_computation(self):
        a, b = rand_images(2, 4, seed=3).double().numpy(), rand_images(2, 4, seed=4).double().numpy()
        na = a / np.sqrt((a ** 2).sum(1, keepdims=True))
        nb = b / np.sqrt((b ** 2).sum(1, keepdims=True))
        expected = ((na - nb) ** 2).sum(1).mean()
        got = perceptual_distance(torch.from_numpy(a), torch.from_numpy(b), PixelEmbedder())
        assert got == pytest.approx(expected, rel=1e-8)

    def test_per_sample(self):
        a, b = rand_images(4, seed=5), rand_images(4, seed=6)
        per = perceptual_distance(a, b, PixelEmbedder(), reduction="none")
        assert per.shape == (4,)
        assert per.mean() == pytest.approx(perceptual_distance(a, b, PixelEmbedder()))

    def test_layer_mismatch(self):
        class Broken(PixelEmbedder):
            def layer_weights(self, maps):
                return [torch.ones(5)]

        with pytest.raises(ConfigurationError):
            perceptual_distance(rand_images(1), rand_images(1, seed=1), Broken())
        with pytest.raises(ValidationError):
            perceptual_distance(rand_images(1), rand_images(2), PixelEmbedder())

    def test_random_conv_deterministic(self):
        a = rand_images(2)
        f1 = RandomConvEmbedder(seed=7).features(a)
        f2 = RandomConvEmbedder(seed=7).features(a)
        assert np.array_equal(f1, f2) and f1.shape == (2, 16 + 32 + 64)


def write_embedder(tmp_path, w, b, lw):
    w.numpy().astype("<f4").tofile(tmp_path / "conv.bin")
    b.numpy().astype("<f4").tofile(tmp_path / "bias.bin")
    lw.numpy().astype("<f4").tofile(tmp_path / "lw.bin")
    manifest = {
        "format": "lrtranslate-embedder", "version": 1, "name": "tiny",
        "ops": [
            {"op": "conv2d", "name": "c1", "padding": 1,
             "weight": {"file": "conv.bin", "shape": list(w.shape)},
             "bias": {"file": "bias.bin", "shape": list(b.shape)}},
            {"op": "relu", "name": "r1", "tap": True, "lpips_weight": {"file": "lw.bin", "shape": list(lw.shape)}},
            {"op": "adaptive_avgpool", "name": "gap", "size": [1, 1]},
            {"op": "flatten", "name": "flat"},
        ],
        "features_from": "flat",
    }
    path = tmp_path / "embedder.json"
    path.write_text(json.dumps(manifest))
    return path


class TestImportedEmbedder:
    def test_matches_direct_network(self, tmp_path):
        w, b, lw = torch.randn(4, 3, 3, 3), torch.randn(4), torch.rand(4)
        emb = ImportedEmbedder.from_manifest(write_embedder(tmp_path, w, b, lw))
        x = rand_images(2, 8)
        h = F.relu(F.conv2d(x, w, b, padding=1))
        np.testing.assert_allclose(emb.features(x), h.mean(dim=(2, 3)).double().numpy(), atol=1e-6)
        y = rand_images(2, 8, seed=9)
        hy = F.relu(F.conv2d(y, w, b, padding=1))

        def unit(t):
            return t / (t.pow(2).sum(1, keepdim=True).sqrt() + 1e-10)

        expected = ((unit(h) - unit(hy)).pow(2) * lw.view(1, -1, 1, 1)).sum(1).mean().item()
        assert perceptual_distance(x, y, emb) == pytest.approx(expected, rel=1e-5)

    def test_bad_manifest(self, tmp_path):
        path = write_embedder(tmp_path, torch.randn(4, 3, 3, 3), torch.randn(4), torch.rand(4))
        data = json.loads(path.read_text())
        data["version"] = 2
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigurationError):
            ImportedEmbedder.from_manifest(path)
        data["version"] = 1
        data["ops"][0]["weight"]["shape"] = [5, 3, 3, 3]
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigurationError):
            ImportedEmbedder.from_manifest(path)


@pytest.fixture(scope="module")
def eval_setup():
    G = Generator(GeneratorConfig(hr_size=16, lr_size=4, base_channels=4, channel_cap=8, spadain_hidden=4))
    return G, Dataset.from_images(synthetic_images(24, 16, seed=2), 4)


class TestEvaluate:
    def test_ten_samples_per_target(self, eval_setup):
        G, ds = eval_setup
        report = evaluate_model(G, ds, EvalProtocol(num_targets=20, samples_per_target=10))
        assert report.num_fake == 200 and report.num_targets == 20 and report.num_real == 24
        for value in (report.fid, report.lpips_mean, report.density, report.coverage):
            assert value is not None and np.isfinite(value)
        assert 0 <= report.coverage <= 1

    def test_deterministic_and_serializable(self, eval_setup, tmp_path):
        G, ds = eval_setup
        proto = EvalProtocol(num_targets=6, samples_per_target=3, real_set="targets")
        a = evaluate_model(G, ds, proto, config={"a": 1})
        b = evaluate_model(G, ds, proto, config={"a": 1})
        assert a == b
        assert a.num_real == 6 and a.config_hash == config_hash({"a": 1})
        a.save(tmp_path / "r.json")
        assert MetricReport.from_json((tmp_path / "r.json").read_text()) == a

    def test_metric_selection(self, eval_setup):
        G, ds = eval_setup
        report = evaluate_model(G, ds, EvalProtocol(num_targets=3, samples_per_target=2), metrics=["fid"])
        assert report.fid is not None and report.lpips_mean is None and report.density is None
        with pytest.raises(ConfigurationError):
            evaluate_model(G, ds, metrics=["psnr"])

    def test_too_few_sources(self, eval_setup):
        G, ds = eval_setup
        with pytest.raises(ConfigurationError):
            evaluate_model(G, ds.subset(range(5)), EvalProtocol(samples_per_target=5))
