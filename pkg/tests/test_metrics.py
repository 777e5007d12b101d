import math

import numpy as np
import pytest
import skimage.data
import torch
from scipy.stats import gennorm

from rrdbsr.metrics import (
    NiqeModel, QualityReport, QualityRow, fit_aggd, fit_niqe_model, image_features, niqe,
    niqe_distance, perceptual_index, psnr_y, ssim_y,
)
from rrdbsr.metrics.niqe import FLIP_PERMUTATION, aggd_scales

import oracles

CORPUS = ("astronaut", "chelsea", "coffee", "camera", "coins", "moon", "rocket", "text", "page", "logo")


def corpus_image(name):
    im = getattr(skimage.data, name)()
    if im.ndim == 2:
        im = np.stack([im] * 3, -1)
    return np.ascontiguousarray(im[..., :3].transpose(2, 0, 1)) / 255.0


def _offset_in_y(img, mse):
    # adding d to every channel moves luma by d * (65.481 + 128.553 + 24.966) / 255
    d = math.sqrt(mse) * 255.0 / (65.481 + 128.553 + 24.966)
    return img + d


class TestPSNR:
    def test_identical_is_infinite(self):
        x = np.random.default_rng(0).random((3, 16, 16))
        assert psnr_y(x, x) == math.inf

    @pytest.mark.parametrize("mse,db", [(1e-2, 20.0), (1e-4, 40.0)])
    def test_constructed_mse(self, mse, db):
        hr = np.zeros((3, 8, 8))  # luma is exactly 16/255 here
        sr = _offset_in_y(hr, mse)
        assert abs(psnr_y(sr, hr) - db) < 1e-9

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b = rng.random((3, 20, 24)), rng.random((3, 20, 24))
            assert abs(psnr_y(a, b) - oracles.psnr_direct(a, b)) < 1e-6

    def test_symmetric_and_translation_invariant(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((3, 16, 16)) * 0.5, rng.random((3, 16, 16)) * 0.5
        assert psnr_y(a, b) == psnr_y(b, a)
        assert abs(psnr_y(a + 0.3, b + 0.3) - psnr_y(a, b)) < 1e-9

    def test_border_crop_and_errors(self):
        a = np.zeros((3, 16, 16))
        b = a.copy()
        b[:, 0, :] = 1.0
        assert psnr_y(a, b, border_crop=4) == math.inf
        with pytest.raises(ValueError):
            psnr_y(a, np.zeros((3, 16, 17)))
        assert psnr_y(torch.from_numpy(a), torch.from_numpy(b)) == psnr_y(a, b)


class TestSSIM:
    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random((3, 32, 32))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert abs(ssim_y(a, b) - oracles.ssim_direct(a, b)) < 1e-6

    def test_identity_symmetry_and_inversion(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((3, 24, 24)), rng.random((3, 24, 24))
        assert abs(ssim_y(a, a) - 1.0) < 1e-12
        assert abs(ssim_y(a, b) - ssim_y(b, a)) < 1e-12
        grey = 0.5 + 0.1 * rng.standard_normal((3, 24, 24))
        assert ssim_y(1 - grey, grey) < 1.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim_y(np.zeros((3, 10, 10)), np.zeros((3, 10, 10)))


class TestPerceptualIndex:
    @pytest.mark.parametrize("ma,nq,expected", [(10, 0, 0.0), (6, 4, 4.0), (0, 0, 5.0)])
    def test_arithmetic(self, ma, nq, expected):
        assert perceptual_index(ma, nq) == expected


class TestAGGD:
    @pytest.mark.parametrize("beta", [0.8, 1.0, 2.0])
    def test_symmetric_ggd_samples(self, beta):
        x = gennorm.rvs(beta, size=200_000, random_state=np.random.default_rng(5))
        alpha, ls, rs = fit_aggd(x)
        left, right = aggd_scales(alpha, ls, rs)
        assert abs(left / right - 1) < 0.05
        assert abs(alpha - beta) < 0.1 * beta

    def test_asymmetric_scales_recovered(self):
        rng = np.random.default_rng(6)
        g = rng.standard_normal(400_000)
        x = np.where(g < 0, 0.5 * g, 2.0 * g)
        _, ls, rs = fit_aggd(x)
        assert abs(rs / ls - 4.0) < 0.05


@pytest.fixture(scope="module")
def model():
    return NiqeModel.default()


class TestNIQE:
    def test_shipped_model_is_valid(self, model):
        assert model.mu.shape == (36,)
        np.testing.assert_allclose(model.cov, model.cov.T, atol=1e-10)
        assert np.linalg.eigvalsh(model.cov).min() > -1e-8

    def test_zero_distance_for_pristine_statistics(self, model):
        rng = np.random.default_rng(7)
        feats = rng.multivariate_normal(model.mu, model.cov, size=400)
        feats += model.mu - feats.mean(axis=0)
        assert niqe_distance(feats, model) < 1e-9

    @pytest.mark.parametrize("name", CORPUS)
    def test_noise_increases_score(self, name, model):
        img = corpus_image(name)
        noisy = np.clip(img + np.random.default_rng(8).normal(0, 0.1, img.shape), 0, 1)
        assert niqe(noisy, model) > niqe(img, model)

    @pytest.mark.parametrize("name", CORPUS)
    def test_horizontal_flip_invariance(self, name, model):
        img = corpus_image(name)
        a, b = niqe(img, model), niqe(img[..., ::-1].copy(), model)
        assert a >= 0
        assert abs(a - b) < 1e-6 * max(1.0, a)

    def test_deterministic(self, model):
        img = corpus_image("camera")
        assert niqe(img, model) == niqe(img, model)

    def test_flip_permutation_matches_features(self):
        img = corpus_image("coffee")
        a = image_features(img, 96)
        b = image_features(img[..., ::-1].copy(), 96)
        np.testing.assert_allclose(np.sort(a[:, FLIP_PERMUTATION], 0), np.sort(b, 0), atol=1e-9)

    def test_too_small(self):
        with pytest.raises(ValueError):
            niqe(np.zeros((3, 64, 64)))

    def test_fit_and_reload(self, tmp_path):
        imgs = [corpus_image(n) for n in ("astronaut", "chelsea")]
        m = fit_niqe_model(imgs)
        m.save(tmp_path / "m.npz")
        back = NiqeModel.load(tmp_path / "m.npz")
        np.testing.assert_array_equal(back.cov, m.cov)
        assert back.patch_size == 96


class TestReport:
    def test_means_recompute_exactly(self, tmp_path):
        rows = [QualityRow("b.png", 30.1, 0.91, 4.2, 3.7), QualityRow("a.png", 25.3, 0.8, 5.5, None),
                QualityRow("c.png", 28.0, 0.85, 3.1, 2.2)]
        rep = QualityReport(rows, "Y channel, border 4")
        rep.write_csv(tmp_path / "r.csv")
        text = (tmp_path / "r.csv").read_text().splitlines()
        assert text[0] == "# Y channel, border 4"
        assert [l.split(",")[0] for l in text[2:]] == ["a.png", "b.png", "c.png", "__mean__"]
        back, stored = QualityReport.read_csv(tmp_path / "r.csv")
        assert stored == back.means()
        assert stored["psnr_y"] == math.fsum([30.1, 25.3, 28.0]) / 3
        assert stored["perceptual_index"] == (3.7 + 2.2) / 2
        assert back.convention == "Y channel, border 4"
