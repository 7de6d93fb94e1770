import numpy as np
import pytest

from colsfm.errors import TooFew
from colsfm.metrics import align_similarity, mean_reprojection_error, position_errors
from colsfm.synthetic import generate
from conftest import random_rotation


class TestAlignSimilarity:
    def test_identity(self, rng):
        pts = rng.normal(size=(10, 3))
        a = align_similarity(pts, pts)
        assert a.scale == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(a.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(a.translation, 0, atol=1e-12)
        assert np.max(a.residuals) < 1e-12

    def test_exact_similarity_recovered(self, rng):
        gt = rng.normal(size=(8, 3))
        est = 2.0 * gt + np.array([1.0, -2.0, 0.5])
        a = align_similarity(est, gt)
        assert a.scale == pytest.approx(0.5, rel=1e-12)
        assert np.max(a.residuals) < 1e-12

    def test_random_similarity_recovered(self, rng):
        gt = rng.normal(size=(12, 3))
        R = random_rotation(rng)
        est = (gt @ R.T) * 0.7 + rng.normal(size=3)
        a = align_similarity(est, gt)
        assert np.max(a.residuals) < 1e-10
        assert not a.collinear_gauge

    def test_collinear_flagged_but_aligned(self, rng):
        d = rng.normal(size=3)
        gt = np.outer(np.linspace(0, 5, 6), d)
        R = random_rotation(rng)
        est = (gt @ R.T) * 1.4 + rng.normal(size=3)
        a = align_similarity(est, gt)
        assert a.collinear_gauge
        assert np.max(a.residuals) < 1e-9

    def test_too_few(self, rng):
        with pytest.raises(TooFew):
            align_similarity(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))

    def test_position_error_invariant_to_gauge(self, rng):
        scene = generate("general", 6, 8, seed=40)
        gt = scene.centers()
        est = gt + 1e-3 * rng.normal(size=gt.shape)
        base = position_errors(est, gt)
        R = random_rotation(rng)
        moved = (est @ R.T) * 3.1 + rng.normal(size=3)
        again = position_errors(moved, gt)
        assert np.allclose(base, again, atol=1e-9)


class TestReprojectionError:
    def test_noiseless_oracle(self):
        scene = generate("general", 5, 10, seed=41)
        cams = [c.projection_matrix() for c in scene.cameras]
        ts = scene.track_set()
        tracks = ts.triple_tracks(0, 2, 4) + ts.pair_tracks(1, 3)
        assert mean_reprojection_error(cams, tracks) < 1e-8

    def test_noise_level_reflected(self):
        # Monte Carlo: observations with sigma noise give mean error ~ sigma
        scene = generate("general", 6, 60, seed=42)
        cams = [c.projection_matrix() for c in scene.cameras]
        sigma = 1e-3
        ts = scene.track_set(pixel_noise=sigma)
        tracks = []
        for i in range(scene.n - 2):
            tracks += ts.triple_tracks(i, i + 1, i + 2)
        err = mean_reprojection_error(cams, tracks)
        assert 0.3 * sigma < err < 2.0 * sigma

    def test_skips_unreconstructed_views(self):
        scene = generate("general", 4, 8, seed=43)
        cams = [c.projection_matrix() for c in scene.cameras]
        cams[3] = None
        ts = scene.track_set()
        tracks = ts.triple_tracks(0, 1, 3)
        assert mean_reprojection_error(cams, tracks) < 1e-8
