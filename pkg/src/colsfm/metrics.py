"""Gauge alignment and reconstruction error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFew
from .geometry import DegenerateGeometry, Track, triangulate_dlt


@dataclass
class SimilarityAlignment:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residuals: np.ndarray
    collinear_gauge: bool = False

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def align_similarity(est_centers: np.ndarray, gt_centers: np.ndarray) -> SimilarityAlignment:
    """Least-squares similarity mapping estimated centers onto ground truth
    (Umeyama).  Collinear point sets are allowed; the rotation about the line
    is then an unconstrained gauge and gets flagged."""
    est = np.asarray(est_centers, dtype=float)
    gt = np.asarray(gt_centers, dtype=float)
    if est.shape[0] < 3:
        raise TooFew("similarity alignment needs at least 3 correspondences")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    de = est - mu_e
    dg = gt - mu_g
    cov = dg.T @ de / est.shape[0]
    U, s, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_e = float(np.mean(np.sum(de ** 2, axis=1)))
    scale = float(np.trace(np.diag(s) @ S) / var_e) if var_e > 0 else 1.0
    t = mu_g - scale * R @ mu_e
    aligned = scale * est @ R.T + t
    residuals = np.linalg.norm(aligned - gt, axis=1)
    collinear = bool(s[1] < 1e-9 * s[0]) if s[0] > 0 else True
    return SimilarityAlignment(scale, R, t, residuals, collinear)


def position_errors(est_centers, gt_centers) -> np.ndarray:
    """Per-camera center distances after similarity alignment."""
    return align_similarity(est_centers, gt_centers).residuals


def mean_reprojection_error(cams, tracks) -> float:
    """Mean pixel distance between observations and the reprojection of the
    point re-triangulated from the estimated cameras.

    cams: list of 3x4 projections (None allowed for unreconstructed views);
    tracks: Track list over camera indices.
    """
    total, count = 0.0, 0
    for tr in tracks:
        views = [v for v in tr.view_ids if cams[v] is not None]
        if len(views) < 2:
            continue
        sub = tr.restrict(tuple(views))
        try:
            X = triangulate_dlt([cams[v] for v in views], sub)
        except DegenerateGeometry:
            continue
        for v in views:
            x = cams[v] @ X
            if abs(x[2]) < 1e-15:
                continue
            x = x / x[2]
            total += float(np.linalg.norm(x[:2] - tr.point(v)[:2]))
            count += 1
    return total / count if count else float("nan")


@dataclass
class EvalReport:
    algorithm: str
    regime: str
    n_cameras: int
    n_reconstructed: int
    mean_position_error: float | None
    median_position_error: float | None
    mean_reprojection_error: float | None
    runtime_seconds: float | None = None
    converged: bool = True
    failure_stage: str | None = None

    def to_dict(self, include_runtime: bool = False) -> dict:
        doc = {
            "algorithm": self.algorithm,
            "regime": self.regime,
            "n_cameras": self.n_cameras,
            "n_reconstructed": self.n_reconstructed,
            "mean_position_error": self.mean_position_error,
            "median_position_error": self.median_position_error,
            "mean_reprojection_error": self.mean_reprojection_error,
            "converged": self.converged,
            "failure_stage": self.failure_stage,
            # measured wall time is volatile; kept out of the byte-stable
            # report unless explicitly requested
            "runtime_seconds": self.runtime_seconds if include_runtime else None,
        }
        return doc
