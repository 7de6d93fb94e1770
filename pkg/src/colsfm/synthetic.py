"""Ground-truth scene generator and measurement corrupter.

Scenes are the verification oracle: every certificate and recovery routine is
checked against cameras and points generated here.  Generation is
deterministic for a fixed seed (numpy PCG64 streams are stable across
platforms).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    BifocalTensor,
    CameraModel,
    Track,
    bifocal_from_pair,
    normalized_tensor,
    rotation_about,
    skew,
    unit,
)
from .nview import NViewBifocal


@dataclass
class MeasurementNoise:
    """Pose-space noise levels: degrees for rotations and translation
    directions, image units for track points."""

    rotation_deg: float = 0.0
    translation_dir_deg: float = 0.0
    pixel: float = 0.0


@dataclass
class TrackSet:
    """All observations of the scene points: obs[p][i] = image of point p in view i."""

    observations: list  # list over points of dict view -> homogeneous 3-vector
    depths: list        # same layout, projective depths

    def pair_tracks(self, i: int, j: int) -> list:
        out = []
        for p, obs in enumerate(self.observations):
            if i in obs and j in obs:
                out.append(Track((i, j), np.vstack([obs[i], obs[j]])))
        return out

    def triple_tracks(self, i: int, j: int, k: int) -> list:
        out = []
        for p, obs in enumerate(self.observations):
            if i in obs and j in obs and k in obs:
                out.append(Track((i, j, k), np.vstack([obs[i], obs[j], obs[k]])))
        return out

    def all_views(self) -> set:
        views = set()
        for obs in self.observations:
            views.update(obs.keys())
        return views


@dataclass
class Scene:
    """Synthetic scene with known cameras and points."""

    cameras: list
    points: np.ndarray
    layout: str
    seed: int

    @property
    def n(self) -> int:
        return len(self.cameras)

    def centers(self) -> np.ndarray:
        return np.vstack([c.center for c in self.cameras])

    def exact_nview(self, kind: str | None = None) -> NViewBifocal:
        """Dense n-view matrix with true block scales (no normalization)."""
        blocks = {}
        for i in range(self.n):
            for j in range(i + 1, self.n):
                t = bifocal_from_pair(self.cameras[i], self.cameras[j])
                if kind is not None and t.kind != kind:
                    t = BifocalTensor(t.matrix, kind)
                blocks[(i, j)] = t
        return NViewBifocal.assemble(self.n, blocks)

    def exact_triplet(self, ids, kind: str | None = None) -> np.ndarray:
        """9x9 true-scale submatrix for a camera triple."""
        a, b, c = sorted(ids)
        M = np.zeros((9, 9))
        trip = [a, b, c]
        for u in range(3):
            for v in range(u + 1, 3):
                B = bifocal_from_pair(self.cameras[trip[u]], self.cameras[trip[v]]).matrix
                M[3 * u:3 * u + 3, 3 * v:3 * v + 3] = B
                M[3 * v:3 * v + 3, 3 * u:3 * u + 3] = B.T
        return M

    def track_set(self, pixel_noise: float = 0.0, rng=None) -> TrackSet:
        rng = rng if rng is not None else np.random.default_rng(self.seed + 1)
        obs, dep = [], []
        for X in self.points:
            po, pd = {}, {}
            for i, cam in enumerate(self.cameras):
                x = cam.project(X)
                if pixel_noise > 0.0:
                    x = x + np.array([rng.normal(0, pixel_noise), rng.normal(0, pixel_noise), 0.0])
                po[i] = x
                pd[i] = cam.depth(X)
            obs.append(po)
            dep.append(pd)
        return TrackSet(obs, dep)


def _look_rotation(forward: np.ndarray, rng) -> np.ndarray:
    """Rotation whose camera z-axis points along `forward`, random roll."""
    z = unit(forward)
    ref = np.array([0.0, 1.0, 0.0])
    if abs(z @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    x = unit(np.cross(ref, z))
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    roll = rotation_about(z, rng.uniform(-np.pi, np.pi))
    return roll @ R


def _random_K(rng) -> np.ndarray:
    f = rng.uniform(0.8, 1.2)
    px, py = rng.uniform(-0.1, 0.1, size=2)
    return np.array([[f, 0.0, px], [0.0, f, py], [0.0, 0.0, 1.0]])


def generate(
    layout: str,
    n_cams: int,
    n_points: int,
    seed: int = 0,
    intrinsics_mode: str = "calibrated",
    collinear_fraction: float = 0.5,
) -> Scene:
    """Deterministic synthetic scene.

    layout: "collinear" | "general" | "mixed" (first round(f*n) cameras on a
    line, the rest in general position).  Points sit in a bounded box off the
    camera line, in front of every camera.
    """
    if n_cams < 3:
        raise ValueError("need at least 3 cameras")
    if n_points < 4:
        raise ValueError("need at least 4 points")
    rng = np.random.default_rng(seed)

    # camera line along a random direction, points in a box displaced sideways
    d = unit(rng.normal(size=3))
    c0 = rng.normal(scale=0.5, size=3)
    side = unit(np.cross(d, rng.normal(size=3)))
    box_center = c0 + 6.0 * side
    points = box_center + rng.uniform(-1.5, 1.5, size=(n_points, 3))

    if layout == "collinear":
        n_line = n_cams
    elif layout == "general":
        n_line = 0
    elif layout == "mixed":
        n_line = int(round(collinear_fraction * n_cams))
    else:
        raise ValueError(f"unknown layout {layout!r}")

    centers = []
    alphas = np.sort(rng.uniform(-2.5, 2.5, size=n_line))
    while n_line and np.min(np.diff(alphas), initial=np.inf) < 0.05:
        alphas = np.sort(rng.uniform(-2.5, 2.5, size=n_line))
    for a in alphas:
        centers.append(c0 + a * d)
    for _ in range(n_cams - n_line):
        p = c0 + rng.uniform(-2.5, 2.5) * d + rng.uniform(0.5, 2.0) * unit(np.cross(d, rng.normal(size=3)))
        centers.append(p)

    cams = []
    for t in centers:
        look = _look_rotation(box_center - t, rng)
        jitter = rotation_about(unit(rng.normal(size=3)), np.deg2rad(rng.uniform(0, 5.0)))
        R = jitter @ look
        K = _random_K(rng) if intrinsics_mode == "varied" else np.eye(3)
        cams.append(CameraModel(K, R, t))

    scene = Scene(cams, points, layout, seed)
    # visibility: every point in front of every camera (look-at geometry
    # guarantees it for the box used; verify rather than trust)
    for X in points:
        for cam in cams:
            if cam.depth(X) <= 0:
                raise RuntimeError("generator produced a point behind a camera")
    return scene


def _perturbed_block(ci: CameraModel, cj: CameraModel, noise: MeasurementNoise, rng) -> np.ndarray:
    """Rebuild the pairwise tensor from a noise-perturbed relative pose.

    Rotation noise: rotation of exactly `rotation_deg` about a uniformly
    random axis.  Translation noise: the direction t_ij is rotated by exactly
    `translation_dir_deg` about a random axis perpendicular to it.  Rank 2 is
    preserved exactly because the block stays a true tensor of some pose.
    """
    Rrel = ci.rotation.T @ cj.rotation  # R_i^T R_j
    tdir = unit(ci.rotation.T @ (ci.center - cj.center))
    if noise.rotation_deg > 0:
        Rrel = rotation_about(rng.normal(size=3), np.deg2rad(noise.rotation_deg)) @ Rrel
    if noise.translation_dir_deg > 0:
        axis = unit(np.cross(tdir, rng.normal(size=3)))
        tdir = rotation_about(axis, np.deg2rad(noise.translation_dir_deg)) @ tdir
    E = skew(tdir) @ Rrel
    if ci.is_calibrated and cj.is_calibrated:
        return E
    Ki = np.linalg.inv(ci.intrinsics)
    Kj = np.linalg.inv(cj.intrinsics)
    return Ki.T @ E @ Kj


def measure(scene: Scene, noise: MeasurementNoise | None = None, seed: int = 0):
    """Measured n-view matrix (unit-normalized blocks) and noisy tracks."""
    noise = noise or MeasurementNoise()
    rng = np.random.default_rng(seed)
    kind = "essential" if all(c.is_calibrated for c in scene.cameras) else "fundamental"
    blocks = {}
    for i in range(scene.n):
        for j in range(i + 1, scene.n):
            B = _perturbed_block(scene.cameras[i], scene.cameras[j], noise, rng)
            blocks[(i, j)] = BifocalTensor(normalized_tensor(B), kind, scale_fixed=True)
    nview = NViewBifocal.assemble(scene.n, blocks)
    tracks = scene.track_set(pixel_noise=noise.pixel, rng=rng)
    return nview, tracks
