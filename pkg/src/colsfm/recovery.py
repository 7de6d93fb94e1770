"""Camera recovery from consistent tensors and dual-graph registration.

Per-triplet recovery is scale-free: rotations come from the blocks, the
translation direction from the anchor pair, and the remaining position
freedom (alpha in the calibrated collinear case, the 4-vector a in the
projective one) from 3-view tracks.  Triplets are then chained into a common
frame by traversing the cover's dual graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentIllConditioned,
    AmbiguousCheirality,
    CyclicInconsistency,
    DegenerateEpipole,
    DegenerateGeometry,
    InconsistentInput,
    InsufficientTracks,
    NotConnected,
)
from .geometry import (
    BifocalTensor,
    Track,
    epipole,
    essential_candidates,
    fundamental_from_projections,
    nearest_rotation,
    rotation_from_essential,
    skew,
    triangulate_dlt,
    unit,
)
from .nview import certify_collinear_essential

_LOCAL_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass
class TripletCameras:
    """Three recovered 3x4 cameras in a local gauge.

    camera order follows sorted(camera_ids); frame is "euclidean" or
    "projective"; alpha_or_a holds the track-resolved free parameter.
    """

    triplet_id: tuple
    cameras: list
    frame: str
    alpha_or_a: np.ndarray | float


@dataclass
class TripletGeometry:
    """Pairwise relative rotations/directions of an essential triplet.

    rotations[(i, j)] is R_i^T R_j, t_dirs[(i, j)] the unit direction
    R_i^T (t_i - t_j); sign_known marks pairs whose direction sign was fixed
    by track cheirality rather than left free.
    """

    rotations: dict
    t_dirs: dict
    sign_known: dict
    cycle_residual: float


def _as_matrix(t) -> np.ndarray:
    return t.matrix if isinstance(t, BifocalTensor) else np.asarray(t, dtype=float)


def _pair_tracks(tracks, i: int, j: int):
    out = []
    for tr in tracks or []:
        if i in tr.view_ids and j in tr.view_ids:
            out.append(tr.restrict((i, j)))
    return out


def resolve_essential_triplet(blocks: dict, tracks=None, cycle_tol: float = 1e-3) -> TripletGeometry:
    """Pick the rotation branch of each pairwise decomposition.

    blocks: {(0,1), (0,2), (1,2)} -> essential matrix (local indices).
    Pairs with 2-view tracks are disambiguated by cheirality voting; the
    remaining branches are chosen to close the rotation cycle.
    """
    cands, tdirs = {}, {}
    rotations, t_dirs, sign_known = {}, {}, {}
    for key in _LOCAL_PAIRS:
        E = _as_matrix(blocks[key])
        pair_trs = _pair_tracks(tracks, *key)
        if pair_trs:
            R, t = rotation_from_essential(E, pair_trs)
            rotations[key] = R
            t_dirs[key] = t
            sign_known[key] = True
        else:
            four = essential_candidates(E)
            cands[key] = [four[0][0], four[2][0]]
            tdirs[key] = four[0][1]
    open_keys = [k for k in _LOCAL_PAIRS if k not in rotations]
    best = None
    options = [cands[k] if k in cands else [rotations[k]] for k in _LOCAL_PAIRS]
    for R01 in options[0]:
        for R02 in options[1]:
            for R12 in options[2]:
                r = float(np.linalg.norm(R01 @ R12 @ R02.T - np.eye(3)))
                if best is None or r < best[0]:
                    best = (r, R01, R02, R12)
    residual, R01, R02, R12 = best
    if residual > cycle_tol:
        raise CyclicInconsistency(f"rotation cycle residual {residual:.3e} above {cycle_tol:.1e}")
    for key, R in zip(_LOCAL_PAIRS, (R01, R02, R12)):
        rotations[key] = R
        if key in open_keys:
            t_dirs[key] = tdirs[key]
            sign_known[key] = False
    return TripletGeometry(rotations, t_dirs, sign_known, residual)


def eigen_rotation_averaging(rel: dict, m: int) -> list:
    """Absolute orientations from relative ones via the top eigenvectors of
    the block matrix M_ij = R_i^T R_j (M_ii = I); returns R_i^T up to one
    global rotation."""
    M = np.zeros((3 * m, 3 * m))
    for i in range(m):
        M[3 * i:3 * i + 3, 3 * i:3 * i + 3] = np.eye(3)
    for (i, j), R in rel.items():
        M[3 * i:3 * i + 3, 3 * j:3 * j + 3] = R
        M[3 * j:3 * j + 3, 3 * i:3 * i + 3] = R.T
    w, V = np.linalg.eigh(M)
    B = V[:, -3:]
    dets = [np.linalg.det(B[3 * i:3 * i + 3]) for i in range(m)]
    if np.sum(dets) < 0:
        B[:, 0] = -B[:, 0]
    return [nearest_rotation(B[3 * i:3 * i + 3]) for i in range(m)]


def closure_scales(geom: TripletGeometry):
    """Relative pair magnitudes ||t_i - t_j|| from the direction closure
    (t_0 - t_1) + (t_1 - t_2) = (t_0 - t_2), searched over the free sign
    branches; returns ({pair: mu}, {pair: sign}, residual) with mu01 = 1."""
    Rh = eigen_rotation_averaging(geom.rotations, 3)
    d = {k: Rh[k[0]].T @ geom.t_dirs[k] for k in _LOCAL_PAIRS}
    sign_options = {
        k: ((1.0,) if geom.sign_known[k] else (1.0, -1.0)) for k in _LOCAL_PAIRS
    }
    best = None
    for s01 in sign_options[(0, 1)]:
        for s02 in sign_options[(0, 2)]:
            for s12 in sign_options[(1, 2)]:
                A = np.column_stack([s01 * d[(0, 1)], s12 * d[(1, 2)], -s02 * d[(0, 2)]])
                _, sv, Vt = np.linalg.svd(A)
                mu = Vt[2]
                if np.sum(mu) < 0:
                    mu = -mu
                # tolerate a negligibly negative component (nearly degenerate
                # pair distance under noise) and clamp it away
                if np.all(mu > -1e-6 * np.max(np.abs(mu))):
                    mu = np.maximum(mu, 1e-12 * np.max(np.abs(mu)))
                    if best is None or sv[2] < best[0]:
                        best = (sv[2], mu, (s01, s02, s12))
    if best is None:
        return None
    residual, mu, signs = best
    mu = mu / mu[0]
    return (
        {(0, 1): float(mu[0]), (1, 2): float(mu[1]), (0, 2): float(mu[2])},
        {(0, 1): signs[0], (0, 2): signs[1], (1, 2): signs[2]},
        float(residual),
    )


def _triplet_blocks(E9: np.ndarray) -> dict:
    return {
        (i, j): E9[3 * i:3 * i + 3, 3 * j:3 * j + 3] for (i, j) in _LOCAL_PAIRS
    }


def _alpha_least_squares(P0, P1, Rh2, axis_dir, tracks3):
    """alpha from P2(alpha) X x x2 = 0 over all 3-view tracks, X from views 0-1."""
    num, den = 0.0, 0.0
    scale = 0.0
    used = 0
    for tr in tracks3:
        try:
            X = triangulate_dlt([P0, P1], tr.restrict((0, 1)))
        except DegenerateGeometry:
            continue
        if abs(X[3]) < 1e-12 * np.linalg.norm(X):
            continue
        Xe = X[:3] / X[3]
        u = Rh2 @ Xe
        b = Rh2 @ axis_dir
        x2 = tr.point(2)
        bx = np.cross(b, x2)
        ux = np.cross(u, x2)
        num += -float(bx @ ux)
        den += float(bx @ bx)
        scale += float(ux @ ux)
        used += 1
    if used == 0:
        raise InsufficientTracks("no usable 3-view track for the alpha solve")
    if den < 1e-18 * max(scale, 1.0):
        raise InsufficientTracks("3-view tracks are degenerate with the camera line")
    return num / den


def recover_calibrated_collinear_triplet(
    E9: np.ndarray,
    tracks2,
    tracks3,
    triplet_id=(0, 1, 2),
    cert_tol: float = 1e-3,
    cycle_tol: float = 1e-3,
) -> TripletCameras:
    """Cameras of a collinear calibrated triplet from its consistent 9x9 matrix.

    Pairwise rotations are extracted per block (cheirality-voted), averaged to
    absolute ones, the pair (0,1) fixes the line direction with unit baseline,
    and alpha places the third camera along it using the 3-view tracks.

    The certificate precondition checks the eigenvalue pattern only (a sanity
    gate against junk input, with a tolerance sized for post-averaging noise
    floors): measured blocks carry arbitrary scales, which leave the pattern
    intact but make the orthogonality condition meaningless before recovery.
    """
    E9 = np.asarray(E9, dtype=float)
    cert = certify_collinear_essential(E9, tol=cert_tol)
    if not (cert.conditions["eigen_count"] and cert.conditions["eigen_pattern"]):
        raise InconsistentInput(
            f"triplet matrix fails the collinear eigenvalue pattern "
            f"(rank {cert.rank_estimate}, residual {cert.pattern_residual:.3e})"
        )
    geom = resolve_essential_triplet(_triplet_blocks(E9), tracks2, cycle_tol)
    if not geom.sign_known[(0, 1)]:
        raise InsufficientTracks("pair (0,1) needs 2-view tracks to sign the baseline")
    Rh = eigen_rotation_averaging(geom.rotations, 3)
    t12 = geom.t_dirs[(0, 1)]
    axis = Rh[0].T @ t12  # world direction of t_0 - t_1 in the local gauge
    P0 = np.hstack([Rh[0], np.zeros((3, 1))])
    P1 = np.hstack([Rh[1], (Rh[1] @ axis).reshape(3, 1)])
    if not tracks3:
        raise InsufficientTracks("alpha is undetermined without 3-view tracks")
    alpha = _alpha_least_squares(P0, P1, Rh[2], axis, tracks3)
    P2 = np.hstack([Rh[2], (alpha * Rh[2] @ axis).reshape(3, 1)])
    return TripletCameras(tuple(triplet_id), [P0, P1, P2], "euclidean", alpha)


def recover_calibrated_general_triplet(
    E9: np.ndarray,
    tracks2,
    triplet_id=(0, 1, 2),
    cycle_tol: float = 1e-3,
) -> TripletCameras:
    """Cameras of a general-position calibrated triplet: rotations and relative
    translation magnitudes come from the blocks alone (direction closure);
    tracks are needed only on one pair to fix the overall cheirality."""
    E9 = np.asarray(E9, dtype=float)
    geom = resolve_essential_triplet(_triplet_blocks(E9), tracks2, cycle_tol)
    if not any(geom.sign_known.values()):
        raise InsufficientTracks("at least one pair needs tracks to anchor cheirality")
    sol = closure_scales(geom)
    if sol is None:
        raise InconsistentInput("no sign branch closes the translation triangle")
    mu, signs, residual = sol
    Rh = eigen_rotation_averaging(geom.rotations, 3)
    d = {k: Rh[k[0]].T @ geom.t_dirs[k] for k in _LOCAL_PAIRS}
    t = [np.zeros(3)]
    t.append(t[0] - mu[(0, 1)] * signs[(0, 1)] * d[(0, 1)])
    t.append(t[0] - mu[(0, 2)] * signs[(0, 2)] * d[(0, 2)])
    cams = [np.hstack([Rh[i], (-Rh[i] @ t[i]).reshape(3, 1)]) for i in range(3)]
    return TripletCameras(tuple(triplet_id), cams, "euclidean", float(mu[(0, 2)]))


def _canonical_pair_cameras(F01, F12):
    F01 = _as_matrix(F01)
    F12 = _as_matrix(F12)
    e0 = epipole(F01, "left")    # image of center 1 in view 0
    P0 = np.hstack([skew(e0) @ F01, e0.reshape(3, 1)])
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    e2 = epipole(F12, "right")   # image of center 1 in view 2
    M2 = skew(e2) @ F12.T
    return P0, P1, M2, e2


def _a_system_rows(P0, M2, e2, F02, tracks3):
    """LS rows for the 4-vector a: proportionality of the third tensor plus
    one cross-product row set per 3-view track."""
    def P2_of(a):
        return np.hstack([M2, np.zeros((3, 1))]) + np.outer(e2, a)

    f0 = fundamental_from_projections(P0, P2_of(np.zeros(4))).ravel()
    L = np.zeros((9, 4))
    for k in range(4):
        ek = np.zeros(4)
        ek[k] = 1.0
        L[:, k] = fundamental_from_projections(P0, P2_of(ek)).ravel() - f0
    fhat = unit(_as_matrix(F02).ravel())
    Proj = np.eye(9) - np.outer(fhat, fhat)
    rows = [Proj @ L]
    rhs = [-Proj @ f0]
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    for tr in tracks3:
        try:
            X = triangulate_dlt([P0, P1], tr.restrict((0, 1)))
        except DegenerateGeometry:
            continue
        x2 = tr.point(2)
        c = M2 @ X[:3]
        ex = np.cross(e2, x2)
        rows.append(np.outer(ex, X))
        rhs.append(-np.cross(c, x2))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    # row normalization keeps tensor rows and track rows commensurable
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-12 * max(float(np.max(norms)), 1.0)
    if not np.any(keep):
        raise DegenerateEpipole("every constraint row is degenerate (tracks at the epipole)")
    A = A[keep] / norms[keep, None]
    b = b[keep] / norms[keep]
    return A, b


def recover_projective_collinear_triplet(
    F01, F12, F02, tracks3, triplet_id=(0, 1, 2)
) -> TripletCameras:
    """Projective cameras of a collinear triplet: the canonical pair from
    F01, the family P2(a) compatible with F12, and a solved in least squares
    from the 3-view tracks (the third tensor constrains nothing when the
    centers are exactly collinear, so at least enough generic tracks to span
    the solve are required)."""
    tracks3 = list(tracks3)
    if len(tracks3) < 2:
        raise InsufficientTracks("the a-vector solve needs at least 2 three-view tracks")
    P0, P1, M2, e2 = _canonical_pair_cameras(F01, F12)
    A, b = _a_system_rows(P0, M2, e2, F02, tracks3)
    a, *_ = np.linalg.lstsq(A, b, rcond=None)
    P2 = np.hstack([M2, np.zeros((3, 1))]) + np.outer(e2, a)
    return TripletCameras(tuple(triplet_id), [P0, P1, P2], "projective", a)


def recover_projective_general_triplet(F01, F12, F02, triplet_id=(0, 1, 2)) -> TripletCameras:
    """Projective cameras of a general-position triplet: a is fully
    determined by proportionality to the third tensor, no tracks needed."""
    P0, P1, M2, e2 = _canonical_pair_cameras(F01, F12)
    A, b = _a_system_rows(P0, M2, e2, F02, tracks3=[])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[3] < 1e-10 * sv[0]:
        raise DegenerateEpipole("third tensor does not determine a (collinear cameras?)")
    a, *_ = np.linalg.lstsq(A, b, rcond=None)
    P2 = np.hstack([M2, np.zeros((3, 1))]) + np.outer(e2, a)
    return TripletCameras(tuple(triplet_id), [P0, P1, P2], "projective", a)


@dataclass
class RegistrationResult:
    cameras: list           # n entries, 3x4 ndarray or None
    frame: str
    merge_residuals: dict = field(default_factory=dict)

    def centers(self) -> np.ndarray:
        out = []
        for P in self.cameras:
            if P is None:
                out.append(np.full(3, np.nan))
            else:
                out.append(-P[:, :3].T @ P[:, 3])
        return np.vstack(out)


def _euclidean_pose(P):
    R_T = P[:, :3]
    t = -R_T.T @ P[:, 3]
    return R_T, t


def _edge_similarity(parent: TripletCameras, child: TripletCameras, shared):
    """Similarity (s, Q, d) mapping child-frame points into the parent frame."""
    Qs, cp, cc = [], [], []
    for cam in shared:
        Rp_T, tp = _euclidean_pose(parent.cameras[parent.triplet_id.index(cam)])
        Rc_T, tc = _euclidean_pose(child.cameras[child.triplet_id.index(cam)])
        Qs.append(Rp_T.T @ Rc_T)  # R_parent @ R_child^T
        cp.append(tp)
        cc.append(tc)
    Q = nearest_rotation(Qs[0] + Qs[1])
    base_c = np.linalg.norm(cc[0] - cc[1])
    base_p = np.linalg.norm(cp[0] - cp[1])
    if base_c < 1e-10 * max(base_p, 1.0):
        raise AlignmentIllConditioned("shared camera centers coincide in the child frame")
    s = base_p / base_c
    d = 0.5 * ((cp[0] - s * Q @ cc[0]) + (cp[1] - s * Q @ cc[1]))
    return s, Q, d


def _edge_homography(parent: TripletCameras, child: TripletCameras, shared):
    """4x4 G with P_parent,k ~ P_child,k @ G for the two shared cameras.

    Unknown vector is (G row-major, lambda_0, lambda_1); the null vector of
    the stacked 24x18 system gives G up to scale.
    """
    Pp = [parent.cameras[parent.triplet_id.index(c)] for c in shared]
    Pc = [child.cameras[child.triplet_id.index(c)] for c in shared]
    A = np.zeros((24, 18))
    for k in range(2):
        for r in range(3):
            for c in range(4):
                eq = 12 * k + r * 4 + c
                # (Pc[k] @ G)[r, c] = sum_m Pc[k][r, m] G[m, c]
                for mcol in range(4):
                    A[eq, 4 * mcol + c] = Pc[k][r, mcol]
                A[eq, 16 + k] = -Pp[k][r, c]
    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] < 1e-10 * sv[0]:
        raise AlignmentIllConditioned("projective alignment system is rank deficient")
    v = Vt[-1]
    G = v[:16].reshape(4, 4)
    # deterministic orientation
    k = int(np.argmax(np.abs(G)))
    if G.flat[k] < 0:
        G = -G
    return G / np.linalg.norm(G)


def _bfs_order(triplets, cover):
    keys = [tuple(t.triplet_id) for t in triplets]
    index = {k: i for i, k in enumerate(keys)}
    adj = {k: [] for k in keys}
    for a, b in cover.dual_edges:
        ka, kb = tuple(a), tuple(b)
        if ka in adj and kb in adj:
            adj[ka].append(kb)
            adj[kb].append(ka)
    for k in adj:
        adj[k] = sorted(set(adj[k]))
    root = min(keys)
    order, parents = [], {}
    seen = {root}
    queue = [root]
    while queue:
        cur = queue.pop(0)
        order.append(cur)
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                parents[nxt] = cur
                queue.append(nxt)
    if len(order) != len(keys):
        raise NotConnected("cover dual graph does not reach every triplet")
    return order, parents, index


def register_global(triplets, cover, mode: str, n_cameras: int | None = None) -> RegistrationResult:
    """Chain per-triplet cameras into one frame by BFS over the dual graph.

    mode="euclidean": per-edge similarity from the two shared cameras,
    multi-visit cameras merged by chordal rotation mean and center mean.
    mode="projective": per-edge 4x4 homography, first visit wins and later
    disagreements are logged as residuals.
    """
    triplets = sorted(triplets, key=lambda t: tuple(t.triplet_id))
    if not triplets:
        raise ValueError("nothing to register")
    if n_cameras is None:
        n_cameras = max(max(t.triplet_id) for t in triplets) + 1
    order, parents, index = _bfs_order(triplets, cover)
    placed = {}   # triplet key -> list of 3x4 cameras in root frame
    by_key = {tuple(t.triplet_id): t for t in triplets}

    for key in order:
        trip = by_key[key]
        if key not in parents:
            placed[key] = list(trip.cameras)
            continue
        pkey = parents[key]
        shared = sorted(set(key) & set(pkey))
        parent_rooted = TripletCameras(pkey, placed[pkey], trip.frame, None)
        if mode == "euclidean":
            s, Q, d = _edge_similarity(parent_rooted, trip, shared)
            cams = []
            for P in trip.cameras:
                R_T, t = _euclidean_pose(P)
                R_T2 = R_T @ Q.T
                t2 = s * Q @ t + d
                cams.append(np.hstack([R_T2, (-R_T2 @ t2).reshape(3, 1)]))
            placed[key] = cams
        elif mode == "projective":
            G = _edge_homography(parent_rooted, trip, shared)
            placed[key] = [P @ G for P in trip.cameras]
        else:
            raise ValueError("mode must be 'euclidean' or 'projective'")

    estimates = {}
    for key in order:
        for cam_id, P in zip(key, placed[key]):
            estimates.setdefault(cam_id, []).append(P)

    cameras = [None] * n_cameras
    merge_residuals = {}
    for cam_id, Ps in sorted(estimates.items()):
        if mode == "euclidean":
            Rs = [P[:, :3] for P in Ps]
            ts = [_euclidean_pose(P)[1] for P in Ps]
            R_T = nearest_rotation(np.sum(Rs, axis=0))
            t = np.mean(ts, axis=0)
            cameras[cam_id] = np.hstack([R_T, (-R_T @ t).reshape(3, 1)])
            if len(Ps) > 1:
                merge_residuals[cam_id] = float(
                    max(np.linalg.norm(P[:, :3] - R_T) for P in Ps)
                )
        else:
            Pn = Ps[0] / np.linalg.norm(Ps[0])
            cameras[cam_id] = Pn
            if len(Ps) > 1:
                rs = []
                for P in Ps[1:]:
                    Q = P / np.linalg.norm(P)
                    rs.append(float(min(np.linalg.norm(Q - Pn), np.linalg.norm(Q + Pn))))
                merge_residuals[cam_id] = max(rs)
    return RegistrationResult(cameras, mode, merge_residuals)
