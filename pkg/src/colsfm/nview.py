"""The 3n x 3n symmetric block-matrix formalism and consistency certificates.

A collinear-consistent essential matrix has eigenvalues (l, l, -l, -l) and,
for the right in-plane pairing of the two eigenspaces, every 3x2 block V_i of
sqrt(0.5)(X + Y) satisfies V_i^T V_i = I/n.  A collinear-consistent
fundamental matrix has rank 4 with signature (2, 2) and rank-2 block rows.
General-position triplets instead have rank 6 with paired spectrum and (for
essential kind) block-rotation structure in sqrt(0.5)(X + Y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateEdge, IndexOutOfRange, NotOrthonormal, RankNot2
from .geometry import BifocalTensor, fix_sign, nearest_rotation


@dataclass(frozen=True)
class NViewBifocal:
    """Symmetric block matrix of pairwise tensors over the available edges."""

    n: int
    blocks: dict  # (i, j) with i < j -> BifocalTensor
    kind: str

    @staticmethod
    def assemble(n: int, blocks: dict, kind: str | None = None, strict: bool = True) -> "NViewBifocal":
        """Validate and store blocks; the full matrix is implied by symmetry.

        Raises DuplicateEdge, IndexOutOfRange, RankNot2.
        """
        seen = {}
        inferred = kind
        for key, t in blocks.items():
            i, j = int(key[0]), int(key[1])
            if i == j:
                raise IndexOutOfRange(f"diagonal block ({i},{i}) not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise IndexOutOfRange(f"edge ({i},{j}) outside [0,{n})")
            a, b = (i, j) if i < j else (j, i)
            if (a, b) in seen:
                raise DuplicateEdge(f"edge ({a},{b}) given twice")
            M = t if isinstance(t, BifocalTensor) else None
            if M is None:
                raise TypeError("blocks must be BifocalTensor instances")
            tensor = t if (a, b) == (i, j) else BifocalTensor(t.matrix.T, t.kind, t.scale_fixed)
            if strict and not tensor.is_rank2():
                raise RankNot2(f"block ({a},{b}) is not rank 2")
            if inferred is None:
                inferred = tensor.kind
            seen[(a, b)] = tensor
        if inferred is None:
            raise ValueError("cannot infer kind from an empty block set")
        return NViewBifocal(n, seen, inferred)

    def is_dense(self) -> bool:
        return len(self.blocks) == self.n * (self.n - 1) // 2

    def edges(self):
        return sorted(self.blocks.keys())

    def block(self, i: int, j: int) -> np.ndarray:
        """Oriented block (i, j); missing blocks are zero."""
        a, b = (i, j) if i < j else (j, i)
        t = self.blocks.get((a, b))
        if t is None:
            return np.zeros((3, 3))
        return t.matrix if (a, b) == (i, j) else t.matrix.T

    def dense(self) -> np.ndarray:
        """Full 3n x 3n symmetric matrix, zero diagonal blocks."""
        M = np.zeros((3 * self.n, 3 * self.n))
        for (i, j), t in self.blocks.items():
            M[3 * i:3 * i + 3, 3 * j:3 * j + 3] = t.matrix
            M[3 * j:3 * j + 3, 3 * i:3 * i + 3] = t.matrix.T
        return M

    def submatrix(self, ids) -> np.ndarray:
        """Dense sub-block matrix over the given (sorted) camera ids."""
        ids = sorted(ids)
        k = len(ids)
        M = np.zeros((3 * k, 3 * k))
        for u in range(k):
            for v in range(u + 1, k):
                B = self.block(ids[u], ids[v])
                M[3 * u:3 * u + 3, 3 * v:3 * v + 3] = B
                M[3 * v:3 * v + 3, 3 * u:3 * u + 3] = B.T
        return M

    def normalized(self) -> "NViewBifocal":
        return NViewBifocal(
            self.n, {k: t.normalized() for k, t in self.blocks.items()}, self.kind
        )


def dense(m: NViewBifocal) -> np.ndarray:
    return m.dense()


def check_nview_wellformed(m: NViewBifocal, tol: float = 1e-9):
    """Validate every block: rank 2, and equal singular values for essential kind.

    Returns (ok, report) where report maps edge -> failure string.
    """
    report = {}
    for key in m.edges():
        t = m.blocks[key]
        if not t.is_rank2(tol):
            report[key] = f"rank != 2 (sigma3/sigma1 = {t.rank2_residual():.3e})"
            continue
        if m.kind == "essential":
            r = t.equal_singulars_residual()
            if r > tol:
                report[key] = f"unequal singular values (rel spread {r:.3e})"
    return (len(report) == 0), report


def svd_spectral_map(U_hat: np.ndarray, V_hat: np.ndarray, sigma: np.ndarray):
    """Map thin-SVD factors to spectral factors: X = sqrt(.5)(U+V), Y = sqrt(.5)(V-U).

    With E = U_hat S V_hat^T + V_hat S U_hat^T the result satisfies
    E = X S X^T - Y S Y^T.  Requires the columns of [U_hat V_hat] orthonormal.
    """
    U_hat = np.asarray(U_hat, dtype=float)
    V_hat = np.asarray(V_hat, dtype=float)
    B = np.hstack([U_hat, V_hat])
    if np.linalg.norm(B.T @ B - np.eye(B.shape[1])) > 1e-9:
        raise NotOrthonormal("columns of [U_hat V_hat] must be orthonormal")
    X = np.sqrt(0.5) * (U_hat + V_hat)
    Y = np.sqrt(0.5) * (V_hat - U_hat)
    return X, Y


def spectral_svd_map(X: np.ndarray, Y: np.ndarray):
    """Inverse of svd_spectral_map: U = sqrt(.5)(X-Y), V = sqrt(.5)(X+Y)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    B = np.hstack([X, Y])
    if np.linalg.norm(B.T @ B - np.eye(B.shape[1])) > 1e-9:
        raise NotOrthonormal("columns of [X Y] must be orthonormal")
    return np.sqrt(0.5) * (X - Y), np.sqrt(0.5) * (X + Y)


@dataclass
class ConsistencyCertificate:
    regime: str
    eigenvalues: np.ndarray
    rank_estimate: int
    signature: tuple
    block_row_ranks: list
    orthogonality_residual: float | None
    pattern_residual: float | None
    rotation_residual: float | None
    conditions: dict
    passed: bool
    tolerances: dict
    v_hat: np.ndarray | None = field(default=None, repr=False)

    def __bool__(self):
        return self.passed


def _eig_sorted(M: np.ndarray):
    w, V = np.linalg.eigh(M)
    order = np.argsort(w)[::-1]  # descending
    w = w[order]
    V = V[:, order]
    # deterministic eigenvector signs
    for k in range(V.shape[1]):
        V[:, k] = fix_sign(V[:, k])
    return w, V


def _golden_min(f, a: float, b: float, iters: int = 90):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _vhat_alignment(X: np.ndarray, Y: np.ndarray, n: int):
    """Search the relative O(2) basis rotation between the two eigenspaces
    that minimizes the V_i^T V_i = I/n residual; return (max residual, V_hat).

    The individual eigenvectors of a doubly degenerate eigenvalue carry an
    arbitrary in-plane basis; the orthogonality condition holds only for the
    aligned choice, so it must be searched, not assumed.
    """
    bx = X.reshape(n, 3, 2)
    by = Y.reshape(n, 3, 2)
    target = np.eye(2) / n

    def residual_sq(theta: float, refl: float) -> float:
        c, s = np.cos(theta), np.sin(theta)
        Q = np.array([[c, -s], [s, c]]) @ np.diag([1.0, refl])
        Vh = np.sqrt(0.5) * (bx + by @ Q)
        G = np.einsum("nij,nik->njk", Vh, Vh) - target
        return float(np.sum(G * G))

    best = (np.inf, 0.0, 1.0)
    for refl in (1.0, -1.0):
        thetas = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
        vals = [residual_sq(t, refl) for t in thetas]
        k = int(np.argmin(vals))
        lo = thetas[k] - 2.0 * np.pi / 256
        hi = thetas[k] + 2.0 * np.pi / 256
        x, fx = _golden_min(lambda t: residual_sq(t, refl), lo, hi)
        if fx < best[0]:
            best = (fx, x, refl)
    _, theta, refl = best
    c, s = np.cos(theta), np.sin(theta)
    Q = np.array([[c, -s], [s, c]]) @ np.diag([1.0, refl])
    Vh = np.sqrt(0.5) * (bx + by @ Q)
    G = np.einsum("nij,nik->njk", Vh, Vh) - target
    maxres = float(np.max(np.sqrt(np.sum(G * G, axis=(1, 2)))))
    return maxres, Vh.reshape(3 * n, 2)


def _dense_or_raise(m: NViewBifocal) -> np.ndarray:
    # global certificates are statements about complete matrices; sparse
    # inputs are certified per-triplet submatrix instead
    if not m.is_dense():
        from .errors import ValidationError

        raise ValidationError("certificates need a dense matrix; certify sparse "
                              "inputs per-triplet via submatrix()")
    return m.dense()


def certify_collinear_essential(
    m: NViewBifocal | np.ndarray, tol: float = 1e-6, rank_tol: float = 1e-6
) -> ConsistencyCertificate:
    """Collinear-consistency certificate for an essential n-view matrix.

    Condition 1: exactly four significant eigenvalues in the pattern
    (l, l, -l, -l).  Condition 2: the aligned V_i^T V_i = I/n orthogonality.
    """
    M = _dense_or_raise(m) if isinstance(m, NViewBifocal) else np.asarray(m, dtype=float)
    n = M.shape[0] // 3
    w, V = _eig_sorted(M)
    amax = float(np.max(np.abs(w)))
    significant = int(np.sum(np.abs(w) > rank_tol * amax)) if amax > 0 else 0
    lam = (w[0] + w[1] - w[-1] - w[-2]) / 4.0
    if lam > 0:
        dev = [abs(w[0] - lam), abs(w[1] - lam), abs(w[-1] + lam), abs(w[-2] + lam)]
        if len(w) > 4:
            dev.append(float(np.max(np.abs(w[2:-2]))))
        pattern_residual = float(max(dev) / lam)
    else:
        pattern_residual = 1.0
    X = V[:, [0, 1]]
    Y = V[:, [len(w) - 1, len(w) - 2]]
    ortho_residual, v_hat = _vhat_alignment(X, Y, n)
    conditions = {
        "eigen_count": significant == 4,
        "eigen_pattern": pattern_residual < tol,
        "orthogonality": ortho_residual < tol,
    }
    pos = int(np.sum(w > rank_tol * amax)) if amax > 0 else 0
    neg = int(np.sum(w < -rank_tol * amax)) if amax > 0 else 0
    return ConsistencyCertificate(
        regime="collinear-essential",
        eigenvalues=w,
        rank_estimate=significant,
        signature=(pos, neg),
        block_row_ranks=[],
        orthogonality_residual=ortho_residual,
        pattern_residual=pattern_residual,
        rotation_residual=None,
        conditions=conditions,
        passed=all(conditions.values()),
        tolerances={"tol": tol, "rank_tol": rank_tol},
        v_hat=v_hat,
    )


def _block_row_rank(M: np.ndarray, i: int, rank_tol: float) -> int:
    row = M[3 * i:3 * i + 3, :]
    s = np.linalg.svd(row, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def certify_collinear_fundamental(
    m: NViewBifocal | np.ndarray, rank_tol: float = 1e-6
) -> ConsistencyCertificate:
    """Collinear-consistency certificate for a fundamental n-view matrix:
    rank 4 with signature (2, 2), every 3 x 3n block row of rank 2."""
    M = _dense_or_raise(m) if isinstance(m, NViewBifocal) else np.asarray(m, dtype=float)
    n = M.shape[0] // 3
    w, _ = _eig_sorted(M)
    amax = float(np.max(np.abs(w)))
    pos = int(np.sum(w > rank_tol * amax)) if amax > 0 else 0
    neg = int(np.sum(w < -rank_tol * amax)) if amax > 0 else 0
    row_ranks = [_block_row_rank(M, i, rank_tol) for i in range(n)]
    conditions = {
        "rank4_signature": (pos, neg) == (2, 2),
        "block_rows_rank2": all(r == 2 for r in row_ranks),
    }
    return ConsistencyCertificate(
        regime="collinear-fundamental",
        eigenvalues=w,
        rank_estimate=pos + neg,
        signature=(pos, neg),
        block_row_ranks=row_ranks,
        orthogonality_residual=None,
        pattern_residual=None,
        rotation_residual=None,
        conditions=conditions,
        passed=all(conditions.values()),
        tolerances={"rank_tol": rank_tol},
    )


def _block_rotation_residual(X: np.ndarray, Y: np.ndarray, n: int):
    """Min over the 2^3 relative column-sign choices of the deviation of the
    sqrt(n) * sqrt(0.5)(X + Y) blocks from rotations; also returns V_hat."""
    best = (np.inf, None)
    for bits in range(8):
        signs = np.array([1.0 if bits & (1 << k) else -1.0 for k in range(3)])
        Vh = np.sqrt(0.5) * (X + Y * signs)
        blocks = np.sqrt(n) * Vh.reshape(n, 3, 3)
        G = np.einsum("nij,nik->njk", blocks, blocks) - np.eye(3)
        ortho = float(np.max(np.sqrt(np.sum(G * G, axis=(1, 2)))))
        dets = np.array([np.linalg.det(b) for b in blocks])
        if np.sum(dets) < 0:
            dets = -dets  # global column-pair flip makes all dets positive
        det_res = float(np.max(np.abs(dets - 1.0)))
        r = max(ortho, det_res)
        if r < best[0]:
            best = (r, Vh)
    return best


def certify_general(
    m: NViewBifocal | np.ndarray,
    kind: str | None = None,
    tol: float = 1e-6,
    rank_tol: float = 1e-6,
) -> ConsistencyCertificate:
    """General-position certificate: rank 6 with signature (3, 3); essential
    kind additionally requires the paired spectrum l_i = -l_{7-i} and the
    block-rotation structure of sqrt(0.5)(X + Y)."""
    if isinstance(m, NViewBifocal):
        M = _dense_or_raise(m)
        kind = kind or m.kind
    else:
        M = np.asarray(m, dtype=float)
        if kind is None:
            raise ValueError("kind required for raw matrices")
    n = M.shape[0] // 3
    w, V = _eig_sorted(M)
    amax = float(np.max(np.abs(w)))
    pos = int(np.sum(w > rank_tol * amax)) if amax > 0 else 0
    neg = int(np.sum(w < -rank_tol * amax)) if amax > 0 else 0
    conditions = {"rank6_signature": (pos, neg) == (3, 3)}
    pattern_residual = None
    rotation_residual = None
    v_hat = None
    if kind == "essential":
        lam = np.array([(w[k] - w[len(w) - 1 - k]) / 2.0 for k in range(3)])
        if np.all(lam > 0):
            dev = [abs(w[k] - lam[k]) for k in range(3)]
            dev += [abs(w[len(w) - 1 - k] + lam[k]) for k in range(3)]
            if len(w) > 6:
                dev.append(float(np.max(np.abs(w[3:-3]))))
            pattern_residual = float(max(dev) / lam[0])
        else:
            pattern_residual = 1.0
        X = V[:, [0, 1, 2]]
        Y = V[:, [len(w) - 1, len(w) - 2, len(w) - 3]]
        rotation_residual, v_hat = _block_rotation_residual(X, Y, n)
        conditions["eigen_pairing"] = pattern_residual < tol
        conditions["block_rotation"] = rotation_residual < tol
    return ConsistencyCertificate(
        regime=f"general-{kind}",
        eigenvalues=w,
        rank_estimate=pos + neg,
        signature=(pos, neg),
        block_row_ranks=[],
        orthogonality_residual=None,
        pattern_residual=pattern_residual,
        rotation_residual=rotation_residual,
        conditions=conditions,
        passed=all(conditions.values()),
        tolerances={"tol": tol, "rank_tol": rank_tol},
        v_hat=v_hat,
    )


def rotations_from_certificate(cert: ConsistencyCertificate) -> list:
    """Per-camera rotations from a passing collinear-essential certificate.

    Appends the cross-product third column (scaled by sqrt(n)) to each V_hat
    block and rescales; the result matches the true R_i^T up to one global
    rotation.
    """
    if cert.v_hat is None:
        raise ValueError("certificate carries no eigenvector blocks")
    Vh = cert.v_hat
    n = Vh.shape[0] // 3
    out = []
    for i in range(n):
        B = Vh[3 * i:3 * i + 3]
        c = np.cross(B[:, 0], B[:, 1]) * np.sqrt(n)
        T = np.sqrt(n) * np.column_stack([B, c])
        if np.linalg.det(T) < 0:
            T[:, 2] = -T[:, 2]
        out.append(nearest_rotation(T))
    return out
