"""Ridge regression, symmetric eigendecomposition and PCA.

All arithmetic runs in float64; results that leave this module are checked
for NaN/Inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import AsymmetricInput, EigFailure, ShapeError, SingularSystem

__all__ = [
    "PcaModel",
    "ridge_fit",
    "symmetric_eig",
    "pca_fit",
    "pca_reconstruct",
    "pca_project",
    "check_finite",
]


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ArithmeticError(f"{what} contains NaN or Inf")
    return a


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def ridge_fit(design, targets, alpha: float = 1.0) -> np.ndarray:
    """Solve ``(G^T G + alpha I) W = G^T T`` by Cholesky factorisation.

    Parameters
    ----------
    design : array of shape (N, d)
    targets : array of shape (N, m) or (N,)
    alpha : float
        L2 penalty. With ``alpha == 0`` the normal matrix must be
        nonsingular.

    Returns
    -------
    weights : ndarray of shape (d, m)
    """
    G = _as_matrix(design, "design")
    T = _as_matrix(targets, "targets")
    if G.shape[0] != T.shape[0]:
        raise ShapeError(f"design has {G.shape[0]} rows but targets have {T.shape[0]}")
    if G.shape[0] < 1 or G.shape[1] < 1:
        raise ShapeError("design must be at least 1x1")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    A = G.T @ G
    A[np.diag_indices_from(A)] += alpha
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("normal matrix is not positive definite") from exc
    diag = np.abs(np.diag(factor[0]))
    # Cholesky can "succeed" on numerically singular matrices
    if diag.min() <= 1e-7 * diag.max():
        raise SingularSystem("normal matrix is numerically singular")
    return check_finite(cho_solve(factor, G.T @ T), "ridge weights")


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for one sweep of parallel Jacobi (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    n0 = a.shape[0]
    n = n0 + (n0 % 2)
    A = np.zeros((n, n))
    A[:n0, :n0] = a
    V = np.eye(n)
    rounds = _round_robin(n)
    scale = np.linalg.norm(a) or 1.0
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            return np.diag(A)[:n0].copy(), V[:n0, :n0].copy()
        for P, Q in rounds:
            app = A[P, P]
            aqq = A[Q, Q]
            apq = A[P, Q]
            small = np.abs(apq) <= 1e-300 + 1e-18 * np.sqrt(np.abs(app * aqq))
            safe = np.where(small, 1.0, apq)
            theta = (aqq - app) / (2.0 * safe)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c[small] = 1.0
            s[small] = 0.0
            c1 = c[:, None]
            s1 = s[:, None]
            Ap = A[P, :]
            Aq = A[Q, :]
            A[P, :] = c1 * Ap - s1 * Aq
            A[Q, :] = s1 * Ap + c1 * Aq
            Ap = A[:, P]
            Aq = A[:, Q]
            A[:, P] = Ap * c - Aq * s
            A[:, Q] = Ap * s + Aq * c
            Vp = V[:, P]
            Vq = V[:, Q]
            V[:, P] = Vp * c - Vq * s
            V[:, Q] = Vp * s + Vq * c
    raise EigFailure(f"Jacobi did not converge in {max_sweeps} sweeps")


JACOBI_MAX_DIM = 256


def symmetric_eig(m, method: str = "auto", tol: float = 1e-12, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``method="jacobi"`` runs cyclic Jacobi with round-robin ordering, where
    each round rotates n/2 disjoint pivot pairs at once. ``method="lapack"``
    defers to ``numpy.linalg.eigh``. ``"auto"`` picks Jacobi up to
    ``JACOBI_MAX_DIM`` and LAPACK above it, where the Python-level sweep
    cost of Jacobi becomes minutes.

    Returns
    -------
    eigenvalues : ndarray (d,)
    eigenvectors : ndarray (d, d), column ``i`` pairs with eigenvalue ``i``
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > 8192:
        raise ShapeError("symmetric_eig supports d <= 8192")
    if not np.all(np.isfinite(a)):
        raise EigFailure("matrix contains NaN or Inf")
    amax = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > 1e-5 * amax:
        raise AsymmetricInput("matrix is not symmetric within 1e-5")
    a = 0.5 * (a + a.T)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, v = _jacobi(a, tol, max_sweeps)
    elif method == "lapack":
        try:
            w, v = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise EigFailure(str(exc)) from exc
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,)
    score_range: np.ndarray  # (k, 2) min and max projection over the fitting rows
    explained_variance: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


def _complete_basis(vecs: np.ndarray, d: int, k: int) -> np.ndarray:
    """Extend orthonormal rows ``vecs`` to ``k`` rows with Gram-Schmidt."""
    out = list(vecs)
    for j in range(d):
        if len(out) >= k:
            break
        e = np.zeros(d)
        e[j] = 1.0
        for u in out:
            e -= (u @ e) * u
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            out.append(e / nrm)
    return np.array(out[:k])


def pca_fit(rows, k: int, method: str = "auto") -> PcaModel:
    """Principal components of ``rows`` (N x d) via the sample covariance.

    When d > N the N x N Gram matrix is decomposed instead and the
    components are mapped back through the data.
    """
    X = _as_matrix(rows, "rows")
    N, d = X.shape
    if N < 2:
        raise ShapeError("pca_fit needs at least two rows")
    if not 1 <= k <= min(N, d):
        raise ShapeError(f"k={k} out of range [1, {min(N, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    total = float(np.sum(Xc * Xc)) / (N - 1)
    # variance at rounding level of the data counts as none
    if total <= (1e-12 * float(np.abs(X).max(initial=0.0))) ** 2:
        total = 0.0
    if d <= N:
        w, v = symmetric_eig(Xc.T @ Xc / (N - 1), method=method)
        comps = v[:, :k].T
        lam = w[:k]
    else:
        w, u = symmetric_eig(Xc @ Xc.T / (N - 1), method=method)
        w = w[:k]
        pos = w > 1e-12 * total if total > 0 else np.zeros(k, dtype=bool)
        comps = (Xc.T @ u[:, :k][:, pos]) / np.sqrt((N - 1) * w[pos])
        comps = comps.T
        if comps.shape[0] < k:
            comps = _complete_basis(comps, d, k)
        lam = np.concatenate([w[pos], np.zeros(k - int(pos.sum()))])
    lam = np.clip(lam, 0.0, None) if total > 0 else np.zeros(k)
    ratio = lam / total if total > 0 else np.zeros(k)
    scores = Xc @ comps.T
    score_range = np.stack([scores.min(axis=0), scores.max(axis=0)], axis=1)
    return PcaModel(
        mean=check_finite(mean),
        components=check_finite(comps),
        explained_variance_ratio=check_finite(ratio),
        score_range=check_finite(score_range),
        explained_variance=lam,
    )


def pca_project(model: PcaModel, rows) -> np.ndarray:
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if X.shape[1] != model.d:
        raise ShapeError(f"rows have dimension {X.shape[1]}, model has {model.d}")
    return (X - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, scores) -> np.ndarray:
    """``mean + scores @ components`` for one score vector or a batch."""
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[-1] != model.k:
        raise ShapeError(f"expected {model.k} scores, got {s.shape[-1]}")
    return model.mean + s @ model.components
