"""Square sparsifying transforms: learning, sparse coding, and the 2D DCT.

Learning alternates two exactly-solved subproblems on the objective

    || W Y - Z ||_F^2 + lam * (||W||_F^2 - log|det W|) + eta^2 * nnz(Z)

(W the transform, Y the training patches, Z the sparse codes): hard
thresholding gives the optimal Z for fixed W, and the transform update has a
closed form built from a Cholesky factor of Y Y' + lam I and a small SVD.
Both half-steps decrease the objective, which the tests assert directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ValidationError


def hard_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    """Zero out entries with magnitude strictly below the threshold."""
    values = np.asarray(values)
    return np.where(np.abs(values) >= threshold, values, 0.0)


def spectral_stats(omega: np.ndarray) -> tuple[float, float]:
    """(largest eigenvalue of W'W, condition number) via dense SVD."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValidationError("transform matrix must be square")
    svals = np.linalg.svd(omega, compute_uv=False)
    smin = svals[-1]
    if smin <= svals[0] * np.finfo(np.float64).eps * omega.shape[0]:
        raise ValidationError("transform matrix is numerically singular")
    return float(svals[0] ** 2), float(svals[0] / smin)


@dataclass(frozen=True, eq=False)
class SparsifyingTransform:
    """Square transform with cached spectral metadata (immutable)."""

    matrix: np.ndarray
    lambda_max: float
    condition_number: float
    patch_rows: int | None = None
    patch_cols: int | None = None

    @classmethod
    def from_matrix(cls, omega, patch_rows=None, patch_cols=None) -> "SparsifyingTransform":
        omega = np.ascontiguousarray(omega, dtype=np.float64)
        lmax, cond = spectral_stats(omega)
        if patch_rows is not None and patch_cols is not None and patch_rows * patch_cols != omega.shape[0]:
            raise ValidationError("patch dims inconsistent with transform size")
        return cls(matrix=omega, lambda_max=lmax, condition_number=cond,
                   patch_rows=patch_rows, patch_cols=patch_cols)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix of size n."""
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * x + 1) * k / (2 * n))
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    return mat


def make_dct_transform(patch_rows: int, patch_cols: int) -> SparsifyingTransform:
    """2D orthonormal DCT on column-major vectorized patches."""
    if patch_rows < 1 or patch_cols < 1:
        raise ValidationError("patch dimensions must be >= 1")
    # vec(C_r X C_c') = (C_c kron C_r) vec(X) for column-major vec
    omega = np.kron(_dct_matrix(patch_cols), _dct_matrix(patch_rows))
    return SparsifyingTransform.from_matrix(omega, patch_rows, patch_cols)


def sparse_code_columns(omega, Y, threshold: float) -> np.ndarray:
    """Optimal l0-penalized codes H_threshold(W Y), column by column."""
    omega = omega.matrix if isinstance(omega, SparsifyingTransform) else np.asarray(omega)
    Y = np.asarray(Y)
    if omega.shape[1] != Y.shape[0]:
        raise ValidationError(f"transform size {omega.shape} does not match patches {Y.shape}")
    return hard_threshold(omega @ Y, threshold)


@dataclass(frozen=True)
class LearningConfig:
    """Hyperparameters of the transform-learning objective.

    lam may be given directly; otherwise it is lam_scale * ||Y||_F^2, which
    keeps the regularizer meaningful across training-set sizes and intensity
    scales.
    """

    eta: float = 75.0
    n_iters: int = 100
    init: str = "dct"  # dct | identity | random
    lam: float | None = None
    lam_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValidationError("eta must be > 0")
        if self.n_iters < 0:
            raise ValidationError("n_iters must be >= 0")
        if self.lam is not None and self.lam <= 0:
            raise ValidationError("lam must be > 0")
        if self.lam is None and self.lam_scale <= 0:
            raise ValidationError("lam_scale must be > 0")
        if self.init not in ("dct", "identity", "random"):
            raise ValidationError("init must be one of dct | identity | random")

    def effective_lam(self, Y: np.ndarray) -> float:
        if self.lam is not None:
            return self.lam
        return self.lam_scale * float(np.sum(Y * Y))


@dataclass
class TransformLearningResult:
    transform: SparsifyingTransform
    objective_half_steps: np.ndarray = field(default_factory=lambda: np.empty(0))
    lam: float = 0.0

    @property
    def objective_per_iteration(self) -> np.ndarray:
        return self.objective_half_steps[1::2]


def learning_objective(omega, Y, Z, lam: float, eta: float) -> float:
    resid = omega @ Y - Z
    _, logdet = np.linalg.slogdet(omega)
    return (
        float(np.sum(resid * resid))
        + lam * (float(np.sum(omega * omega)) - logdet)
        + eta**2 * int(np.count_nonzero(Z))
    )


def _init_transform(l: int, cfg: LearningConfig) -> np.ndarray:
    if cfg.init == "identity":
        return np.eye(l)
    if cfg.init == "random":
        g = np.random.default_rng(cfg.seed).normal(size=(l, l))
        q, _ = np.linalg.qr(g)
        return q
    side = int(round(np.sqrt(l)))
    if side * side == l:
        return make_dct_transform(side, side).matrix
    return np.kron(_dct_matrix(1), _dct_matrix(l))


def transform_update(Y: np.ndarray, Z: np.ndarray, lam: float,
                     linv: np.ndarray) -> np.ndarray:
    """Closed-form minimizer of ||WY - Z||_F^2 + lam(||W||_F^2 - log|det W|).

    linv is the inverse of the lower Cholesky factor of Y Y' + lam I.
    """
    B = linv @ (Y @ Z.T)
    U, S, Vt = np.linalg.svd(B)
    gain = 0.5 * (S + np.sqrt(S * S + 2.0 * lam))
    return (Vt.T * gain) @ U.T @ linv


def learn_transform(Y: np.ndarray, cfg: LearningConfig,
                    patch_shape: tuple[int, int] | None = None) -> TransformLearningResult:
    """Alternating minimization for a square sparsifying transform.

    Y is the (l, N') training patch matrix with N' >= l.  Records the
    objective after every half-step (sparse coding, then transform update).
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValidationError("training patches must form an (l, N') matrix")
    l, n_train = Y.shape
    if n_train < l:
        raise ValidationError(f"need at least l={l} training patches, got {n_train}")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("training patches must be finite")

    lam = cfg.effective_lam(Y)
    gram = Y @ Y.T + lam * np.eye(l)
    L = np.linalg.cholesky(gram)
    linv = sla.solve_triangular(L, np.eye(l), lower=True)

    omega = _init_transform(l, cfg)
    objective = []
    coded = omega @ Y
    for _ in range(cfg.n_iters):
        Z = hard_threshold(coded, cfg.eta)
        objective.append(learning_objective(omega, Y, Z, lam, cfg.eta))
        omega = transform_update(Y, Z, lam, linv)
        coded = omega @ Y
        objective.append(learning_objective(omega, Y, Z, lam, cfg.eta))

    if patch_shape is None:
        side = int(round(np.sqrt(l)))
        patch_shape = (side, side) if side * side == l else (l, 1)
    transform = SparsifyingTransform.from_matrix(omega, *patch_shape)
    return TransformLearningResult(
        transform=transform,
        objective_half_steps=np.asarray(objective),
        lam=lam,
    )
