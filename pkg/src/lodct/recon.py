"""Penalized weighted-least-squares reconstruction with a sparsifying
transform (PWLS-ST).

The outer loop alternates a relaxed ordered-subsets linearized augmented
Lagrangian (OS-LALM) image update for the weighted quadratic subproblem with
closed-form hard-threshold sparse coding of all image patches.  The image
update runs the five-step recursion over K passes of M view-interleaved
subsets (visited in bit-reversed order), with the AL penalty rho following
the decreasing schedule rho_schedule(n) for n = k*M + m, restarting at
rho = 1 at the top of every outer iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ValidationError
from .geometry import Geometry, partition_subsets
from .patches import (
    WRAP,
    PatchScheme,
    aggregate_patches,
    extract_patches,
    overlap_diagonal,
)
from .projector import compute_majorizer_DA, system_matrix
from .transforms import SparsifyingTransform, hard_threshold

DIAG_CLAMP_SCALE = 1e-12  # floor on D_A entries, relative to its maximum


def rho_schedule(n: int, alpha: float) -> float:
    """Decreasing AL penalty: 1 at n = 0, then
    (pi/(alpha(n+1))) * sqrt(1 - (pi/(2 alpha (n+1)))^2)."""
    if n < 0:
        raise ValidationError("iteration index must be >= 0")
    if not 1.0 <= alpha < 2.0:
        raise ValidationError("relaxation parameter must satisfy 1 <= alpha < 2")
    if n == 0:
        return 1.0
    c = math.pi / (alpha * (n + 1))
    return c * math.sqrt(1.0 - (c / 2.0) ** 2)


@dataclass(frozen=True)
class PwlsStConfig:
    """Solver parameters; defaults follow the usual low-dose setup
    (alpha = 1.999, K = 2 inner iterations, M = 4 subsets, gamma = 25 in HU)."""

    beta: float
    gamma: float = 25.0
    outer_iters: int = 10
    inner_iters: int = 2
    subsets: int = 4
    alpha: float = 1.999
    rho0: float = 1.0
    stop_tol: float = 1e-6  # relative image change; 0 disables early stop

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")
        if self.gamma <= 0:
            raise ValidationError("gamma must be > 0")
        if not 1.0 <= self.alpha < 2.0:
            raise ValidationError("alpha must satisfy 1 <= alpha < 2")
        if self.subsets < 1 or self.inner_iters < 1 or self.outer_iters < 1:
            raise ValidationError("subsets, inner_iters, outer_iters must be >= 1")
        if self.rho0 != 1.0:
            raise ValidationError("the rho schedule starts at 1")


@dataclass
class CostReport:
    """One outer iteration of the exact objective, split into its parts."""

    outer_iter: int
    data_term: float
    sparsification_residual: float
    l0_count: int
    total_cost: float
    rmse_hu: float | None = None


def cost_history_csv(history) -> str:
    lines = ["outer_iter,data_term,sparsification_residual,l0_count,total_cost,rmse_hu"]
    for rep in history:
        rmse = "" if rep.rmse_hu is None else f"{rep.rmse_hu:.6f}"
        lines.append(
            f"{rep.outer_iter},{rep.data_term:.10e},{rep.sparsification_residual:.10e},"
            f"{rep.l0_count},{rep.total_cost:.10e},{rmse}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class SolverState:
    """Iterates of the image update; x stays elementwise nonnegative."""

    x: np.ndarray
    z: np.ndarray | None = None
    s: np.ndarray | None = None
    g: np.ndarray | None = None
    h: np.ndarray | None = None
    zeta: np.ndarray | None = None
    outer_index: int = 0


def sparse_coding_step(x: np.ndarray, transform: SparsifyingTransform,
                       ps: PatchScheme, gamma: float) -> np.ndarray:
    """Exact per-patch minimizer: hard-threshold the transformed patches."""
    if gamma <= 0:
        raise ValidationError("gamma must be > 0")
    return hard_threshold(transform.matrix @ extract_patches(x, ps), gamma)


def regularizer_gradient(x: np.ndarray, z: np.ndarray,
                         transform: SparsifyingTransform, ps: PatchScheme,
                         beta: float) -> np.ndarray:
    """2 beta sum_j P_j' W'(W P_j x - z_j) via extract/transform/aggregate."""
    omega = transform.matrix
    resid = omega @ extract_patches(x, ps) - z
    return 2.0 * beta * aggregate_patches(omega.T @ resid, ps)


def compute_majorizer_DR(transform: SparsifyingTransform, ps: PatchScheme,
                         beta: float):
    """Diagonal majorizer of the regularizer Hessian 2 beta sum P'W'WP.

    Wrap-around stride-1 schemes give the scalar 2 beta l lambda_max(W'W);
    other schemes get the general diagonal 2 beta overlap lambda_max.
    """
    lmax = transform.lambda_max
    if ps.boundary == WRAP and ps.stride == 1:
        return 2.0 * beta * ps.l * lmax
    return 2.0 * beta * overlap_diagonal(ps) * lmax


class StRegularizer:
    """Patch-transform regularizer with a precomputed convolution kernel.

    For wrap-around stride-1 schemes sum_j P_j' (W'W) P_j is block-circulant,
    so the x-dependent part of the gradient is a circular correlation with a
    small kernel assembled from W'W, applied via FFT.  Other schemes fall
    back to explicit extract/aggregate.  set_codes caches the z-dependent
    constant between sparse-coding steps.
    """

    def __init__(self, transform: SparsifyingTransform, ps: PatchScheme, beta: float):
        self.transform = transform
        self.ps = ps
        self.beta = beta
        self.omega = transform.matrix
        self._const_flat = None
        self._use_fft = ps.boundary == WRAP and ps.stride == 1
        if self._use_fft:
            self._kernel_fft = np.conj(np.fft.rfft2(self._embedded_kernel()))

    def _embedded_kernel(self) -> np.ndarray:
        ps = self.ps
        B = self.omega.T @ self.omega
        j, i = np.meshgrid(np.arange(ps.patch_cols), np.arange(ps.patch_rows))
        di = i.ravel(order="F")
        dj = j.ravel(order="F")
        dr = di[None, :] - di[:, None]
        dc = dj[None, :] - dj[:, None]
        emb = np.zeros((ps.image_rows, ps.image_cols))
        np.add.at(emb, ((dr % ps.image_rows).ravel(), (dc % ps.image_cols).ravel()), B.ravel())
        return emb

    def set_codes(self, z: np.ndarray) -> None:
        self.z = z
        self._const_flat = (
            2.0 * self.beta * aggregate_patches(self.omega.T @ z, self.ps).ravel()
        )

    def gradient_flat(self, x_flat: np.ndarray) -> np.ndarray:
        if self._const_flat is None:
            raise ValidationError("set_codes must be called before evaluating the gradient")
        ps = self.ps
        x = x_flat.reshape(ps.image_rows, ps.image_cols)
        if self._use_fft:
            quad = np.fft.irfft2(np.fft.rfft2(x) * self._kernel_fft, s=x.shape)
            return 2.0 * self.beta * quad.ravel() - self._const_flat
        resid = self.omega @ extract_patches(x, ps)
        return (2.0 * self.beta * aggregate_patches(self.omega.T @ resid, ps).ravel()
                - self._const_flat)

    def residual_and_l0(self, x: np.ndarray) -> tuple[float, int]:
        resid = self.omega @ extract_patches(x, self.ps) - self.z
        return float(np.sum(resid * resid)), int(np.count_nonzero(self.z))


class WlsDataFit:
    """Ordered-subset view of the weighted data term for one scan."""

    def __init__(self, y: np.ndarray, weights: np.ndarray, geo: Geometry, subsets: int):
        y = np.asarray(y, dtype=np.float64).ravel()
        w = np.asarray(weights, dtype=np.float64).ravel()
        if y.size != geo.n_rays or w.size != geo.n_rays:
            raise ValidationError("sinogram / weights size does not match geometry")
        if np.any(w < 0):
            raise ValidationError("statistical weights must be nonnegative")
        part = partition_subsets(geo, subsets)
        A = system_matrix(geo)
        self.M = subsets
        self.order = part.order
        self._blocks = []
        for m in range(subsets):
            rays = part.ray_indices(geo, m)
            Am = A[rays]
            self._blocks.append((Am, w[rays], y[rays]))
        da = compute_majorizer_DA(geo, w).ravel()
        peak = da.max()
        self.d_a = np.maximum(da, DIAG_CLAMP_SCALE * peak) if peak > 0 else np.full_like(da, DIAG_CLAMP_SCALE)
        self.geo = geo

    def subset_gradient(self, x_flat: np.ndarray, m: int) -> np.ndarray:
        """M * A_m' W_m (A_m x - y_m), image-vector sized."""
        Am, wm, ym = self._blocks[m]
        return self.M * (Am.T @ (wm * (Am @ x_flat - ym)))

    def data_cost(self, x_flat: np.ndarray) -> float:
        total = 0.0
        for Am, wm, ym in self._blocks:
            r = Am @ x_flat - ym
            total += float(np.dot(wm * r, r))
        return 0.5 * total


def run_image_update(x: np.ndarray, fit: WlsDataFit, d_r, grad_r, K: int,
                     alpha: float, outer_index: int = 0,
                     pass_callback=None) -> SolverState:
    """K passes of the five-step relaxed OS-LALM recursion (z held fixed).

    grad_r(x_flat) must return the regularizer gradient at the current
    iterate.  pass_callback(k, x_image), if given, runs after each pass and
    may return True to stop early.  Raises DivergenceError if any iterate
    goes non-finite.
    """
    d_a = fit.d_a
    x = np.maximum(0.0, np.asarray(x, dtype=np.float64).ravel().copy())
    g = fit.subset_gradient(x, fit.order[-1])
    zeta = g.copy()
    h = d_a * x - zeta
    s = np.zeros_like(x)
    M = fit.M
    shape = fit.geo.image_shape
    for k in range(K):
        for pos in range(M):
            m = fit.order[pos]
            rho = rho_schedule(k * M + pos, alpha)
            s = rho * (d_a * x - h) + (1.0 - rho) * g
            x = np.maximum(0.0, x - (s + grad_r(x)) / (rho * d_a + d_r))
            if not np.all(np.isfinite(x)):
                raise DivergenceError(
                    f"non-finite image at outer={outer_index} inner={k} subset={m}",
                    outer=outer_index, inner=k, subset=m)
            zeta = fit.subset_gradient(x, m)
            g = (rho / (rho + 1.0)) * (alpha * zeta + (1.0 - alpha) * g) + g / (rho + 1.0)
            h = alpha * (d_a * x - zeta) + (1.0 - alpha) * h
        if pass_callback is not None and pass_callback(k, x.reshape(shape)):
            break
    return SolverState(x=x.reshape(shape), s=s, g=g, h=h, zeta=zeta, outer_index=outer_index)


def image_update(state: SolverState, sino, geo: Geometry,
                 transform: SparsifyingTransform, ps: PatchScheme,
                 cfg: PwlsStConfig) -> SolverState:
    """One outer image update of PWLS-ST with the codes in state.z fixed."""
    y, w = _sino_arrays(sino)
    if state.z is None:
        raise ValidationError("state.z must hold the fixed sparse codes")
    fit = WlsDataFit(y, w, geo, cfg.subsets)
    reg = StRegularizer(transform, ps, cfg.beta)
    reg.set_codes(state.z)
    d_r = compute_majorizer_DR(transform, ps, cfg.beta)
    d_r_flat = d_r if np.isscalar(d_r) else d_r.ravel()
    new = run_image_update(state.x, fit, d_r_flat, reg.gradient_flat,
                           cfg.inner_iters, cfg.alpha, state.outer_index)
    new.z = state.z
    return new


def _sino_arrays(sino) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(sino, "y") and hasattr(sino, "weights"):
        return np.asarray(sino.y), np.asarray(sino.weights)
    y, w = sino
    return np.asarray(y), np.asarray(w)


@dataclass
class ReconResult:
    image: np.ndarray
    history: list[CostReport] = field(default_factory=list)
    state: SolverState | None = None


def reconstruct_pwls_st(sino, geo: Geometry, transform: SparsifyingTransform,
                        ps: PatchScheme, cfg: PwlsStConfig, x_init: np.ndarray,
                        ground_truth: np.ndarray | None = None) -> ReconResult:
    """Alternate OS-LALM image updates with hard-threshold sparse coding.

    x_init is required (a PWLS-EP result is the usual warm start).  The
    returned history has one exact-cost row per outer iteration, plus the
    initial state as row 0; rmse columns are filled when ground_truth (same
    units as x) is given.
    """
    y, w = _sino_arrays(sino)
    x = np.asarray(x_init, dtype=np.float64)
    if x.shape != geo.image_shape:
        raise ValidationError(f"x_init shape {x.shape} does not match geometry {geo.image_shape}")
    if transform.matrix.shape[0] != ps.l:
        raise ValidationError(f"transform size {transform.matrix.shape[0]} != patch size {ps.l}")
    x = np.maximum(0.0, x)

    fit = WlsDataFit(y, w, geo, cfg.subsets)
    reg = StRegularizer(transform, ps, cfg.beta)
    d_r = compute_majorizer_DR(transform, ps, cfg.beta)
    d_r_flat = d_r if np.isscalar(d_r) else d_r.ravel()

    def report(i, x_img) -> CostReport:
        resid, l0 = reg.residual_and_l0(x_img)
        data = fit.data_cost(x_img.ravel())
        total = data + cfg.beta * (resid + cfg.gamma**2 * l0)
        rmse = None
        if ground_truth is not None:
            rmse = float(np.sqrt(np.mean((x_img - ground_truth) ** 2)))
        return CostReport(i, data, resid, l0, total, rmse)

    z = sparse_coding_step(x, transform, ps, cfg.gamma)
    reg.set_codes(z)
    history = [report(0, x)]
    state = SolverState(x=x, z=z)
    for i in range(cfg.outer_iters):
        x_prev = state.x
        state = run_image_update(state.x, fit, d_r_flat, reg.gradient_flat,
                                 cfg.inner_iters, cfg.alpha, outer_index=i)
        z = sparse_coding_step(state.x, transform, ps, cfg.gamma)
        state.z = z
        reg.set_codes(z)
        history.append(report(i + 1, state.x))
        delta = np.linalg.norm(state.x - x_prev) / max(np.linalg.norm(x_prev), 1e-30)
        if cfg.stop_tol and delta < cfg.stop_tol:
            break
    return ReconResult(image=state.x, history=history, state=state)
