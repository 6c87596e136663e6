"""Reconstruction baselines: FBP, PWLS-EP, and PWLS-DCT.

FBP uses the band-limited ramp kernel apodized by a Hanning window, with the
standard equiangular weighting (source-distance pre-weight, modified kernel,
inverse-square backprojection weight) in fan mode.

PWLS-EP shares the OS-LALM machinery of the PWLS-ST solver, swapping in the
gradient of the edge-preserving hyperbola potential and the corresponding
diagonal majorizer.  It is intended to run on HU-scaled images so that the
delta parameter is directly in HU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError
from .geometry import FAN_ARC, PARALLEL, Geometry
from .patches import PatchScheme
from .recon import (
    CostReport,
    PwlsStConfig,
    ReconResult,
    WlsDataFit,
    _sino_arrays,
    reconstruct_pwls_st,
    run_image_update,
)
from .transforms import make_dct_transform

# 8-connected first differences: offsets and 1/distance weights
_NEIGHBOR_OFFSETS_8 = ((0, 1, 1.0), (1, 0, 1.0),
                       (1, 1, 1.0 / np.sqrt(2.0)), (1, -1, 1.0 / np.sqrt(2.0)))
_NEIGHBOR_OFFSETS_4 = ((0, 1, 1.0), (1, 0, 1.0))


def _ramp_kernel(n_taps: int, spacing: float) -> np.ndarray:
    """Band-limited ramp filter samples h(k*spacing) for k in [-(n-1), n-1]."""
    k = np.arange(-(n_taps - 1), n_taps)
    h = np.zeros(k.size)
    h[k == 0] = 1.0 / (4.0 * spacing**2)
    odd = k % 2 != 0
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return h


def _hanning_window(n_fft: int, spacing: float, cutoff: float) -> np.ndarray:
    """0.5 (1 + cos(pi f / f_c)) for |f| <= f_c = cutoff * Nyquist, else 0."""
    if not 0.0 < cutoff <= 1.0:
        raise ValidationError("window cutoff must be in (0, 1]")
    freqs = np.fft.rfftfreq(n_fft, d=spacing)
    f_c = cutoff * 0.5 / spacing
    win = 0.5 * (1.0 + np.cos(np.pi * freqs / f_c))
    win[freqs > f_c] = 0.0
    return win


def _filter_views(sino: np.ndarray, kernel: np.ndarray, spacing: float,
                  cutoff: float) -> np.ndarray:
    """Apodized convolution of each view with the (possibly modified) ramp."""
    n_views, n_ch = sino.shape
    n_fft = 1 << int(np.ceil(np.log2(2 * n_ch + kernel.size)))
    kern_pad = np.zeros(n_fft)
    half = (kernel.size - 1) // 2
    kern_pad[:half + 1] = kernel[half:]
    kern_pad[-half:] = kernel[:half]
    kf = np.fft.rfft(kern_pad) * _hanning_window(n_fft, spacing, cutoff)
    sf = np.fft.rfft(sino, n=n_fft, axis=1)
    filtered = np.fft.irfft(sf * kf[None, :], n=n_fft, axis=1)[:, :n_ch]
    return filtered * spacing


def _pixel_grid(geo: Geometry) -> tuple[np.ndarray, np.ndarray]:
    xs = (np.arange(geo.image_cols) - (geo.image_cols - 1) / 2.0) * geo.pixel_size + geo.image_offset[0]
    ys = (np.arange(geo.image_rows) - (geo.image_rows - 1) / 2.0) * geo.pixel_size + geo.image_offset[1]
    return np.meshgrid(xs, ys)


def fbp_reconstruct(sino_y: np.ndarray, geo: Geometry, cutoff: float = 1.0) -> np.ndarray:
    """Filtered back projection with a Hanning-apodized ramp filter.

    Parallel mode integrates over the view range (half weight beyond pi);
    fan-arc mode requires a full rotation and applies the equiangular
    weighting.  Output is on the geometry's image grid in the input's units.
    """
    sino_y = np.asarray(sino_y, dtype=np.float64)
    if sino_y.shape != geo.sinogram_shape:
        raise ValidationError(f"sinogram shape {sino_y.shape} does not match {geo.sinogram_shape}")
    if not np.all(np.isfinite(sino_y)):
        raise ValidationError("sinogram must be finite")
    if geo.mode == PARALLEL:
        return _fbp_parallel(sino_y, geo, cutoff)
    if geo.mode == FAN_ARC:
        return _fbp_fan_arc(sino_y, geo, cutoff)
    raise ConfigurationError(f"FBP does not support geometry mode {geo.mode!r}")


def _fbp_parallel(sino_y, geo, cutoff):
    ds = geo.detector_spacing
    filtered = _filter_views(sino_y, _ramp_kernel(geo.n_detector_channels, ds), ds, cutoff)
    s_coords = geo.detector_coords()
    X, Y = _pixel_grid(geo)
    recon = np.zeros(geo.image_shape)
    for phi, view in zip(geo.view_angles(), filtered):
        s_hit = X * np.cos(phi) + Y * np.sin(phi)
        recon += np.interp(s_hit, s_coords, view, left=0.0, right=0.0)
    d_phi = geo.angular_range / geo.n_views
    scale = d_phi if geo.angular_range <= np.pi + 1e-9 else d_phi * np.pi / geo.angular_range
    return recon * scale


def _fbp_fan_arc(sino_y, geo, cutoff):
    if abs(geo.angular_range - 2 * np.pi) > 1e-6:
        raise ConfigurationError("fan-beam FBP requires a full 2*pi rotation")
    d_gamma = geo.detector_spacing / geo.source_to_detector
    gamma = geo.fan_angles()
    dso = geo.source_to_iso

    # pre-weight, then filter with the modified equiangular kernel
    weighted = sino_y * (dso * np.cos(gamma))[None, :]
    kernel = _ramp_kernel(geo.n_detector_channels, d_gamma)
    k = np.arange(-(geo.n_detector_channels - 1), geo.n_detector_channels)
    ratio = np.ones(k.size)
    nz = k != 0
    ratio[nz] = (k[nz] * d_gamma / np.sin(k[nz] * d_gamma)) ** 2
    filtered = _filter_views(weighted, 0.5 * ratio * kernel, d_gamma, cutoff)

    X, Y = _pixel_grid(geo)
    recon = np.zeros(geo.image_shape)
    for beta, view in zip(geo.view_angles(), filtered):
        psi = beta + np.pi / 2.0
        sx, sy = dso * np.cos(psi), dso * np.sin(psi)
        vx, vy = X - sx, Y - sy
        l_sq = vx * vx + vy * vy
        # signed angle of the pixel ray off the central direction
        cx, cy = -np.cos(psi), -np.sin(psi)
        gamma_hit = np.arctan2(cx * vy - cy * vx, cx * vx + cy * vy)
        recon += np.interp(gamma_hit, gamma, view, left=0.0, right=0.0) / l_sq
    return recon * (2.0 * np.pi / geo.n_views)


def ep_potential_and_derivative(t, delta: float):
    """Hyperbola potential delta^2 (sqrt(1 + (t/delta)^2) - 1) and its derivative."""
    if delta <= 0:
        raise ValidationError("delta must be > 0")
    t = np.asarray(t, dtype=np.float64)
    root = np.sqrt(1.0 + (t / delta) ** 2)
    return delta**2 * (root - 1.0), t / root


@dataclass(frozen=True)
class EpConfig:
    """PWLS-EP parameters (delta in HU; 8-connected neighborhood by default)."""

    beta: float
    delta: float = 10.0
    neighborhood: int = 8
    subsets: int = 12
    iterations: int = 20
    alpha: float = 1.999
    stop_tol: float = 1e-6

    def __post_init__(self):
        if self.beta <= 0:
            raise ValidationError("beta must be > 0")
        if self.delta <= 0:
            raise ValidationError("delta must be > 0")
        if self.neighborhood not in (4, 8):
            raise ValidationError("neighborhood must be 4- or 8-connected")
        if not 1.0 <= self.alpha < 2.0:
            raise ValidationError("alpha must satisfy 1 <= alpha < 2")
        if self.subsets < 1 or self.iterations < 1:
            raise ValidationError("subsets and iterations must be >= 1")


def _ep_offsets(neighborhood: int):
    return _NEIGHBOR_OFFSETS_8 if neighborhood == 8 else _NEIGHBOR_OFFSETS_4


def _pair_slices(shape, dr, dc):
    """Index slices (pixel, neighbor) for the in-bounds pairs at one offset."""
    rows, cols = shape
    r_a, r_b = slice(0, rows - dr), slice(dr, rows)
    if dc >= 0:
        c_a, c_b = slice(0, cols - dc), slice(dc, cols)
    else:
        c_a, c_b = slice(-dc, cols), slice(0, cols + dc)
    return (r_a, c_a), (r_b, c_b)


def ep_gradient(x: np.ndarray, beta: float, delta: float, neighborhood: int = 8) -> np.ndarray:
    """Gradient of beta * sum over neighbor pairs w_jk phi(x_j - x_k)."""
    grad = np.zeros_like(x)
    for dr, dc, wgt in _ep_offsets(neighborhood):
        ia, ib = _pair_slices(x.shape, dr, dc)
        _, dphi = ep_potential_and_derivative(x[ia] - x[ib], delta)
        term = wgt * dphi
        grad[ia] += term
        grad[ib] -= term
    return beta * grad


def ep_cost(x: np.ndarray, beta: float, delta: float, neighborhood: int = 8) -> float:
    total = 0.0
    for dr, dc, wgt in _ep_offsets(neighborhood):
        ia, ib = _pair_slices(x.shape, dr, dc)
        phi, _ = ep_potential_and_derivative(x[ia] - x[ib], delta)
        total += wgt * float(np.sum(phi))
    return beta * total


def ep_majorizer_diag(shape: tuple[int, int], beta: float, neighborhood: int = 8) -> np.ndarray:
    """2 beta sum_k w_jk per pixel (phi'' <= 1 bounds the pair curvature)."""
    wsum = np.zeros(shape)
    for dr, dc, wgt in _ep_offsets(neighborhood):
        ia, ib = _pair_slices(shape, dr, dc)
        wsum[ia] += wgt
        wsum[ib] += wgt
    return 2.0 * beta * wsum


def reconstruct_pwls_ep(sino, geo: Geometry, cfg: EpConfig, x_init: np.ndarray,
                        ground_truth: np.ndarray | None = None) -> ReconResult:
    """PWLS with the edge-preserving hyperbola regularizer via relaxed OS-LALM.

    x_init (typically an FBP image in HU) is required.  Runs cfg.iterations
    passes over cfg.subsets ordered subsets; the rho schedule advances
    continuously over the whole run.
    """
    y, w = _sino_arrays(sino)
    x = np.asarray(x_init, dtype=np.float64)
    if x.shape != geo.image_shape:
        raise ValidationError(f"x_init shape {x.shape} does not match geometry {geo.image_shape}")
    fit = WlsDataFit(y, w, geo, cfg.subsets)
    d_r = ep_majorizer_diag(geo.image_shape, cfg.beta, cfg.neighborhood).ravel()

    def grad_r(x_flat):
        return ep_gradient(x_flat.reshape(geo.image_shape), cfg.beta, cfg.delta,
                           cfg.neighborhood).ravel()

    history = []

    def report(i, img):
        data = fit.data_cost(img.ravel())
        regc = ep_cost(img, cfg.beta, cfg.delta, cfg.neighborhood)
        rmse = None if ground_truth is None else float(np.sqrt(np.mean((img - ground_truth) ** 2)))
        return CostReport(i, data, regc / max(cfg.beta, 1e-300), 0, data + regc, rmse)

    history.append(report(0, np.maximum(0.0, x)))
    prev = {"x": np.maximum(0.0, x)}

    def after_pass(k, img):
        history.append(report(k + 1, img))
        delta = np.linalg.norm(img - prev["x"]) / max(np.linalg.norm(prev["x"]), 1e-30)
        prev["x"] = img.copy()
        return bool(cfg.stop_tol) and delta < cfg.stop_tol

    state = run_image_update(x, fit, d_r, grad_r, cfg.iterations, cfg.alpha,
                             pass_callback=after_pass)
    return ReconResult(image=state.x, history=history, state=state)


def reconstruct_pwls_dct(sino, geo: Geometry, ps: PatchScheme, cfg: PwlsStConfig,
                         x_init: np.ndarray,
                         ground_truth: np.ndarray | None = None) -> ReconResult:
    """PWLS-ST with the fixed 2D DCT as the sparsifying transform."""
    transform = make_dct_transform(ps.patch_rows, ps.patch_cols)
    return reconstruct_pwls_st(sino, geo, transform, ps, cfg, x_init, ground_truth)
