"""Forward/back projection through an exact pixel-intersection system matrix.

The system operator A (shape N_d x N_p, view-major ray ordering) is assembled
once per geometry with a Siddon-style traversal that records the exact
intersection length of every ray with every pixel it crosses, and cached as a
scipy CSR matrix.  Using one stored matrix for both A and A' makes the pair
exactly matched: the adjoint identity holds to floating-point rounding, and
the diagonal majorizer diag{A'WA 1} really dominates A'WA.

Sparse matvec order is fixed, so projections are bit-reproducible.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import ValidationError
from .geometry import FAN_ARC, Geometry, SubsetPartition

_BIG = 1e30
_EPS = 1e-12


def ray_table(geo: Geometry) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-ray start points, unit directions, and minimum parameter t.

    Returns (p0x, p0y, dx, dy, tmin), each of length geo.n_rays.  Parallel
    rays are full lines (tmin = -inf surrogate); fan rays start at the source
    (tmin = 0).
    """
    angles = geo.view_angles()
    s = geo.detector_coords()
    nv, nc = geo.n_views, geo.n_detector_channels
    p0x = np.empty(nv * nc)
    p0y = np.empty(nv * nc)
    dx = np.empty(nv * nc)
    dy = np.empty(nv * nc)
    if geo.mode == FAN_ARC:
        gamma = geo.fan_angles()
        psi = angles + np.pi / 2.0
        sx = geo.source_to_iso * np.cos(psi)
        sy = geo.source_to_iso * np.sin(psi)
        # central direction: source -> isocenter
        cx, cy = -np.cos(psi), -np.sin(psi)
        cg, sg = np.cos(gamma), np.sin(gamma)
        for v in range(nv):
            lo = v * nc
            p0x[lo:lo + nc] = sx[v]
            p0y[lo:lo + nc] = sy[v]
            dx[lo:lo + nc] = cg * cx[v] - sg * cy[v]
            dy[lo:lo + nc] = sg * cx[v] + cg * cy[v]
        tmin = np.zeros(nv * nc)
    else:
        for v in range(nv):
            lo = v * nc
            ux, uy = np.cos(angles[v]), np.sin(angles[v])
            p0x[lo:lo + nc] = s * ux
            p0y[lo:lo + nc] = s * uy
            dx[lo:lo + nc] = -uy
            dy[lo:lo + nc] = ux
        tmin = np.full(nv * nc, -_BIG)
    return p0x, p0y, dx, dy, tmin


@njit(cache=True)
def _trace_ray(p0x, p0y, dx, dy, tmin, x0, y0, dp, nx, ny, inds, lens, write):
    """Siddon traversal of one ray; returns the number of crossed pixels.

    When write is True the pixel indices (row-major, iy*nx+ix) and segment
    lengths are stored into inds/lens starting at offset 0.
    """
    # entry/exit parameters against the grid bounding box
    t_lo = tmin
    t_hi = _BIG
    if abs(dx) > _EPS:
        t1 = (x0 - p0x) / dx
        t2 = (x0 + nx * dp - p0x) / dx
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_lo:
            t_lo = t1
        if t2 < t_hi:
            t_hi = t2
    else:
        # axis-parallel ray: half-open pixel cells [lo, hi)
        if p0x < x0 or p0x >= x0 + nx * dp:
            return 0
    if abs(dy) > _EPS:
        t1 = (y0 - p0y) / dy
        t2 = (y0 + ny * dp - p0y) / dy
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_lo:
            t_lo = t1
        if t2 < t_hi:
            t_hi = t2
    else:
        if p0y < y0 or p0y >= y0 + ny * dp:
            return 0
    if t_hi - t_lo < _EPS:
        return 0

    # locate the entry pixel from a point nudged inside the box; a degenerate
    # axis uses the raw coordinate so trig roundoff cannot flip the cell
    t_mid = t_lo + 1e-9 * (t_hi - t_lo)
    if abs(dx) > _EPS:
        ix = int(np.floor((p0x + t_mid * dx - x0) / dp))
    else:
        ix = int(np.floor((p0x - x0) / dp))
    if abs(dy) > _EPS:
        iy = int(np.floor((p0y + t_mid * dy - y0) / dp))
    else:
        iy = int(np.floor((p0y - y0) / dp))
    if ix < 0:
        ix = 0
    if ix > nx - 1:
        ix = nx - 1
    if iy < 0:
        iy = 0
    if iy > ny - 1:
        iy = ny - 1

    # parametric distances to the next x/y pixel boundary
    if dx > _EPS:
        inc_x = 1
        tx = ((ix + 1) * dp + x0 - p0x) / dx
        dtx = dp / dx
    elif dx < -_EPS:
        inc_x = -1
        tx = (ix * dp + x0 - p0x) / dx
        dtx = -dp / dx
    else:
        inc_x = 0
        tx = _BIG
        dtx = _BIG
    if dy > _EPS:
        inc_y = 1
        ty = ((iy + 1) * dp + y0 - p0y) / dy
        dty = dp / dy
    elif dy < -_EPS:
        inc_y = -1
        ty = (iy * dp + y0 - p0y) / dy
        dty = -dp / dy
    else:
        inc_y = 0
        ty = _BIG
        dty = _BIG

    count = 0
    t = t_lo
    while t < t_hi - _EPS:
        if tx <= ty:
            t_next = tx
        else:
            t_next = ty
        if t_next > t_hi:
            t_next = t_hi
        seg = t_next - t
        if seg > 0.0:
            if write:
                inds[count] = iy * nx + ix
                lens[count] = seg
            count += 1
        if t_next >= t_hi - _EPS:
            break
        if tx <= ty:
            ix += inc_x
            tx += dtx
        else:
            iy += inc_y
            ty += dty
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
            break
        t = t_next
    return count


@njit(cache=True)
def _count_all(p0x, p0y, dx, dy, tmin, x0, y0, dp, nx, ny):
    n = p0x.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    dummy_i = np.empty(1, dtype=np.int32)
    dummy_l = np.empty(1, dtype=np.float64)
    for r in range(n):
        counts[r] = _trace_ray(p0x[r], p0y[r], dx[r], dy[r], tmin[r],
                               x0, y0, dp, nx, ny, dummy_i, dummy_l, False)
    return counts


@njit(cache=True)
def _fill_all(p0x, p0y, dx, dy, tmin, x0, y0, dp, nx, ny, indptr, indices, data):
    n = p0x.shape[0]
    for r in range(n):
        lo = indptr[r]
        hi = indptr[r + 1]
        _trace_ray(p0x[r], p0y[r], dx[r], dy[r], tmin[r],
                   x0, y0, dp, nx, ny, indices[lo:hi], data[lo:hi], True)


_MATRIX_CACHE: dict[Geometry, sp.csr_matrix] = {}
_MATRIX_CACHE_MAX = 4


def system_matrix(geo: Geometry) -> sp.csr_matrix:
    """Exact-intersection system matrix A (N_d x N_p), cached per geometry."""
    cached = _MATRIX_CACHE.get(geo)
    if cached is not None:
        return cached
    p0x, p0y, dx, dy, tmin = ray_table(geo)
    dp = geo.pixel_size
    x0 = geo.image_offset[0] - geo.image_cols * dp / 2.0
    y0 = geo.image_offset[1] - geo.image_rows * dp / 2.0
    nx, ny = geo.image_cols, geo.image_rows
    counts = _count_all(p0x, p0y, dx, dy, tmin, x0, y0, dp, nx, ny)
    indptr = np.zeros(geo.n_rays + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int32)
    data = np.empty(indptr[-1], dtype=np.float64)
    _fill_all(p0x, p0y, dx, dy, tmin, x0, y0, dp, nx, ny, indptr, indices, data)
    mat = sp.csr_matrix((data, indices, indptr), shape=(geo.n_rays, geo.n_pixels))
    if len(_MATRIX_CACHE) >= _MATRIX_CACHE_MAX:
        _MATRIX_CACHE.pop(next(iter(_MATRIX_CACHE)))
    _MATRIX_CACHE[geo] = mat
    return mat


def clear_projector_cache() -> None:
    _MATRIX_CACHE.clear()


def _check_image(img: np.ndarray, geo: Geometry) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape != geo.image_shape:
        raise ValidationError(f"image shape {img.shape} does not match geometry {geo.image_shape}")
    return img


def _subset_rays(geo: Geometry, partition: SubsetPartition | None, subset: int | None) -> np.ndarray | None:
    if subset is None:
        return None
    if partition is None:
        raise ValidationError("a SubsetPartition is required when a subset id is given")
    return partition.ray_indices(geo, subset)


def forward_project(img: np.ndarray, geo: Geometry,
                    partition: SubsetPartition | None = None,
                    subset: int | None = None) -> np.ndarray:
    """Line integrals A x (mm * image units).

    Full call returns shape (n_views, n_channels); a subset call returns
    (len(subset views), n_channels).
    """
    img = _check_image(img, geo)
    A = system_matrix(geo)
    rays = _subset_rays(geo, partition, subset)
    if rays is None:
        return (A @ img.ravel()).reshape(geo.sinogram_shape)
    vals = A[rays] @ img.ravel()
    return vals.reshape(-1, geo.n_detector_channels)


def back_project(sino_vals: np.ndarray, geo: Geometry,
                 partition: SubsetPartition | None = None,
                 subset: int | None = None) -> np.ndarray:
    """Exact adjoint A' u of forward_project; returns an image-shaped array."""
    A = system_matrix(geo)
    rays = _subset_rays(geo, partition, subset)
    vals = np.asarray(sino_vals, dtype=np.float64).ravel()
    if rays is None:
        if vals.size != geo.n_rays:
            raise ValidationError(f"sinogram size {vals.size} does not match geometry N_d={geo.n_rays}")
        out = A.T @ vals
    else:
        if vals.size != rays.size:
            raise ValidationError(f"subset sinogram size {vals.size} != {rays.size}")
        out = A[rays].T @ vals
    return out.reshape(geo.image_shape)


def compute_majorizer_DA(geo: Geometry, weights: np.ndarray) -> np.ndarray:
    """Diagonal of diag{A'WA 1}, as an image-shaped array (all entries >= 0)."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size != geo.n_rays:
        raise ValidationError(f"weights length {w.size} does not match N_d={geo.n_rays}")
    if np.any(w < 0):
        raise ValidationError("statistical weights must be nonnegative")
    A = system_matrix(geo)
    ax1 = A @ np.ones(geo.n_pixels)
    return (A.T @ (w * ax1)).reshape(geo.image_shape)
