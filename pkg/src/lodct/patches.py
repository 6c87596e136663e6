"""Patch extraction operators, their adjoints, and overlap counts.

Patches are vectorized column-major (down the first patch column, then the
second, ...).  That order is part of the on-disk transform contract: a
transform learned here is only valid with this vectorization.
Patch origins visit the origin grid in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError

WRAP = "wrap"
INTERIOR = "interior"


@dataclass(frozen=True)
class PatchScheme:
    patch_rows: int
    patch_cols: int
    stride: int
    boundary: str
    image_rows: int
    image_cols: int

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1:
            raise ValidationError("patch dimensions must be >= 1")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")
        if self.boundary not in (WRAP, INTERIOR):
            raise ValidationError(f"boundary must be {WRAP!r} or {INTERIOR!r}")
        if self.boundary == INTERIOR and (
            self.patch_rows > self.image_rows or self.patch_cols > self.image_cols
        ):
            raise ValidationError("interior patches cannot exceed the image")
        if self.boundary == WRAP and (
            self.patch_rows > self.image_rows or self.patch_cols > self.image_cols
        ):
            raise ValidationError("wrap-around patches cannot exceed the image")

    @property
    def l(self) -> int:  # noqa: E743 - matches the usual patch-size symbol
        return self.patch_rows * self.patch_cols

    def origin_grid(self) -> tuple[np.ndarray, np.ndarray]:
        if self.boundary == WRAP:
            rows = np.arange(0, self.image_rows, self.stride)
            cols = np.arange(0, self.image_cols, self.stride)
        else:
            rows = np.arange(0, self.image_rows - self.patch_rows + 1, self.stride)
            cols = np.arange(0, self.image_cols - self.patch_cols + 1, self.stride)
        return rows, cols

    @property
    def n_patches(self) -> int:
        rows, cols = self.origin_grid()
        return rows.size * cols.size


def default_scheme(image_rows: int, image_cols: int,
                   patch_rows: int = 8, patch_cols: int = 8,
                   stride: int = 1, boundary: str = WRAP) -> PatchScheme:
    """8x8 wrap-around stride-1 patches; the overlap diagonal is then l*I."""
    return PatchScheme(patch_rows, patch_cols, stride, boundary, image_rows, image_cols)


@lru_cache(maxsize=8)
def _linear_indices(ps: PatchScheme) -> np.ndarray:
    """(l, N) int32 map from patch entries to flat image pixels."""
    orow, ocol = ps.origin_grid()
    # patch-local offsets in column-major vector order
    j, i = np.meshgrid(np.arange(ps.patch_cols), np.arange(ps.patch_rows))
    di = i.ravel(order="F")
    dj = j.ravel(order="F")
    # origins row-major
    og_r = np.repeat(orow, ocol.size)
    og_c = np.tile(ocol, orow.size)
    rr = og_r[None, :] + di[:, None]
    cc = og_c[None, :] + dj[:, None]
    if ps.boundary == WRAP:
        rr %= ps.image_rows
        cc %= ps.image_cols
    return (rr * ps.image_cols + cc).astype(np.int32)


def extract_patches(x: np.ndarray, ps: PatchScheme) -> np.ndarray:
    """All patches P_j x as the columns of an (l, N) matrix."""
    x = np.asarray(x)
    if x.shape != (ps.image_rows, ps.image_cols):
        raise ValidationError(f"image shape {x.shape} does not match scheme {(ps.image_rows, ps.image_cols)}")
    return x.ravel()[_linear_indices(ps)]


def aggregate_patches(coeffs: np.ndarray, ps: PatchScheme) -> np.ndarray:
    """Adjoint of extract_patches: sum_j P_j' c_j as an image."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    idx = _linear_indices(ps)
    if coeffs.shape != idx.shape:
        raise ValidationError(f"coefficient matrix shape {coeffs.shape} does not match scheme {idx.shape}")
    out = np.bincount(idx.ravel(), weights=coeffs.ravel(), minlength=ps.image_rows * ps.image_cols)
    return out.reshape(ps.image_rows, ps.image_cols)


def overlap_diagonal(ps: PatchScheme) -> np.ndarray:
    """Diagonal of sum_j P_j'P_j: patches overlapping each pixel."""
    idx = _linear_indices(ps)
    out = np.bincount(idx.ravel(), minlength=ps.image_rows * ps.image_cols)
    return out.astype(np.float64).reshape(ps.image_rows, ps.image_cols)
