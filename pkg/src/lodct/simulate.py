"""Phantoms, noisy sinogram simulation, and the two-grid protocol.

Simulation always runs on a grid finer than the reconstruction grid (same
rays, smaller pixels) so the iterative solvers never invert the exact
operator that generated the data.  Ground truth for scoring is the
block-mean downsampling of the fine phantom.

Units: phantoms are linear attenuation in mm^-1; post-log sinogram values
are unitless line integrals; modified Hounsfield units put air at 0 and
water at 1000 (HU = 1000 * mu / mu_water).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .errors import ValidationError
from .geometry import Geometry
from .projector import forward_project

MU_WATER_DEFAULT = 0.02  # mm^-1

# mean below which Poisson sampling uses CDF inversion; above, a rounded
# normal approximation (both consume exactly one uniform per ray)
_POISSON_INVERSION_LIMIT = 30.0
_POISSON_INVERSION_CAP = 220


def hu_from_mu(mu, mu_water: float = MU_WATER_DEFAULT):
    """Modified Hounsfield units: air 0, water 1000."""
    return np.asarray(mu) * (1000.0 / mu_water)


def mu_from_hu(hu, mu_water: float = MU_WATER_DEFAULT):
    return np.asarray(hu) * (mu_water / 1000.0)


@dataclass(frozen=True)
class Ellipse:
    """Additive ellipse in coordinates normalized to the half field of view.

    value is in multiples of the water attenuation; angle in degrees.
    """

    value: float
    a: float
    b: float
    x0: float = 0.0
    y0: float = 0.0
    angle_deg: float = 0.0


# Classic head phantom layout (Shepp-Logan with the usual low-contrast values).
SHEPP_LOGAN = (
    Ellipse(2.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse(-0.98, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse(-0.02, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse(-0.02, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse(0.01, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse(0.01, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse(0.01, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse(0.01, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse(0.01, 0.023, 0.023, 0.0, -0.605, 0.0),
    Ellipse(0.01, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def ct_slice_ellipses(seed: int | None = None) -> tuple[Ellipse, ...]:
    """Body-like slice: water interior, thin bone rim, organs, vessels,
    calcifications, and a field of small low-contrast lesions.

    A seed jitters positions/sizes/contrasts/angles to produce distinct but
    statistically similar slices for transform training.
    """
    body = [
        Ellipse(1.5, 0.90, 0.95, 0.0, 0.0, 0.0),       # water + bone rim level
        Ellipse(-0.5, 0.862, 0.912, 0.0, 0.0, 0.0),    # interior back to water
    ]
    organs = [
        Ellipse(0.08, 0.30, 0.38, -0.33, 0.10, 20.0),
        Ellipse(-0.08, 0.26, 0.32, 0.33, 0.08, -15.0),
        Ellipse(0.05, 0.18, 0.14, 0.0, -0.46, 0.0),
        Ellipse(-0.05, 0.12, 0.18, 0.02, 0.52, 0.0),
        Ellipse(0.06, 0.05, 0.12, 0.04, 0.04, 40.0),
    ]
    vessels = [
        Ellipse(0.12, 0.015, 0.20, -0.12, -0.16, 30.0),
        Ellipse(0.12, 0.012, 0.16, 0.16, 0.32, -50.0),
        Ellipse(-0.10, 0.013, 0.22, 0.05, 0.02, 75.0),
        Ellipse(0.10, 0.012, 0.14, -0.38, -0.42, -20.0),
    ]
    calcs = [
        Ellipse(0.5, 0.018, 0.018, -0.15, -0.10, 0.0),
        Ellipse(0.5, 0.012, 0.012, 0.18, 0.42, 0.0),
        Ellipse(0.4, 0.014, 0.020, 0.42, -0.30, 10.0),
    ]
    lesions = [
        Ellipse(0.035, 0.040, 0.050, -0.44, 0.36, 0.0),
        Ellipse(-0.035, 0.050, 0.040, 0.44, -0.38, 0.0),
        Ellipse(0.04, 0.030, 0.030, -0.20, 0.44, 0.0),
        Ellipse(-0.04, 0.030, 0.036, 0.10, -0.30, 0.0),
        Ellipse(0.05, 0.024, 0.032, -0.50, -0.05, 25.0),
        Ellipse(-0.05, 0.032, 0.024, 0.52, 0.22, -25.0),
        Ellipse(0.03, 0.045, 0.028, 0.28, -0.52, 45.0),
        Ellipse(-0.03, 0.028, 0.045, -0.30, -0.50, -45.0),
        Ellipse(0.045, 0.020, 0.020, 0.00, 0.28, 0.0),
        Ellipse(-0.045, 0.020, 0.020, -0.08, -0.56, 0.0),
    ]
    base = body + organs + vessels + calcs + lesions
    if seed is None:
        return tuple(base)
    rng = np.random.default_rng(seed)
    jittered = list(body)
    for e in base[2:]:
        jittered.append(Ellipse(
            value=e.value * rng.uniform(0.8, 1.2),
            a=max(0.010, e.a * rng.uniform(0.85, 1.15)),
            b=max(0.010, e.b * rng.uniform(0.85, 1.15)),
            x0=np.clip(e.x0 + rng.uniform(-0.06, 0.06), -0.62, 0.62),
            y0=np.clip(e.y0 + rng.uniform(-0.06, 0.06), -0.62, 0.62),
            angle_deg=e.angle_deg + rng.uniform(-25.0, 25.0),
        ))
    return tuple(jittered)


@dataclass(frozen=True)
class CosineField:
    """Smooth analytic shading/texture, windowed by an interior ellipse.

    amplitude is in multiples of the water attenuation; (fx, fy) are spatial
    frequencies in cycles per half field of view.
    """

    amplitude: float
    fx: float
    fy: float
    phase: float
    mask_a: float = 0.82
    mask_b: float = 0.87
    mask_x0: float = 0.0
    mask_y0: float = 0.0


def ct_texture_fields(seed: int | None = None) -> tuple[CosineField, ...]:
    """Tissue inhomogeneity: broad shading plus fine oriented textures."""
    base = [
        CosineField(0.018, 1.1, 0.85, 0.8),
        CosineField(0.012, 0.93, 1.55, -1.1),
        CosineField(0.010, 2.6, 1.9, 2.0),
        # fine oriented textures, ~6-8 px period on a 256-pixel grid
        CosineField(0.020, 14.0, 19.0, 0.3, mask_a=0.34, mask_b=0.40, mask_x0=-0.18, mask_y0=0.05),
        CosineField(0.018, -17.0, 10.0, 1.2, mask_a=0.30, mask_b=0.34, mask_x0=0.30, mask_y0=-0.22),
    ]
    if seed is None:
        return tuple(base)
    rng = np.random.default_rng(seed + 7919)
    out = []
    for f in base:
        rot = rng.uniform(-0.35, 0.35)
        c, s = math.cos(rot), math.sin(rot)
        out.append(CosineField(
            amplitude=f.amplitude * rng.uniform(0.85, 1.15),
            fx=c * f.fx - s * f.fy,
            fy=s * f.fx + c * f.fy,
            phase=rng.uniform(0.0, 2.0 * math.pi),
            mask_a=f.mask_a,
            mask_b=f.mask_b,
            mask_x0=np.clip(f.mask_x0 + rng.uniform(-0.05, 0.05), -0.4, 0.4),
            mask_y0=np.clip(f.mask_y0 + rng.uniform(-0.05, 0.05), -0.4, 0.4),
        ))
    return tuple(out)


def rasterize_texture(fields, rows: int, cols: int, pixel_size: float,
                      mu_water: float = MU_WATER_DEFAULT) -> np.ndarray:
    x = (np.arange(cols) - (cols - 1) / 2.0) * pixel_size
    y = (np.arange(rows) - (rows - 1) / 2.0) * pixel_size
    xn = x / (cols * pixel_size / 2.0)
    yn = y / (rows * pixel_size / 2.0)
    X, Y = np.meshgrid(xn, yn)
    img = np.zeros((rows, cols))
    for f in fields:
        inside = ((X - f.mask_x0) / f.mask_a) ** 2 + ((Y - f.mask_y0) / f.mask_b) ** 2 <= 1.0
        wave = f.amplitude * np.cos(math.pi * (f.fx * X + f.fy * Y) + f.phase)
        img += np.where(inside, wave, 0.0)
    return img * mu_water


@dataclass(frozen=True)
class Phantom:
    """Attenuation map (mm^-1) with its grid metadata."""

    kind: str
    values: np.ndarray
    pixel_size: float
    mu_water: float = MU_WATER_DEFAULT

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValidationError("attenuation values must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def rasterize_ellipses(ellipses, rows: int, cols: int, pixel_size: float,
                       mu_water: float = MU_WATER_DEFAULT) -> np.ndarray:
    """Evaluate an additive ellipse list on pixel centers (values * mu_water).

    Normalization maps the image half-width/half-height to 1, so the same
    list renders consistently on any square grid.
    """
    x = (np.arange(cols) - (cols - 1) / 2.0) * pixel_size
    y = (np.arange(rows) - (rows - 1) / 2.0) * pixel_size
    xn = x / (cols * pixel_size / 2.0)
    yn = y / (rows * pixel_size / 2.0)
    X, Y = np.meshgrid(xn, yn)
    img = np.zeros((rows, cols))
    for e in ellipses:
        phi = math.radians(e.angle_deg)
        c, s = math.cos(phi), math.sin(phi)
        dx = X - e.x0
        dy = Y - e.y0
        xr = c * dx + s * dy
        yr = -s * dx + c * dy
        img[(xr / e.a) ** 2 + (yr / e.b) ** 2 <= 1.0] += e.value
    return img * mu_water


def make_phantom(source, rows: int, cols: int, pixel_size: float,
                 mu_water: float = MU_WATER_DEFAULT) -> Phantom:
    """Build a phantom from a named builtin, an ellipse list, or a PHNT file.

    source may be 'shepp-logan', 'ct', 'ct:<seed>' (jittered training
    variants), an iterable of Ellipse, or a filesystem path to a PHNT raster
    (attenuation in mm^-1; grid arguments are then taken from the file).
    """
    if isinstance(source, str) and not source.endswith(".phnt"):
        if source == "shepp-logan":
            values = rasterize_ellipses(SHEPP_LOGAN, rows, cols, pixel_size, mu_water)
        elif source == "ct" or source.startswith("ct:"):
            seed = None if source == "ct" else int(source.split(":", 1)[1])
            values = rasterize_ellipses(ct_slice_ellipses(seed), rows, cols,
                                        pixel_size, mu_water)
            values += rasterize_texture(ct_texture_fields(seed), rows, cols,
                                        pixel_size, mu_water)
            np.clip(values, 0.0, None, out=values)
        else:
            raise ValidationError(f"unknown builtin phantom {source!r}")
        return Phantom(kind=source, values=values, pixel_size=pixel_size, mu_water=mu_water)
    if isinstance(source, (str,)) or hasattr(source, "__fspath__"):
        from .fileio import read_phnt

        values, px = read_phnt(source)
        return Phantom(kind=f"raster:{source}", values=np.asarray(values, dtype=np.float64),
                       pixel_size=px, mu_water=mu_water)
    ellipses = tuple(source)
    values = rasterize_ellipses(ellipses, rows, cols, pixel_size, mu_water)
    return Phantom(kind="ellipses", values=values, pixel_size=pixel_size, mu_water=mu_water)


def downsample_to_recon_grid(ph: Phantom, factor: int) -> np.ndarray:
    """Block-mean downsampling; the result is the scoring ground truth."""
    if factor < 1 or int(factor) != factor:
        raise ValidationError("downsampling factor must be a positive integer")
    rows, cols = ph.values.shape
    if rows % factor or cols % factor:
        raise ValidationError(f"fine grid {ph.values.shape} not divisible by factor {factor}")
    f = int(factor)
    return ph.values.reshape(rows // f, f, cols // f, f).mean(axis=(1, 3))


def sample_poisson_counts(lam: np.ndarray, seed: int) -> np.ndarray:
    """Seeded counter-based Poisson sampling, one uniform per entry.

    Entry i always consumes uniform i of the Philox stream, so results do
    not depend on execution order or thread count.  Means below 30 use CDF
    inversion; larger means a rounded normal approximation.
    """
    lam = np.asarray(lam, dtype=np.float64)
    flat = lam.ravel()
    u = Generator(Philox(key=int(seed))).random(flat.size)
    u = np.clip(u, 1e-15, 1.0 - 1e-15)
    counts = np.zeros(flat.size, dtype=np.int64)

    small = flat < _POISSON_INVERSION_LIMIT
    if np.any(small):
        lam_s = flat[small]
        u_s = u[small]
        pk = np.exp(-lam_s)
        cdf = pk.copy()
        res = np.zeros(lam_s.size, dtype=np.int64)
        for k in range(1, _POISSON_INVERSION_CAP + 1):
            below = cdf < u_s
            if not below.any():
                break
            pk = pk * lam_s / k
            cdf = cdf + pk
            res[below] = k
        counts[small] = res
    if np.any(~small):
        lam_b = flat[~small]
        z = ndtri(u[~small])
        counts[~small] = np.maximum(0.0, np.rint(lam_b + np.sqrt(lam_b) * z)).astype(np.int64)
    return counts.reshape(lam.shape)


@dataclass(frozen=True)
class NoisySinogram:
    """Post-log data y with per-ray counts and statistical weights."""

    y: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    i0: float
    rng_seed: int
    noiseless: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape


def simulate_sinogram(ph: Phantom, geo_fine: Geometry, i0: float, seed: int = 0,
                      noiseless: bool = False) -> NoisySinogram:
    """Monoenergetic Poisson transmission scan of a phantom.

    counts_i ~ Poisson(i0 * exp(-l_i)) with l = A_fine mu; zero counts are
    clamped to 1 before the log; weights are the (clamped) measured counts.
    The noiseless path returns y = l exactly with ideal weights i0*exp(-l).
    """
    if i0 <= 0:
        raise ValidationError("i0 must be > 0")
    if ph.values.shape != geo_fine.image_shape:
        raise ValidationError(
            f"phantom grid {ph.values.shape} does not match simulation geometry {geo_fine.image_shape}")
    if not np.isclose(ph.pixel_size, geo_fine.pixel_size, rtol=1e-9):
        raise ValidationError("phantom pixel size does not match simulation geometry")

    line_integrals = forward_project(ph.values, geo_fine)
    expected = i0 * np.exp(-line_integrals)
    if noiseless:
        return NoisySinogram(y=line_integrals, counts=expected, weights=expected,
                             i0=float(i0), rng_seed=int(seed), noiseless=True)
    counts = sample_poisson_counts(expected, seed)
    clamped = np.maximum(counts, 1)
    y = np.log(i0 / clamped)
    return NoisySinogram(y=y, counts=counts, weights=clamped.astype(np.float64),
                         i0=float(i0), rng_seed=int(seed), noiseless=False)
