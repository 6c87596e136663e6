"""Acquisition geometry for 2D parallel-beam and equiangular fan-beam scans.

Conventions used throughout the toolkit:

* Image pixel ``(r, c)`` has its center at
  ``x = (c - (cols-1)/2) * pixel_size + offset_x`` and
  ``y = (r - (rows-1)/2) * pixel_size + offset_y`` (y grows with the row
  index; display orientation is a rendering choice).
* Rays are indexed view-major: ray ``i = view * n_detector_channels + channel``.
* Detector channel ``i`` sits at lateral/arc coordinate
  ``s_i = (i - (n_channels-1)/2) * detector_spacing`` (mm).
* Parallel mode: view angle ``phi`` has detector axis ``u = (cos phi, sin phi)``
  and ray direction ``(-sin phi, cos phi)``; the ray passes through ``s_i * u``.
* Fan mode (arc detector centered at the source): the source for view angle
  ``beta`` sits at ``source_to_iso * (cos(beta + pi/2), sin(beta + pi/2))``;
  channel ``i`` leaves the source at fan angle
  ``gamma_i = s_i / source_to_detector`` off the central (source-to-origin)
  direction, positive gamma rotating counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError

PARALLEL = "parallel-beam"
FAN_ARC = "fan-beam-arc"
_MODES = (PARALLEL, FAN_ARC)


@dataclass(frozen=True)
class Geometry:
    """Immutable description of a 2D acquisition; safe to share across threads."""

    mode: str
    n_detector_channels: int
    n_views: int
    detector_spacing: float
    image_rows: int
    image_cols: int
    pixel_size: float
    angular_range: float = math.pi
    source_to_iso: float = 0.0
    source_to_detector: float = 0.0
    image_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigurationError(f"unknown geometry mode {self.mode!r}; expected one of {_MODES}")
        if self.n_detector_channels < 1 or self.n_views < 1:
            raise ConfigurationError("n_detector_channels and n_views must be >= 1")
        if self.image_rows < 1 or self.image_cols < 1:
            raise ConfigurationError("image dimensions must be >= 1")
        if self.pixel_size <= 0:
            raise ConfigurationError("pixel_size must be > 0")
        if self.detector_spacing <= 0:
            raise ConfigurationError("detector_spacing must be > 0")
        if self.angular_range <= 0:
            raise ConfigurationError("angular_range must be > 0")
        if self.mode == FAN_ARC:
            if not (0.0 < self.source_to_iso < self.source_to_detector):
                raise ConfigurationError(
                    "fan-beam-arc requires 0 < source_to_iso < source_to_detector"
                )
        object.__setattr__(self, "image_offset", (float(self.image_offset[0]), float(self.image_offset[1])))

    @property
    def n_rays(self) -> int:
        return self.n_detector_channels * self.n_views

    @property
    def n_pixels(self) -> int:
        return self.image_rows * self.image_cols

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_rows, self.image_cols)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_detector_channels)

    def view_angles(self) -> np.ndarray:
        return np.arange(self.n_views) * (self.angular_range / self.n_views)

    def detector_coords(self) -> np.ndarray:
        n = self.n_detector_channels
        return (np.arange(n) - (n - 1) / 2.0) * self.detector_spacing

    def fan_angles(self) -> np.ndarray:
        """Per-channel fan angles gamma_i (fan mode only)."""
        if self.mode != FAN_ARC:
            raise ConfigurationError("fan_angles is only defined for fan-beam-arc geometry")
        return self.detector_coords() / self.source_to_detector

    def refine(self, factor: int) -> "Geometry":
        """Same rays on a grid refined by an integer factor (for simulation)."""
        if factor < 1 or int(factor) != factor:
            raise ValidationError("refinement factor must be a positive integer")
        return Geometry(
            mode=self.mode,
            n_detector_channels=self.n_detector_channels,
            n_views=self.n_views,
            detector_spacing=self.detector_spacing,
            image_rows=self.image_rows * int(factor),
            image_cols=self.image_cols * int(factor),
            pixel_size=self.pixel_size / factor,
            angular_range=self.angular_range,
            source_to_iso=self.source_to_iso,
            source_to_detector=self.source_to_detector,
            image_offset=self.image_offset,
        )

    def to_config_text(self) -> str:
        lines = [
            f"mode = {self.mode}",
            f"n_detector_channels = {self.n_detector_channels}",
            f"n_views = {self.n_views}",
            f"detector_spacing = {self.detector_spacing!r}",
            f"angular_range_deg = {math.degrees(self.angular_range)!r}",
            f"image_rows = {self.image_rows}",
            f"image_cols = {self.image_cols}",
            f"pixel_size = {self.pixel_size!r}",
            f"image_offset_x = {self.image_offset[0]!r}",
            f"image_offset_y = {self.image_offset[1]!r}",
        ]
        if self.mode == FAN_ARC:
            lines.append(f"source_to_iso = {self.source_to_iso!r}")
            lines.append(f"source_to_detector = {self.source_to_detector!r}")
        return "\n".join(lines) + "\n"


def geometry_from_mapping(kv: dict) -> Geometry:
    """Build a Geometry from key-value pairs (angular range in degrees)."""
    kv = dict(kv)

    def need(key):
        if key not in kv:
            raise ConfigurationError(f"geometry config missing required key {key!r}")
        return kv.pop(key)

    def fget(key, default=None):
        if key not in kv:
            if default is None:
                raise ConfigurationError(f"geometry config missing required key {key!r}")
            return default
        try:
            return float(kv.pop(key))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"geometry config key {key!r}: not a number") from exc

    mode = str(need("mode"))
    try:
        geo = Geometry(
            mode=mode,
            n_detector_channels=int(fget("n_detector_channels")),
            n_views=int(fget("n_views")),
            detector_spacing=fget("detector_spacing"),
            angular_range=math.radians(fget("angular_range_deg", 180.0 if mode == PARALLEL else 360.0)),
            image_rows=int(fget("image_rows")),
            image_cols=int(fget("image_cols")),
            pixel_size=fget("pixel_size"),
            source_to_iso=fget("source_to_iso", 0.0),
            source_to_detector=fget("source_to_detector", 0.0),
            image_offset=(fget("image_offset_x", 0.0), fget("image_offset_y", 0.0)),
        )
    except ValueError as exc:
        raise ConfigurationError(f"geometry config: {exc}") from exc
    if kv:
        raise ConfigurationError(f"geometry config has unknown keys: {sorted(kv)}")
    return geo


def geometry_from_config_text(text: str) -> Geometry:
    """Parse the key-value geometry file format (angles given in degrees)."""
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"geometry config line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()
    return geometry_from_mapping(kv)


def load_geometry(path) -> Geometry:
    with open(path, "r", encoding="utf-8") as fh:
        return geometry_from_config_text(fh.read())


def save_geometry(geo: Geometry, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(geo.to_config_text())


def _bit_reversed_order(m: int) -> tuple[int, ...]:
    """Bit-reversal permutation of 0..m-1 (values >= m dropped for non-powers of 2)."""
    if m == 1:
        return (0,)
    bits = max(1, math.ceil(math.log2(m)))
    order = []
    for i in range(1 << bits):
        rev = int(format(i, f"0{bits}b")[::-1], 2)
        if rev < m:
            order.append(rev)
    return tuple(order)


@dataclass(frozen=True)
class SubsetPartition:
    """View-interleaved ordered-subset partition.

    Subset ``m`` owns views ``{m, m+M, m+2M, ...}``; ``order`` gives the
    bit-reversed sequence in which subsets are visited within one pass.
    """

    M: int
    view_index_lists: tuple[tuple[int, ...], ...]
    order: tuple[int, ...] = field(default=())

    def ray_indices(self, geo: Geometry, subset: int) -> np.ndarray:
        """Flat (view-major) ray indices belonging to one subset."""
        if not 0 <= subset < self.M:
            raise ValidationError(f"subset id {subset} out of range for M={self.M}")
        views = np.asarray(self.view_index_lists[subset], dtype=np.int64)
        ch = np.arange(geo.n_detector_channels, dtype=np.int64)
        return (views[:, None] * geo.n_detector_channels + ch[None, :]).ravel()


def partition_subsets(geo: Geometry, M: int) -> SubsetPartition:
    """Split views into M interleaved subsets with bit-reversed processing order."""
    if M < 1 or M > geo.n_views:
        raise ValidationError(f"subset count M={M} must satisfy 1 <= M <= n_views={geo.n_views}")
    lists = tuple(tuple(range(m, geo.n_views, M)) for m in range(M))
    return SubsetPartition(M=M, view_index_lists=lists, order=_bit_reversed_order(M))
