"""Quantitative evaluation: RMSE in modified HU, difference images, tables.

All comparisons happen in modified Hounsfield units (air 0, water 1000); the
simulation module owns the mu <-> HU conversion so every method is scored in
identical units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

METHOD_ORDER = ("fbp", "pwls-ep", "pwls-dct", "pwls-st")
DISPLAY_WINDOW_HU = (800.0, 1200.0)


def rmse_hu(x_hat: np.ndarray, x_star: np.ndarray) -> float:
    """sqrt(sum_i (xhat_i - xstar_i)^2 / N_p) over the full image, in HU."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_hat.shape != x_star.shape:
        raise ValidationError(f"image shapes differ: {x_hat.shape} vs {x_star.shape}")
    return float(np.sqrt(np.mean((x_hat - x_star) ** 2)))


def difference_image(x_hat: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """Elementwise |xhat - xstar| (magnitude difference image)."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_hat.shape != x_star.shape:
        raise ValidationError(f"image shapes differ: {x_hat.shape} vs {x_star.shape}")
    return np.abs(x_hat - x_star)


@dataclass(frozen=True)
class EvalReport:
    """Score of one method at one dose level."""

    dose: float
    method: str
    rmse_hu: float
    runtime_s: float = float("nan")
    difference_image_path: str | None = None

    def __post_init__(self):
        if self.rmse_hu < 0:
            raise ValidationError("rmse must be >= 0")


def write_report_csv(reports, path) -> None:
    """Flat CSV with the fixed header dose,method,rmse_hu,runtime_s."""
    lines = ["dose,method,rmse_hu,runtime_s"]
    for r in reports:
        rt = "" if np.isnan(r.runtime_s) else f"{r.runtime_s:.3f}"
        lines.append(f"{r.dose:g},{r.method},{r.rmse_hu:.6f},{rt}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_comparison_table(reports, fmt: str = "markdown") -> str:
    """Dose-by-method grid (one row per dose, '—' for missing cells)."""
    if not reports:
        raise ValidationError("at least one report is required")
    if fmt not in ("markdown", "csv"):
        raise ValidationError("fmt must be 'markdown' or 'csv'")
    doses = sorted({r.dose for r in reports}, reverse=True)
    methods = [m for m in METHOD_ORDER if any(r.method == m for r in reports)]
    extra = sorted({r.method for r in reports} - set(methods))
    methods += extra
    cell = {(r.dose, r.method): r.rmse_hu for r in reports}

    header = ["dose"] + list(methods)
    rows = []
    for d in doses:
        row = [f"{d:g}"]
        for m in methods:
            v = cell.get((d, m))
            row.append("—" if v is None else f"{v:.1f}")
        rows.append(row)

    if fmt == "csv":
        return "\n".join(",".join(r) for r in [header] + rows) + "\n"
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def window_to_uint16(img_hu: np.ndarray, window=DISPLAY_WINDOW_HU) -> np.ndarray:
    """Clip to the display window and scale to the full 16-bit range."""
    lo, hi = window
    if hi <= lo:
        raise ValidationError("window must satisfy hi > lo")
    clipped = np.clip(img_hu, lo, hi)
    return np.round((clipped - lo) / (hi - lo) * 65535.0).astype(np.uint16)


def write_png16(img_hu: np.ndarray, path, window=DISPLAY_WINDOW_HU) -> None:
    """16-bit grayscale PNG plus a sidecar text file with the window/level.

    Stored data are only windowed for display; the caller keeps the floats.
    """
    from PIL import Image

    arr = window_to_uint16(np.asarray(img_hu, dtype=np.float64), window)
    Image.fromarray(arr).save(str(path))
    lo, hi = window
    with open(str(path) + ".meta.txt", "w", encoding="utf-8") as fh:
        fh.write(f"window_lo_hu = {lo}\nwindow_hi_hu = {hi}\n"
                 f"level_hu = {(lo + hi) / 2}\nwidth_hu = {hi - lo}\n"
                 f"scale = uint16 0..65535 over the window\n")
