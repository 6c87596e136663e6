"""Command-line pipeline: simulate, train, reconstruct, evaluate.

Every command reads an optional TOML config (sections [geometry],
[simulate], [train], [reconstruct], [evaluate]) with CLI flags taking
precedence, and writes a JSON manifest hashing all inputs and outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .baselines import EpConfig, fbp_reconstruct, reconstruct_pwls_ep, reconstruct_pwls_st
from .errors import ConfigurationError, DivergenceError, FileFormatError, LodctError
from .evaluate import (
    DISPLAY_WINDOW_HU,
    EvalReport,
    difference_image,
    emit_comparison_table,
    rmse_hu,
    write_png16,
    write_report_csv,
)
from .fileio import (
    read_phnt,
    read_sino,
    read_stfm,
    sha256_file,
    verify_manifest,
    write_manifest,
    write_phnt,
    write_sino,
    write_stfm,
)
from .geometry import Geometry, geometry_from_mapping, load_geometry, save_geometry
from .patches import default_scheme, extract_patches
from .recon import PwlsStConfig, cost_history_csv
from .simulate import (
    MU_WATER_DEFAULT,
    downsample_to_recon_grid,
    hu_from_mu,
    make_phantom,
    simulate_sinogram,
)
from .transforms import LearningConfig, learn_transform, make_dct_transform

DEFAULT_GEOMETRY = {
    "mode": "fan-beam-arc",
    "n_detector_channels": 272,
    "n_views": 360,
    "detector_spacing": 2.0,
    "source_to_iso": 400.0,
    "source_to_detector": 800.0,
    "angular_range_deg": 360.0,
    "image_rows": 256,
    "image_cols": 256,
    "pixel_size": 1.0,
}


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise FileFormatError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from exc


def _section(config: dict, name: str) -> dict:
    sec = config.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigurationError(f"config section [{name}] must be a table")
    return dict(sec)


def _pick(flag_value, section: dict, key: str, default):
    """CLI flag > config key > default."""
    if flag_value is not None:
        return flag_value
    if key in section:
        return section[key]
    return default


def _geometry_from(config: dict) -> Geometry:
    table = _section(config, "geometry") or dict(DEFAULT_GEOMETRY)
    return geometry_from_mapping(table)


def _parse_i0_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise ConfigurationError(f"--i0: expected comma-separated numbers, got {text!r}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise ConfigurationError("--i0 values must be positive")
    return vals


# ------------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    config = load_config(args.config)
    sec = _section(config, "simulate")
    geo = _geometry_from(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    phantom_name = _pick(args.phantom, sec, "phantom", "ct")
    fine_factor = int(_pick(args.fine_factor, sec, "fine_factor", 2))
    seed = int(_pick(args.seed, sec, "seed", 0))
    mu_water = float(_pick(None, sec, "mu_water", MU_WATER_DEFAULT))
    noiseless = bool(args.noiseless or sec.get("noiseless", False))
    i0_raw = _pick(args.i0, sec, "i0", "1e4")
    i0_list = i0_raw if isinstance(i0_raw, list) else _parse_i0_list(i0_raw)

    t_start = time.perf_counter()
    fine_geo = geo.refine(fine_factor)
    ph = make_phantom(phantom_name, fine_geo.image_rows, fine_geo.image_cols,
                      fine_geo.pixel_size, mu_water=mu_water)
    gt_hu = hu_from_mu(downsample_to_recon_grid(ph, fine_factor), mu_water)

    outputs = []
    geom_path = out / "geometry.cfg"
    save_geometry(geo, geom_path)
    outputs.append(geom_path)
    gt_path = out / "ground_truth.phnt"
    write_phnt(gt_path, gt_hu, geo.pixel_size)
    outputs.append(gt_path)

    timings = {}
    for i0 in i0_list:
        t0 = time.perf_counter()
        sino = simulate_sinogram(ph, fine_geo, i0=i0, seed=seed, noiseless=noiseless)
        sino_path = out / f"sino_i0_{i0:g}.sino"
        write_sino(sino_path, sino.y, sino.weights, geo.detector_spacing)
        outputs.append(sino_path)
        timings[f"simulate_i0_{i0:g}"] = round(time.perf_counter() - t0, 3)
        print(f"wrote {sino_path} (i0={i0:g}, seed={seed}, noiseless={noiseless})")
    timings["total"] = round(time.perf_counter() - t_start, 3)

    write_manifest(out / "manifest_simulate.json", "simulate",
                   {"phantom": phantom_name, "fine_factor": fine_factor,
                    "mu_water": mu_water, "noiseless": noiseless,
                    "i0": i0_list, "geometry": geo.to_config_text()},
                   {"seed": seed}, [], outputs, timings,
                   notes={"ground_truth_units": "modified HU (air 0, water 1000)",
                          "sinogram_units": "unitless post-log line integrals"})
    return 0


# ---------------------------------------------------------------------- train

def cmd_train(args) -> int:
    config = load_config(args.config)
    sec = _section(config, "train")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    eta = float(_pick(args.eta, sec, "eta", 75.0))
    iters = int(_pick(args.iters, sec, "iters", 100))
    lam_scale = float(_pick(args.lam_scale, sec, "lam_scale", 0.02))
    patch_rows = int(_pick(args.patch_size, sec, "patch_rows", 8))
    patch_cols = int(_pick(args.patch_size, sec, "patch_cols", 8))
    stride = int(_pick(None, sec, "stride", 1))
    n_slices = int(_pick(args.slices, sec, "slices", 5))
    seed = int(_pick(args.seed, sec, "seed", 100))
    mu_water = float(_pick(None, sec, "mu_water", MU_WATER_DEFAULT))
    rows = int(_pick(None, sec, "image_rows", 256))
    cols = int(_pick(None, sec, "image_cols", 256))

    inputs = [Path(p) for p in (args.training_image or [])]
    if args.test_image is not None:
        test_hash = sha256_file(args.test_image)
        for p in inputs:
            if sha256_file(p) == test_hash:
                raise ConfigurationError(
                    f"training image {p} is identical to the designated test image")

    t0 = time.perf_counter()
    slices_hu = []
    if inputs:
        for p in inputs:
            values, _ = read_phnt(p)
            slices_hu.append(hu_from_mu(values, mu_water))
    else:
        # built-in jittered slice variants; seeds offset from the base seed
        for k in range(n_slices):
            ph = make_phantom(f"ct:{seed + k}", rows, cols, 1.0, mu_water=mu_water)
            slices_hu.append(hu_from_mu(ph.values, mu_water))

    cols_list = []
    for img in slices_hu:
        ps = default_scheme(img.shape[0], img.shape[1], patch_rows, patch_cols, stride)
        cols_list.append(extract_patches(img, ps))
    Y = np.concatenate(cols_list, axis=1)

    cfg = LearningConfig(eta=eta, n_iters=iters, init="dct", lam_scale=lam_scale, seed=seed)
    result = learn_transform(Y, cfg, patch_shape=(patch_rows, patch_cols))
    t_learn = time.perf_counter() - t0

    outputs = []
    tpath = out / "transform.stfm"
    write_stfm(tpath, result.transform)
    outputs.append(tpath)

    curve_path = out / "learning_curve.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("half_step,objective\n")
        for i, v in enumerate(result.objective_half_steps):
            fh.write(f"{i},{v:.10e}\n")
    outputs.append(curve_path)

    from .figures import save_learning_curve, save_transform_atoms

    atoms_path = out / "transform_atoms.png"
    save_transform_atoms(result.transform, atoms_path)
    outputs.append(atoms_path)
    if len(result.objective_half_steps):
        fig_path = out / "learning_curve.png"
        save_learning_curve(result.objective_half_steps, fig_path)
        outputs.append(fig_path)

    write_manifest(out / "manifest_train.json", "train",
                   {"eta": eta, "iters": iters, "lam_scale": lam_scale,
                    "lam": result.lam, "patch_rows": patch_rows,
                    "patch_cols": patch_cols, "stride": stride,
                    "n_training_patches": int(Y.shape[1]),
                    "slices": n_slices if not inputs else len(inputs),
                    "mu_water": mu_water},
                   {"seed": seed}, inputs, outputs,
                   {"learn": round(t_learn, 3)},
                   notes={"training_units": "modified HU",
                          "condition_number": result.transform.condition_number})
    print(f"wrote {tpath} (condition number "
          f"{result.transform.condition_number:.3f}, {Y.shape[1]} patches)")
    return 0


# ---------------------------------------------------------------- reconstruct

_METHODS = ("fbp", "pwls-ep", "pwls-dct", "pwls-st")


def _load_scan(args, config):
    if args.geometry is not None:
        geo = load_geometry(args.geometry)
    else:
        geo = _geometry_from(config)
    y, weights, _ = read_sino(args.sino)
    if y.shape != geo.sinogram_shape:
        raise ConfigurationError(
            f"sinogram {args.sino} shape {y.shape} does not match geometry {geo.sinogram_shape}")
    return geo, y, weights


def cmd_reconstruct(args) -> int:
    config = load_config(args.config)
    sec = _section(config, "reconstruct")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = args.method
    if method not in _METHODS:
        raise ConfigurationError(f"--method must be one of {_METHODS}")

    geo, y_raw, weights = _load_scan(args, config)
    mu_water = float(_pick(None, sec, "mu_water", MU_WATER_DEFAULT))
    y_hu = y_raw * (1000.0 / mu_water)

    truth = None
    if args.truth is not None:
        truth, _ = read_phnt(args.truth)

    gamma = float(_pick(args.gamma, sec, "gamma", 25.0))
    alpha = float(_pick(args.alpha, sec, "alpha", 1.999))
    subsets = int(_pick(args.subsets, sec, "subsets", 4))
    inner = int(_pick(args.inner_iters, sec, "inner_iters", 2))
    outer = int(_pick(args.outer_iters, sec, "outer_iters", 10))
    cutoff = float(_pick(None, sec, "fbp_cutoff", 1.0))
    ep_beta = float(_pick(args.ep_beta, sec, "ep_beta", 32.0))
    ep_delta = float(_pick(None, sec, "ep_delta", 10.0))
    ep_subsets = int(_pick(None, sec, "ep_subsets", 12))
    ep_iters = int(_pick(None, sec, "ep_iters", 20))
    ep_alpha = float(_pick(None, sec, "ep_alpha", alpha))

    inputs = [Path(args.sino)]
    if args.geometry is not None:
        inputs.append(Path(args.geometry))
    if args.truth is not None:
        inputs.append(Path(args.truth))
    outputs = []
    timings = {}
    stages = []

    def run_fbp():
        t0 = time.perf_counter()
        img = fbp_reconstruct(y_hu, geo, cutoff=cutoff)
        timings["fbp"] = round(time.perf_counter() - t0, 3)
        stages.append("fbp")
        return img

    def run_ep(x0):
        t0 = time.perf_counter()
        cfg = EpConfig(beta=ep_beta, delta=ep_delta, subsets=ep_subsets,
                       iterations=ep_iters, alpha=ep_alpha)
        res = reconstruct_pwls_ep((y_hu, weights), geo, cfg,
                                  np.maximum(0.0, x0), ground_truth=truth)
        timings["pwls-ep"] = round(time.perf_counter() - t0, 3)
        stages.append("pwls-ep")
        return res

    def run_st(x0):
        if method == "pwls-dct":
            transform = make_dct_transform(
                int(_pick(None, sec, "patch_rows", 8)),
                int(_pick(None, sec, "patch_cols", 8)))
        else:
            if args.transform is None:
                raise ConfigurationError("--transform is required for pwls-st")
            transform = read_stfm(args.transform)
            inputs.append(Path(args.transform))
        beta = _pick(args.beta, sec, "beta", None)
        if beta is None:
            raise ConfigurationError(f"--beta is required for {method}")
        ps = default_scheme(geo.image_rows, geo.image_cols,
                            transform.patch_rows or 8, transform.patch_cols or 8,
                            int(_pick(None, sec, "stride", 1)))
        cfg = PwlsStConfig(beta=float(beta), gamma=gamma, outer_iters=outer,
                           inner_iters=inner, subsets=subsets, alpha=alpha,
                           stop_tol=float(_pick(None, sec, "stop_tol", 1e-6)))
        t0 = time.perf_counter()
        res = reconstruct_pwls_st((y_hu, weights), geo, transform, ps, cfg,
                                  np.maximum(0.0, x0), ground_truth=truth)
        timings[method] = round(time.perf_counter() - t0, 3)
        stages.append(method)
        return res

    history = None
    if method == "fbp":
        image = run_fbp()
    elif method == "pwls-ep":
        if args.init is not None:
            x0, _ = read_phnt(args.init)
            inputs.append(Path(args.init))
        elif args.auto_init:
            x0 = run_fbp()
        else:
            raise ConfigurationError("pwls-ep needs --init IMAGE or --auto-init")
        res = run_ep(x0)
        image, history = res.image, res.history
    else:  # pwls-st / pwls-dct
        if args.init is not None:
            x0, _ = read_phnt(args.init)
            inputs.append(Path(args.init))
        elif args.auto_init:
            x0 = run_ep(run_fbp()).image
        else:
            raise ConfigurationError(f"{method} needs --init IMAGE or --auto-init")
        res = run_st(x0)
        image, history = res.image, res.history

    img_path = out / f"recon_{method}.phnt"
    write_phnt(img_path, image, geo.pixel_size)
    outputs.append(img_path)

    if history is not None:
        hist_path = out / f"history_{method}.csv"
        with open(hist_path, "w", encoding="utf-8") as fh:
            fh.write(cost_history_csv(history))
        outputs.append(hist_path)

        from .figures import save_cost_curves

        curve_path = out / f"cost_curve_{method}.png"
        save_cost_curves(history, curve_path)
        outputs.append(curve_path)

    if truth is not None:
        print(f"{method}: rmse = {rmse_hu(image, truth):.2f} HU")

    write_manifest(out / f"manifest_reconstruct_{method}.json", "reconstruct",
                   {"method": method, "stages": stages, "gamma": gamma,
                    "alpha": alpha, "subsets": subsets, "inner_iters": inner,
                    "outer_iters": outer, "beta": args.beta,
                    "ep_beta": ep_beta, "ep_delta": ep_delta,
                    "ep_subsets": ep_subsets, "ep_iters": ep_iters,
                    "mu_water": mu_water, "auto_init": bool(args.auto_init)},
                   {} if args.seed is None else {"seed": args.seed},
                   inputs, outputs, timings,
                   notes={"image_units": "modified HU (air 0, water 1000)"})
    print(f"wrote {img_path}")
    return 0


# ------------------------------------------------------------------- evaluate

def _parse_recon_entries(entries, default_dose):
    parsed = []
    for entry in entries:
        if "=" not in entry:
            raise ConfigurationError(f"--recon expects [dose:]method=path, got {entry!r}")
        left, path = entry.split("=", 1)
        if ":" in left:
            dose_text, method = left.split(":", 1)
            try:
                dose = float(dose_text)
            except ValueError as exc:
                raise ConfigurationError(f"--recon dose {dose_text!r} is not a number") from exc
        else:
            dose, method = default_dose, left
        if method not in _METHODS:
            raise ConfigurationError(f"--recon method must be one of {_METHODS}, got {method!r}")
        parsed.append((dose, method, Path(path)))
    return parsed


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    sec = _section(config, "evaluate")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    window = sec.get("window", list(DISPLAY_WINDOW_HU))
    if args.window is not None:
        try:
            window = [float(v) for v in args.window.split(",")]
        except ValueError as exc:
            raise ConfigurationError("--window expects 'lo,hi'") from exc
    if len(window) != 2:
        raise ConfigurationError("display window must be two numbers")
    window = (float(window[0]), float(window[1]))

    truth, _ = read_phnt(args.truth)
    entries = _parse_recon_entries(args.recon or [], float(args.dose))
    if not entries:
        raise ConfigurationError("at least one --recon method=path is required")

    inputs = [Path(args.truth)] + [p for _, _, p in entries]
    outputs = []
    reports = []
    images = {}
    for dose, method, path in entries:
        img, _ = read_phnt(path)
        images[method] = img
        diff = difference_image(img, truth)
        diff_path = out / f"diff_{method}.png"
        # full-range window: the brightest PNG pixel is exactly max|xhat - x*|
        write_png16(diff, diff_path, window=(0.0, max(float(diff.max()), 1e-12)))
        outputs += [diff_path, Path(str(diff_path) + ".meta.txt")]
        reports.append(EvalReport(dose=dose, method=method,
                                  rmse_hu=rmse_hu(img, truth),
                                  difference_image_path=str(diff_path)))

    csv_path = out / "report.csv"
    write_report_csv(reports, csv_path)
    outputs.append(csv_path)
    md_path = out / "report.md"
    md_path.write_text(emit_comparison_table(reports, fmt="markdown"), encoding="utf-8")
    outputs.append(md_path)

    from .figures import save_comparison_figure

    fig_path = out / "comparison.png"
    save_comparison_figure(images, truth, fig_path, window=window)
    outputs.append(fig_path)

    write_manifest(out / "manifest_evaluate.json", "evaluate",
                   {"window_hu": list(window),
                    "entries": [f"{d:g}:{m}={p}" for d, m, p in entries]},
                   {}, inputs, outputs, {},
                   notes={"rmse_units": "modified HU over the full image"})
    print(emit_comparison_table(reports, fmt="markdown"))
    return 0


def cmd_verify_manifest(args) -> int:
    problems = verify_manifest(args.manifest)
    if problems:
        for p in problems:
            print(f"MISMATCH {p}", file=sys.stderr)
        return 4
    print("manifest ok")
    return 0


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lodct",
        description="Low-dose CT reconstruction toolkit (PWLS with a learned "
                    "sparsifying transform, plus FBP / PWLS-EP / PWLS-DCT baselines)")
    parser.add_argument("--version", action="version", version=f"lodct {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate noisy fan/parallel-beam sinograms")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--phantom", default=None, help="ct | shepp-logan | ct:<seed> | raster .phnt")
    p.add_argument("--fine-factor", type=int, default=None)
    p.add_argument("--i0", default=None, help="comma-separated incident photons per ray")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="learn a sparsifying transform from image patches")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lam-scale", type=float, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--slices", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--training-image", action="append", default=None,
                   help="PHNT raster; repeatable (default: built-in slice variants)")
    p.add_argument("--test-image", default=None,
                   help="designated test image; training files matching its hash are rejected")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct one sinogram with one method")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--method", required=True, choices=_METHODS)
    p.add_argument("--sino", required=True)
    p.add_argument("--geometry", default=None, help="geometry.cfg (else [geometry] from --config)")
    p.add_argument("--transform", default=None, help="STFM file (pwls-st)")
    p.add_argument("--init", default=None, help="initial image (PHNT)")
    p.add_argument("--auto-init", action="store_true",
                   help="chain fbp -> pwls-ep -> target method")
    p.add_argument("--truth", default=None, help="ground truth PHNT for the rmse column")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--ep-beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--subsets", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    p.add_argument("--outer-iters", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--truth", required=True)
    p.add_argument("--recon", action="append", default=None,
                   metavar="[DOSE:]METHOD=PATH", help="repeatable")
    p.add_argument("--dose", default="0", help="dose label for entries without one")
    p.add_argument("--window", default=None, help="display window 'lo,hi' in HU")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-manifest", help="recompute and check manifest hashes")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_verify_manifest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"solver divergence: {exc}", file=sys.stderr)
        return 3
    except (FileFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except LodctError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
