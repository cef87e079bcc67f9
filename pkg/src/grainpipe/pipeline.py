"""Stage drivers shared by the command line and batch runs.

Every function here takes explicit paths and a config dict and writes
deterministic files: JSON with sorted keys, no timestamps, no absolute paths.
"""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import dump_config
from .errors import GrainpipeError
from .fiducial import detect_markers, load_marker_file
from .gridfind import GridModel, detect_grid
from .gridtrack import extract_all_cells, load_cell, localize_hsi, localize_rgb, save_cell
from .kernelproc import mean_pseudo_absorbance, segment_kernel
from .manifest import DishEntry, SessionManifest, manifest_to_dict
from .pixcodec import ImageCube, read_cube, write_cube
from .standardize import Standardized, standardize

log = logging.getLogger(__name__)

LINE_KEYS = ("dish_fraction", "marker_grow", "vote_fraction", "rho_tol", "theta_tol_deg")


def write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def standardize_frame(frame, cfg: dict, dark=None) -> Standardized:
    cube = frame if isinstance(frame, ImageCube) else read_cube(frame)
    if dark is not None and not isinstance(dark, ImageCube):
        dark = read_cube(dark)
    s = cfg["standardize"]
    return standardize(cube, dark, pattern=s["chessboard_pattern"], clamp=s["clamp"])


def _markers(plate, cfg: dict, markers_file=None):
    if markers_file is not None:
        return load_marker_file(markers_file)
    m = cfg["markers"]
    return detect_markers(plate, window=m["window"], min_contrast=m["min_contrast"], min_area=m["min_area"])


def _plate_meta(std: Standardized) -> dict:
    p = std.plate
    return {"crop_origin": list(p.crop_origin), "x_scale": p.x_scale, "size_factor": p.size_factor}


def detect_reference_grid(frame, cfg: dict, dish_id: str = "", markers_file=None) -> GridModel:
    """Standardize a white-paper RGB frame and detect its grid."""
    std = standardize_frame(frame, cfg)
    markers = _markers(std.plate, cfg, markers_file)
    g = cfg["grid"]
    grid = detect_grid(
        std.plate,
        markers,
        np.array([b.center for b in std.boards]),
        dish_id=dish_id,
        refine=g["refine_points"],
        min_angle_deg=g["min_angle_deg"],
        dish_band=g["dish_band"],
        line_options={k: g[k] for k in LINE_KEYS},
    )
    grid.meta["plate"] = _plate_meta(std)
    grid.meta["config"] = cfg
    return grid


def localize_session(grid: GridModel, rgb_frame, cfg: dict, hsi_frame=None, dark_frame=None, markers_file=None):
    """Day grids for an RGB frame and optionally its concurrent HSI frame.

    Returns ``(rgb_grid, rgb_std, hsi_grid, hsi_std)``; the HSI pair is
    ``None`` without an HSI frame.
    """
    tol = cfg["tracking"]["inlier_tol_px"]
    rgb = standardize_frame(rgb_frame, cfg)
    markers = _markers(rgb.plate, cfg, markers_file)
    loc = localize_rgb(grid, markers=markers, inlier_tol_px=tol, seed=cfg["seed"])
    rgb_grid = loc.grid
    rgb_grid.chessboard_centers = np.array([b.center for b in rgb.boards])
    rgb_grid.meta["plate"] = _plate_meta(rgb)
    rgb_grid.meta["config"] = cfg
    if hsi_frame is None:
        return rgb_grid, rgb, None, None
    hsi = standardize_frame(hsi_frame, cfg, dark_frame)
    hl = localize_hsi(rgb_grid, rgb.boards, hsi_boards=hsi.boards, inlier_tol_px=tol, seed=cfg["seed"])
    hl.grid.meta["plate"] = _plate_meta(hsi)
    return rgb_grid, rgb, hl.grid, hsi


def cell_name(cell) -> str:
    return f"cell_{cell[0]}_{cell[1]}"


def extract_cells(plate, grid: GridModel, out_dir, modality: str, provenance: dict) -> list[Path]:
    """All 25 cells of ``grid`` on ``plate`` as cube files under ``out_dir``."""
    out_dir = Path(out_dir)
    paths = []
    bit_depth = 12 if modality == "HSI" else 8
    for cell in extract_all_cells(plate, grid):
        path = out_dir / cell_name(cell.cell)
        save_cell(cell, path, modality, bit_depth, dict(provenance, cell=list(cell.cell)))
        paths.append(path)
    return paths


def cell_stem(path) -> Path:
    path = Path(path)
    if path.name.endswith(".cube.json"):
        return path.with_name(path.name[: -len(".cube.json")])
    return path


def segment_cell_file(path, out_dir) -> tuple[Path, np.ndarray]:
    """Mask of one saved cell, written as an 8-bit single-channel cube."""
    cell, side = load_cell(path)
    mask = segment_kernel(cell)
    out = Path(out_dir) / (cell_stem(path).name + ".mask")
    write_cube(ImageCube(mask.astype(np.uint8)[:, :, None], "RGB", 8, meta={"cell": side["cell"]}), out)
    return out, mask


def spectrum_for_cell(path, mask, out_dir, cfg: dict, dish: str = "", day=None):
    cell, side = load_cell(path)
    s = cfg["spectra"]
    spec = mean_pseudo_absorbance(
        cell.data, mask, trim=s["trim"], natural_log=s["natural_log"],
        clip_reflectance=s["clip_reflectance"], band=tuple(s["band_nm"]),
    )
    out = Path(out_dir) / (cell_stem(path).name + ".csv")
    spec.save(out, dish=dish, day=day, cell=side["cell"])
    return out, spec


# ----------------------------------------------------------------- batch run


def _segment_and_spectra(cells: list[Path], day_dir: Path, modality: str, cfg: dict, dish: str, day: int, failures):
    mask_dir = day_dir / "masks" / modality.lower()
    spec_dir = day_dir / "spectra"
    for path in cells:
        try:
            _, mask = segment_cell_file(path, mask_dir)
            if modality == "HSI":
                spectrum_for_cell(path, mask, spec_dir, cfg, dish, day)
        except GrainpipeError as exc:
            failures.append({"dish": dish, "day": day, "modality": modality, "cell": cell_stem(path).name,
                             "error": type(exc).__name__, "message": str(exc)})


def process_dish(dish: DishEntry, out_root, cfg: dict) -> dict:
    """Whole chain for one dish; failures of single cells are listed, others abort the dish."""
    out = Path(out_root) / dish.dish_id
    report = {"dish": dish.dish_id, "status": "ok", "failures": [], "days": []}
    try:
        if dish.reference_grid is not None:
            grid = GridModel.load(dish.reference_grid)
        elif dish.reference_frame is not None:
            grid = detect_reference_grid(dish.reference_frame, cfg, dish.dish_id, dish.reference_markers)
        else:
            raise GrainpipeError("dish has neither a reference frame nor a grid file")
        grid.dish_id = dish.dish_id
        grid.save(out / "grid.json")
        for entry in dish.days:
            day_dir = out / f"day{entry.day}"
            prov = {"dish": dish.dish_id, "day": entry.day, "seed": cfg["seed"]}
            if entry.rgb_frame is None:
                raise GrainpipeError(f"day {entry.day} has no RGB frame")
            if entry.grid_file is not None:
                rgb_grid, hsi_grid = GridModel.load(entry.grid_file), None
                rgb_std, hsi_std = standardize_frame(entry.rgb_frame, cfg), None
            else:
                rgb_grid, rgb_std, hsi_grid, hsi_std = localize_session(
                    grid, entry.rgb_frame, cfg, entry.hsi_frame, entry.dark_frame, entry.markers_file
                )
            rgb_grid.save(day_dir / "grid_rgb.json")
            cells = extract_cells(rgb_std.plate, rgb_grid, day_dir / "cells" / "rgb", "RGB", dict(prov, modality="RGB"))
            _segment_and_spectra(cells, day_dir, "RGB", cfg, dish.dish_id, entry.day, report["failures"])
            if hsi_grid is not None:
                hsi_grid.save(day_dir / "grid_hsi.json")
                cells = extract_cells(hsi_std.plate, hsi_grid, day_dir / "cells" / "hsi", "HSI",
                                      dict(prov, modality="HSI"))
                _segment_and_spectra(cells, day_dir, "HSI", cfg, dish.dish_id, entry.day, report["failures"])
            report["days"].append(entry.day)
        labels = {f"{i},{j}": {str(d): v for d, v in sorted(lab.items())} for (i, j), lab in sorted(dish.germination.items())}
        write_json(out / "labels.json", {"dish": dish.dish_id, "variety": dish.variety, "germination": labels})
    except (GrainpipeError, OSError, ValueError, KeyError) as exc:
        # the dish is quarantined; the batch carries on
        report["status"] = "failed"
        # keep the report independent of where the tree was written
        report["error"] = f"{type(exc).__name__}: {exc}".replace(str(Path(out_root)), "<out>")
        log.debug("dish %s failed\n%s", dish.dish_id, traceback.format_exc())
    return report


def run_manifest(manifest: SessionManifest, out_root, cfg: dict) -> dict:
    """Run every dish; the output tree depends only on the manifest and config."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.json").write_text(dump_config(cfg))
    write_json(out_root / "manifest.json", manifest_to_dict(manifest))
    workers = max(1, int(cfg.get("workers", 1)))
    if workers == 1 or len(manifest.dishes) < 2:
        reports = [process_dish(d, out_root, cfg) for d in manifest.dishes]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(process_dish, manifest.dishes, [out_root] * len(manifest.dishes),
                                    [cfg] * len(manifest.dishes)))
    summary = {
        "version": __version__,
        "seed": cfg["seed"],
        "dishes": reports,
        "failed_dishes": [r["dish"] for r in reports if r["status"] != "ok"],
        "failed_items": sum(len(r["failures"]) for r in reports),
    }
    write_json(out_root / "report.json", summary)
    return summary
