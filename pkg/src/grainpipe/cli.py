"""``grainpipe`` command line.

Exit codes: 0 success, 1 some items failed, 2 invalid invocation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import dump_config, load_config
from .dataset import PUBLISHED, validate_dataset
from .errors import GrainpipeError
from .gridfind import GridModel
from .manifest import ManifestError, load_manifest
from .pipeline import (
    cell_stem,
    detect_reference_grid,
    extract_cells,
    localize_session,
    run_manifest,
    segment_cell_file,
    spectrum_for_cell,
    standardize_frame,
    write_json,
)
from .pixcodec import convert_file, read_cube

log = logging.getLogger("grainpipe")

OK, ITEM_FAILURES, BAD_INVOCATION = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or missing inputs."""


def _need(path) -> Path:
    p = Path(path)
    probe = p if p.exists() else p.with_name(p.name + ".cube.json")
    if not probe.exists():
        raise UsageError(f"no such file: {p}")
    return p


def cmd_convert(args, cfg) -> int:
    convert_file(_need(args.src), args.dst, args.to)
    return OK


def cmd_synth(args, cfg) -> int:
    from .synthscene import SceneSpec, dish_affine
    from .synthset import write_scene, write_synthetic_dataset

    seed = cfg["seed"]
    if args.dataset:
        days = range(args.days) if args.days else range(6)
        path = write_synthetic_dataset(args.out, args.dataset, days, seed, args.channels)
        print(path)
        return OK
    if args.spec:
        spec = SceneSpec.from_dict(json.loads(_need(args.spec).read_text()))
    else:
        spec = SceneSpec.random(seed, channels=args.channels)
    if args.day is None:
        paths = write_scene(spec, args.out)
    else:
        rot, tx, ty = args.motion
        paths = write_scene(spec, args.out, args.day, dish_affine(spec, rot, (tx, ty)), tuple(args.modalities))
    for p in paths.values():
        print(p)
    return OK


def cmd_detect_grid(args, cfg) -> int:
    grid = detect_reference_grid(_need(args.frame), cfg, args.dish_id, args.markers_file)
    grid.save(args.out)
    return OK


def cmd_localize(args, cfg) -> int:
    if args.hsi and not args.dark:
        raise UsageError("an HSI frame needs its dark frame (--dark)")
    grid = GridModel.load(_need(args.grid))
    rgb_grid, _, hsi_grid, _ = localize_session(
        grid, _need(args.rgb), cfg,
        _need(args.hsi) if args.hsi else None,
        _need(args.dark) if args.dark else None,
        args.markers_file,
    )
    out = Path(args.out)
    rgb_grid.save(out / "grid_rgb.json")
    if hsi_grid is not None:
        hsi_grid.save(out / "grid_hsi.json")
    return OK


def cmd_extract(args, cfg) -> int:
    grid = GridModel.load(_need(args.grid))
    cube = read_cube(_need(args.frame))
    std = standardize_frame(cube, cfg, _need(args.dark) if args.dark else None)
    prov = {"dish": grid.dish_id, "day": args.day, "seed": cfg["seed"], "modality": cube.modality}
    for p in extract_cells(std.plate, grid, args.out, cube.modality, prov):
        print(p)
    return OK


def _each_cell(paths, fn) -> int:
    status = OK
    for p in paths:
        _need(p)
        try:
            fn(cell_stem(p))
        except GrainpipeError as exc:
            log.error("%s: %s", p, exc)
            status = ITEM_FAILURES
    return status


def cmd_segment(args, cfg) -> int:
    return _each_cell(args.cells, lambda p: print(segment_cell_file(p, args.out)[0]))


def cmd_spectra(args, cfg) -> int:
    def one(p):
        if args.masks:
            mask = read_cube(_need(Path(args.masks) / (p.name + ".mask"))).data[:, :, 0] > 0
        else:
            _, mask = segment_cell_file(p, Path(args.out) / "masks")
        print(spectrum_for_cell(p, mask, args.out, cfg, args.dish, args.day)[0])

    return _each_cell(args.cells, one)


def cmd_run(args, cfg) -> int:
    try:
        manifest = load_manifest(_need(args.manifest))
    except ManifestError as exc:
        raise UsageError(str(exc)) from exc
    if manifest.seed is not None and not args.keep_config_seed:
        cfg = dict(cfg, seed=manifest.seed)
    summary = run_manifest(manifest, args.out, cfg)
    for r in summary["dishes"]:
        line = f"{r['dish']}: {r['status']}"
        if r["status"] != "ok":
            line += f" ({r['error']})"
        elif r["failures"]:
            line += f", {len(r['failures'])} cell failures"
        print(line)
    return ITEM_FAILURES if summary["failed_dishes"] or summary["failed_items"] else OK


def cmd_validate_dataset(args, cfg) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise UsageError(f"no such directory: {root}")
    expected = json.loads(_need(args.expected).read_text()) if args.expected else PUBLISHED
    report = validate_dataset(root, expected)
    doc = report.to_dict()
    if args.report:
        write_json(args.report, doc)
    print(json.dumps(doc, indent=1, sort_keys=True))
    return OK if report.ok else ITEM_FAILURES


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file layered over the defaults")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. grid.rho_tol=8 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="grainpipe", description="Barley kernel tracking pipeline.")
    ap.add_argument("--version", action="version", version=f"grainpipe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="repack a cube or raw sample stream")
    p.add_argument("--to", choices=("u16", "mono12p"), required=True)
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", parents=[common], help="render synthetic frames with ground truth")
    p.add_argument("--spec", help="scene spec JSON; random from the seed when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--day", type=int, help="render a black-paper session frame for this day")
    p.add_argument("--motion", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("DEG", "TX", "TY"),
                   help="dish rotation and translation for --day")
    p.add_argument("--modalities", nargs="+", choices=("RGB", "HSI"), default=["RGB", "HSI"])
    p.add_argument("--dataset", type=int, metavar="N", help="write N dishes and a manifest instead")
    p.add_argument("--days", type=int, help="sessions per dish with --dataset (default 6)")
    p.add_argument("--channels", type=int, default=40)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect-grid", parents=[common], help="detect the grid on a reference RGB frame")
    p.add_argument("frame")
    p.add_argument("--out", required=True)
    p.add_argument("--dish-id", default="")
    p.add_argument("--markers-file")
    p.set_defaults(func=cmd_detect_grid)

    p = sub.add_parser("localize", parents=[common], help="carry a grid into a session's frames")
    p.add_argument("--grid", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--hsi")
    p.add_argument("--dark")
    p.add_argument("--markers-file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("extract", parents=[common], help="cut the 25 cells out of a frame")
    p.add_argument("--grid", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--dark")
    p.add_argument("--day", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("segment", parents=[common], help="kernel masks for cell files")
    p.add_argument("cells", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("spectra", parents=[common], help="mean pseudo-absorbance spectra for HSI cells")
    p.add_argument("cells", nargs="+")
    p.add_argument("--masks", help="directory of masks from 'segment'; segment afresh when omitted")
    p.add_argument("--dish", default="")
    p.add_argument("--day", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("run", parents=[common], help="whole chain for every dish of a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-config-seed", action="store_true", help="ignore the manifest's seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-dataset", parents=[common], help="check counts of a downloaded dataset")
    p.add_argument("root")
    p.add_argument("--expected", help="JSON of expected counts (default: published totals)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_validate_dataset)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"grainpipe: bad configuration: {exc}", file=sys.stderr)
        return BAD_INVOCATION
    log.debug("config:\n%s", dump_config(cfg))
    try:
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"grainpipe: {exc}", file=sys.stderr)
        return BAD_INVOCATION
    except GrainpipeError as exc:
        print(f"grainpipe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ITEM_FAILURES


if __name__ == "__main__":
    sys.exit(main())
