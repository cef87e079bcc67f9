"""Write synthetic frames and whole synthetic datasets to disk."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .manifest import LABEL_DAYS
from .pixcodec import write_cube
from .synthscene import SceneSpec, dish_affine, render_dark, render_reference, render_session


def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_scene(spec: SceneSpec, out_dir, day: int | None = None, affine=None, modalities=("RGB",)) -> dict:
    """Render a reference (``day=None``) or session frame set into ``out_dir``.

    Each frame becomes ``<name>.cube.json`` plus payload and a
    ``<name>.truth.json`` ground-truth file.  Returns ``{modality: header path}``
    plus ``"dark"`` when an HSI frame was written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump(out_dir / "spec.json", spec.to_dict())
    if day is None:
        frames = {spec.modality: render_reference(spec)}
        tag = "reference"
    else:
        frames = render_session(spec, day, affine, modalities)
        tag = f"day{day}"
    paths = {}
    for modality, (cube, truth) in frames.items():
        name = f"{tag}_{modality.lower()}"
        paths[modality] = write_cube(cube, out_dir / name)
        _dump(out_dir / f"{name}.truth.json", truth.to_json())
    if "HSI" in frames:
        paths["dark"] = write_cube(render_dark(spec), out_dir / f"{tag}_dark")
    return paths


def synthetic_labels(seed: int, cells: int = 5, rate: float = 0.3) -> dict[str, int]:
    """Sprout day per germinating cell, ``"i,j" -> day``."""
    rng = np.random.default_rng([seed, 5150])
    out = {}
    for i in range(cells):
        for j in range(cells):
            if rng.random() < rate:
                out[f"{i},{j}"] = int(rng.integers(LABEL_DAYS.start, LABEL_DAYS.stop))
    return out


def write_synthetic_dataset(out_dir, dishes: int = 2, days=range(6), seed: int = 0, channels: int = 40) -> Path:
    """Render ``dishes`` dishes over ``days`` with a manifest; returns the manifest path.

    Every dish gets a white-paper reference frame plus, per day, an RGB and
    an HSI frame with their dark frame.  The dish moves by a small random
    rigid motion each day; labels follow the rendered sprouts.
    """
    out_dir = Path(out_dir)
    entries = []
    for k in range(dishes):
        dish_seed = seed * 1000 + k
        sprouts = synthetic_labels(dish_seed)
        spec = SceneSpec.random(dish_seed, kernels=True, channels=channels, sprout_days=sprouts)
        dish_id = f"dish{k + 1:02d}"
        ddir = out_dir / dish_id
        ref = write_scene(spec, ddir)
        rng = np.random.default_rng([dish_seed, 2718])
        day_entries = []
        for day in days:
            aff = dish_affine(spec, rng.uniform(-10, 10), rng.uniform(-8, 8, 2))
            paths = write_scene(spec, ddir, day, aff, ("RGB", "HSI"))
            day_entries.append(
                {
                    "day": day,
                    "rgb_frame": paths["RGB"].relative_to(out_dir).as_posix(),
                    "hsi_frame": paths["HSI"].relative_to(out_dir).as_posix(),
                    "dark_frame": paths["dark"].relative_to(out_dir).as_posix(),
                }
            )
        germ = {}
        for i in range(5):
            for j in range(5):
                first = sprouts.get(f"{i},{j}")
                germ[f"{i},{j}"] = {str(d): first is not None and d >= first for d in LABEL_DAYS}
        entries.append(
            {
                "dish_id": dish_id,
                "variety": f"V{k % 4 + 1}",
                "reference": {"rgb_frame": ref["RGB"].relative_to(out_dir).as_posix()},
                "days": day_entries,
                "germination": germ,
            }
        )
    path = out_dir / "manifest.json"
    _dump(path, {"seed": seed, "dishes": entries})
    return path
