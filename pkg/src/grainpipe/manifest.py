"""Session manifests: which frames belong to which dish and day.

A manifest is a JSON document::

    {"dishes": [{"dish_id": "dish01", "variety": "V1",
                 "reference": {"rgb_frame": "ref.cube.json", "grid_file": null},
                 "days": [{"day": 0, "rgb_frame": "...", "hsi_frame": "...", "dark_frame": "..."}],
                 "germination": {"2,3": {"1": false, "2": true}}}]}

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GrainpipeError

DAYS = range(0, 6)
LABEL_DAYS = range(1, 6)
CELLS_PER_SIDE = 5


class ManifestError(GrainpipeError):
    pass


@dataclass
class DayEntry:
    day: int
    rgb_frame: Path | None = None
    hsi_frame: Path | None = None
    dark_frame: Path | None = None
    grid_file: Path | None = None
    markers_file: Path | None = None


@dataclass
class DishEntry:
    dish_id: str
    variety: str = ""
    reference_frame: Path | None = None
    reference_grid: Path | None = None
    reference_markers: Path | None = None
    days: list[DayEntry] = field(default_factory=list)
    germination: dict[tuple[int, int], dict[int, bool]] = field(default_factory=dict)

    def germinated_by(self, cell, day: int) -> bool | None:
        labels = self.germination.get(tuple(cell))
        if not labels:
            return None
        return labels.get(day)


@dataclass
class SessionManifest:
    dishes: list[DishEntry]
    root: Path = Path(".")
    seed: int | None = None

    def dish(self, dish_id: str) -> DishEntry:
        for d in self.dishes:
            if d.dish_id == dish_id:
                return d
        raise KeyError(dish_id)


def _path(root: Path, value) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else root / p


def _parse_cell(key: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in key.split(","))
    except ValueError:
        raise ManifestError(f"cell key {key!r} is not 'i,j'") from None
    if not (0 <= i < CELLS_PER_SIDE and 0 <= j < CELLS_PER_SIDE):
        raise ManifestError(f"cell {key!r} outside the {CELLS_PER_SIDE}x{CELLS_PER_SIDE} grid")
    return i, j


def check_labels(labels: dict[int, bool], where: str = "") -> None:
    """Label days lie in 1..5 and a germinated kernel stays germinated."""
    bad = sorted(set(labels) - set(LABEL_DAYS))
    if bad:
        raise ManifestError(f"{where}: label days {bad} outside {LABEL_DAYS.start}..{LABEL_DAYS.stop - 1}")
    seen = False
    for day in sorted(labels):
        if seen and not labels[day]:
            raise ManifestError(f"{where}: germination label reverts on day {day}")
        seen = seen or bool(labels[day])


def parse_manifest(doc: dict, root: Path = Path(".")) -> SessionManifest:
    if not isinstance(doc, dict) or not isinstance(doc.get("dishes"), list):
        raise ManifestError("manifest needs a 'dishes' list")
    dishes, ids = [], set()
    for raw in doc["dishes"]:
        dish_id = str(raw.get("dish_id", ""))
        if not dish_id or dish_id in ids or "/" in dish_id:
            raise ManifestError(f"missing, duplicate or invalid dish_id {dish_id!r}")
        ids.add(dish_id)
        ref = raw.get("reference") or {}
        days, seen = [], set()
        for d in raw.get("days", []):
            day = int(d["day"])
            if day not in DAYS or day in seen:
                raise ManifestError(f"{dish_id}: bad or repeated day {day}")
            seen.add(day)
            days.append(
                DayEntry(
                    day,
                    *(_path(root, d.get(k)) for k in ("rgb_frame", "hsi_frame", "dark_frame", "grid_file", "markers_file")),
                )
            )
        germ = {}
        for key, labels in (raw.get("germination") or {}).items():
            cell = _parse_cell(key)
            lab = {int(k): bool(v) for k, v in labels.items()}
            check_labels(lab, f"{dish_id} cell {key}")
            germ[cell] = lab
        dishes.append(
            DishEntry(
                dish_id,
                str(raw.get("variety", "")),
                _path(root, ref.get("rgb_frame")),
                _path(root, ref.get("grid_file")),
                _path(root, ref.get("markers_file")),
                sorted(days, key=lambda e: e.day),
                germ,
            )
        )
    seed = doc.get("seed")
    return SessionManifest(dishes, root, None if seed is None else int(seed))


def load_manifest(path) -> SessionManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(doc, path.parent)


def manifest_to_dict(m: SessionManifest) -> dict:
    def rel(p):
        if p is None:
            return None
        try:
            return p.relative_to(m.root).as_posix()
        except ValueError:
            return p.as_posix()

    dishes = []
    for d in m.dishes:
        dishes.append(
            {
                "dish_id": d.dish_id,
                "variety": d.variety,
                "reference": {"rgb_frame": rel(d.reference_frame), "grid_file": rel(d.reference_grid),
                              "markers_file": rel(d.reference_markers)},
                "days": [
                    {"day": e.day, "rgb_frame": rel(e.rgb_frame), "hsi_frame": rel(e.hsi_frame),
                     "dark_frame": rel(e.dark_frame), "grid_file": rel(e.grid_file),
                     "markers_file": rel(e.markers_file)}
                    for e in d.days
                ],
                "germination": {f"{i},{j}": {str(k): v for k, v in sorted(lab.items())}
                                for (i, j), lab in sorted(d.germination.items())},
            }
        )
    out = {"dishes": dishes}
    if m.seed is not None:
        out["seed"] = m.seed
    return out
