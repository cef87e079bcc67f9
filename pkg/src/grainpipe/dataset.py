"""Consistency checks for a downloaded kernel dataset.

The archive layout is read by :func:`parse_archive_layout` alone; everything
else works on the records it returns, so adapting to a different layout
means rewriting that one function.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

SESSIONS = tuple(range(6))
MODALITIES = ("rgb", "hsi")

# Counts as published.  The per-variety day-1 entries (4, 1, 13, 9) sum to 27
# while the day-1 total reads 28, so an archive matching the per-variety
# figures reports exactly two discrepancies: day 1 and the overall total.
PUBLISHED = {
    "kernels": 2242,
    "dishes": 90,
    "kernels_per_variety": {"Prospect_0": 624, "Prospect_1": 394, "Laureate_0": 624, "Laureate_1": 600},
    "dishes_per_variety": {"Prospect_0": 25, "Prospect_1": 16, "Laureate_0": 25, "Laureate_1": 24},
    "germinated_per_day": {1: 28, 2: 93, 3: 106, 4: 88, 5: 67},
    "germinated_per_variety": {"Prospect_0": 83, "Prospect_1": 5, "Laureate_0": 91, "Laureate_1": 202},
    "germinated_any": 382,
}


@dataclass
class KernelRecord:
    variety: str
    dish: str
    kernel: str
    files: dict[tuple[int, str], Path] = field(default_factory=dict)  # (session, modality) -> file
    labels: dict[int, bool] = field(default_factory=dict)

    @property
    def germination_day(self) -> int | None:
        days = [d for d, g in sorted(self.labels.items()) if g]
        return days[0] if days else None


def parse_archive_layout(root) -> list[KernelRecord]:
    """Read ``<root>/<variety>/<dish>/<kernel>/day<d>_<rgb|hsi>.*`` and ``<root>/labels.csv``.

    ``labels.csv`` has columns ``variety,dish,kernel,day,germinated`` with
    ``germinated`` in {0, 1}.  Files that do not match the naming are ignored.
    """
    root = Path(root)
    records: dict[tuple[str, str, str], KernelRecord] = {}
    for kdir in sorted(p for p in root.glob("*/*/*") if p.is_dir()):
        variety, dish, kernel = kdir.relative_to(root).parts
        rec = records.setdefault((variety, dish, kernel), KernelRecord(variety, dish, kernel))
        for f in sorted(kdir.iterdir()):
            stem = f.name.split(".", 1)[0]
            day, _, modality = stem.partition("_")
            if day.startswith("day") and day[3:].isdigit() and modality in MODALITIES:
                rec.files.setdefault((int(day[3:]), modality), f)
    labels = root / "labels.csv"
    if labels.exists():
        with labels.open(newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["variety"], row["dish"], row["kernel"])
                rec = records.setdefault(key, KernelRecord(*key))
                rec.labels[int(row["day"])] = row["germinated"].strip() in ("1", "true", "True")
    return [records[k] for k in sorted(records)]


@dataclass
class ValidationReport:
    counts: dict
    discrepancies: list[str]

    @property
    def ok(self) -> bool:
        return not self.discrepancies

    def to_dict(self) -> dict:
        return {"ok": self.ok, "counts": self.counts, "discrepancies": self.discrepancies}


def summarize(records: list[KernelRecord]) -> dict:
    per_variety = Counter(r.variety for r in records)
    dishes = {(r.variety, r.dish) for r in records}
    first = Counter(r.germination_day for r in records if r.germination_day is not None)
    germ_var = Counter(r.variety for r in records if r.germination_day is not None)
    dish_var = Counter(v for v, _ in dishes)
    return {
        "kernels": len(records),
        "dishes": len(dishes),
        "kernels_per_variety": dict(sorted(per_variety.items())),
        "dishes_per_variety": dict(sorted(dish_var.items())),
        "germinated_per_day": {d: first.get(d, 0) for d in range(1, 6)},
        "germinated_per_variety": dict(sorted(germ_var.items())),
        "germinated_any": sum(first.values()),
    }


def validate_records(records: list[KernelRecord], expected: dict | None = PUBLISHED) -> ValidationReport:
    """Compare counts with ``expected`` and check each kernel's files and labels."""
    counts = summarize(records)
    issues = []
    if expected:
        for key, want in expected.items():
            got = counts.get(key)
            if isinstance(want, dict):
                for k, v in want.items():
                    g = (got or {}).get(k, 0)
                    if g != v:
                        issues.append(f"{key}[{k}]: expected {v}, found {g}")
            elif got != want:
                issues.append(f"{key}: expected {want}, found {got}")
    missing = defaultdict(list)
    for r in records:
        for s in SESSIONS:
            for m in MODALITIES:
                if (s, m) not in r.files:
                    missing[f"{r.variety}/{r.dish}/{r.kernel}"].append(f"day{s}_{m}")
        if r.labels.get(0):
            issues.append(f"{r.variety}/{r.dish}/{r.kernel}: germinated before moisture")
        seen = False
        for d in sorted(r.labels):
            if seen and not r.labels[d]:
                issues.append(f"{r.variety}/{r.dish}/{r.kernel}: label reverts on day {d}")
                break
            seen = seen or r.labels[d]
    for kernel, files in sorted(missing.items()):
        issues.append(f"{kernel}: missing {', '.join(files)}")
    return ValidationReport(counts, issues)


def validate_dataset(root, expected: dict | None = PUBLISHED) -> ValidationReport:
    return validate_records(parse_archive_layout(root), expected)
