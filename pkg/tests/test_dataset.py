import os
from pathlib import Path

import pytest

from grainpipe.dataset import (
    MODALITIES,
    PUBLISHED,
    SESSIONS,
    KernelRecord,
    parse_archive_layout,
    summarize,
    validate_dataset,
    validate_records,
)


def write_archive(root: Path, plan: dict, labels: dict) -> None:
    """``plan``: variety -> list of kernels per dish; ``labels``: (variety, dish, kernel) -> first day."""
    rows = ["variety,dish,kernel,day,germinated"]
    for variety, dishes in plan.items():
        for d, n in enumerate(dishes):
            for k in range(n):
                kdir = root / variety / f"dish{d:02d}" / f"k{k:02d}"
                kdir.mkdir(parents=True)
                for s in SESSIONS:
                    for m in MODALITIES:
                        (kdir / f"day{s}_{m}.cube.json").write_text("{}")
                first = labels.get((variety, f"dish{d:02d}", f"k{k:02d}"))
                for day in range(1, 6):
                    g = int(first is not None and day >= first)
                    rows.append(f"{variety},dish{d:02d},k{k:02d},{day},{g}")
    (root / "labels.csv").write_text("\n".join(rows) + "\n")


@pytest.fixture
def mini(tmp_path):
    plan = {"A": [3, 2], "B": [4]}
    labels = {("A", "dish00", "k01"): 2, ("B", "dish00", "k03"): 5, ("B", "dish00", "k00"): 2}
    write_archive(tmp_path, plan, labels)
    expected = {
        "kernels": 9,
        "dishes": 3,
        "kernels_per_variety": {"A": 5, "B": 4},
        "germinated_per_day": {1: 0, 2: 2, 3: 0, 4: 0, 5: 1},
        "germinated_per_variety": {"A": 1, "B": 2},
        "germinated_any": 3,
    }
    return tmp_path, expected


def test_mini_archive_passes(mini):
    root, expected = mini
    report = validate_dataset(root, expected)
    assert report.ok, report.discrepancies


def test_missing_day_file_flagged(mini):
    root, expected = mini
    (root / "A" / "dish01" / "k00" / "day3_hsi.cube.json").unlink()
    report = validate_dataset(root, expected)
    assert report.discrepancies == ["A/dish01/k00: missing day3_hsi"]


def test_count_mismatch_itemized(mini):
    root, expected = mini
    report = validate_dataset(root, dict(expected, kernels=10, germinated_per_day={2: 3}))
    assert "kernels: expected 10, found 9" in report.discrepancies
    assert "germinated_per_day[2]: expected 3, found 2" in report.discrepancies


def test_label_reversal_flagged():
    rec = KernelRecord("A", "d", "k", {(s, m): Path("x") for s in SESSIONS for m in MODALITIES}, {2: True, 3: False})
    assert any("reverts" in d for d in validate_records([rec], None).discrepancies)


def test_published_totals():
    assert sum(PUBLISHED["kernels_per_variety"].values()) == PUBLISHED["kernels"] == 2242
    assert sum(PUBLISHED["dishes_per_variety"].values()) == PUBLISHED["dishes"] == 90
    assert list(PUBLISHED["germinated_per_day"].values()) == [28, 93, 106, 88, 67]
    assert sum(PUBLISHED["germinated_per_day"].values()) == PUBLISHED["germinated_any"] == 382
    # the published day-1 total is one above its per-variety entries
    assert sum(PUBLISHED["germinated_per_variety"].values()) == 381


def test_records_matching_published_counts():
    full = {(s, m): Path("x") for s in SESSIONS for m in MODALITIES}
    records = []
    per_day = {**PUBLISHED["germinated_per_day"], 1: 27}
    days = [d for d, n in per_day.items() for _ in range(n)]
    germ_left = dict(PUBLISHED["germinated_per_variety"])
    for variety, n_dishes in PUBLISHED["dishes_per_variety"].items():
        n_kernels = PUBLISHED["kernels_per_variety"][variety]
        for k in range(n_kernels):
            labels = {}
            if germ_left[variety] > 0:
                germ_left[variety] -= 1
                first = days.pop()
                labels = {d: d >= first for d in range(1, 6)}
            records.append(KernelRecord(variety, f"dish{k % n_dishes:02d}", f"k{k:03d}", full, labels))
    assert summarize(records)["kernels"] == 2242
    assert validate_records(records).discrepancies == [
        "germinated_per_day[1]: expected 28, found 27",
        "germinated_any: expected 382, found 381",
    ]
    consistent = dict(PUBLISHED, germinated_per_day=per_day, germinated_any=381)
    assert validate_records(records, consistent).ok


@pytest.mark.skipif(not os.environ.get("GRAINPIPE_DATASET"), reason="published archive not downloaded")
def test_published_archive():
    keys = ("kernels", "dishes", "germinated_per_day", "germinated_any")
    report = validate_dataset(os.environ["GRAINPIPE_DATASET"], {k: PUBLISHED[k] for k in keys})
    assert report.ok, report.discrepancies[:20]


def test_layout_ignores_foreign_files(mini):
    root, _ = mini
    (root / "A" / "dish00" / "k00" / "notes.txt").write_text("x")
    recs = parse_archive_layout(root)
    assert len(recs) == 9
    assert len(recs[0].files) == 12
