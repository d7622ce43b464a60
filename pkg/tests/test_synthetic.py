"""Generator invariants: byte determinism, manifest schema, round-trips."""

from __future__ import annotations

import csv
import filecmp
from pathlib import Path

import numpy as np
import pytest

from mammorisk.synthetic import (MANIFEST_COLUMNS, SyntheticConfig,
                                 generate_dataset, load_dataset,
                                 split_subjects)

TINY = SyntheticConfig(n_subjects=10, image_size=32, seed=123)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "tiny"
    generate_dataset(TINY, out)
    return out


def test_generation_is_byte_deterministic(tiny_dataset, tmp_path):
    again = tmp_path / "again"
    generate_dataset(TINY, again)
    first = sorted(p.relative_to(tiny_dataset)
                   for p in tiny_dataset.rglob("*") if p.is_file())
    second = sorted(p.relative_to(again)
                    for p in again.rglob("*") if p.is_file())
    assert first == second
    for rel in first:
        assert filecmp.cmp(tiny_dataset / rel, again / rel, shallow=False), rel


def test_different_seed_changes_bytes(tiny_dataset, tmp_path):
    other = tmp_path / "other"
    generate_dataset(SyntheticConfig(n_subjects=10, image_size=32, seed=124),
                     other)
    a = (tiny_dataset / "manifest.csv").read_bytes()
    b = (other / "manifest.csv").read_bytes()
    assert a != b


def test_manifest_schema(tiny_dataset):
    with open(tiny_dataset / "manifest.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert tuple(header) == MANIFEST_COLUMNS
    # one row per (subject, timestep, view)
    assert len(rows) == TINY.n_subjects * TINY.n_timesteps * 4


def test_absent_rows_have_no_image(tiny_dataset):
    with open(tiny_dataset / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if int(row["present"]):
                assert row["image_path"]
                assert (tiny_dataset / row["image_path"]).exists()
            else:
                assert row["image_path"] == ""


def test_load_round_trip(tiny_dataset):
    subjects = load_dataset(tiny_dataset)
    assert len(subjects) == TINY.n_subjects
    assert [s.subject_id for s in subjects] == sorted(s.subject_id
                                                      for s in subjects)
    for s in subjects:
        s.label.validate(TINY.horizon)
        assert 0.0 <= s.dense_area <= 1.0
        assert len(s.steps) == TINY.n_timesteps
        # the last exam is always taken
        assert s.steps[-1].present
        for step in s.steps:
            imgs = [v for v in step.views.values() if v is not None]
            if step.present:
                assert imgs, "present exam with no views"
                for img in imgs:
                    assert img.shape == (TINY.image_size, TINY.image_size)
                    assert img.dtype == np.float32
            else:
                assert not imgs
        if s.label.event_year is not None:
            assert s.label.followup_years == TINY.horizon


def test_event_subjects_gain_one_sided_signal(tiny_dataset):
    """Event subjects' last exam should diverge between sides much more
    than a healthy subject's (the planted lesion is unilateral)."""
    subjects = load_dataset(tiny_dataset)

    def lr_gap(subject):
        step = subject.steps[-1]
        gaps = []
        for lv, rv in (("LCC", "RCC"), ("LMLO", "RMLO")):
            li, ri = step.views.get(lv), step.views.get(rv)
            if li is not None and ri is not None:
                gaps.append(np.abs(li - ri[:, ::-1]).max())
        return max(gaps) if gaps else None

    events = [lr_gap(s) for s in subjects if s.label.event_year is not None]
    healthy = [lr_gap(s) for s in subjects if s.label.event_year is None]
    events = [g for g in events if g is not None]
    healthy = [g for g in healthy if g is not None]
    assert events and healthy
    assert np.median(events) > np.median(healthy)


def test_split_subjects_deterministic_and_disjoint(tiny_dataset):
    subjects = load_dataset(tiny_dataset)
    a = split_subjects(subjects, seed=9)
    b = split_subjects(subjects, seed=9)
    ids = lambda part: [s.subject_id for s in part]   # noqa: E731
    for key in ("train", "val", "test"):
        assert ids(a[key]) == ids(b[key])
    all_ids = ids(a["train"]) + ids(a["val"]) + ids(a["test"])
    assert sorted(all_ids) == sorted(s.subject_id for s in subjects)
    assert len(a["train"]) == 7 and len(a["val"]) == 2 and len(a["test"]) == 1
    # a different seed deals a different hand
    c = split_subjects(subjects, seed=10)
    assert any(ids(a[k]) != ids(c[k]) for k in ("train", "val", "test"))


def test_config_round_trips_through_json(tiny_dataset):
    import json
    cfg = SyntheticConfig.from_dict(
        json.loads((tiny_dataset / "config.json").read_text()))
    assert cfg == TINY
