"""Synthetic longitudinal screening sequences with controllable risk signal.

Each subject gets five yearly exams of four views (left/right x CC/MLO) as
small grayscale images.  The generative story mirrors what the model is
supposed to exploit:

* per-view anatomy is shared between sides (the right view is a mirror of
  the left), so a healthy pair is symmetric up to fresh per-exam texture
  noise whose amplitude grows with the subject's breast density;
* subjects headed for an event carry a one-sided focal blob, fixed in
  location, growing year over year, stronger for earlier event years;
* some healthy subjects carry stable distractors: symmetric blobs (which
  cancel in any left/right comparison) or a weak one-sided blob;
* exams can be missing entirely, and individual views can be missing
  within an otherwise present exam.  The final exam is always taken.

Labels follow the usual censoring pattern: an observed event year within
the follow-up horizon, or censoring at some year with unknown status after.
The ``dense_area`` covariate used for stratified reporting is the same
density that drives the texture amplitude.

Generation is bit-deterministic in (config, seed): per-subject generators
are spawned from one seed sequence and every random draw happens in a fixed
order regardless of which exams end up missing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from mammorisk.hazard import Label
from mammorisk.storage import read_tensor, write_tensor

VIEWS = ("LCC", "RCC", "LMLO", "RMLO")
VIEW_TYPES = ("CC", "MLO")

MANIFEST_COLUMNS = ("subject_id", "timestep", "view", "image_path",
                    "age_years", "delta_t_years", "present", "event_year",
                    "followup_years", "dense_area")


@dataclass
class SyntheticConfig:
    n_subjects: int = 500
    n_timesteps: int = 5
    horizon: int = 5
    image_size: int = 64
    seed: int = 0

    event_rate: float = 0.4
    event_year_probs: tuple[float, ...] = (0.3, 0.25, 0.2, 0.15, 0.1)
    missing_exam_prob: float = 0.25
    missing_view_prob: float = 0.05

    anatomy_amp: float = 0.5
    anatomy_sigma: float = 6.0
    texture_sigma: float = 1.5
    texture_shared_sigma: float = 2.5
    texture_amp_base: float = 0.04
    texture_amp_density: float = 0.16
    texture_shared_frac: float = 0.95
    lesion_peak: float = 1.6
    lesion_sigma: float = 2.8
    lesion_growth: float = 1.6
    benign_symmetric_prob: float = 0.3
    benign_symmetric_amp: float = 0.7
    distractor_prob: float = 0.2
    distractor_amp_range: tuple[float, float] = (0.1, 0.45)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        kwargs = dict(d)
        for key in ("event_year_probs", "distractor_amp_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class ExamStep:
    t: int
    age_years: float
    present: bool
    views: dict[str, np.ndarray | None] = field(default_factory=dict)

    def view_present(self, view: str) -> bool:
        return self.views.get(view) is not None


@dataclass
class SubjectData:
    subject_id: str
    label: Label
    dense_area: float
    steps: list[ExamStep]


def _blob(size: int, row: float, col: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - row) ** 2 + (xx - col) ** 2) / (2.0 * sigma ** 2))


def _subject_images(cfg: SyntheticConfig, rng: np.random.Generator,
                    density: float, event_year: int | None):
    """All 20 view images of one subject, plus the exam/view presence plan."""
    s = cfg.image_size
    tex_amp = cfg.texture_amp_base + cfg.texture_amp_density * density

    # anatomy per view type, shared between sides (right side mirrors it)
    anatomy = {vt: cfg.anatomy_amp
               * gaussian_filter(rng.standard_normal((s, s)), cfg.anatomy_sigma)
               for vt in VIEW_TYPES}

    # lesion (events) or optional distractor (non-events): one-sided, fixed spot
    margin = min(int(4 * cfg.lesion_sigma), s // 2 - 1)
    row = float(rng.uniform(margin, s - margin))
    col = float(rng.uniform(margin, s - margin))
    side = "L" if rng.random() < 0.5 else "R"
    blob = _blob(s, row, col, cfg.lesion_sigma)
    blob_mirror = blob[:, ::-1]

    if event_year is not None:
        severity = (cfg.horizon + 1 - event_year) / cfg.horizon
        amp_final = cfg.lesion_peak * severity
        grow = cfg.lesion_growth
    elif rng.random() < cfg.distractor_prob:
        amp_final = cfg.lesion_peak * float(rng.uniform(*cfg.distractor_amp_range))
        grow = 1.0  # benign: present but not growing
    else:
        amp_final = 0.0
        grow = 1.0

    # symmetric benign blob: appears identically on both sides, cancels in
    # a mirror comparison but perturbs every single view
    if rng.random() < cfg.benign_symmetric_prob:
        brow = float(rng.uniform(margin, s - margin))
        bcol = float(rng.uniform(margin, s - margin))
        sym = cfg.benign_symmetric_amp * _blob(s, brow, bcol, cfg.lesion_sigma)
    else:
        sym = np.zeros((s, s))
    sym_mirror = sym[:, ::-1]

    # presence plan: last exam always taken; a present exam keeps a view
    # with high probability, and never loses all four
    exam_present = [bool(rng.random() >= cfg.missing_exam_prob)
                    for _ in range(cfg.n_timesteps - 1)] + [True]
    view_present = []
    for t in range(cfg.n_timesteps):
        keep = [bool(rng.random() >= cfg.missing_view_prob) for _ in VIEWS]
        if not any(keep):
            keep = [True] * len(VIEWS)
        view_present.append(keep)

    # texture splits into a coarse component shared by both sides (mirrors
    # away in a bilateral comparison, like anatomy) and a fine independent
    # per-view residual; each filtered field is standardized so tex_amp is
    # the per-pixel std and the sqrt weights split the variance exactly
    w_shared = np.sqrt(cfg.texture_shared_frac)
    w_indep = np.sqrt(1.0 - cfg.texture_shared_frac)

    def _field(sigma: float) -> np.ndarray:
        f = gaussian_filter(rng.standard_normal((s, s)), sigma)
        return f / f.std()

    images: list[dict[str, np.ndarray]] = []
    for t in range(cfg.n_timesteps):
        amp_t = amp_final * grow ** (t - (cfg.n_timesteps - 1))
        shared_tex = {vt: _field(cfg.texture_shared_sigma)
                      for vt in VIEW_TYPES}
        exam = {}
        for view in VIEWS:
            vt = view[1:]
            mirrored = view.startswith("R")
            base = anatomy[vt][:, ::-1] if mirrored else anatomy[vt]
            shared = shared_tex[vt][:, ::-1] if mirrored else shared_tex[vt]
            indep = _field(cfg.texture_sigma)
            tex = tex_amp * (w_shared * shared + w_indep * indep)
            img = base + tex + (sym_mirror if mirrored else sym)
            if amp_final > 0.0:
                if side == "L" and not mirrored:
                    img = img + amp_t * blob
                elif side == "R" and mirrored:
                    img = img + amp_t * blob_mirror
            exam[view] = img.astype(np.float32)
        images.append(exam)
    return images, exam_present, view_present


def _subject_label(cfg: SyntheticConfig, rng: np.random.Generator) -> Label:
    if rng.random() < cfg.event_rate:
        year = 1 + int(rng.choice(cfg.horizon, p=cfg.event_year_probs))
        return Label(event_year=year, followup_years=cfg.horizon)
    return Label(event_year=None,
                 followup_years=1 + int(rng.integers(0, cfg.horizon)))


def generate_dataset(cfg: SyntheticConfig, out_dir: str | Path) -> Path:
    """Write images + manifest.csv + the echoed config; returns the directory."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_subjects)
    rows = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        sid = f"s{i:04d}"
        density = float(rng.uniform(0.0, 1.0))
        label = _subject_label(cfg, rng)
        age0 = float(rng.uniform(50.0, 65.0))
        images, exam_present, view_present = _subject_images(
            cfg, rng, density, label.event_year)

        for t in range(cfg.n_timesteps):
            for v, view in enumerate(VIEWS):
                present = exam_present[t] and view_present[t][v]
                if present:
                    rel = f"images/{sid}_t{t}_{view}.vmrt"
                    write_tensor(out_dir / rel, images[t][view])
                else:
                    rel = ""
                rows.append({
                    "subject_id": sid,
                    "timestep": t,
                    "view": view,
                    "image_path": rel,
                    "age_years": age0 + float(t),
                    "delta_t_years": 0.0 if t == 0 else 1.0,
                    "present": int(present),
                    "event_year": "" if label.event_year is None
                                  else label.event_year,
                    "followup_years": label.followup_years,
                    "dense_area": density,
                })

    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / "config.json").write_text(cfg.to_json())
    return out_dir


def load_dataset(data_dir: str | Path) -> list[SubjectData]:
    """Read manifest + images back into per-subject exam sequences."""
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))

    by_subject: dict[str, list[dict]] = {}
    for row in rows:
        by_subject.setdefault(row["subject_id"], []).append(row)

    subjects = []
    for sid in sorted(by_subject):
        srows = by_subject[sid]
        first = srows[0]
        event_year = int(first["event_year"]) if first["event_year"] else None
        label = Label(event_year=event_year,
                      followup_years=int(first["followup_years"]))
        dense_area = float(first["dense_area"])
        n_steps = max(int(r["timestep"]) for r in srows) + 1
        steps = []
        for t in range(n_steps):
            trows = {r["view"]: r for r in srows if int(r["timestep"]) == t}
            views: dict[str, np.ndarray | None] = {}
            for view in VIEWS:
                r = trows[view]
                views[view] = (read_tensor(data_dir / r["image_path"])
                               if int(r["present"]) else None)
            steps.append(ExamStep(
                t=t,
                age_years=float(trows[VIEWS[0]]["age_years"]),
                present=any(v is not None for v in views.values()),
                views=views,
            ))
        subjects.append(SubjectData(subject_id=sid, label=label,
                                    dense_area=dense_area, steps=steps))
    return subjects


def split_subjects(subjects: list[SubjectData], seed: int,
                   fractions: tuple[float, float] = (0.7, 0.15),
                   ) -> dict[str, list[SubjectData]]:
    """Deterministic 70/15/15 subject-level split."""
    order = np.random.default_rng(seed).permutation(len(subjects))
    n_train = int(round(fractions[0] * len(subjects)))
    n_val = int(round(fractions[1] * len(subjects)))
    idx = {"train": order[:n_train],
           "val": order[n_train:n_train + n_val],
           "test": order[n_train + n_val:]}
    return {k: [subjects[i] for i in sorted(v)] for k, v in idx.items()}
