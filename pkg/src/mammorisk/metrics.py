"""Survival-style evaluation metrics with censoring-aware pair selection.

Concordance uses Harrell's construction: a pair is comparable when the
earlier subject's event was actually observed before the later subject's
last known event-free year.  Ranking uses the cumulative score at each
subject's last label-bearing year -- the full-horizon score for anyone
followed (or diagnosed) through year K, the score at the censoring year
otherwise -- so predictions beyond a subject's follow-up never influence
the metric.  Per-year discrimination is a plain ROC-AUC that excludes
subjects whose status at that year is unknown (censored earlier).
Confidence intervals come from a seeded subject-level bootstrap, so a
report is a pure function of (records, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mammorisk.hazard import Label


@dataclass
class EvalRecord:
    subject_id: str
    scores: np.ndarray  # (K,) cumulative risk logits, year 1..K
    label: Label
    dense_area: float

    @property
    def horizon(self) -> int:
        return len(self.scores)


def _event_times(records: list[EvalRecord]) -> tuple[np.ndarray, np.ndarray,
                                                     np.ndarray]:
    event = np.array([r.label.event_year is not None for r in records])
    etime = np.array([r.label.event_year if r.label.event_year is not None
                      else np.inf for r in records])
    follow = np.array([float(r.label.followup_years) for r in records])
    return event, etime, follow


def _ranking_scores(records: list[EvalRecord]) -> np.ndarray:
    """Cumulative score at each subject's last label-bearing year."""
    out = np.empty(len(records))
    for i, r in enumerate(records):
        if r.label.event_year is not None:
            last = r.horizon
        else:
            last = min(r.label.followup_years, r.horizon)
        out[i] = r.scores[last - 1]
    return out


def c_index(records: list[EvalRecord]) -> float | None:
    """Concordance on last-known-year scores; None when no pair is comparable."""
    if not records:
        return None
    event, etime, follow = _event_times(records)
    scores = _ranking_scores(records)
    known_free = np.minimum(etime, follow)  # last year j is known event-free
    comparable = event[:, None] & (etime[:, None] < known_free[None, :])
    if not comparable.any():
        return None
    higher = scores[:, None] > scores[None, :]
    ties = scores[:, None] == scores[None, :]
    num = np.sum(comparable & higher) + 0.5 * np.sum(comparable & ties)
    return float(num / np.sum(comparable))


def rocauc_year(records: list[EvalRecord], year: int) -> float | None:
    """AUC for 'event by ``year``'; censored-before-year subjects excluded."""
    if not records:
        return None
    if not 1 <= year <= records[0].horizon:
        raise ValueError(f"year {year} outside horizon {records[0].horizon}")
    event, etime, follow = _event_times(records)
    scores = np.array([r.scores[year - 1] for r in records])
    pos = event & (etime <= year)
    neg = (event & (etime > year)) | (~event & (follow >= year))
    if not pos.any() or not neg.any():
        return None
    sp, sn = scores[pos], scores[neg]
    wins = np.sum(sp[:, None] > sn[None, :]) + 0.5 * np.sum(sp[:, None] == sn[None, :])
    return float(wins / (sp.size * sn.size))


# ---------------------------------------------------------------------------
# density stratification


DENSITY_GROUPS = ("low", "mid", "high")


def density_cutpoints(dense_areas: np.ndarray) -> tuple[float, float]:
    lo = float(np.percentile(dense_areas, 100.0 / 3.0))
    hi = float(np.percentile(dense_areas, 200.0 / 3.0))
    return lo, hi


def assign_density_groups(records: list[EvalRecord],
                          cutpoints: tuple[float, float] | None = None,
                          ) -> dict[str, list[EvalRecord]]:
    """Partition records into density terciles (plus the full set as 'all')."""
    areas = np.array([r.dense_area for r in records])
    lo, hi = cutpoints if cutpoints is not None else density_cutpoints(areas)
    groups: dict[str, list[EvalRecord]] = {"all": list(records),
                                           "low": [], "mid": [], "high": []}
    for r in records:
        if r.dense_area <= lo:
            groups["low"].append(r)
        elif r.dense_area <= hi:
            groups["mid"].append(r)
        else:
            groups["high"].append(r)
    return groups


# ---------------------------------------------------------------------------
# bootstrap and report


_METRIC_IDS = {"c_index": 1, "rocauc": 2}


def bootstrap_ci(records: list[EvalRecord], metric_fn, *, seed: int,
                 n_boot: int = 1000) -> tuple[float | None, float | None]:
    """Percentile CI from subject-level resampling; skips undefined draws."""
    rng = np.random.default_rng(seed)
    n = len(records)
    values = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        v = metric_fn([records[i] for i in idx])
        if v is not None:
            values.append(v)
    if not values:
        return None, None
    return (float(np.percentile(values, 2.5)),
            float(np.percentile(values, 97.5)))


def _child_seed(base_seed: int, metric: str, year: int, group: str) -> int:
    ss = np.random.SeedSequence([base_seed, _METRIC_IDS[metric], year,
                                 DENSITY_GROUPS.index(group) + 1
                                 if group in DENSITY_GROUPS else 0])
    return int(ss.generate_state(1)[0])


def stratified_report(records: list[EvalRecord], *, seed: int,
                      n_boot: int = 1000, model_tag: str = "model",
                      cutpoints: tuple[float, float] | None = None) -> list[dict]:
    """Metric rows for the full set and each density tercile.

    One c-index row plus one ROC-AUC row per horizon year, per group.
    ``value`` is None when the metric is undefined on that subset.
    """
    if not records:
        return []
    horizon = records[0].horizon
    groups = assign_density_groups(records, cutpoints)
    rows = []
    for group in ("all",) + DENSITY_GROUPS:
        subset = groups[group]
        v = c_index(subset)
        lo, hi = (bootstrap_ci(subset, c_index,
                               seed=_child_seed(seed, "c_index", 0, group),
                               n_boot=n_boot)
                  if subset and v is not None else (None, None))
        rows.append({"model_tag": model_tag, "metric": "c_index", "year": None,
                     "density_group": group, "value": v, "ci_lo": lo,
                     "ci_hi": hi, "n": len(subset)})
        for year in range(1, horizon + 1):
            v = rocauc_year(subset, year) if subset else None
            if v is not None:
                lo, hi = bootstrap_ci(
                    subset, lambda rs, y=year: rocauc_year(rs, y),
                    seed=_child_seed(seed, "rocauc", year, group),
                    n_boot=n_boot)
                event, etime, follow = _event_times(subset)
                n_used = int(np.sum((event & (etime <= year))
                                    | (event & (etime > year))
                                    | (~event & (follow >= year))))
            else:
                lo, hi, n_used = None, None, 0
            rows.append({"model_tag": model_tag, "metric": "rocauc",
                         "year": year, "density_group": group, "value": v,
                         "ci_lo": lo, "ci_hi": hi, "n": n_used})
    return rows
