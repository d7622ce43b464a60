"""Additive hazard head: monotone cumulative risk over a K-year horizon.

A subject feature vector maps to one baseline logit plus K non-negative
hazard increments; the cumulative risk logit for year k is the baseline
plus the first k increments,

    P_k = B + sum_{i<k} H_i,       H_i = relu(.) >= 0,

so P_1 <= P_2 <= ... <= P_K holds by construction (exactly, including in
floating point: each prefix extends the previous one by a non-negative
add).  Censoring enters the loss as a hard 0/1 mask: years beyond a
censored subject's follow-up contribute exactly zero, bit for bit, no
matter what label values sit there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mammorisk.recurrent import glorot, linear, zeros_param
from mammorisk.tensor import Tensor, add, concat, expand, matmul, mul, relu, \
    reshape, softplus, sub, sum_all


@dataclass(frozen=True)
class Label:
    """Outcome of one subject over the K-year horizon.

    event_year: year (1-based) the event was observed, or None if censored.
    followup_years: last year through which the subject's status is known.
    """

    event_year: int | None
    followup_years: int

    def validate(self, horizon: int) -> None:
        if not 1 <= self.followup_years <= horizon:
            raise ValueError(f"followup_years must lie in [1, {horizon}], "
                             f"got {self.followup_years}")
        if self.event_year is not None:
            if not 1 <= self.event_year <= horizon:
                raise ValueError(f"event_year must lie in [1, {horizon}], "
                                 f"got {self.event_year}")
            if self.event_year > self.followup_years:
                raise ValueError("event_year beyond followup_years: the event "
                                 "could not have been observed")

    def year_class(self) -> int:
        """0 for censored, else the event year (used for class weighting)."""
        return 0 if self.event_year is None else self.event_year

    def targets_and_mask(self, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-year cumulative-event targets and validity mask, shape (K,)."""
        years = np.arange(1, horizon + 1)
        if self.event_year is not None:
            y = (years >= self.event_year).astype(np.float64)
            mask = np.ones(horizon)
        else:
            y = np.zeros(horizon)
            mask = (years <= self.followup_years).astype(np.float64)
        return y, mask


@dataclass
class RiskOutput:
    baseline: Tensor    # (1, 1) baseline logit
    hazards: Tensor     # (1, K) non-negative increments
    cumulative: Tensor  # (1, K) monotone cumulative logits


class HazardHead:
    """Linear baseline plus K relu-rectified hazard increments.

    Initialization matters more than usual here.  A rectified increment
    whose logit is negative for every input it ever sees stops learning
    (zero gradient), and the correction for year k+1 relative to year k can
    flow *only* through increment k -- so a dead increment permanently
    fuses two adjacent years.  The increment weights therefore start small
    relative to a positive bias (every increment begins alive at roughly
    the bias value for all typical inputs), and the baseline bias starts
    at a negative prior so the stacked increments do not make the initial
    predictions uniformly over-confident.
    """

    def __init__(self, rng: np.random.Generator, in_dim: int, horizon: int = 5,
                 dtype=np.float64, hazard_bias_init: float = 0.3,
                 baseline_bias_init: float = -1.5,
                 hazard_weight_scale: float = 0.1):
        self.in_dim = in_dim
        self.horizon = horizon
        self.dtype = np.dtype(dtype)
        self.base_w = glorot(rng, in_dim, 1, (in_dim, 1), dtype)
        self.base_b = Tensor(np.full(1, baseline_bias_init, dtype=dtype),
                             requires_grad=True)
        self.haz_w = glorot(rng, in_dim, horizon, (in_dim, horizon), dtype)
        self.haz_w.data *= np.asarray(hazard_weight_scale, dtype=dtype)
        self.haz_b = Tensor(np.full(horizon, hazard_bias_init, dtype=dtype),
                            requires_grad=True)
        # constant prefix-sum matrix: column k sums increments 0..k
        self._prefix = Tensor(np.tril(np.ones((horizon, horizon))).T
                              .astype(self.dtype))

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "base_w": self.base_w, prefix + "base_b": self.base_b,
                prefix + "haz_w": self.haz_w, prefix + "haz_b": self.haz_b}

    def forward(self, features: Tensor) -> RiskOutput:
        x = reshape(features, (1, self.in_dim))
        baseline = linear(x, self.base_w, self.base_b)
        hazards = relu(linear(x, self.haz_w, self.haz_b))
        prefixes = matmul(hazards, self._prefix)
        cumulative = add(expand(baseline, (1, self.horizon)), prefixes)
        return RiskOutput(baseline=baseline, hazards=hazards,
                          cumulative=cumulative)


def risk_loss(output: RiskOutput, label: Label,
              class_weights: np.ndarray | None = None) -> Tensor:
    """Censored binary cross-entropy on the cumulative logits.

    Per-year BCE in the softplus form bce(z, y) = softplus(z) - y*z,
    averaged over the observed (unmasked) years and scaled by the weight
    of the subject's year-class (``class_weights[0]`` censored, index k an
    event in year k; ``None`` means uniform).  Targets and mask enter as
    constants; masked years are multiplied by an exact 0.
    """
    k = output.cumulative.shape[1]
    label.validate(k)
    y, mask = label.targets_and_mask(k)
    if class_weights is None:
        weight = 1.0
    else:
        cw = np.asarray(class_weights, dtype=np.float64)
        if cw.shape != (k + 1,):
            raise ValueError(f"class_weights must have shape ({k + 1},), "
                             f"got {cw.shape}")
        weight = float(cw[label.year_class()])
        if weight <= 0.0:
            raise ValueError(f"weight for year-class {label.year_class()} "
                             "must be positive")
    dtype = output.cumulative.dtype
    z = output.cumulative
    y_t = Tensor(y.reshape(1, k).astype(dtype))
    mask_t = Tensor(mask.reshape(1, k).astype(dtype))
    per_year = sub(softplus(z), mul(y_t, z))
    return sum_all(mul(per_year, mask_t)) * (weight / float(mask.sum()))


def class_weights(labels: list[Label], horizon: int = 5) -> np.ndarray:
    """Inverse-frequency weights over the K+1 year-classes, mean-normalized.

    Index 0 is the censored/no-event class; index k is an event in year k.
    Classes absent from ``labels`` keep weight 0 (they can never be used).
    """
    counts = np.zeros(horizon + 1)
    for lab in labels:
        lab.validate(horizon)
        counts[lab.year_class()] += 1
    present = counts > 0
    inv = np.zeros(horizon + 1)
    inv[present] = 1.0 / counts[present]
    used = inv[[lab.year_class() for lab in labels]]
    # normalize so the mean weight over the provided labels is exactly 1
    return inv * (len(labels) / used.sum())


def pool_risk_features(pooled_hidden: Tensor, asym_score: float,
                       use_asym: bool) -> Tensor:
    """Concatenate the recurrent summary with the asymmetry scalar.

    With ``use_asym=False`` the scalar slot is wired to an exact constant 0,
    so the corresponding head weights receive identically zero gradient.
    """
    value = float(asym_score) if use_asym else 0.0
    scalar = Tensor(np.array([value], dtype=pooled_hidden.dtype))
    return concat([pooled_hidden, scalar], axis=0)
