"""Subject-level training loop: AdamW, cosine schedule, gradient clipping.

Batches are groups of subjects; the batch loss is the mean of per-subject
censored BCE losses (inverse-frequency class-weighted from the train split).
Model selection tracks 1-year validation AUC.  Logs and prediction dumps use
``repr`` for floats so identical runs write byte-identical files.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from mammorisk.hazard import class_weights, risk_loss
from mammorisk.metrics import EvalRecord, rocauc_year
from mammorisk.model import RiskModel
from mammorisk.synthetic import SubjectData, split_subjects
from mammorisk.tensor import Tape, Tensor, add, scale


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    clip_norm: float = 1.0
    seed: int = 17

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine decay from lr0 (step 0) to exactly 0 (last step)."""
    if total_steps <= 1:
        return lr0
    frac = step / (total_steps - 1)
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


class AdamW:
    """Adam with decoupled weight decay on a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def grad_global_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = grad_global_norm(params)
    if norm > max_norm:
        factor = np.asarray(max_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad = (p.grad * factor.astype(p.grad.dtype)).astype(
                    p.grad.dtype)
    return norm


# ---------------------------------------------------------------------------
# evaluation helpers


def predict_subject(model: RiskModel, subject: SubjectData,
                    ) -> tuple[EvalRecord, dict]:
    """Forward one subject without a tape; returns the eval record plus a
    flat row for the predictions CSV."""
    output, diag = model.forward_subject(subject)
    cumulative = output.cumulative.data[0].copy()
    row = {"subject_id": subject.subject_id}
    for k, value in enumerate(cumulative, start=1):
        row[f"p_year{k}"] = float(value)
    row["baseline"] = float(output.baseline.data[0, 0])
    for k, value in enumerate(output.hazards.data[0]):
        row[f"hazard{k}"] = float(value)
    row["asym_score"] = float(diag.asym_score)
    row["event_year"] = "" if subject.label.event_year is None \
        else subject.label.event_year
    row["followup_years"] = subject.label.followup_years
    row["dense_area"] = float(subject.dense_area)
    record = EvalRecord(subject_id=subject.subject_id, scores=cumulative,
                        label=subject.label, dense_area=subject.dense_area)
    return record, row


def evaluate(model: RiskModel, subjects: list[SubjectData],
             ) -> tuple[list[EvalRecord], list[dict]]:
    records, rows = [], []
    for subject in subjects:
        record, row = predict_subject(model, subject)
        records.append(record)
        rows.append(row)
    return records, rows


def write_csv(path: str | Path, rows: list[dict]) -> None:
    """CSV dump with repr-formatted floats (byte-stable across runs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in (row[f] for f in fields)])


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    best_epoch: int
    best_val_auc: float
    history: list[dict]
    splits: dict[str, list[str]]
    wall_seconds: float


def make_splits(subjects: list[SubjectData], seed: int,
                ) -> dict[str, list[SubjectData]]:
    return split_subjects(subjects, seed)


def _val_metric(records: list[EvalRecord]) -> float:
    if not records:
        return 0.5
    auc = rocauc_year(records, 1)
    if auc is None:
        defined = [rocauc_year(records, y) for y in
                   range(1, records[0].horizon + 1)]
        defined = [a for a in defined if a is not None]
        auc = float(np.mean(defined)) if defined else 0.5
    return auc


def train(model: RiskModel, subjects: list[SubjectData], cfg: TrainConfig,
          out_dir: str | Path) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.time()

    splits = make_splits(subjects, cfg.seed)
    train_subs, val_subs = splits["train"], splits["val"]
    horizon = model.config.horizon
    weights = class_weights([s.label for s in train_subs], horizon)

    params = model.trainable_params()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_subs) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    history: list[dict] = []
    best_auc = -1.0
    best_epoch = -1
    gstep = 0
    split_ids = {name: [s.subject_id for s in subs]
                 for name, subs in splits.items()}

    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 7, epoch])
        ).permutation(len(train_subs))
        loss_sum = 0.0
        epoch_lr = cosine_lr(gstep, total_steps, cfg.lr)
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            lr = cosine_lr(gstep, total_steps, cfg.lr)
            opt.zero_grad()
            with Tape() as tape:
                total = None
                for i in batch:
                    subject = train_subs[int(i)]
                    output, _ = model.forward_subject(subject)
                    loss = risk_loss(output, subject.label, weights)
                    total = loss if total is None else add(total, loss)
                batch_loss = scale(total, 1.0 / len(batch))
                tape.backward(batch_loss)
            clip_gradients(params, cfg.clip_norm)
            opt.step(lr)
            loss_sum += float(batch_loss.data) * len(batch)
            gstep += 1

        val_records, _ = evaluate(model, val_subs)
        val_auc = _val_metric(val_records)
        history.append({"epoch": epoch,
                        "train_loss": loss_sum / len(train_subs),
                        "val_auc_year1": float(val_auc),
                        "lr": float(epoch_lr)})
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            model.save(out_dir / "best",
                       {"train_config": asdict(cfg), "epoch": epoch,
                        "val_auc_year1": float(val_auc), "splits": split_ids})

    model.save(out_dir / "final",
               {"train_config": asdict(cfg), "epoch": cfg.epochs - 1,
                "val_auc_year1": history[-1]["val_auc_year1"] if history
                else None, "splits": split_ids})
    write_csv(out_dir / "train_log.csv", history)
    return TrainResult(best_epoch=best_epoch, best_val_auc=best_auc,
                       history=history, splits=split_ids,
                       wall_seconds=time.time() - start)
