"""Acceptance gate: one test per headline guarantee of the package.

Every test here certifies a user-facing promise end to end and reports a
single ``[criterion] name: PASS/FAIL`` verdict line (echoed in the terminal
summary).  Two tests validate the committed training artifacts under
``runs/`` by recomputing the headline numbers from the raw per-subject
prediction CSVs -- never from stored metrics -- and explain how to
regenerate the artifacts when they are missing.  Everything else runs from
scratch in-process.
"""

from __future__ import annotations

import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import criterion
from mammorisk import asymmetry as asym
from mammorisk import scan
from mammorisk import tensor as T
from mammorisk.encoder import ViewEncoder, ViewFusion
from mammorisk.gradcheck import check_gradients
from mammorisk.hazard import HazardHead, Label, RiskOutput, risk_loss
from mammorisk.metrics import (EvalRecord, assign_density_groups, c_index,
                               rocauc_year, stratified_report)
from mammorisk.model import ModelConfig, RiskModel
from mammorisk.recurrent import VmrnnBlock, pool_hidden
from mammorisk.synthetic import (ExamStep, SubjectData, SyntheticConfig,
                                 generate_dataset, load_dataset)
from mammorisk.training import (TrainConfig, evaluate, make_splits, train,
                                write_csv)

RUNS = Path(__file__).resolve().parent.parent / "runs"

SMALL_MODEL = dict(image_size=16, encoder_channels=(4, 6, 8), token_dim=16,
                   ffn_dim=32, state_dim=4)


# ---------------------------------------------------------------------------
# gradients: every differentiable op and composite block


def _gradient_cases(rng):
    """Yield (name, scalar build, leaf tensors, coords-per-leaf) checks."""
    a = T.Tensor(rng.standard_normal((3, 4)))
    b = T.Tensor(rng.standard_normal((3, 4)))
    yield "add/sub/mul", \
        lambda: T.sum_all(T.mul(T.add(a, b), T.sub(a, b))), [a, b], None
    yield "scale/add_scalar", \
        lambda: T.sum_all(T.scale(T.add_scalar(a, 1.5), -0.7)), [a], None

    x = T.Tensor(rng.standard_normal((4, 5)))
    for kind in ("silu", "sigmoid", "tanh", "softplus"):
        yield kind, (lambda k=kind: T.sum_all(T.mul(T.activation(x, k), x))), \
            [x], None
    xr = T.Tensor(np.abs(rng.standard_normal((4, 5))) + 0.5)
    yield "relu", lambda: T.sum_all(T.mul(T.relu(xr), xr)), [xr], None
    xe = T.Tensor(rng.standard_normal(6) * 0.3)
    yield "exp", lambda: T.sum_all(T.exp(xe)), [xe], None

    ma = T.Tensor(rng.standard_normal((3, 4)))
    mb = T.Tensor(rng.standard_normal((4, 2)))
    yield "matmul-small", \
        lambda: T.sum_all(T.tanh(T.matmul(ma, mb))), [ma, mb], None
    wa = T.Tensor(rng.standard_normal((3, 12)))
    wb = T.Tensor(rng.standard_normal((12, 2)))
    yield "matmul-wide", \
        lambda: T.sum_all(T.tanh(T.matmul(wa, wb))), [wa, wb], None

    lx = T.Tensor(rng.standard_normal((3, 6)))
    lg = T.Tensor(1.0 + 0.1 * rng.standard_normal(6))
    lb = T.Tensor(0.1 * rng.standard_normal(6))
    yield "layernorm", \
        lambda: T.sum_all(T.mul(T.layernorm(lx, lg, lb), lx)), [lx, lg, lb], None

    sx = T.Tensor(rng.standard_normal((2, 5)))
    sw = rng.standard_normal((2, 5))
    yield "softmax", \
        lambda: T.sum_all(T.mul(T.softmax_last(sx), T.Tensor(sw))), [sx], None

    dx = T.Tensor(rng.standard_normal((2, 4, 5)))
    dk = T.Tensor(rng.standard_normal((2, 3, 3)))
    db = T.Tensor(rng.standard_normal(2))
    yield "dwconv3x3", \
        lambda: T.sum_all(T.silu(T.dwconv3x3(dx, dk, db))), [dx, dk, db], None

    cx = T.Tensor(rng.standard_normal((2, 2, 4, 4)))
    cw = T.Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    cb = T.Tensor(rng.standard_normal(3))
    yield "conv2d", \
        lambda: T.sum_all(T.tanh(T.conv2d(cx, cw, cb, padding=1))), \
        [cx, cw, cb], None

    px = T.Tensor(rng.standard_normal((1, 2, 4, 4)))
    yield "avgpool2", \
        lambda: T.sum_all(T.mul(T.avgpool2(px), T.avgpool2(px))), [px], None

    y = T.Tensor(rng.standard_normal((2, 3, 4)))
    z = T.Tensor(rng.standard_normal((3, 1)))

    def shape_composite():
        parts = [T.reshape(T.permute(y, (1, 2, 0)), (24,)),
                 T.reshape(T.flip(y, 2), (24,)),
                 T.reshape(y, (24,)),
                 T.reshape(T.slice_axis(y, 1, 0, 2), (16,)),
                 T.reshape(T.expand(z, (2, 3, 4)), (24,))]
        cat = T.concat(parts, axis=0)
        return T.sum_all(T.mul(cat, cat))

    yield "shape-ops", shape_composite, [y, z], None

    rx = T.Tensor(rng.standard_normal((3, 5)))

    def reduce_composite():
        s1 = T.expand(T.sum_axis(rx, 1, keepdims=True), (3, 5))
        m1 = T.expand(T.mean_axis(rx, 0, keepdims=True), (3, 5))
        return T.mean_all(T.mul(T.add(s1, m1), rx))

    yield "reductions", reduce_composite, [rx], None

    L, C, N = 5, 3, 2
    abar = T.Tensor(np.exp(-np.abs(rng.normal(0.5, 0.3, size=(L, C, N)))))
    bx = T.Tensor(rng.standard_normal((L, C, N)))
    cm = T.Tensor(rng.standard_normal((L, C, N)))
    sd = T.Tensor(rng.standard_normal(C))
    su = T.Tensor(rng.standard_normal((L, C)))
    scan_w = rng.standard_normal((L, C))
    yield "selective-scan", \
        lambda: T.sum_all(T.mul(scan.scan_core(abar, bx, cm, sd, su),
                                T.Tensor(scan_w))), [abar, bx, cm, sd, su], None

    ssm = scan.init_ssm(rng, 4, 3)
    s6u = T.Tensor(rng.standard_normal((6, 4)))
    s6w = rng.standard_normal((6, 4))
    s6_leaves = [s6u, ssm.a_log, ssm.w_b, ssm.w_c, ssm.w_delta, ssm.b_delta,
                 ssm.d_skip]
    yield "state-space-step", \
        lambda: T.sum_all(T.mul(scan.s6_forward(ssm, s6u), T.Tensor(s6w))), \
        s6_leaves, 20

    block = VmrnnBlock(np.random.default_rng(21), channels=2, height=4,
                       width=4, state_dim=2, token_dim=4)
    bparams = list(block.named_params().values())
    vx = T.Tensor(rng.standard_normal((4, 2, 2)))
    w1 = rng.standard_normal((4, 2, 2))
    w2 = rng.standard_normal((4, 2, 2))

    def vss_build():
        vss = block.vss_forward(vx)
        return T.sum_all(T.add(T.mul(vss.gate, T.Tensor(w1)),
                               T.mul(vss.pre_gate, T.Tensor(w2))))

    yield "gated-mixing-block", vss_build, bparams + [vx], 10

    cx2 = T.Tensor(rng.standard_normal((2, 4, 4)))
    wr = rng.standard_normal((2, 4, 4))

    def cell_build():
        recon, state = block.step(cx2, block.init_state())
        return T.add(T.sum_all(T.mul(recon, T.Tensor(wr))),
                     T.sum_all(T.mul(state.hidden, state.hidden)))

    yield "recurrent-cell", cell_build, bparams + [cx2], 10

    token = T.Tensor(rng.standard_normal(4))
    wp = rng.standard_normal(4)

    def block3_build():
        state = block.init_state()
        carry = block.init_carry()
        for dt in (0.0, 1.0, 2.0):
            xt = block.fuse_input(token, carry, dt, 1.0)
            carry, state = block.step(xt, state)
        return T.sum_all(T.mul(pool_hidden(state), T.Tensor(wp)))

    yield "three-step-recurrence", block3_build, bparams + [token], 8

    enc = ViewEncoder(np.random.default_rng(22), image_size=16,
                      channels=(4, 6, 8))
    ex = T.Tensor(rng.standard_normal((2, 1, 16, 16)))
    ew = rng.standard_normal((2, 8, 2, 2))
    yield "view-encoder", \
        lambda: T.sum_all(T.mul(enc.forward(ex), T.Tensor(ew))), \
        list(enc.named_params().values()) + [ex], 8

    fus = ViewFusion(np.random.default_rng(23), feat_channels=8,
                     token_dim=16, heads=2, ffn_dim=32)
    fm = T.Tensor(rng.standard_normal((3, 8, 2, 2)))
    fw = rng.standard_normal(16)
    present = [True, True, False, True]
    yield "view-fusion", \
        lambda: T.sum_all(T.mul(fus.forward(fm, present), T.Tensor(fw))), \
        list(fus.named_params().values()) + [fm], 8

    head = HazardHead(np.random.default_rng(24), in_dim=7, horizon=5)
    hx = T.Tensor(rng.standard_normal(7))
    hparams = list(head.named_params().values())
    cw5 = np.array([0.8, 1.3, 0.9, 1.1, 1.0, 1.2])
    yield "risk-head-event", \
        lambda: risk_loss(head.forward(hx), Label(3, 5), cw5), \
        hparams + [hx], None
    yield "risk-head-censored", \
        lambda: risk_loss(head.forward(hx), Label(None, 3), cw5), \
        hparams + [hx], None


def test_every_block_passes_finite_difference_check():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    results = {}
    for name, build, leaves, sample in _gradient_cases(rng):
        results[name] = check_gradients(build, leaves, sample=sample)
    elapsed = time.time() - t0
    worst = max(results, key=results.get)
    ok = results[worst] < 1e-4 and elapsed < 300.0
    criterion("gradient-suite", ok,
              f"{len(results)} blocks, max rel err {results[worst]:.2e} "
              f"({worst}), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# parallel scan: equivalence and measured speedup


def test_parallel_scan_matches_sequential_over_1000_cases():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        L = int(rng.integers(1, 129))
        C = int(rng.integers(1, 9))
        N = int(rng.integers(1, 9))
        chunk = int(rng.integers(1, 161))
        threads = int(rng.integers(1, 5))
        case = scan.make_scan_case(rng, L, C, N)
        seq = scan.selective_scan_seq(*case)
        par = scan.selective_scan_par(*case, chunk=chunk, threads=threads)
        worst = max(worst, float(np.max(np.abs(seq - par))))
    criterion("scan-equivalence", worst < 1e-12,
              f"1000 random cases L<=128, max |par - seq| = {worst:.2e}")


def test_parallel_scan_speedup_at_benchmark_size():
    rows = scan.run_benchmark(lmax=4096, channels=64, reps=3, seed=0)
    big = [r for r in rows if r["L"] == 4096]
    seq_ms = next(r["wall_ms"] for r in big if r["impl"] == "seq")
    par = [r for r in big if r["impl"] == "par" and r["threads"] >= 4]
    best = min(par, key=lambda r: r["wall_ms"])
    speedup = seq_ms / best["wall_ms"]
    accurate = all(r["max_abs_diff_vs_seq"] < 1e-12 for r in big)
    criterion("scan-speedup", speedup >= 2.0 and accurate,
              f"L=4096 C=64: {speedup:.2f}x over sequential at >=4 threads "
              f"(chunk={best['chunk']}); target 2.00x")


# ---------------------------------------------------------------------------
# cumulative risk is monotone: random inputs and real checkpoints


def _monotone(cumulative: np.ndarray) -> bool:
    return bool(np.all(np.diff(cumulative) >= 0.0))


def _random_probe_subjects(rng, image_size, horizon, n=8):
    subjects = []
    for i in range(n):
        steps = []
        for t in range(3):
            views = {v: rng.standard_normal((image_size, image_size))
                     .astype(np.float32) for v in ("LCC", "RCC", "LMLO",
                                                   "RMLO")}
            steps.append(ExamStep(t=t, age_years=50.0 + t, present=True,
                                  views=views))
        subjects.append(SubjectData(subject_id=f"probe{i}",
                                    label=Label(None, horizon),
                                    dense_area=0.5, steps=steps))
    return subjects


def test_cumulative_risk_never_decreases(tmp_path):
    violations = 0
    checked = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dtype = np.float64 if seed % 2 == 0 else np.float32
        head = HazardHead(rng, in_dim=int(rng.integers(3, 40)), horizon=5,
                          dtype=dtype)
        for _ in range(500):
            x = (rng.standard_normal(head.in_dim)
                 * 10.0 ** rng.uniform(-2, 3)).astype(dtype)
            out = head.forward(T.Tensor(x))
            checked += 1
            violations += not _monotone(out.cumulative.data[0])

    # every checkpoint written by training so far, plus two fresh ones
    ckpt_dirs = sorted(p.parent for p in RUNS.glob("**/manifest.json"))
    cfg = SyntheticConfig(n_subjects=16, image_size=16, seed=5)
    subjects = load_dataset(generate_dataset(cfg, tmp_path / "data"))
    model = RiskModel(ModelConfig(**SMALL_MODEL, init_seed=1))
    train(model, subjects, TrainConfig(epochs=2, batch_size=4, seed=5),
          tmp_path / "run")
    ckpt_dirs += [tmp_path / "run" / "best", tmp_path / "run" / "final"]

    for ckpt in ckpt_dirs:
        loaded, _ = RiskModel.load(ckpt)
        if loaded.config.image_size == cfg.image_size:
            probes = subjects
        else:
            probes = _random_probe_subjects(np.random.default_rng(0),
                                            loaded.config.image_size,
                                            loaded.config.horizon)
        for subject in probes:
            out, _ = loaded.forward_subject(subject)
            checked += 1
            violations += not _monotone(out.cumulative.data[0])

    criterion("hazard-monotonicity", violations == 0,
              f"{violations} violations over {checked} forwards incl. "
              f"{len(ckpt_dirs)} checkpoints")


# ---------------------------------------------------------------------------
# asymmetry: exact nulls, channel-loop oracle, hand-computed persistence


def test_bilateral_divergence_and_persistence_oracles():
    rng = np.random.default_rng(42)
    null_ok = True
    oracle_ok = True
    for _ in range(100):
        c = int(rng.integers(1, 17))
        h = int(rng.integers(2, 9))
        w = int(rng.integers(2, 9))
        left = rng.standard_normal((c, h, w))
        mirror = left[:, :, ::-1].copy()
        null_ok &= bool(np.all(asym.divergence_map(left, mirror) == 0.0))
        null_ok &= asym.peak_divergence(left, mirror, t=0,
                                        view_pair="LCC/RCC").peak == 0.0
        right = rng.standard_normal((c, h, w))
        d = asym.divergence_map(left, right)
        m = right[:, :, ::-1]
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for ci in range(c):
                    diff = left[ci, i, j] - m[ci, i, j]
                    acc += diff * diff
                oracle_ok &= d[i, j] == math.sqrt(acc)

    def rec(t, pos):
        return asym.AsymmetryRecord(t=t, view_pair="LCC/RCC", peak=1.0,
                                    pos=pos)

    # window 5 -> threshold 2.0, strict
    lat_ok = asym.is_persistent([rec(0, (3, 3)), rec(1, (4, 4))])  # sqrt(2)
    lat_ok &= not asym.is_persistent([rec(0, (0, 0)), rec(1, (4, 4))])
    lat_ok &= not asym.is_persistent([rec(0, (3, 3)), rec(1, (3, 5))])  # = 2.0
    lat_ok &= asym.is_persistent([rec(0, (2, 2))])  # vacuous: no pair
    # threshold scales with the window: displacement 3 needs window 10
    lat_ok &= asym.is_persistent([rec(0, (0, 0)), rec(1, (3, 0))], window=10)
    lat_ok &= not asym.is_persistent([rec(0, (0, 0)), rec(1, (3, 0))],
                                     window=5)

    def planted(mag, pos):
        left = np.zeros((1, 6, 6))
        left[0, pos[0], pos[1]] = mag
        return left, np.zeros((1, 6, 6))

    stable = {t: planted(2.0, (3, 3)) for t in range(3)}
    wander = {0: planted(1.0, (0, 0)), 1: planted(3.0, (5, 5))}
    fused, tracks = asym.subject_asymmetry({("LCC", "RCC"): stable,
                                            ("LMLO", "RMLO"): wander})
    by_pair = {tr.view_pair: tr for tr in tracks}
    fuse_ok = by_pair["LCC/RCC"].persistent
    fuse_ok &= by_pair["LCC/RCC"].score == 3.0       # mean 2.0 * 1.5
    fuse_ok &= not by_pair["LMLO/RMLO"].persistent
    fuse_ok &= by_pair["LMLO/RMLO"].score == 2.0     # mean of (1, 3)
    fuse_ok &= fused == 2.5
    zeros = {t: (np.zeros((1, 4, 4)), np.zeros((1, 4, 4))) for t in range(2)}
    zero_fused, _ = asym.subject_asymmetry({("LCC", "RCC"): zeros})
    fuse_ok &= zero_fused == 0.0

    criterion("asymmetry-oracles", null_ok and oracle_ok and lat_ok and fuse_ok,
              f"mirror null exact: {null_ok}; channel-loop oracle exact: "
              f"{oracle_ok}; persistence decisions: {lat_ok}; fusion: {fuse_ok}")


# ---------------------------------------------------------------------------
# metrics vs quadratic brute force


def _random_records(rng, n, horizon=5):
    pool = np.array([-1.0, -0.25, 0.0, 0.4, 0.8, 1.5])
    records = []
    for i in range(n):
        incs = rng.choice(np.array([0.0, 0.25, 0.5]), size=horizon - 1)
        scores = float(rng.choice(pool)) + np.concatenate(
            [[0.0], np.cumsum(incs)])
        if rng.random() < 0.55:
            event_year = int(rng.integers(1, horizon + 1))
            follow = int(rng.integers(event_year, horizon + 1))
            label = Label(event_year, follow)
        else:
            label = Label(None, int(rng.integers(1, horizon + 1)))
        records.append(EvalRecord(subject_id=f"s{i}", scores=scores,
                                  label=label, dense_area=float(rng.random())))
    return records


def _last_known_score(r):
    if r.label.event_year is not None:
        return r.scores[r.horizon - 1]
    return r.scores[min(r.label.followup_years, r.horizon) - 1]


def _c_index_oracle(records):
    num, den = 0.0, 0
    for ri in records:
        if ri.label.event_year is None:
            continue
        for rj in records:
            known_free = min(rj.label.event_year or np.inf,
                             rj.label.followup_years)
            if not ri.label.event_year < known_free:
                continue
            den += 1
            si, sj = _last_known_score(ri), _last_known_score(rj)
            num += 1.0 if si > sj else (0.5 if si == sj else 0.0)
    return None if den == 0 else num / den


def _auc_oracle(records, year):
    pos = [r for r in records if r.label.event_year is not None
           and r.label.event_year <= year]
    neg = [r for r in records
           if (r.label.event_year is not None and r.label.event_year > year)
           or (r.label.event_year is None and r.label.followup_years >= year)]
    if not pos or not neg:
        return None
    num = 0.0
    for p in pos:
        for q in neg:
            sp, sq = p.scores[year - 1], q.scores[year - 1]
            num += 1.0 if sp > sq else (0.5 if sp == sq else 0.0)
    return num / (len(pos) * len(neg))


def test_metrics_match_quadratic_oracles():
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(1000):
        records = _random_records(rng, n=int(rng.integers(1, 21)))
        mismatches += c_index(records) != _c_index_oracle(records)
        horizon = records[0].horizon
        for year in range(1, horizon + 1):
            mismatches += rocauc_year(records, year) != _auc_oracle(records,
                                                                    year)
    criterion("metrics-oracles", mismatches == 0,
              f"1000 instances (n<=20, tied scores included), "
              f"{mismatches} mismatches vs brute force")


# ---------------------------------------------------------------------------
# committed training artifacts: headline AUC and the ablation sweep


def _records_from_predictions(path: Path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        scores, year = [], 1
        while f"p_year{year}" in row:
            scores.append(float(row[f"p_year{year}"]))
            year += 1
        label = Label(event_year=int(row["event_year"])
                      if row["event_year"] else None,
                      followup_years=int(row["followup_years"]))
        records.append(EvalRecord(subject_id=row["subject_id"],
                                  scores=np.array(scores), label=label,
                                  dense_area=float(row["dense_area"])))
    return records


def test_full_model_reaches_one_year_auc_target():
    pred = RUNS / "e2e" / "predictions.csv"
    log = RUNS / "e2e" / "train_log.csv"
    if not (pred.exists() and log.exists()):
        pytest.fail(
            "runs/e2e artifacts missing; regenerate deterministically with\n"
            "  mammorisk gen-data --out /tmp/e2e_data --seed 17 --n-subjects 500\n"
            "  mammorisk train --data /tmp/e2e_data --out runs/e2e --seed 17\n"
            "  mammorisk eval --ckpt runs/e2e/best --data /tmp/e2e_data "
            "--out runs/e2e --split test --tag full")
    records = _records_from_predictions(pred)
    auc = rocauc_year(records, 1)
    with open(log, newline="") as fh:
        epochs = len(list(csv.DictReader(fh)))
    ok = auc is not None and auc >= 0.85 and epochs <= 30
    criterion("end-to-end-auc", ok,
              f"test 1-year AUC {auc:.4f} (target 0.85) after {epochs} "
              f"epochs, n={len(records)} held-out subjects")


def test_removing_asymmetry_branch_hurts_high_density_auc():
    table = RUNS / "sweep" / "sweep_results.csv"
    if not table.exists():
        pytest.fail(
            "runs/sweep artifacts missing; regenerate deterministically with\n"
            "  mammorisk ablation-sweep --out runs/sweep --seeds 10 "
            "--epochs 15 --n-subjects 500")
    with open(table, newline="") as fh:
        rows = list(csv.DictReader(fh))
    wins = 0
    consistent = True
    for row in rows:
        aucs = {}
        for tag in ("full", "no_asym"):
            arm = RUNS / "sweep" / f"seed{row['seed']}_{tag}" \
                / "test_predictions.csv"
            records = _records_from_predictions(arm)
            groups = assign_density_groups(records)
            auc = rocauc_year(groups["high"], 1)
            aucs[tag] = float("nan") if auc is None else auc
            stored = float(row[tag])
            consistent &= stored == aucs[tag] or (math.isnan(stored)
                                                  and math.isnan(aucs[tag]))
        wins += aucs["full"] > aucs["no_asym"]
    ok = len(rows) == 10 and wins >= 8 and consistent
    criterion("asymmetry-ablation", ok,
              f"full model beats no-asymmetry on high-density 1-year AUC in "
              f"{wins}/{len(rows)} seeds (need >=8/10); stored table "
              f"reproduced from raw predictions: {consistent}")


# ---------------------------------------------------------------------------
# determinism and censoring exactness


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_identical_seed_and_config_reproduce_identical_bytes(tmp_path):
    cfg = SyntheticConfig(n_subjects=16, image_size=16, seed=11)
    outcomes = []
    for rep in ("a", "b"):
        data_dir = tmp_path / f"data_{rep}"
        generate_dataset(cfg, data_dir)
        subjects = load_dataset(data_dir)
        run_dir = tmp_path / f"run_{rep}"
        model = RiskModel(ModelConfig(**SMALL_MODEL, init_seed=2))
        train(model, subjects, TrainConfig(epochs=2, batch_size=4, seed=11),
              run_dir)
        records, rows = evaluate(model, make_splits(subjects, 11)["test"])
        write_csv(run_dir / "predictions.csv", rows)
        write_csv(run_dir / "metrics.csv",
                  stratified_report(records, seed=0, model_tag="rep"))
        outcomes.append((_tree_bytes(data_dir), _tree_bytes(run_dir)))
    criterion("determinism", outcomes[0] == outcomes[1],
              "dataset files, checkpoints, training log and metrics CSVs "
              "bit-identical across independent reruns")


def test_predictions_at_masked_years_are_inert():
    rng = np.random.default_rng(77)
    cw5 = np.array([1.1, 0.7, 1.4, 0.8, 1.2, 0.9])
    loss_inert = True
    for trial in range(300):
        dtype = np.float64 if trial % 2 == 0 else np.float32
        head = HazardHead(np.random.default_rng(trial), in_dim=6, horizon=5,
                          dtype=dtype)
        x = (rng.standard_normal(6) * 3.0).astype(dtype)
        out = head.forward(T.Tensor(x))
        follow = int(rng.integers(1, 5))
        label = Label(None, follow)
        base = risk_loss(out, label, cw5).data.tobytes()
        cum = out.cumulative.data.copy()
        cum[0, follow:] = (rng.standard_normal(5 - follow) * 1e6).astype(dtype)
        perturbed = RiskOutput(baseline=out.baseline, hazards=out.hazards,
                               cumulative=T.Tensor(cum))
        loss_inert &= risk_loss(perturbed, label, cw5).data.tobytes() == base

    records = _random_records(np.random.default_rng(5), n=60)
    before = (c_index(records),
              [rocauc_year(records, y) for y in range(1, 6)],
              stratified_report(records, seed=3, model_tag="x"))
    for r in records:
        follow = r.label.followup_years
        if r.label.event_year is None and follow < r.horizon:
            r.scores[follow:] = rng.standard_normal(r.horizon - follow) * 1e9
    after = (c_index(records),
             [rocauc_year(records, y) for y in range(1, 6)],
             stratified_report(records, seed=3, model_tag="x"))
    criterion("censoring-exactness", loss_inert and before == after,
              f"loss bitwise stable over 300 perturbed censored subjects: "
              f"{loss_inert}; c-index, per-year AUCs and bootstrap report "
              f"unchanged: {before == after}")
