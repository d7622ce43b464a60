"""Command-line entry points: data generation, training, evaluation, tools.

    mammorisk gen-data  --out data/ [--config gen.json]
    mammorisk train     --data data/ --out runs/exp [--config cfg.json]
    mammorisk eval      --ckpt runs/exp/best --data data/ --out runs/exp/eval
    mammorisk scan-bench --csv bench.csv [--lmax 4096] [--channels 64]
    mammorisk asym-inspect --ckpt runs/exp/best --data data/ --out tracks.csv
    mammorisk ablation-sweep --out runs/sweep [--seeds 10] [--epochs 15]

``train`` config files are JSON with optional "model" and "train" sections
(fields of ModelConfig / TrainConfig); ``gen-data`` configs hold
SyntheticConfig fields.  Every command is deterministic given its seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    from mammorisk.synthetic import SyntheticConfig, generate_dataset
    cfg = SyntheticConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_subjects is not None:
        cfg.n_subjects = args.n_subjects
    out = generate_dataset(cfg, args.out)
    print(f"wrote {cfg.n_subjects} subjects to {out}")
    return 0


def cmd_train(args) -> int:
    from mammorisk.model import ModelConfig, RiskModel
    from mammorisk.synthetic import load_dataset
    from mammorisk.training import TrainConfig, train
    cfg = _load_json(args.config)
    model_cfg = ModelConfig.from_dict(cfg.get("model", {}))
    train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    if args.seed is not None:
        train_cfg.seed = args.seed
        model_cfg.init_seed = args.seed
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    subjects = load_dataset(args.data)
    model = RiskModel(model_cfg)
    result = train(model, subjects, train_cfg, args.out)
    print(f"trained {train_cfg.epochs} epochs in {result.wall_seconds:.0f}s; "
          f"best val 1-year AUC {result.best_val_auc:.4f} "
          f"(epoch {result.best_epoch})")
    print(f"checkpoints + log in {args.out}")
    return 0


def cmd_eval(args) -> int:
    from mammorisk.metrics import (c_index, rocauc_year, stratified_report)
    from mammorisk.model import RiskModel
    from mammorisk.synthetic import load_dataset
    from mammorisk.training import evaluate, make_splits, write_csv
    model, meta = RiskModel.load(args.ckpt)
    subjects = load_dataset(args.data)
    if args.split != "all":
        seed = meta.get("train_config", {}).get("seed", 17)
        subjects = make_splits(subjects, seed)[args.split]
    records, rows = evaluate(model, subjects)
    out = Path(args.out)
    write_csv(out / "predictions.csv", rows)
    report = stratified_report(records, seed=args.boot_seed,
                               model_tag=args.tag)
    write_csv(out / "metrics.csv", report)
    ci = c_index(records)
    print(f"split={args.split} n={len(records)}")
    print(f"c-index {'n/a' if ci is None else f'{ci:.4f}'}")
    for year in range(1, records[0].horizon + 1):
        auc = rocauc_year(records, year)
        print(f"{year}-year AUC {'n/a' if auc is None else f'{auc:.4f}'}")
    print(f"wrote {out / 'predictions.csv'} and {out / 'metrics.csv'}")
    return 0


def cmd_scan_bench(args) -> int:
    from mammorisk.scan import run_benchmark
    from mammorisk.training import write_csv
    rows = run_benchmark(lmax=args.lmax, channels=args.channels,
                         reps=args.reps, seed=args.seed)
    if args.csv:
        write_csv(args.csv, rows)
    header = f"{'L':>6} {'chunk':>6} {'threads':>7} {'impl':>4} " \
             f"{'wall_ms':>9} {'max|diff|':>10}"
    print(header)
    for r in rows:
        print(f"{r['L']:>6} {r['chunk']:>6} {r['threads']:>7} {r['impl']:>4} "
              f"{r['wall_ms']:>9.3f} {r['max_abs_diff_vs_seq']:>10.2e}")
    seq = {r["L"]: r["wall_ms"] for r in rows if r["impl"] == "seq"}
    best_par = {}
    for r in rows:
        if r["impl"] == "par":
            cur = best_par.get(r["L"])
            if cur is None or r["wall_ms"] < cur["wall_ms"]:
                best_par[r["L"]] = r
    for L, r in sorted(best_par.items()):
        speedup = seq[L] / r["wall_ms"]
        print(f"L={L}: best parallel {r['wall_ms']:.3f}ms "
              f"(chunk={r['chunk']}, threads={r['threads']}) -> "
              f"speedup {speedup:.2f}x over sequential")
    if args.csv:
        print(f"wrote {args.csv}")
    return 0


def cmd_asym_inspect(args) -> int:
    from mammorisk.model import RiskModel
    from mammorisk.synthetic import load_dataset
    from mammorisk.training import write_csv
    model, _ = RiskModel.load(args.ckpt)
    if not model.config.use_asym:
        print("checkpoint was trained with use_asym=false", file=sys.stderr)
        return 1
    subjects = load_dataset(args.data)
    rows = []
    for subject in subjects:
        _, diag = model.forward_subject(subject)
        for track in diag.tracks:
            for rec in track.records:
                rows.append({
                    "subject_id": subject.subject_id,
                    "timestep": rec.t,
                    "view_pair": track.view_pair,
                    "peak_divergence": float(rec.peak),
                    "peak_row": rec.pos[0],
                    "peak_col": rec.pos[1],
                    "persistent": int(track.persistent),
                    "track_score": float(track.score),
                    "subject_score": float(diag.asym_score),
                })
    write_csv(args.out, rows)
    print(f"wrote {len(rows)} track records for {len(subjects)} subjects "
          f"to {args.out}")
    return 0


def cmd_ablation_sweep(args) -> int:
    """Train matched full/no-asymmetry pairs over several seeds and compare
    1-year AUC on the high-density tercile of each test split.

    Datasets and checkpoints live in a scratch directory (removed as the
    sweep advances unless --keep-work); only the comparison table and the
    per-arm prediction/log CSVs end up under --out.
    """
    import shutil
    from mammorisk.metrics import (assign_density_groups, rocauc_year)
    from mammorisk.model import ModelConfig, RiskModel
    from mammorisk.synthetic import SyntheticConfig, generate_dataset, \
        load_dataset
    from mammorisk.training import TrainConfig, evaluate, make_splits, train, \
        write_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    work = Path(args.work) if args.work else out / "scratch"
    rows = []
    for seed in range(args.seed0, args.seed0 + args.seeds):
        data_dir = work / f"data_seed{seed}"
        if not (data_dir / "manifest.csv").exists():
            generate_dataset(SyntheticConfig(
                n_subjects=args.n_subjects, seed=seed), data_dir)
        subjects = load_dataset(data_dir)
        result = {"seed": seed}
        for tag, use_asym in (("full", True), ("no_asym", False)):
            run_dir = work / f"run_seed{seed}_{tag}"
            model = RiskModel(ModelConfig(init_seed=seed, use_asym=use_asym))
            train(model, subjects,
                  TrainConfig(epochs=args.epochs, seed=seed), run_dir)
            best, _ = RiskModel.load(run_dir / "best")
            records, rows_pred = evaluate(
                best, make_splits(subjects, seed)["test"])
            arm_dir = out / f"seed{seed}_{tag}"
            arm_dir.mkdir(parents=True, exist_ok=True)
            write_csv(arm_dir / "test_predictions.csv", rows_pred)
            shutil.copyfile(run_dir / "train_log.csv",
                            arm_dir / "train_log.csv")
            groups = assign_density_groups(records)
            auc = rocauc_year(groups["high"], 1)
            result[tag] = float("nan") if auc is None else auc
            print(f"seed {seed} {tag}: high-density 1-year AUC "
                  f"{result[tag]:.4f}", flush=True)
            if not args.keep_work:
                shutil.rmtree(run_dir)
        result["full_beats_no_asym"] = int(result["full"] > result["no_asym"])
        rows.append(result)
        write_csv(out / "sweep_results.csv", rows)  # checkpoint progress
        if not args.keep_work:
            shutil.rmtree(data_dir)
    wins = sum(r["full_beats_no_asym"] for r in rows)
    print(f"full model wins {wins}/{len(rows)} seeds")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mammorisk",
        description="longitudinal mammography risk model (synthetic bench)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-subjects", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a risk model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--boot-seed", type=int, default=0)
    p.add_argument("--tag", default="model")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("scan-bench", help="benchmark the selective scan")
    p.add_argument("--lmax", type=int, default=4096)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_scan_bench)

    p = sub.add_parser("asym-inspect", help="dump asymmetry tracks as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_asym_inspect)

    p = sub.add_parser("ablation-sweep",
                       help="train full vs no-asymmetry across seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--n-subjects", type=int, default=500)
    p.add_argument("--work", default=None,
                   help="scratch dir for datasets/checkpoints "
                        "(default <out>/scratch)")
    p.add_argument("--keep-work", action="store_true",
                   help="keep datasets and checkpoints after each arm")
    p.set_defaults(fn=cmd_ablation_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
