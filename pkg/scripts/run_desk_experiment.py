#!/usr/bin/env python3
"""Fusion-vs-appearance desk experiment.

Generates (or reuses) a synthetic corpus, trains the appearance CNN and the
multi-level slow fusion net over several seeds, and prints the comparison
table. The corpus and per-run artifacts land under --workdir, results also
as workdir/results.json.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sensorimotor.experiments import DeskExperimentConfig, run_desk_experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="desk_experiment")
    ap.add_argument("--subjects", type=int, default=8)
    ap.add_argument("--per-combo", type=int, default=2)
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--arch", default="GTM_SML(RL5_3:app,RL5_3:aff,RL6)")
    args = ap.parse_args()

    cfg = DeskExperimentConfig(
        n_subjects=args.subjects, clips_per_combo=args.per_combo,
        data_seed=args.data_seed, model_seeds=tuple(args.seeds),
        epochs=args.epochs, fused_arch=args.arch)
    outcomes = run_desk_experiment(args.workdir, cfg)

    print()
    print(f"{'seed':>4}  {'appearance':>11}  {'fused':>11}  "
          f"{'pair app':>9}  {'pair fused':>10}")
    for o in outcomes:
        print(f"{o.seed:>4}  {o.app_accuracy:>11.4f}  {o.fused_accuracy:>11.4f}  "
              f"{o.app_pair_accuracy:>9.4f}  {o.fused_pair_accuracy:>10.4f}")
    gains = [o.fused_accuracy - o.app_accuracy for o in outcomes]
    print(f"\nmean fused gain: {sum(gains) / len(gains):+.4f} "
          f"(confusable pair: {cfg.fused_arch})")
    ok = all(o.fused_accuracy >= o.app_accuracy
             and o.fused_pair_accuracy > o.app_pair_accuracy for o in outcomes)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
