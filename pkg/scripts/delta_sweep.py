"""Injection count and domain reward as the binarizer threshold sweeps.

    python scripts/delta_sweep.py [--config configs/graded_delta.ini] [--deltas 0 0.3 0.6 0.9 1.0]
"""

import argparse
import dataclasses

import numpy as np

from sgrpo.config import load_config
from sgrpo.harness import run_single
from sgrpo.verifier import BinarizerSpec


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/graded_delta.ini")
    parser.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.3, 0.6, 0.9, 1.0])
    args = parser.parse_args()

    base = load_config(args.config)
    print(f"{'delta':>6} {'injections':>12} {'final raw score':>16} {'final reward':>13}")
    for delta in args.deltas:
        cfg = dataclasses.replace(base, train=dataclasses.replace(base.train, delta=delta),
                                  binarizer=BinarizerSpec(delta))
        inj, raw, rew = [], [], []
        for seed in cfg.seeds:
            rows = run_single(cfg, cfg.variants[0], seed).rows
            inj.append(sum(r.injection_fired for r in rows))
            raw.append(np.mean([r.mean_raw_score for r in rows[-cfg.final_window:]]))
            rew.append(np.mean([r.mean_reward for r in rows[-cfg.final_window:]]))
        print(f"{delta:>6.2f} {np.mean(inj):>12.1f} {np.mean(raw):>16.3f} {np.mean(rew):>13.3f}")


if __name__ == "__main__":
    main()
