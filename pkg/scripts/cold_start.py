"""Reward-curve contrast on the Needle task: GRPO flatlines, CGI converges.

    python scripts/cold_start.py [--config configs/cold_start.ini] [--out runs/cold_start]
"""

import argparse

from sgrpo import harness
from sgrpo.config import load_config


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/cold_start.ini")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    config = load_config(args.config)
    out = harness.run(config, output_dir=args.out)
    print(harness.compare([out], final_window=config.final_window).to_text())
    print(f"\nreward curve: {out / harness.CURVE}")


if __name__ == "__main__":
    main()
