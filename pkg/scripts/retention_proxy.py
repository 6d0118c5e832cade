"""Retention of a pre-trained prompt set after domain adaptation, SFT vs CGI.

    python scripts/retention_proxy.py [--config configs/retention.ini] [--out runs/retention]
"""

import argparse

from sgrpo import harness
from sgrpo.config import load_config


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/retention.ini")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    config = load_config(args.config)
    out = harness.run(config, output_dir=args.out)
    print(harness.compare([out], final_window=config.final_window).to_text())


if __name__ == "__main__":
    main()
