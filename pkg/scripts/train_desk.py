"""Train one of the desk-scale presets (skipped when a matching checkpoint already exists).

    python3 scripts/train_desk.py desk-learning
    python3 scripts/train_desk.py desk-characteristic --root artifacts --force
"""
from __future__ import annotations

import argparse
import logging
import time

from edgesched.presets import PRESETS, ensure_checkpoint


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--root", default="artifacts")
    p.add_argument("--force", action="store_true", help="retrain even if a matching checkpoint exists")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    t0 = time.perf_counter()
    path = ensure_checkpoint(args.preset, args.root, args.force)
    print(f"{args.preset}: {path} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
