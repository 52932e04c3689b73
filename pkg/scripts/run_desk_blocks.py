#!/usr/bin/env python3
"""End-to-end desk-scale demonstration on the blocks task.

Trains with the acceptance configuration, then evaluates the final
checkpoint with 1-trial and 10-trial action selection and prints both
tables for comparison.
"""

import sys
from pathlib import Path

from hse3s.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk_blocks.cfg"
OUT = Path("runs/desk_blocks")


def run():
    code = main(["train", "--config", str(CONFIG)])
    if code != 0:
        return code
    ckpt = OUT / "round_9"
    for trials in (1, 10):
        print("\n=== evaluation, %d-trial selection ===" % trials)
        code = main(["eval", "--ckpt", str(ckpt), "--task", "blocks",
                     "--episodes", "200", "--trials", str(trials),
                     "--conditions", "acf", "--samples", "100",
                     "--min-objects", "2", "--max-objects", "4",
                     "--out", str(OUT / ("eval_%dtrial" % trials))])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
