#!/usr/bin/env python3
"""Generate synthetic sentiment JSONL splits for toy-oracle experiments.

The texts are deterministic filler; with the toy oracle only the ordering of
the train indices matters, so these files exist to exercise the full
file-based pipeline (loading, validation balance, persistence).
"""

import argparse
import json
import random
from pathlib import Path

NEGATIVE_BITS = [
    "goes to absurd lengths",
    "remains utterly flat throughout",
    "a tired rehash of better films",
    "drags from the first scene",
    "never earns its runtime",
]
POSITIVE_BITS = [
    "a small personal film with real wallop",
    "sharp, funny and quietly moving",
    "earns every minute of its runtime",
    "crackles with energy",
    "a warm surprise from start to finish",
]


def make_split(n, rng, start=0):
    records = []
    for i in range(n):
        positive = (start + i) % 2 == 1
        bits = POSITIVE_BITS if positive else NEGATIVE_BITS
        text = f"review {start + i}: {rng.choice(bits)}"
        records.append({"text": text, "label": "positive" if positive else "negative"})
    return records


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--train", type=int, default=50)
    parser.add_argument("--val", type=int, default=50)
    parser.add_argument("--test", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, n in (("train", args.train), ("validation", args.val), ("test", args.test)):
        path = out / f"{name}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for record in make_split(n, rng):
                fh.write(json.dumps(record) + "\n")
        print(f"wrote {n:4d} records -> {path}")


if __name__ == "__main__":
    main()
