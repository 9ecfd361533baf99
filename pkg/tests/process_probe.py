"""Emit content identifiers for seeded random payloads, one per line.

Run as a subprocess by identifier-stability tests: two invocations with
different PYTHONHASHSEED values (and different dict insertion orders)
must print byte-identical lines, or content addressing is leaking
process state.
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from payload_gen import random_payload

from decisiondb import canon


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--count", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=424242)
    parser.add_argument("--key-order", choices=("sorted", "reversed"), default="sorted")
    args = parser.parse_args()

    rng = random.Random(args.seed)
    for _ in range(args.count):
        payload = random_payload(rng, key_order=args.key_order)
        print(canon.content_id("snap", payload))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
