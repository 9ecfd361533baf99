"""Scan generator seeds for a demo graph with the advertised map shape.

The demo promises two sweeps over the same snapshot: varying
neighbor_weight (0.5 -> 1.0 at second_order_weight 0.25) must keep the
same route, while varying second_order_weight (0.25 -> 0.5 at
neighbor_weight 0.5) must switch it. Both sweeps share the grid point
(0.5, 0.25), so only three distinct routes need computing per seed.

Run after any change to the graph generator or the cost formula, then
pin the first reported seed as routing.DEMO_SEED:

    python3 scripts/tune_demo_seed.py [--start 0] [--count 200]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from decisiondb import routing


def probe(seed: int) -> tuple[bool, bool]:
    """(neighbor sweep constant?, second-order sweep fractured?)."""
    graph = routing.generate_demo_graph(seed, routing.DEMO_NODE_COUNT)
    start, end = routing.DEMO_QUERY["start"], routing.DEMO_QUERY["end"]

    def route(nw: str, sow: str) -> tuple[int, ...]:
        rep = routing.build_cost_representation(graph, nw, sow)
        return routing.dijkstra_route(rep, start, end).route_nodes

    shared = route("0.5", "0.25")
    neighbor_constant = route("1.0", "0.25") == shared
    second_order_fractured = route("0.5", "0.5") != shared
    return neighbor_constant, second_order_fractured


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--start", type=int, default=0)
    parser.add_argument("--count", type=int, default=200)
    args = parser.parse_args()

    for seed in range(args.start, args.start + args.count):
        constant, fractured = probe(seed)
        marks = f"neighbor_constant={constant} second_order_fractured={fractured}"
        if constant and fractured:
            print(f"seed {seed}: {marks}  <- pin this as DEMO_SEED")
            return 0
        print(f"seed {seed}: {marks}")
    print("no seed in range satisfied both sweeps", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
