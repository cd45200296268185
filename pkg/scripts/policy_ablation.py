"""Compare LFU-with-decay and MaxDistance over a synthetic landmark stream.

For each policy and store cardinality, reports the mean landmark distance
between every non-keyframe and its selected reference, plus eviction counts
and selection time.
"""
import argparse
import time

import numpy as np

from kfrestore.geometry import landmark_distance
from kfrestore.pipeline import PipelineConfig, simulate_policy
from kfrestore.synthetic import landmark_stream


def run(records, policy, cardinality):
    cfg = PipelineConfig(max_cardinality=cardinality, policy=policy)
    t0 = time.perf_counter()
    trace = simulate_policy(records, cfg)
    dt = time.perf_counter() - t0
    dists = [min(ev.distances) for ev in trace if ev.kind == "select"]
    evictions = sum(ev.kind == "insert" and ev.evicted_index is not None for ev in trace)
    rejected = sum(ev.kind == "insert" and not ev.added for ev in trace)
    return float(np.mean(dists)), evictions, rejected, dt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=5000)
    ap.add_argument("--keyframe-every", type=int, default=25)
    ap.add_argument("--cardinalities", default="1,2,5,10,20")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    records = landmark_stream(args.frames, args.keyframe_every, seed=args.seed)
    print(f"{'policy':8} {'k':>3} {'mean dist':>10} {'evicted':>8} {'rejected':>9} {'time s':>7}")
    for policy in ("lfu", "maxdist"):
        for k in (int(c) for c in args.cardinalities.split(",")):
            d, ev, rej, dt = run(records, policy, k)
            print(f"{policy:8} {k:3d} {d:10.3f} {ev:8d} {rej:9d} {dt:7.2f}")


if __name__ == "__main__":
    main()
