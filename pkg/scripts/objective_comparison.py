#!/usr/bin/env python3
"""Compare alignment objectives on the same synthetic scenes.

Renders a handful of constant-rotation packets and estimates the rate with
each objective (NB likelihood, Poisson likelihood, per-event rate score,
contrast/variance), reporting the error distribution per objective.

Example:
    python3 scripts/objective_comparison.py --seeds 5 --mag 200
"""

import argparse
import math
import sys
import time

import numpy as np

from evalign import (
    CameraModel,
    ConstOmega,
    LossConfig,
    OptimConfig,
    build_bearing_lut,
    estimate_packet,
    generate_scene,
    packetize,
    simulate_events,
)
from evalign.likelihood import OBJECTIVES

DEG = math.pi / 180.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--mag", type=float, default=200.0,
                    help="|omega| in deg/s")
    ap.add_argument("--packet-size", type=int, default=30000)
    ap.add_argument("--objectives", default=",".join(sorted(OBJECTIVES)))
    args = ap.parse_args(argv)

    camera = CameraModel(fx=200.0, fy=200.0, cx=120.0, cy=90.0,
                         width=240, height=180)
    lut = build_bearing_lut(camera)
    objectives = args.objectives.split(",")

    packets = []
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed + 31)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        omega = axis * args.mag * DEG
        span = min(0.25, 0.45 / (args.mag * DEG))
        per_point = (args.packet_size * 1.25 / 300) / span
        scene = generate_scene(300, (0.7 * per_point, 1.3 * per_point), 0.4,
                               seed=seed)
        stream = simulate_events(scene, ConstOmega(omega), span * 1.2, camera)
        packets.append((packetize(stream, args.packet_size)[0], omega))

    print(f"{'objective':>10} {'median err':>11} {'worst err':>10} "
          f"{'sec/seed':>9}   (deg/s, {args.seeds} seeds at "
          f"{args.mag:g} deg/s)")
    for name in objectives:
        errs = []
        t0 = time.time()
        for packet, omega in packets:
            est = estimate_packet(packet, lut, "const",
                                  LossConfig(objective=name), OptimConfig())
            errs.append(np.linalg.norm(est.params.omega - omega) / DEG)
        per_seed = (time.time() - t0) / len(packets)
        print(f"{name:>10} {np.median(errs):11.4f} {max(errs):10.4f} "
              f"{per_seed:9.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
