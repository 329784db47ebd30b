#!/usr/bin/env python3
"""Sweep angular speed and report recovery error on synthetic packets.

For each magnitude on the grid, draws a few random rotation axes, renders a
30k-event packet, estimates the rate from a cold start, and prints per-seed
and aggregate errors in deg/s.  Useful for eyeballing where the capture range
of the default optimizer settings ends.

Example:
    python3 scripts/recovery_sweep.py --mags 50,150,300,450 --seeds 3
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

DEG = math.pi / 180.0


def run_one(camera, lut, mag_deg, seed, packet_size, anneal):
    rng = np.random.default_rng(seed * 7919 + int(mag_deg))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    omega = axis * mag_deg * DEG
    span = min(0.25, 0.45 / (mag_deg * DEG))
    per_point = (packet_size * 1.25 / 300) / span
    scene = generate_scene(300, (0.7 * per_point, 1.3 * per_point), 0.4,
                           seed=seed)
    stream = simulate_events(scene, ConstOmega(omega), span * 1.2, camera)
    packets = packetize(stream, packet_size)
    if not packets:
        return None
    packet = packets[0]
    theta0 = None
    if anneal:
        coarse = estimate_packet(packet, lut, "const",
                                 LossConfig(sigma_smooth=2.0),
                                 OptimConfig(lr=0.2, max_iters=60))
        theta0 = coarse.params.omega
    est = estimate_packet(packet, lut, "const", LossConfig(), OptimConfig(),
                          theta0=theta0)
    return np.linalg.norm(est.params.omega - omega) / DEG


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mags", default="50,100,200,300,400,500",
                    help="comma-separated |omega| grid in deg/s")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--packet-size", type=int, default=30000)
    ap.add_argument("--no-anneal", action="store_true",
                    help="skip the coarse capture stage (pure cold start)")
    ap.add_argument("--out", help="optional CSV path for the raw errors")
    args = ap.parse_args(argv)

    camera = CameraModel(fx=200.0, fy=200.0, cx=120.0, cy=90.0,
                         width=240, height=180)
    lut = build_bearing_lut(camera)
    rows = []
    print(f"{'|w| deg/s':>10} {'seed':>5} {'err deg/s':>10} {'sec':>6}")
    for mag in [float(m) for m in args.mags.split(",")]:
        errs = []
        for seed in range(args.seeds):
            t0 = time.time()
            err = run_one(camera, lut, mag, seed, args.packet_size,
                          not args.no_anneal)
            if err is None:
                print(f"{mag:10.1f} {seed:5d} {'(short)':>10}")
                continue
            errs.append(err)
            rows.append((mag, seed, err))
            print(f"{mag:10.1f} {seed:5d} {err:10.4f} {time.time() - t0:6.1f}")
        if errs:
            print(f"{mag:10.1f} {'all':>5} median {np.median(errs):.4f} "
                  f"worst {max(errs):.4f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("mag_deg_s,seed,err_deg_s\n")
            for mag, seed, err in rows:
                f.write(f"{mag:g},{seed},{err:.6f}\n")
        print("wrote", args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
