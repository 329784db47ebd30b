"""Command-line interface: align, eval, fit-prior, synth, bench.

Configuration resolves in three layers: built-in defaults (the reference
protocol: 30k-event packets, 100 px padding, sigma 1, Adam lr 0.05 for 250
iterations, NB prior fit from the first packet), then an optional JSON config
file, then explicit command-line flags.

Exit codes: 0 success, 1 usage error, 2 missing or invalid input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset_io import ParseError, gt_linear_velocity, load_dataset
from .evaluation import RAD_TO_DEG, compute_metrics, estimate_vector, fit_scale, gt_velocity_at
from .events import CameraModel, make_params, MODEL_CLASSES, PriorParams
from .iwe import CanvasGeometry, accumulate, smooth, write_pgm
from .likelihood import LossConfig, fit_gamma_prior, prior_counts
from .loss_kernel import make_fused_loss
from .optimizer import EstimationError, OptimConfig, VelocityEstimate, run_sequence
from .simulator import SimulationError, generate_scene, write_dataset
from .warp import build_bearing_lut, warp_events

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3

PARAM_COLUMNS = {
    "const": ["wx", "wy", "wz"],
    "affine": ["w0x", "w0y", "w0z", "ax", "ay", "az"],
    "linear": ["vx", "vy", "vz"],
}
_COLUMNS_TO_MODEL = {tuple(v): k for k, v in PARAM_COLUMNS.items()}


@dataclass(frozen=True)
class RunConfig:
    """Pipeline settings; the defaults reproduce the reference protocol."""

    model: str = "const"
    objective: str = "nb"
    packet_size: int = 30000
    pad: int = 100
    sigma: float = 1.0
    prior: str = "fit"          # "fit" or "r,q"
    lr: float = 0.05
    max_iters: int = 250
    fd_step: float = 1e-3
    warm_start: bool = True
    engine: str = "fused"
    voting: str = "bilinear"
    imu_lag_ms: float = 2.4
    gt_frame: str = "camera"
    excursion: str = "peak"
    sensor_width: int = 240
    sensor_height: int = 180
    threads: int = 0


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage problems; the contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", EXIT_USAGE)


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}", EXIT_INPUT)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CliError(f"invalid JSON in {path}: {e}", EXIT_INPUT)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise CliError(f"unknown config keys in {path}: {sorted(unknown)}", EXIT_INPUT)
        cfg = replace(cfg, **data)
    overrides = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if getattr(args, "no_warm_start", False):
        overrides["warm_start"] = False
    if overrides:
        cfg = replace(cfg, **overrides)
    if cfg.model not in MODEL_CLASSES:
        raise CliError(f"unknown model {cfg.model!r}", EXIT_USAGE)
    if cfg.objective not in ("nb", "poisson_ml", "cmax"):
        raise CliError(f"unknown objective {cfg.objective!r}", EXIT_USAGE)
    return cfg


def _resolve_prior(cfg: RunConfig, events, camera) -> PriorParams:
    if cfg.prior == "fit":
        n = min(len(events), cfg.packet_size)
        if n == 0:
            raise CliError("cannot fit prior: no events", EXIT_INPUT)
        head = events[:n]
        counts = prior_counts(head.x, head.y, head.polarity, camera.width, camera.height)
        try:
            return fit_gamma_prior(counts)
        except ValueError as e:
            raise CliError(f"prior fit failed: {e}", EXIT_INPUT)
        except RuntimeError as e:
            raise CliError(f"prior fit failed: {e}", EXIT_NUMERIC)
    try:
        r_str, q_str = cfg.prior.split(",")
        return PriorParams(r=float(r_str), q=float(q_str))
    except (ValueError, AttributeError):
        raise CliError(
            f"--prior must be 'fit' or 'r,q' (e.g. '0.1,0.39'), got {cfg.prior!r}",
            EXIT_USAGE,
        )


def _loss_and_optim(cfg: RunConfig, prior: PriorParams):
    loss_config = LossConfig(objective=cfg.objective, prior=prior,
                             sigma_smooth=cfg.sigma, voting=cfg.voting)
    optim_config = OptimConfig(lr=cfg.lr, max_iters=cfg.max_iters,
                               fd_step=cfg.fd_step, warm_start=cfg.warm_start,
                               engine=cfg.engine)
    return loss_config, optim_config


# ---------------------------------------------------------------------------
# align


def _write_estimates_csv(path, estimates: list[VelocityEstimate], model: str) -> None:
    cols = PARAM_COLUMNS[model]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_mid", *cols, "final_loss", "iterations", "converged"])
        for est in estimates:
            theta = est.params.to_array()
            w.writerow([f"{est.t_mid:.9f}",
                        *[f"{v:.9g}" for v in theta],
                        f"{est.final_loss:.9g}", est.iterations, int(est.converged)])


def _read_estimates_csv(path):
    """Returns (model, list of (t_mid, theta)) from an estimates CSV."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"estimates file not found: {path}", EXIT_INPUT)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"empty estimates file: {path}", EXIT_INPUT)
        params_cols = tuple(header[1:-3])
        model = _COLUMNS_TO_MODEL.get(params_cols)
        if header[:1] != ["t_mid"] or model is None:
            raise CliError(f"unrecognized estimates schema in {path}: {header}", EXIT_INPUT)
        rows = []
        for line in reader:
            t_mid = float(line[0])
            theta = np.array([float(v) for v in line[1 : 1 + len(params_cols)]])
            rows.append((t_mid, theta))
    if not rows:
        raise CliError(f"no estimate rows in {path}", EXIT_INPUT)
    return model, rows


def _render_packets(render_dir, estimates, stream, cfg, lut, loss_config):
    from .events import packetize

    render_dir = Path(render_dir)
    render_dir.mkdir(parents=True, exist_ok=True)
    geometry = CanvasGeometry(sensor_width=lut.camera.width,
                              sensor_height=lut.camera.height, pad=cfg.pad)
    packets = packetize(stream, cfg.packet_size)
    for i, (packet, est) in enumerate(zip(packets, estimates)):
        theta = est.params.to_array()
        if not np.all(np.isfinite(theta)):
            continue
        xw, yw, valid = warp_events(packet.x, packet.y, packet.tau, est.params,
                                    packet.duration, lut)
        pos, neg = accumulate(xw, yw, packet.polarity, geometry, valid=valid,
                              method=loss_config.voting)
        write_pgm(smooth(pos, loss_config.sigma_smooth), render_dir / f"packet_{i:04d}_pos.pgm")
        write_pgm(smooth(neg, loss_config.sigma_smooth), render_dir / f"packet_{i:04d}_neg.pgm")


def cmd_align(args) -> int:
    cfg = _load_run_config(args)
    events, camera, _imu, _poses = load_dataset(args.dataset, cfg.sensor_width, cfg.sensor_height)
    lut = build_bearing_lut(camera)
    prior = _resolve_prior(cfg, events, camera)
    loss_config, optim_config = _loss_and_optim(cfg, prior)
    geometry = CanvasGeometry(sensor_width=camera.width, sensor_height=camera.height,
                              pad=cfg.pad)
    estimates = run_sequence(events, lut, cfg.model, loss_config, optim_config,
                             packet_size=cfg.packet_size, geometry=geometry)
    if not estimates:
        raise CliError(
            f"stream too short: {len(events)} events < packet size {cfg.packet_size}",
            EXIT_INPUT,
        )
    _write_estimates_csv(args.out, estimates, cfg.model)
    if args.render_dir:
        _render_packets(args.render_dir, estimates, events, cfg, lut, loss_config)
    n_failed = sum(1 for e in estimates if not np.all(np.isfinite(e.params.to_array())))
    print(f"align: {len(estimates)} packets -> {args.out}"
          + (f" ({n_failed} failed)" if n_failed else ""))
    return EXIT_NUMERIC if n_failed == len(estimates) else EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    events, camera, imu, poses = load_dataset(args.dataset, cfg.sensor_width, cfg.sensor_height)
    sequence = args.sequence or Path(args.dataset).name
    lag = cfg.imu_lag_ms * 1e-3
    methods = args.method.split(",") if args.method else None
    if methods and len(methods) != len(args.estimates):
        raise CliError("--method needs one label per estimates file", EXIT_USAGE)

    rows = []
    for idx, est_path in enumerate(args.estimates):
        model, est_rows = _read_estimates_csv(est_path)
        method = methods[idx] if methods else Path(est_path).stem
        t_mids = [t for t, _ in est_rows]
        vectors = []
        for t_mid, theta in est_rows:
            if not np.all(np.isfinite(theta)):
                raise CliError(f"non-finite estimate at t_mid={t_mid} in {est_path}", EXIT_NUMERIC)
            params = make_params(model, theta)
            est = VelocityEstimate(params=params, t_mid=t_mid, final_loss=0.0,
                                   iterations=0, converged=True)
            vectors.append(est)

        if model == "linear":
            if poses is None:
                raise CliError("linear evaluation needs groundtruth.txt with poses", EXIT_INPUT)
            t_gt, v_gt = gt_linear_velocity(poses, frame=cfg.gt_frame)
            lo, hi = t_gt[0], t_gt[-1]
            gaps = [t for t in t_mids if t < lo or t > hi]
            if gaps:
                raise CliError(
                    f"ground truth does not cover t_mid values: {gaps[:5]}"
                    + ("..." if len(gaps) > 5 else ""), EXIT_INPUT)
            gt_at = lambda t: np.array([np.interp(t, t_gt, v_gt[:, i]) for i in range(3)])
            est_vecs = [estimate_vector(e) for e in vectors]
            gt_vecs = [gt_at(t) for t in t_mids]
            try:
                s = fit_scale(est_vecs, gt_vecs)
            except ValueError as e:
                raise CliError(f"scale fit failed: {e}", EXIT_NUMERIC)
            scaled = [VelocityEstimate(params=make_params("linear", s * v), t_mid=t,
                                       final_loss=0.0, iterations=0, converged=True)
                      for v, (t, _) in zip(est_vecs, est_rows)]
            m = compute_metrics(scaled, gt_at, unit_scale=1.0, excursion=cfg.excursion)
        else:
            if imu is None:
                raise CliError("angular evaluation needs imu.txt", EXIT_INPUT)
            lo, hi = imu.t[0] + lag, imu.t[-1] + lag
            gaps = [t for t in t_mids if t < lo or t > hi]
            if gaps:
                raise CliError(
                    f"IMU does not cover t_mid values (lag-adjusted): {gaps[:5]}"
                    + ("..." if len(gaps) > 5 else ""), EXIT_INPUT)
            m = compute_metrics(vectors, lambda t: gt_velocity_at(imu, t, lag=lag),
                                unit_scale=RAD_TO_DEG, excursion=cfg.excursion)
        rows.append((sequence, method, m))

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sequence", "method", "e_wx", "e_wy", "e_wz", "sigma", "rms", "rms_pct"])
        for sequence, method, m in rows:
            w.writerow([sequence, method,
                        f"{m.e_wx:.6g}", f"{m.e_wy:.6g}", f"{m.e_wz:.6g}",
                        f"{m.sigma_ew:.6g}", f"{m.rms:.6g}", f"{m.rms_pct:.6g}"])
    for sequence, method, m in rows:
        print(f"eval: {sequence}/{method}: rms={m.rms:.4g} rms_pct={m.rms_pct:.4g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-prior


def cmd_fit_prior(args) -> int:
    cfg = _load_run_config(args)
    events, camera, _imu, _poses = load_dataset(args.dataset, cfg.sensor_width, cfg.sensor_height)
    n = min(len(events), cfg.packet_size)
    if n == 0:
        raise CliError("no events to fit a prior on", EXIT_INPUT)
    head = events[:n]
    counts = prior_counts(head.x, head.y, head.polarity, camera.width, camera.height)
    try:
        prior = fit_gamma_prior(counts)
    except ValueError as e:
        raise CliError(str(e), EXIT_INPUT)
    except RuntimeError as e:
        raise CliError(str(e), EXIT_NUMERIC)
    out = {"r": prior.r, "q": prior.q, "n_events": n}
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    print(f"fit-prior: r={prior.r:.4f} q={prior.q:.4f} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def _parse_vec3(text: str, flag: str) -> np.ndarray:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{flag} expects 'x,y,z', got {text!r}", EXIT_USAGE)
    if len(parts) != 3:
        raise CliError(f"{flag} expects 3 comma-separated values, got {len(parts)}", EXIT_USAGE)
    return np.array(parts)


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    deg = math.pi / 180.0
    given = [v is not None for v in (args.omega, args.vel)]
    if sum(given) != 1:
        raise CliError("exactly one of --omega or --vel is required", EXIT_USAGE)
    if args.omega is not None:
        omega = _parse_vec3(args.omega, "--omega") * deg
        if args.accel is not None:
            accel = _parse_vec3(args.accel, "--accel") * deg
            motion = make_params("affine", np.concatenate([omega, accel]))
        else:
            motion = make_params("const", omega)
    else:
        if args.accel is not None:
            raise CliError("--accel applies only to rotational motion", EXIT_USAGE)
        motion = make_params("linear", _parse_vec3(args.vel, "--vel"))

    camera = CameraModel(fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy,
                         width=cfg.sensor_width, height=cfg.sensor_height,
                         k1=args.k1, k2=args.k2, p1=args.p1, p2=args.p2, k3=args.k3)
    scene = generate_scene(args.n_points, (args.rate_min, args.rate_max),
                           args.fov, args.seed)
    try:
        events = write_dataset(args.out, scene, motion, args.duration, camera)
    except SimulationError as e:
        raise CliError(str(e), EXIT_NUMERIC)
    print(f"synth: {len(events)} events -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    objectives = args.objectives.split(",")
    for obj in objectives:
        if obj not in ("nb", "poisson_ml", "cmax"):
            raise CliError(f"unknown objective {obj!r}", EXIT_USAGE)
    deg = math.pi / 180.0

    camera = CameraModel(fx=200.0, fy=200.0, cx=cfg.sensor_width / 2,
                         cy=cfg.sensor_height / 2,
                         width=cfg.sensor_width, height=cfg.sensor_height)
    lut = build_bearing_lut(camera)
    geometry = CanvasGeometry(sensor_width=camera.width, sensor_height=camera.height,
                              pad=cfg.pad)
    # one moderately-moving scene; sliced to each benchmark size
    motion = make_params("const", np.array([0.0, 0.0, 200.0 * deg]))
    scene = generate_scene(400, (600.0, 1400.0), 0.45, args.seed)
    from .simulator import simulate_events
    from .events import packetize

    need = max(sizes)
    duration = need / (float(np.sum(scene.rates)) * 0.9)
    events = simulate_events(scene, motion, duration, camera)
    if len(events) < need:
        raise CliError(
            f"benchmark scene produced {len(events)} events < {need}", EXIT_NUMERIC)

    rows = []
    theta_probe = np.zeros(3)  # unaligned evaluation, the optimizer's main regime
    for obj in objectives:
        loss_config = LossConfig(objective=obj, sigma_smooth=cfg.sigma, voting=cfg.voting)
        for n in sizes:
            packet = packetize(events[:n], n)[0]
            fn = make_fused_loss(packet, lut, geometry, loss_config, "const")
            fn(theta_probe)  # warm-up (JIT compile on first use)
            fn(theta_probe)
            times = []
            for _ in range(args.repeats):
                t0 = time.perf_counter_ns()
                fn(theta_probe)
                times.append(time.perf_counter_ns() - t0)
            rows.append((obj, n, int(np.median(times))))

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["objective", "N_e", "ns_per_eval"])
        for row in rows:
            w.writerow(row)
    for obj, n, ns in rows:
        print(f"bench: {obj} N={n}: {ns / 1e6:.3f} ms/eval")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with RunConfig overrides")
    p.add_argument("--packet-size", dest="packet_size", type=int)
    p.add_argument("--pad", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--sensor-width", dest="sensor_width", type=int)
    p.add_argument("--sensor-height", dest="sensor_height", type=int)
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evalign",
                     description="Event-stream camera velocity estimation by "
                                 "point-process likelihood maximization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="estimate per-packet velocities", parents=[])
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output estimates CSV")
    p.add_argument("--render-dir", help="write per-packet IWE renders (PGM) here")
    p.add_argument("--model", choices=sorted(MODEL_CLASSES))
    p.add_argument("--objective", choices=["nb", "poisson_ml", "cmax"])
    p.add_argument("--prior", help="'fit' or 'r,q'")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--fd-step", dest="fd_step", type=float)
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--engine", choices=["fused", "reference"])
    p.add_argument("--voting", choices=["bilinear", "nearest"])
    _add_common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="compare estimates against ground truth")
    p.add_argument("--estimates", required=True, nargs="+", help="estimates CSV file(s)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output metrics CSV")
    p.add_argument("--sequence", help="sequence label (default: dataset dir name)")
    p.add_argument("--method", help="comma-separated method labels, one per estimates file")
    p.add_argument("--imu-lag-ms", dest="imu_lag_ms", type=float)
    p.add_argument("--gt-frame", dest="gt_frame", choices=["camera", "world"])
    p.add_argument("--excursion", choices=["peak", "peak_to_peak"])
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit-prior", help="fit the NB prior from raw counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output prior JSON")
    _add_common(p)
    p.set_defaults(func=cmd_fit_prior)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--omega", help="angular velocity 'x,y,z' in deg/s")
    p.add_argument("--accel", help="angular acceleration 'x,y,z' in deg/s per unit "
                                   "packet time (with --omega: affine model)")
    p.add_argument("--vel", help="linear velocity 'x,y,z' (unit depth, 1/s)")
    p.add_argument("--n-points", dest="n_points", type=int, default=300)
    p.add_argument("--rate-min", dest="rate_min", type=float, default=500.0)
    p.add_argument("--rate-max", dest="rate_max", type=float, default=1500.0)
    p.add_argument("--fov", type=float, default=0.4, help="scene cone half-angle, rad")
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fx", type=float, default=200.0)
    p.add_argument("--fy", type=float, default=200.0)
    p.add_argument("--cx", type=float, default=120.0)
    p.add_argument("--cy", type=float, default=90.0)
    p.add_argument("--k1", type=float, default=0.0)
    p.add_argument("--k2", type=float, default=0.0)
    p.add_argument("--p1", type=float, default=0.0)
    p.add_argument("--p2", type=float, default=0.0)
    p.add_argument("--k3", type=float, default=0.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time loss evaluations across packet sizes")
    p.add_argument("--out", required=True, help="output timing CSV")
    p.add_argument("--sizes", default="10000,20000,40000,80000")
    p.add_argument("--objectives", default="nb")
    p.add_argument("--repeats", type=int, default=15)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--voting", choices=["bilinear", "nearest"])
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return e.code
    except ParseError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, SimulationError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
