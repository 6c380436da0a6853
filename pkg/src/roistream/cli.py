"""Command-line entry point: ``roistream {run,heatmap,scene-gen,send,recv}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from .detection import scene_generate
from .frame_grid import GridSpec, load_annotations, load_pgm, pad_to_grid, save_annotations, save_pgm
from .harness import ExperimentConfig, GroundStation, run_matrix, scene_for_seed, simulate
from .importance import export_heatmap
from .scheduler import PatchScheduler, ScheduleConfig
from .transport import parse_endpoint, socket_receive, socket_send

log = logging.getLogger("roistream")


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    if cfg.output_dir is None:
        cfg.output_dir = "results"
    result = run_matrix(cfg)
    sys.stdout.write(result.summary)
    print(f"{len(result.records)} records written to {cfg.output_dir}")
    return 0


def cmd_heatmap(args) -> int:
    cfg = _load_config(args.config)
    trace = simulate(cfg, args.method, args.rate, args.seed)
    if not trace.prob_maps:
        print(f"method {args.method} produces no probability map", file=sys.stderr)
        return 2
    target = trace.prob_maps[-1] if args.last else sum(trace.prob_maps) / len(trace.prob_maps)
    export_heatmap(target, args.out)
    print(f"wrote {args.out} (f1={trace.record.f1:.3f})")
    return 0


def cmd_scene_gen(args) -> int:
    cfg = _load_config(args.config)
    if args.frames:
        cfg.scene = dataclasses.replace(cfg.scene, frame_count=args.frames)
    frames, boxes = scene_for_seed(cfg, args.seed) if not args.raw_seeds else scene_generate(cfg.scene)
    os.makedirs(args.out, exist_ok=True)
    for f in frames:
        save_pgm(f, os.path.join(args.out, f"frame_{f.index:05d}.pgm"))
    save_annotations(boxes, os.path.join(args.out, "annotations.csv"))
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def _frame_files(directory: str) -> list[str]:
    return sorted(os.path.join(directory, n) for n in os.listdir(directory) if n.lower().endswith(".pgm"))


def cmd_send(args) -> int:
    frames = [pad_to_grid(load_pgm(p, i), args.k) for i, p in enumerate(_frame_files(args.frames))]
    if args.limit:
        frames = frames[: args.limit]
    grid = GridSpec.for_frame(frames[0], args.k)
    sched = PatchScheduler(ScheduleConfig(
        rate=args.rate, k=args.k, bootstrap_frames=args.bootstrap, method=args.method, seed=args.seed,
    ))
    report = socket_send(
        frames, grid, parse_endpoint(args.to), parse_endpoint(args.bind),
        sched.next_mask, feedback_timeout=args.feedback_timeout,
    )
    print(f"sent {report.frames} frames, {report.datagrams} datagrams, {report.bytes_sent} bytes; "
          f"{report.feedback_received} feedback messages")
    return 0


def cmd_recv(args) -> int:
    grid = GridSpec(args.k, args.width, args.height)
    boxes = load_annotations(args.annotations, args.width, args.height) if args.annotations else {}
    cfg = _load_config(args.config)
    station = GroundStation(
        grid, args.rate, cfg.model(), interp=args.interp,
        reward_overlap=cfg.reward_overlap, reward_motion=cfg.reward_motion,
    )

    def on_frame(n, patches, received):
        recon, _, _ = station.reconstruct(n, patches)
        mask = station.observe(recon, received, boxes.get(n))
        if args.out:
            save_pgm(recon, os.path.join(args.out, f"recon_{n:05d}.pgm"))
        return mask

    if args.out:
        os.makedirs(args.out, exist_ok=True)
    report = socket_receive(
        args.frames, grid, parse_endpoint(args.bind), parse_endpoint(args.feedback),
        on_frame=on_frame, deadline=args.deadline_ms / 1000.0,
    )
    cells = sum(m.popcount for m in report.received_masks)
    print(f"received {len(report.frames)} frames, {cells} cells, {report.rejected} rejected datagrams")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roistream", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the method x rate x seed matrix")
    p.add_argument("config", nargs="?", help="YAML experiment config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("heatmap", help="run one learning episode and export its probability heatmap")
    p.add_argument("--config")
    p.add_argument("--method", default="dqn", choices=["dqn", "dqn+interp"])
    p.add_argument("--rate", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--last", action="store_true", help="export the final map instead of the episode mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("scene-gen", help="write a synthetic scene as PGM frames plus annotations.csv")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int)
    p.add_argument("--raw-seeds", action="store_true", help="use the scene seeds verbatim")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scene_gen)

    p = sub.add_parser("send", help="stream a PGM frame directory over UDP")
    p.add_argument("--frames", required=True, help="directory of .pgm frames")
    p.add_argument("--to", required=True, help="receiver host:port")
    p.add_argument("--bind", required=True, help="local host:port for feedback")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--method", default="dqn", choices=["dqn", "random"])
    p.add_argument("--bootstrap", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int)
    p.add_argument("--feedback-timeout", type=float, default=0.5)
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("recv", help="receive, reconstruct and feed back masks over UDP")
    p.add_argument("--bind", required=True)
    p.add_argument("--feedback", required=True, help="sender host:port for feedback")
    p.add_argument("--frames", type=int, required=True, help="number of frames to receive")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--annotations", help="frame_index,x,y,w,h CSV used as the reward signal")
    p.add_argument("--config", help="experiment config supplying importance hyperparameters")
    p.add_argument("--interp", action="store_true")
    p.add_argument("--deadline-ms", type=float, default=33.0)
    p.add_argument("--out", help="directory for reconstructed frames")
    p.set_defaults(func=cmd_recv)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
