"""Closed-loop episode runner and experiment matrix."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import yaml

from .detection import (
    DetectionOutcome,
    FidelityDetector,
    SceneConfig,
    bits_transmitted,
    evaluate,
    scene_generate,
)
from .frame_grid import BoundingBox, Frame, GridSpec, Patch, assemble, load_sequence, overlap_map, tile
from .importance import (
    QImportanceModel,
    RewardInput,
    Transition,
    cell_states,
    export_heatmap,
    reward_map,
    train_step,
)
from .mask import Mask
from .reconstruct import interpolate, reconstruction_error
from .scheduler import PatchScheduler, ScheduleConfig, select_top
from .transport import (
    ChannelConfig,
    LossyChannel,
    decode_feedback,
    decode_frame_datagrams,
    encode_feedback,
    encode_packet,
    feedback_size,
)

log = logging.getLogger(__name__)

ALL_METHODS = ("random", "random+interp", "dqn", "dqn+interp")
DEFAULT_RATES = (0.05, 0.10, 0.25, 0.50, 0.75, 0.85, 1.0)


def split_method(method: str) -> tuple[str, bool]:
    """``"dqn+interp"`` -> ``("dqn", True)``."""
    base, _, suffix = method.partition("+")
    if base not in ("random", "dqn") or suffix not in ("", "interp"):
        raise ValueError(f"unknown method {method!r}; expected one of {ALL_METHODS}")
    return base, suffix == "interp"


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    dataset_frames: str | None = None
    dataset_annotations: str | None = None
    k: int = 8
    rates: tuple[float, ...] = DEFAULT_RATES
    methods: tuple[str, ...] = ALL_METHODS
    loss_probability: float = 0.0
    gamma: float = 0.9
    lam: float = 1.0
    alpha: float = 0.1
    reward_overlap: float = 1.0
    reward_motion: float = 0.5
    n_bins: int = 4
    per_cell: bool = True
    theta: float = 0.8
    bootstrap_frames: int = 4
    feedback_period: int = 1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.scene, dict):
            scene = dict(self.scene)
            for key in ("velocity", "start", "background_range", "object_range"):
                if scene.get(key) is not None:
                    scene[key] = tuple(scene[key])
            self.scene = SceneConfig(**scene)
        self.rates = tuple(float(r) for r in self.rates)
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        for m in self.methods:
            split_method(m)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        ScheduleConfig(rate=1.0, k=self.k, bootstrap_frames=self.bootstrap_frames,
                       feedback_period=self.feedback_period)
        for r in self.rates:
            ScheduleConfig(rate=r, k=self.k)
        ChannelConfig(self.loss_probability)
        self.model()
        if not 0 < self.theta <= 1:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")

    def model(self) -> QImportanceModel:
        model = QImportanceModel(
            gamma=self.gamma, lam=self.lam, alpha=self.alpha, n_bins=self.n_bins, per_cell=self.per_cell
        )
        model._check_params()
        return model

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scene"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["scene"].items()}
        for key in ("rates", "methods", "seeds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        return cls.from_dict(doc)

    def dump(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


@dataclass
class MetricsRecord:
    method: str
    rate: float
    seed: int
    f1: float
    precision: float
    recall: float
    bits_total: int
    frames: int
    mean_reconstruction_error: float
    mean_filler_error: float
    feedback_bits: int
    datagrams_lost: int
    mean_map_change: float
    wall_time: float


@dataclass
class EpisodeTrace:
    record: MetricsRecord
    masks: list[Mask]
    prob_maps: list[np.ndarray]
    losses: list[float]
    outcomes: list[DetectionOutcome]


class GroundStation:
    """Receiver: reassembles, optionally interpolates, learns, and picks the next mask."""

    def __init__(
        self,
        grid: GridSpec,
        rate: float,
        model: QImportanceModel | None = None,
        interp: bool = False,
        reward_overlap: float = 1.0,
        reward_motion: float = 0.5,
    ):
        self.grid = grid
        self.rate = rate
        self.model = model
        self.interp = interp
        self.reward_overlap = reward_overlap
        self.reward_motion = reward_motion
        self.prev_frame: Frame | None = None
        self.prev_mask: Mask | None = None
        self.states = None
        self.probs: np.ndarray | None = None
        self.losses: list[float] = []

    def reconstruct(self, frame_index: int, patches: Sequence[Patch]) -> tuple[Frame, Frame, Mask]:
        """Return ``(reconstructed, filler_only, received_mask)``."""
        k = self.grid.k
        received = Mask.from_cells(k, (p.cell.linear(k) for p in patches), frame_index)
        filled = assemble(patches, self.grid, received, frame_index=frame_index)
        recon = interpolate(filled, received, self.prev_frame, self.grid) if self.interp else filled
        return recon, filled, received

    def motion(self, frame: Frame, received: Mask) -> np.ndarray:
        """Per-cell mean absolute change versus the previous frame, over cells received in both."""
        if self.prev_frame is None or self.prev_mask is None:
            return np.zeros(self.grid.n_cells)
        g = self.grid
        diff = np.abs(frame.pixels.astype(np.int16) - self.prev_frame.pixels.astype(np.int16))
        cells = diff.reshape(g.k, g.patch_h, g.k, g.patch_w).mean(axis=(1, 3)).ravel() / 255.0
        return np.where(received.bits & self.prev_mask.bits, cells, 0.0)

    def observe(self, frame: Frame, received: Mask, gt: BoundingBox | None) -> Mask | None:
        """Learn from the frame just reconstructed; return the mask for the next frame."""
        motion = self.motion(frame, received)
        self.prev_frame, self.prev_mask = frame, received
        if self.model is None:
            return None
        overlap = overlap_map(self.grid, gt) if gt is not None else np.zeros(self.grid.n_cells)
        n_bins = self.model.n_bins
        rewards = reward_map(RewardInput(gt, motion), self.grid, self.reward_overlap, self.reward_motion)
        next_states = cell_states(overlap, motion, n_bins)
        if self.states is not None:
            batch = [
                Transition(s, int(a), float(r), s2)
                for s, a, r, s2 in zip(self.states, received.bits, rewards, next_states)
            ]
            self.losses.append(train_step(self.model, batch, self.probs))
        self.states = next_states
        self.probs = self.model.predict_proba(next_states, self.probs)
        return select_top(self.probs, self.rate, self.grid.k, frame_index=received.frame_index + 1)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def scene_for_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[Frame], list[BoundingBox]]:
    if cfg.dataset_frames:
        if not cfg.dataset_annotations:
            raise ValueError("dataset_frames needs dataset_annotations")
        return load_sequence(cfg.dataset_frames, cfg.dataset_annotations, cfg.k)
    scene = dataclasses.replace(
        cfg.scene,
        background_seed=_derive_seed(cfg.scene.background_seed, seed),
        object_seed=_derive_seed(cfg.scene.object_seed, seed),
        bootstrap_frames=cfg.bootstrap_frames,
    )
    return scene_generate(scene)


def simulate(
    cfg: ExperimentConfig,
    method: str,
    rate: float,
    seed: int,
    scene: tuple[list[Frame], list[BoundingBox]] | None = None,
) -> EpisodeTrace:
    """Run one closed-loop episode and keep its per-frame trace."""
    base, interp = split_method(method)
    frames, boxes = scene if scene is not None else scene_for_seed(cfg, seed)
    if len(frames) <= cfg.bootstrap_frames:
        raise ValueError(f"episode needs more than {cfg.bootstrap_frames} frames, got {len(frames)}")
    grid = GridSpec.for_frame(frames[0], cfg.k)
    sched = PatchScheduler(ScheduleConfig(
        rate=rate, k=cfg.k, bootstrap_frames=cfg.bootstrap_frames, method=base,
        seed=_derive_seed(seed, 17), feedback_period=cfg.feedback_period,
    ))
    uplink = LossyChannel(ChannelConfig(cfg.loss_probability, _derive_seed(seed, 1)))
    downlink = LossyChannel(ChannelConfig(cfg.loss_probability, _derive_seed(seed, 2)))
    station = GroundStation(
        grid, rate, cfg.model() if base == "dqn" else None, interp,
        cfg.reward_overlap, cfg.reward_motion,
    )
    detector = FidelityDetector(cfg.theta)

    masks: list[Mask] = []
    maps: list[np.ndarray] = []
    outcomes: list[DetectionOutcome] = []
    recon_err: list[float] = []
    filler_err: list[float] = []
    feedback_msgs = 0
    start = time.perf_counter()
    for n, (frame, gt) in enumerate(zip(frames, boxes)):
        mask = sched.next_mask(n)
        datagrams = [encode_packet(p, grid) for p in tile(frame, grid) if mask.bits[p.cell.linear(grid.k)]]
        delivered = uplink.transmit(datagrams)
        patches, _ = decode_frame_datagrams(delivered, n, grid)
        recon, filled, received = station.reconstruct(n, patches)
        feedback = station.observe(recon, received, gt)
        if feedback is not None and (n + 1) % cfg.feedback_period == 0:
            feedback_msgs += 1
            for d in downlink.transmit([encode_feedback(feedback)]):
                sched.on_feedback(decode_feedback(d))
        if station.probs is not None:
            maps.append(station.probs)
        if n < cfg.bootstrap_frames:
            continue
        masks.append(mask)
        outcomes.append(DetectionOutcome(n, detector.detect(recon, frame, gt), True))
        recon_err.append(reconstruction_error(recon, frame))
        filler_err.append(reconstruction_error(filled, frame))
    wall = time.perf_counter() - start

    f1, precision, recall = evaluate(outcomes)
    changes = [float(np.linalg.norm(b - a)) for a, b in zip(maps, maps[1:])]
    record = MetricsRecord(
        method=method,
        rate=rate,
        seed=seed,
        f1=f1,
        precision=precision,
        recall=recall,
        bits_total=bits_transmitted(masks, grid),
        frames=len(outcomes),
        mean_reconstruction_error=float(np.mean(recon_err)),
        mean_filler_error=float(np.mean(filler_err)),
        feedback_bits=feedback_msgs * feedback_size(grid.k) * 8,
        datagrams_lost=uplink.sent - uplink.delivered,
        mean_map_change=float(np.mean(changes)) if changes else 0.0,
        wall_time=wall,
    )
    return EpisodeTrace(record, masks, maps, station.losses, outcomes)


def run_episode(cfg: ExperimentConfig, method: str, rate: float, seed: int, scene=None) -> MetricsRecord:
    return simulate(cfg, method, rate, seed, scene).record


@dataclass
class MatrixResult:
    records: list[MetricsRecord]
    summary: str
    mean_maps: dict[tuple[str, float, int], np.ndarray] = field(default_factory=dict)

    def mean(self, method: str, rate: float, metric: str = "f1") -> float:
        vals = [getattr(r, metric) for r in self.records if r.method == method and r.rate == rate]
        if not vals:
            raise KeyError((method, rate))
        return float(np.mean(vals))


def run_matrix(cfg: ExperimentConfig) -> MatrixResult:
    """Every method x rate x seed; writes outputs when ``cfg.output_dir`` is set."""
    records: list[MetricsRecord] = []
    mean_maps: dict[tuple[str, float, int], np.ndarray] = {}
    for seed in cfg.seeds:
        scene = scene_for_seed(cfg, seed)
        for method in cfg.methods:
            for rate in cfg.rates:
                trace = simulate(cfg, method, rate, seed, scene)
                records.append(trace.record)
                if trace.prob_maps:
                    mean_maps[(method, rate, seed)] = np.mean(trace.prob_maps, axis=0)
                log.info("%s rate=%.2f seed=%d f1=%.3f", method, rate, seed, trace.record.f1)
    order = {m: i for i, m in enumerate(cfg.methods)}
    records.sort(key=lambda r: (order[r.method], r.rate, cfg.seeds.index(r.seed)))
    result = MatrixResult(records, "", mean_maps)
    result.summary = summary_table(result, cfg)
    if cfg.output_dir:
        write_outputs(result, cfg)
    return result


def summary_table(result: MatrixResult, cfg: ExperimentConfig) -> str:
    """Seed-averaged F1 and precision, one block per rate, one column per method."""
    width = max(14, *(len(m) + 2 for m in cfg.methods))
    head = f"{'rate':>6}  {'metric':<10}" + "".join(f"{m:>{width}}" for m in cfg.methods)
    lines = [head, "-" * len(head)]
    for rate in cfg.rates:
        for label, metric in (("F1", "f1"), ("Precision", "precision")):
            cells = "".join(f"{100 * result.mean(m, rate, metric):>{width - 1}.1f}%" for m in cfg.methods)
            lines.append(f"{100 * rate:>5.0f}%  {label:<10}" + cells)
    return "\n".join(lines) + "\n"


def write_outputs(result: MatrixResult, cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    os.makedirs(os.path.join(out, "heatmaps"), exist_ok=True)
    cfg.dump(os.path.join(out, "config.yaml"))
    names = [f.name for f in dataclasses.fields(MetricsRecord)]
    with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for r in result.records:
            writer.writerow([_fmt(getattr(r, n)) for n in names])
    with open(os.path.join(out, "bits_vs_rate.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rate", "mean_bits_total", "mean_bits_per_frame", "full_frame_bits_per_frame"])
        full = None
        for method in cfg.methods:
            for rate in cfg.rates:
                recs = [r for r in result.records if r.method == method and r.rate == rate]
                bits = float(np.mean([r.bits_total for r in recs]))
                per_frame = float(np.mean([r.bits_total / r.frames for r in recs]))
                if full is None:
                    frames, _ = scene_for_seed(cfg, cfg.seeds[0])
                    grid = GridSpec.for_frame(frames[0], cfg.k)
                    full = bits_transmitted([Mask.full(cfg.k)], grid)
                writer.writerow([method, _fmt(rate), _fmt(bits), _fmt(per_frame), full])
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(result.summary)
    for (method, rate, seed), m in result.mean_maps.items():
        export_heatmap(m, os.path.join(out, "heatmaps", f"{method}_rate{rate:.2f}_seed{seed}.pgm"))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
