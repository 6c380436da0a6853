"""Importance-driven selective transmission of frame patches over a lossy datagram link."""

from .detection import DetectionOutcome, FidelityDetector, SceneConfig, detect, evaluate, scene_generate
from .frame_grid import BoundingBox, CellId, Frame, GridSpec, Patch, assemble, pad_to_grid, tile
from .harness import ExperimentConfig, MetricsRecord, run_episode, run_matrix
from .importance import QImportanceModel, probability_map, train_step, weight_map
from .mask import Mask
from .reconstruct import interpolate, reconstruction_error
from .scheduler import ScheduleConfig, budget, random_mask, schedule, select_top
from .transport import ChannelConfig, channel_transmit, decode_feedback, decode_packet, encode_feedback, encode_packet

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CellId",
    "ChannelConfig",
    "DetectionOutcome",
    "ExperimentConfig",
    "FidelityDetector",
    "Frame",
    "GridSpec",
    "Mask",
    "MetricsRecord",
    "Patch",
    "QImportanceModel",
    "SceneConfig",
    "ScheduleConfig",
    "assemble",
    "budget",
    "channel_transmit",
    "decode_feedback",
    "decode_packet",
    "detect",
    "encode_feedback",
    "encode_packet",
    "evaluate",
    "interpolate",
    "pad_to_grid",
    "probability_map",
    "random_mask",
    "reconstruction_error",
    "run_episode",
    "run_matrix",
    "scene_generate",
    "schedule",
    "select_top",
    "tile",
    "train_step",
    "weight_map",
]
