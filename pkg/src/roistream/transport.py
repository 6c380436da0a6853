"""Wire codecs, a seeded lossy channel, and a loopback UDP runner.

Patch datagram (big-endian)::

    magic 0xA7 | version 0x01 | frame_index u32 | k u8 | row u8 | col u8 |
    patch_w u16 | patch_h u16 | pixel_format u8 | payload_len u32 |
    payload | crc32 u32

Feedback datagram::

    magic 0xA8 | version 0x01 | frame_index u32 | k u8 | mask bytes | crc32 u32

Mask bytes hold ceil(k*k / 8) bytes, row-major cells, MSB first, 1 = transmit.
The CRC is CRC-32/IEEE (``zlib.crc32``) over every preceding byte.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import (
    CorruptPacketError,
    NotAPacketError,
    TransportError,
    UnsupportedVersionError,
)
from .frame_grid import CellId, Frame, GridSpec, Patch, assemble, tile
from .mask import Mask

log = logging.getLogger(__name__)

PACKET_MAGIC = 0xA7
FEEDBACK_MAGIC = 0xA8
VERSION = 0x01
PIXEL_FORMAT_GRAY8 = 0

_PACKET_HEADER = struct.Struct(">BBIBBBHHBI")
_FEEDBACK_HEADER = struct.Struct(">BBIB")
_CRC = struct.Struct(">I")

PACKET_HEADER_BYTES = _PACKET_HEADER.size
PACKET_OVERHEAD_BYTES = _PACKET_HEADER.size + _CRC.size
assert PACKET_OVERHEAD_BYTES == 22


def feedback_size(k: int) -> int:
    """Datagram length of a feedback message for a k x k grid."""
    return _FEEDBACK_HEADER.size + mask_byte_count(k) + _CRC.size


def mask_byte_count(k: int) -> int:
    return (k * k + 7) // 8


# -- patches ----------------------------------------------------------------


def encode_packet(patch: Patch, grid: GridSpec) -> bytes:
    ph, pw = patch.pixels.shape
    if (pw, ph) != (grid.patch_w, grid.patch_h):
        raise ValueError(f"patch is {pw}x{ph}, grid expects {grid.patch_w}x{grid.patch_h}")
    payload = patch.pixels.tobytes()
    body = _PACKET_HEADER.pack(
        PACKET_MAGIC,
        VERSION,
        patch.frame_index,
        grid.k,
        patch.cell.row,
        patch.cell.col,
        pw,
        ph,
        PIXEL_FORMAT_GRAY8,
        len(payload),
    ) + payload
    return body + _CRC.pack(zlib.crc32(body))


def _check_framing(data: bytes, magic: int, min_len: int) -> None:
    if not data or data[0] != magic:
        raise NotAPacketError("missing magic byte")
    if len(data) < 2:
        raise CorruptPacketError("truncated datagram")
    if data[1] != VERSION:
        raise UnsupportedVersionError(f"unknown version {data[1]}")
    if len(data) < min_len:
        raise CorruptPacketError(f"truncated datagram ({len(data)} bytes)")
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(data[: -_CRC.size]) != crc:
        raise CorruptPacketError("CRC mismatch")


def decode_packet(data: bytes) -> Patch:
    data = bytes(data)
    _check_framing(data, PACKET_MAGIC, PACKET_OVERHEAD_BYTES)
    _, _, frame_index, k, row, col, pw, ph, fmt, n = _PACKET_HEADER.unpack_from(data)
    if fmt != PIXEL_FORMAT_GRAY8:
        raise UnsupportedVersionError(f"unknown pixel format {fmt}")
    if n != pw * ph or len(data) != PACKET_OVERHEAD_BYTES + n:
        raise CorruptPacketError("payload length does not match header")
    if row >= k or col >= k:
        raise CorruptPacketError(f"cell ({row}, {col}) outside a {k}x{k} grid")
    start = _PACKET_HEADER.size
    pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=start).reshape(ph, pw)
    return Patch(frame_index, CellId(row, col), pixels)


# -- feedback ---------------------------------------------------------------


def encode_feedback(mask: Mask, frame_index: int | None = None) -> bytes:
    idx = mask.frame_index if frame_index is None else frame_index
    packed = np.packbits(mask.bits, bitorder="big").tobytes()
    body = _FEEDBACK_HEADER.pack(FEEDBACK_MAGIC, VERSION, idx, mask.k) + packed
    return body + _CRC.pack(zlib.crc32(body))


def decode_feedback(data: bytes) -> Mask:
    data = bytes(data)
    _check_framing(data, FEEDBACK_MAGIC, _FEEDBACK_HEADER.size + _CRC.size)
    _, _, frame_index, k = _FEEDBACK_HEADER.unpack_from(data)
    if k == 0 or len(data) != feedback_size(k):
        raise CorruptPacketError("mask length does not match k")
    raw = np.frombuffer(data, dtype=np.uint8, count=mask_byte_count(k), offset=_FEEDBACK_HEADER.size)
    bits = np.unpackbits(raw, bitorder="big")[: k * k].astype(bool)
    return Mask(k, bits, frame_index)


# -- lossy channel ----------------------------------------------------------


@dataclass(frozen=True)
class ChannelConfig:
    """I.i.d. Bernoulli datagram loss.

    ``burst_loss`` is reserved for a Gilbert-Elliott model and must stay False.
    """

    loss_probability: float = 0.0
    seed: int = 0
    reorder: bool = False
    burst_loss: bool = False

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError(f"loss_probability must lie in [0, 1], got {self.loss_probability}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.burst_loss:
            raise NotImplementedError("burst loss is not implemented")


class LossyChannel:
    """Stateful channel; successive ``transmit`` calls continue one random stream."""

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(cfg.seed)
        self.sent = 0
        self.delivered = 0

    def transmit(self, datagrams: Sequence[bytes]) -> list[bytes]:
        datagrams = list(datagrams)
        keep = self._rng.random(len(datagrams)) >= self.cfg.loss_probability
        out = [d for d, kept in zip(datagrams, keep) if kept]
        if self.cfg.reorder and len(out) > 1:
            out = [out[i] for i in self._rng.permutation(len(out))]
        self.sent += len(datagrams)
        self.delivered += len(out)
        return out


def channel_transmit(datagrams: Sequence[bytes], cfg: ChannelConfig) -> list[bytes]:
    """Drop each datagram independently with ``cfg.loss_probability``."""
    return LossyChannel(cfg).transmit(datagrams)


def decode_frame_datagrams(
    datagrams: Iterable[bytes], frame_index: int, grid: GridSpec
) -> tuple[list[Patch], int]:
    """Decode datagrams for one frame, discarding corrupt, stale and duplicate ones.

    Returns the usable patches and the number of datagrams rejected.
    """
    patches: dict[int, Patch] = {}
    rejected = 0
    for d in datagrams:
        try:
            p = decode_packet(d)
        except Exception as exc:  # noqa: BLE001 - any decode failure is a lost cell
            log.debug("dropping datagram: %s", exc)
            rejected += 1
            continue
        if p.frame_index != frame_index or p.pixels.shape != (grid.patch_h, grid.patch_w):
            rejected += 1
            continue
        lin = p.cell.linear(grid.k)
        if lin >= grid.n_cells or lin in patches:
            rejected += 1
            continue
        patches[lin] = p
    return [patches[i] for i in sorted(patches)], rejected


# -- loopback UDP runner ----------------------------------------------------


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


def _bind(endpoint: tuple[str, int], timeout: float | None) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
        sock.bind(endpoint)
    except OSError as exc:
        sock.close()
        raise TransportError(f"cannot bind {endpoint[0]}:{endpoint[1]}: {exc}") from exc
    sock.settimeout(timeout)
    return sock


MaskSource = Callable[[int, Mask | None], Mask]


@dataclass
class SenderReport:
    frames: int = 0
    datagrams: int = 0
    bytes_sent: int = 0
    feedback_received: int = 0


def socket_send(
    frames: Sequence[Frame],
    grid: GridSpec,
    target: tuple[str, int],
    bind: tuple[str, int],
    choose_mask: MaskSource,
    feedback_timeout: float = 0.5,
) -> SenderReport:
    """Sender loop: emit selected patches per frame, then block for feedback.

    ``choose_mask(frame_index, latest_feedback)`` decides what to send; it is
    normally :meth:`roistream.scheduler.PatchScheduler.next_mask`.
    """
    report = SenderReport()
    sock = _bind(bind, feedback_timeout)
    latest: Mask | None = None
    try:
        for frame in frames:
            mask = choose_mask(frame.index, latest)
            for p in tile(frame, grid):
                if mask.bits[p.cell.linear(grid.k)]:
                    d = encode_packet(p, grid)
                    try:
                        sock.sendto(d, target)
                    except OSError as exc:
                        raise TransportError(f"send to {target} failed: {exc}") from exc
                    report.datagrams += 1
                    report.bytes_sent += len(d)
            report.frames += 1
            latest = _await_feedback(sock, frame.index + 1, feedback_timeout)
            if latest is not None:
                report.feedback_received += 1
    finally:
        sock.close()
    return report


def _await_feedback(sock: socket.socket, wanted: int, timeout: float) -> Mask | None:
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return None
        sock.settimeout(remaining)
        try:
            data, _ = sock.recvfrom(65535)
        except socket.timeout:
            return None
        try:
            fb = decode_feedback(data)
        except Exception:  # noqa: BLE001
            continue
        if fb.frame_index == wanted:
            return fb
        # older feedback is stale; anything newer cannot exist in lockstep


FrameHandler = Callable[[int, list[Patch], Mask], Mask]


@dataclass
class ReceiverReport:
    frames: list[Frame]
    received_masks: list[Mask]
    rejected: int = 0


def socket_receive(
    n_frames: int,
    grid: GridSpec,
    bind: tuple[str, int],
    feedback_to: tuple[str, int],
    on_frame: FrameHandler | None = None,
    deadline: float = 0.033,
    startup_timeout: float = 5.0,
    ready: threading.Event | None = None,
) -> ReceiverReport:
    """Receiver loop with a per-frame reassembly deadline in seconds.

    The deadline for frame ``n`` starts when the receiver begins waiting for it
    (for the first frame, when its first datagram lands). Cells still missing
    at the deadline are lost. ``on_frame(frame_index, patches, received_mask)``
    returns the mask to feed back for the next frame; by default the full mask.
    ``ready`` is set once the socket is bound.
    """
    sock = _bind(bind, startup_timeout)
    if ready is not None:
        ready.set()
    frames: list[Frame] = []
    masks: list[Mask] = []
    rejected = 0
    backlog: list[bytes] = []
    expected = Mask.full(grid.k, 0)
    try:
        for n in range(n_frames):
            first_wait = startup_timeout if n == 0 else None
            datagrams, backlog = _collect(
                sock, n, expected.popcount, deadline, first_wait, backlog
            )
            patches, bad = decode_frame_datagrams(datagrams, n, grid)
            rejected += bad
            received = Mask.from_cells(grid.k, (p.cell.linear(grid.k) for p in patches), n)
            frames.append(assemble(patches, grid, received, frame_index=n))
            masks.append(received)
            nxt = on_frame(n, patches, received) if on_frame else Mask.full(grid.k, n + 1)
            expected = nxt
            try:
                sock.sendto(encode_feedback(nxt, n + 1), feedback_to)
            except OSError as exc:
                raise TransportError(f"feedback to {feedback_to} failed: {exc}") from exc
    finally:
        sock.close()
    return ReceiverReport(frames, masks, rejected)


def _collect(
    sock: socket.socket,
    frame_index: int,
    expected: int,
    deadline: float,
    first_wait: float | None,
    backlog: list[bytes],
) -> tuple[list[bytes], list[bytes]]:
    """Gather datagrams for ``frame_index``; newer-frame datagrams go to the backlog."""
    if deadline <= 0:
        return [], backlog
    mine = [d for d in backlog if _frame_of(d) == frame_index]
    later = [d for d in backlog if (_frame_of(d) or -1) > frame_index]
    if first_wait is not None and not mine:
        sock.settimeout(first_wait)
        try:
            data, _ = sock.recvfrom(65535)
        except socket.timeout:
            return [], later
        if _frame_of(data) == frame_index:
            mine.append(data)
        else:
            later.append(data)
    end = time.monotonic() + deadline
    while len(mine) < expected:
        remaining = end - time.monotonic()
        if remaining <= 0:
            break
        sock.settimeout(remaining)
        try:
            data, _ = sock.recvfrom(65535)
        except socket.timeout:
            break
        f = _frame_of(data)
        if f == frame_index:
            mine.append(data)
        elif f is not None and f > frame_index:
            later.append(data)
    return mine, later


def _frame_of(data: bytes) -> int | None:
    if len(data) < 6 or data[0] != PACKET_MAGIC:
        return None
    return struct.unpack_from(">I", data, 2)[0]
