"""Datagram wire protocol, reliability layer, impairment link, delay stats.

Frame layout (little-endian, CRC-32 poly 0xEDB88320 over all preceding
bytes):

    magic 0x54435446 (u32) | version=1 (u8) | msg_type (u8) | reserved=0 (u16)
    | datagram_id (u32) | payload_len (u32) | payload | crc32 (u32)

Reliability is per-datagram stop-and-wait: every non-RESPONSE frame is
answered by a RESPONSE echoing its datagram id, senders retransmit on
timeout, receivers deduplicate by id.  RESPONSE frames are never themselves
acknowledged.  All timestamps come from one local monotonic clock, so
round-trip delay needs no cross-host clock sync.
"""
from __future__ import annotations

import heapq
import itertools
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, NamedTuple

from .errors import (
    CorruptionError,
    DeliveryFailureError,
    NotOursError,
    OversizeError,
    SplitRequiredError,
    TruncationError,
    UnknownTypeError,
)

MAGIC = 0x54435446
VERSION = 1
MAX_PAYLOAD = 1024
HEADER = struct.Struct("<IBBHII")  # magic, version, msg_type, reserved, id, payload_len
CRC = struct.Struct("<I")
FRAME_OVERHEAD = HEADER.size + CRC.size  # 20 bytes

DEFAULT_TIMEOUT = 0.5
DEFAULT_MAX_RETRIES = 20


class MsgType(IntEnum):
    HELLO = 1
    MAP_POINTS = 2
    POSE = 3
    IMAGE_CHUNK = 4
    TASK_COARSE = 5
    TASK_FINE = 6
    STATUS = 7
    RESPONSE = 8


@dataclass(frozen=True)
class Datagram:
    msg_type: MsgType
    datagram_id: int
    payload: bytes = b""


def frame_size(payload_len: int) -> int:
    return FRAME_OVERHEAD + payload_len


def encode(d: Datagram) -> bytes:
    if len(d.payload) > MAX_PAYLOAD:
        raise OversizeError(f"payload {len(d.payload)} exceeds {MAX_PAYLOAD} bytes")
    head = HEADER.pack(MAGIC, VERSION, int(d.msg_type), 0, d.datagram_id, len(d.payload))
    body = head + d.payload
    return body + CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode(buf: bytes) -> Datagram:
    if len(buf) < FRAME_OVERHEAD:
        raise TruncationError(f"buffer of {len(buf)} bytes is shorter than a frame")
    (magic,) = struct.unpack_from("<I", buf, 0)
    if magic != MAGIC:
        raise NotOursError(f"bad magic 0x{magic:08x}")
    # CRC is the buffer tail; checking it before trusting payload_len means a
    # flipped length byte reads as corruption, not a silent mis-parse.
    (crc_stored,) = CRC.unpack_from(buf, len(buf) - CRC.size)
    if zlib.crc32(buf[: -CRC.size]) & 0xFFFFFFFF != crc_stored:
        _, _, _, _, _, payload_len = HEADER.unpack_from(buf, 0)
        if frame_size(payload_len) > len(buf):
            raise TruncationError(
                f"frame claims {frame_size(payload_len)} bytes, got {len(buf)}"
            )
        raise CorruptionError("crc mismatch")
    _, version, msg_type, _, datagram_id, payload_len = HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise NotOursError(f"unsupported version {version}")
    if frame_size(payload_len) != len(buf):
        raise TruncationError(
            f"frame claims {frame_size(payload_len)} bytes, got {len(buf)}"
        )
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnknownTypeError(f"unknown message type {msg_type}") from None
    return Datagram(mt, datagram_id, bytes(buf[HEADER.size : HEADER.size + payload_len]))


# --- payload codecs ----------------------------------------------------------

_POINT = struct.Struct("<Ifff")  # id, x, y, z
MAX_POINTS_PER_DATAGRAM = (MAX_PAYLOAD - 2) // _POINT.size  # 63


def encode_map_points(points: Iterable[tuple[int, float, float, float]]) -> bytes:
    pts = list(points)
    if len(pts) > MAX_POINTS_PER_DATAGRAM:
        raise SplitRequiredError(
            f"{len(pts)} points exceed {MAX_POINTS_PER_DATAGRAM} per datagram"
        )
    out = [struct.pack("<H", len(pts))]
    for pid, x, y, z in pts:
        out.append(_POINT.pack(pid, x, y, z))
    return b"".join(out)


def decode_map_points(payload: bytes) -> list[tuple[int, float, float, float]]:
    (count,) = struct.unpack_from("<H", payload, 0)
    pts = []
    off = 2
    for _ in range(count):
        pid, x, y, z = _POINT.unpack_from(payload, off)
        pts.append((pid, x, y, z))
        off += _POINT.size
    return pts


_POSE = struct.Struct("<Ifffffff")  # index, tx ty tz, qx qy qz qw
MAX_POSES_PER_DATAGRAM = (MAX_PAYLOAD - 2) // _POSE.size  # 31


def encode_poses(poses: Iterable[tuple[int, tuple, tuple]]) -> bytes:
    """Each entry: (keyframe index, (tx, ty, tz), (qx, qy, qz, qw))."""
    items = list(poses)
    if len(items) > MAX_POSES_PER_DATAGRAM:
        raise SplitRequiredError(f"{len(items)} poses exceed {MAX_POSES_PER_DATAGRAM}")
    out = [struct.pack("<H", len(items))]
    for idx, t, q in items:
        out.append(_POSE.pack(idx, *t, *q))
    return b"".join(out)


def decode_poses(payload: bytes) -> list[tuple[int, tuple, tuple]]:
    (count,) = struct.unpack_from("<H", payload, 0)
    out = []
    off = 2
    for _ in range(count):
        vals = _POSE.unpack_from(payload, off)
        out.append((vals[0], vals[1:4], vals[4:8]))
        off += _POSE.size
    return out


_TASK_COARSE = struct.Struct("<fffB")


def encode_task_coarse(target_c0: tuple[float, float, float], preset: int) -> bytes:
    return _TASK_COARSE.pack(*target_c0, preset)


def decode_task_coarse(payload: bytes) -> tuple[tuple[float, float, float], int]:
    x, y, z, preset = _TASK_COARSE.unpack(payload)
    return (x, y, z), preset


_FINE_PAIR = struct.Struct("<Iffff")  # feature id, u, v, u*, v*


def encode_task_fine(pairs: Iterable[tuple[int, float, float, float, float]]) -> bytes:
    items = list(pairs)
    if not 1 <= len(items) <= 255:
        raise ValueError("fine task needs 1..255 pairs")
    out = [struct.pack("<B", len(items))]
    for fid, u, v, us, vs in items:
        out.append(_FINE_PAIR.pack(fid, u, v, us, vs))
    return b"".join(out)


def decode_task_fine(payload: bytes) -> list[tuple[int, float, float, float, float]]:
    (count,) = struct.unpack_from("<B", payload, 0)
    out = []
    off = 1
    for _ in range(count):
        out.append(_FINE_PAIR.unpack_from(payload, off))
        off += _FINE_PAIR.size
    return out


def encode_status(phase_code: int, detail: str = "") -> bytes:
    raw = detail.encode("utf-8")[: MAX_PAYLOAD - 3]
    return struct.pack("<BH", phase_code, len(raw)) + raw


def decode_status(payload: bytes) -> tuple[int, str]:
    phase_code, n = struct.unpack_from("<BH", payload, 0)
    return phase_code, payload[3 : 3 + n].decode("utf-8")


def encode_response(echo_id: int) -> bytes:
    return struct.pack("<I", echo_id)


def decode_response(payload: bytes) -> int:
    return struct.unpack("<I", payload)[0]


_ANNOTATION = struct.Struct("<Iff")


def encode_annotations(annotations: Iterable[tuple[int, float, float]]) -> bytes:
    items = list(annotations)
    out = [struct.pack("<H", len(items))]
    for fid, u, v in items:
        out.append(_ANNOTATION.pack(fid, u, v))
    return b"".join(out)


def decode_annotations(payload: bytes) -> list[tuple[int, float, float]]:
    (count,) = struct.unpack_from("<H", payload, 0)
    out = []
    off = 2
    for _ in range(count):
        out.append(_ANNOTATION.unpack_from(payload, off))
        off += _ANNOTATION.size
    return out


_CHUNK_HEAD = struct.Struct("<HHHHH")  # image_id, chunk_index, total_chunks, width, height
MAX_CHUNK_DATA = MAX_PAYLOAD - _CHUNK_HEAD.size  # 1014


class ImageChunk(NamedTuple):
    image_id: int
    chunk_index: int
    total_chunks: int
    width: int
    height: int
    data: bytes


def chunk_image(image_id: int, width: int, height: int, data: bytes) -> list[bytes]:
    """Split a byte stream into IMAGE_CHUNK payloads (reassembly-ready)."""
    total = max(1, (len(data) + MAX_CHUNK_DATA - 1) // MAX_CHUNK_DATA)
    payloads = []
    for i in range(total):
        piece = data[i * MAX_CHUNK_DATA : (i + 1) * MAX_CHUNK_DATA]
        payloads.append(_CHUNK_HEAD.pack(image_id, i, total, width, height) + piece)
    return payloads


def parse_image_chunk(payload: bytes) -> ImageChunk:
    image_id, idx, total, width, height = _CHUNK_HEAD.unpack_from(payload, 0)
    return ImageChunk(image_id, idx, total, width, height, payload[_CHUNK_HEAD.size :])


class ImageReassembler:
    """Collects chunks per image id; returns the full stream when complete."""

    def __init__(self):
        self._parts: dict[int, dict[int, ImageChunk]] = {}

    def add(self, chunk: ImageChunk) -> tuple[int, int, int, bytes] | None:
        parts = self._parts.setdefault(chunk.image_id, {})
        parts[chunk.chunk_index] = chunk
        if len(parts) == chunk.total_chunks:
            data = b"".join(parts[i].data for i in range(chunk.total_chunks))
            del self._parts[chunk.image_id]
            return chunk.image_id, chunk.width, chunk.height, data
        return None


# --- transports --------------------------------------------------------------


class QueueTransport:
    """In-process datagram transport half; build with queue_pair()."""

    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]"):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def send(self, data: bytes) -> None:
        if not self._closed:
            self._outbox.put(bytes(data))

    def recv(self, timeout: float | None = None) -> bytes | None:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed = True


def queue_pair() -> tuple[QueueTransport, QueueTransport]:
    a, b = queue.Queue(), queue.Queue()
    return QueueTransport(a, b), QueueTransport(b, a)


class UdpTransport:
    """UDP socket bound locally and aimed at a fixed peer."""

    def __init__(self, local: tuple[str, int], peer: tuple[str, int]):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(local)
        self._peer = peer
        self._closed = False

    @property
    def local_address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def set_peer(self, peer: tuple[str, int]) -> None:
        self._peer = peer

    def send(self, data: bytes) -> None:
        if self._closed:
            return
        try:
            self._sock.sendto(data, self._peer)
        except OSError:
            pass  # absent peer behaves like loss; the reliability layer retries

    def recv(self, timeout: float | None = None) -> bytes | None:
        if self._closed:
            return None
        self._sock.settimeout(timeout)
        try:
            data, _ = self._sock.recvfrom(65535)
            return data
        except (socket.timeout, OSError):
            return None

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


@dataclass(frozen=True)
class ImpairmentConfig:
    one_way_latency: float = 0.0
    jitter: float = 0.0  # uniform +/- around the latency
    loss_probability: float = 0.0
    bandwidth_cap: float = 0.0  # bytes/second, 0 = unlimited
    rng_seed: int = 0

    def __post_init__(self):
        if self.one_way_latency < 0:
            raise ValueError("latency must be non-negative")
        if not 0 <= self.jitter <= max(self.one_way_latency, 0):
            raise ValueError("jitter must be within [0, latency]")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss probability must be in [0, 1]")
        if self.bandwidth_cap < 0:
            raise ValueError("bandwidth cap must be non-negative")

    @property
    def is_transparent(self) -> bool:
        return (
            self.one_way_latency == 0
            and self.loss_probability == 0
            and self.bandwidth_cap == 0
        )


class ImpairedTransport:
    """Wraps a transport's outbound direction with latency/jitter/loss/bandwidth.

    Frames are scheduled onto a heap and released by a worker thread;
    under zero jitter the release order is FIFO.
    """

    def __init__(self, inner, cfg: ImpairmentConfig):
        import numpy as np

        self._inner = inner
        self._cfg = cfg
        self._rng = np.random.default_rng(cfg.rng_seed)
        self._heap: list[tuple[float, int, bytes]] = []
        self._seq = itertools.count()
        self._lock = threading.Lock()
        self._wakeup = threading.Condition(self._lock)
        self._link_free_at = 0.0
        self._closed = False
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def send(self, data: bytes) -> None:
        cfg = self._cfg
        with self._lock:
            if self._closed:
                return
            if cfg.loss_probability > 0 and self._rng.random() < cfg.loss_probability:
                return
            now = time.monotonic()
            if cfg.bandwidth_cap > 0:
                depart = max(now, self._link_free_at) + len(data) / cfg.bandwidth_cap
                self._link_free_at = depart
            else:
                depart = now
            delay = cfg.one_way_latency
            if cfg.jitter > 0:
                delay += float(self._rng.uniform(-cfg.jitter, cfg.jitter))
            heapq.heappush(self._heap, (depart + delay, next(self._seq), bytes(data)))
            self._wakeup.notify()

    def recv(self, timeout: float | None = None) -> bytes | None:
        return self._inner.recv(timeout)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._wakeup.notify()
        self._worker.join(timeout=2.0)
        self._inner.close()

    def _run(self) -> None:
        while True:
            with self._lock:
                while not self._closed and not self._heap:
                    self._wakeup.wait()
                if self._closed and not self._heap:
                    return
                due, _, data = self._heap[0]
                now = time.monotonic()
                if due > now:
                    self._wakeup.wait(timeout=min(due - now, 0.05))
                    continue
                heapq.heappop(self._heap)
            self._inner.send(data)


def impaired_link(transport, cfg: ImpairmentConfig):
    """Wrap a transport endpoint's outbound path; transparent configs pass through."""
    if cfg.is_transparent and cfg.jitter == 0:
        return transport
    return ImpairedTransport(transport, cfg)


# --- reliability layer -------------------------------------------------------


@dataclass
class DelayLogEntry:
    datagram_id: int
    msg_type: MsgType
    size_bytes: int  # wire size of one transmission, header included
    t_sent: float  # monotonic, first transmission
    t_response_received: float | None = None
    attempts: int = 0  # transmissions actually performed

    @property
    def rtt(self) -> float | None:
        if self.t_response_received is None:
            return None
        return self.t_response_received - self.t_sent


@dataclass(frozen=True)
class TypeStats:
    count: int
    total_bytes: int
    mean_rtt: float


@dataclass(frozen=True)
class DelayStats:
    count: int
    total_bytes: int
    mean_rtt: float
    ms_per_kb: float  # sum(rtt ms) / sum(size KB), KB = 1024 bytes
    per_type: dict[str, TypeStats] = field(default_factory=dict)


def compute_stats(log: list[DelayLogEntry]) -> DelayStats:
    done = [e for e in log if e.t_response_received is not None]
    if not done:
        return DelayStats(0, 0, 0.0, 0.0, {})
    total_bytes = sum(e.size_bytes for e in done)
    rtts = [e.rtt for e in done]
    ms_per_kb = (sum(rtts) * 1000.0) / (total_bytes / 1024.0)
    per_type: dict[str, TypeStats] = {}
    for name in {e.msg_type.name for e in done}:
        sub = [e for e in done if e.msg_type.name == name]
        per_type[name] = TypeStats(
            count=len(sub),
            total_bytes=sum(e.size_bytes for e in sub),
            mean_rtt=sum(e.rtt for e in sub) / len(sub),
        )
    return DelayStats(
        count=len(done),
        total_bytes=total_bytes,
        mean_rtt=sum(rtts) / len(rtts),
        ms_per_kb=ms_per_kb,
        per_type=per_type,
    )


def save_delay_log(log: list[DelayLogEntry], path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("datagram_id,type,size_bytes,t_sent,t_resp,rtt_ms\n")
        for e in log:
            t_resp = "" if e.t_response_received is None else f"{e.t_response_received:.6f}"
            rtt_ms = "" if e.rtt is None else f"{e.rtt * 1000.0:.3f}"
            f.write(
                f"{e.datagram_id},{e.msg_type.name},{e.size_bytes},"
                f"{e.t_sent:.6f},{t_resp},{rtt_ms}\n"
            )


class _Waiter:
    __slots__ = ("event", "t_response")

    def __init__(self):
        self.event = threading.Event()
        self.t_response: float | None = None


class Endpoint:
    """One side of the protocol: send-with-response, receive queue, accounting.

    A background thread receives frames, completes pending waiters on
    RESPONSE, acknowledges and deduplicates everything else.  Concurrent
    send_with_response calls are allowed; the transmit path is serialized.
    """

    def __init__(self, transport, clock: Callable[[], float] = time.monotonic):
        self._transport = transport
        self._clock = clock
        self._id_counter = itertools.count(1)
        self._pending: dict[int, _Waiter] = {}
        self._pending_lock = threading.Lock()
        self._tx_lock = threading.Lock()
        self._acct_lock = threading.Lock()
        self._inbound: "queue.Queue[Datagram]" = queue.Queue()
        self._seen: set[int] = set()
        self.delay_log: list[DelayLogEntry] = []
        self.late_responses: list[int] = []
        self.decode_errors = 0
        self.sent_by_type: dict[str, list[int]] = {}  # name -> [count, bytes], physical
        self.recv_by_type: dict[str, list[int]] = {}
        self._closed = threading.Event()
        self._rx = threading.Thread(target=self._rx_loop, daemon=True)
        self._rx.start()

    # accounting helpers
    def _count(self, table: dict[str, list[int]], name: str, nbytes: int) -> None:
        # senders and the rx thread both account; increments must not race
        with self._acct_lock:
            entry = table.setdefault(name, [0, 0])
            entry[0] += 1
            entry[1] += nbytes

    def _raw_send(self, frame: bytes, msg_type: MsgType) -> None:
        with self._tx_lock:
            self._transport.send(frame)
        self._count(self.sent_by_type, msg_type.name, len(frame))

    def next_id(self) -> int:
        return next(self._id_counter)

    def send_with_response(
        self,
        msg_type: MsgType,
        payload: bytes = b"",
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = DEFAULT_MAX_RETRIES,
    ) -> DelayLogEntry:
        did = self.next_id()
        frame = encode(Datagram(msg_type, did, payload))
        waiter = _Waiter()
        with self._pending_lock:
            self._pending[did] = waiter
        entry = DelayLogEntry(did, msg_type, len(frame), t_sent=self._clock())
        self.delay_log.append(entry)
        try:
            for _ in range(max_retries + 1):
                if self._closed.is_set():
                    raise DeliveryFailureError("endpoint closed")
                self._raw_send(frame, msg_type)
                entry.attempts += 1
                if waiter.event.wait(timeout):
                    entry.t_response_received = waiter.t_response
                    return entry
            raise DeliveryFailureError(
                f"no response for datagram {did} ({msg_type.name}) "
                f"after {entry.attempts} transmissions"
            )
        finally:
            with self._pending_lock:
                self._pending.pop(did, None)

    def receive(self, timeout: float | None = None) -> Datagram | None:
        try:
            return self._inbound.get(timeout=timeout)
        except queue.Empty:
            return None

    def _rx_loop(self) -> None:
        while not self._closed.is_set():
            buf = self._transport.recv(timeout=0.1)
            if buf is None:
                continue
            try:
                d = decode(buf)
            except Exception:
                self.decode_errors += 1
                continue
            self._count(self.recv_by_type, d.msg_type.name, len(buf))
            if d.msg_type == MsgType.RESPONSE:
                echo = decode_response(d.payload)
                with self._pending_lock:
                    waiter = self._pending.pop(echo, None)
                if waiter is not None:
                    waiter.t_response = self._clock()
                    waiter.event.set()
                else:
                    self.late_responses.append(echo)
                continue
            # acknowledge everything, even duplicates (the first response
            # may have been lost); deliver each id once
            resp = encode(Datagram(MsgType.RESPONSE, self.next_id(), encode_response(d.datagram_id)))
            self._raw_send(resp, MsgType.RESPONSE)
            if d.datagram_id not in self._seen:
                self._seen.add(d.datagram_id)
                self._inbound.put(d)

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        self._rx.join(timeout=2.0)
        self._transport.close()

    def stats(self) -> DelayStats:
        return compute_stats(self.delay_log)

    def physical_sent_bytes(self) -> int:
        return sum(v[1] for v in self.sent_by_type.values())

    def physical_recv_bytes(self) -> int:
        return sum(v[1] for v in self.recv_by_type.values())
