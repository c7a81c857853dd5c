"""E3 publish/subscribe wire protocol between the gNB agent and dApps.

Frame layout (all integers little-endian, no padding):

    0x45 0x33   magic "E3"
    0x01        protocol version
    type        one byte, see TYPE_* below
    u32         payload length
    payload     message fields packed in declaration order

Payloads:
    SetupRequest    u32 ran_id, u16 n_prb, u16 fft_size, u8 mu
    SetupResponse   u8 accepted (0/1)
    Subscribe       u8 stream_id, u16 period_frames
    SubscribeAck    u8 stream_id
    IqReport        u32 frame, u8 slot, u8 symbol, u16 n_samples,
                    then n_samples * (f32 I, f32 Q)
    ControlAction   u32 frame, u16 n_prb, ceil(n_prb/8) bitmap bytes
                    (bit p of byte p//8, LSB first; bits >= n_prb zero)
    Error           u8 code

The codec is stateless; StreamDecoder re-assembles messages from an
arbitrarily chunked byte stream. The session state machine is a pure
function over immutable SessionState values and is total: every
(state, event) pair maps to a transition, protocol violations become
reject actions rather than exceptions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

import numpy as np

MAGIC = b"E3"
VERSION = 0x01
HEADER_LEN = 8
MAX_PAYLOAD = 1 << 24

TYPE_SETUP_REQUEST = 0x01
TYPE_SETUP_RESPONSE = 0x02
TYPE_SUBSCRIBE = 0x03
TYPE_SUBSCRIBE_ACK = 0x04
TYPE_IQ_REPORT = 0x05
TYPE_CONTROL_ACTION = 0x06
TYPE_ERROR = 0x7F

STREAM_SENSING_IQ = 0x01

ERR_MALFORMED = 0x01
ERR_UNEXPECTED = 0x02
ERR_BAD_ACTION = 0x03

_HEADER = struct.Struct("<2sBBI")
_SETUP_REQUEST = struct.Struct("<IHHB")
_SUBSCRIBE = struct.Struct("<BH")
_IQ_HEAD = struct.Struct("<IBBH")
_CONTROL_HEAD = struct.Struct("<IH")


class DecodeError(ValueError):
    """Base class for malformed frames."""


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class TrailingBitmapBitsSet(DecodeError):
    pass


class NeedMoreBytes(Exception):
    """Frame is truncated; feed more bytes and retry (nothing consumed)."""


@dataclass(frozen=True)
class SetupRequest:
    ran_id: int
    n_prb: int
    fft_size: int
    mu: int


@dataclass(frozen=True)
class SetupResponse:
    accepted: bool


@dataclass(frozen=True)
class Subscribe:
    stream_id: int = STREAM_SENSING_IQ
    period_frames: int = 1


@dataclass(frozen=True)
class SubscribeAck:
    stream_id: int = STREAM_SENSING_IQ


@dataclass(frozen=True)
class IqReport:
    frame: int
    slot: int
    symbol: int
    iq: np.ndarray  # complex64, one entry per sample

    @property
    def n_samples(self) -> int:
        return int(self.iq.size)

    def __eq__(self, other):
        if not isinstance(other, IqReport):
            return NotImplemented
        return (
            (self.frame, self.slot, self.symbol)
            == (other.frame, other.slot, other.symbol)
            and np.array_equal(self.iq, other.iq)
        )


@dataclass(frozen=True)
class ControlAction:
    frame: int
    n_prb: int
    barred_bitmap: bytes

    def barred_mask(self) -> np.ndarray:
        bits = np.unpackbits(
            np.frombuffer(self.barred_bitmap, dtype=np.uint8), bitorder="little"
        )
        return bits[: self.n_prb].astype(bool)


@dataclass(frozen=True)
class ErrorMsg:
    code: int


E3Message = Union[
    SetupRequest, SetupResponse, Subscribe, SubscribeAck, IqReport, ControlAction, ErrorMsg
]

_TYPE_OF = {
    SetupRequest: TYPE_SETUP_REQUEST,
    SetupResponse: TYPE_SETUP_RESPONSE,
    Subscribe: TYPE_SUBSCRIBE,
    SubscribeAck: TYPE_SUBSCRIBE_ACK,
    IqReport: TYPE_IQ_REPORT,
    ControlAction: TYPE_CONTROL_ACTION,
    ErrorMsg: TYPE_ERROR,
}


def bitmap_len(n_prb: int) -> int:
    return (n_prb + 7) // 8


def pack_barred(mask: np.ndarray) -> bytes:
    """Pack a boolean per-PRB mask into the wire bitmap (LSB-first bytes)."""
    return bytes(np.packbits(np.asarray(mask, dtype=bool), bitorder="little"))


def control_action_for(frame: int, mask: np.ndarray) -> ControlAction:
    mask = np.asarray(mask, dtype=bool)
    return ControlAction(frame=frame, n_prb=mask.size, barred_bitmap=pack_barred(mask))


def encode(msg: E3Message) -> bytes:
    """Encode one message into a framed byte string."""
    if isinstance(msg, SetupRequest):
        payload = _SETUP_REQUEST.pack(msg.ran_id, msg.n_prb, msg.fft_size, msg.mu)
    elif isinstance(msg, SetupResponse):
        payload = bytes([1 if msg.accepted else 0])
    elif isinstance(msg, Subscribe):
        payload = _SUBSCRIBE.pack(msg.stream_id, msg.period_frames)
    elif isinstance(msg, SubscribeAck):
        payload = bytes([msg.stream_id])
    elif isinstance(msg, IqReport):
        iq = np.ascontiguousarray(msg.iq, dtype="<c8")
        payload = _IQ_HEAD.pack(msg.frame, msg.slot, msg.symbol, iq.size) + iq.tobytes()
    elif isinstance(msg, ControlAction):
        if len(msg.barred_bitmap) != bitmap_len(msg.n_prb):
            raise ValueError(
                f"bitmap of {len(msg.barred_bitmap)} bytes does not fit n_prb={msg.n_prb}"
            )
        payload = _CONTROL_HEAD.pack(msg.frame, msg.n_prb) + msg.barred_bitmap
    elif isinstance(msg, ErrorMsg):
        payload = bytes([msg.code])
    else:
        raise TypeError(f"not an E3 message: {msg!r}")
    return _HEADER.pack(MAGIC, VERSION, _TYPE_OF[type(msg)], len(payload)) + payload


def _check_trailing_bits(bitmap: bytes, n_prb: int) -> None:
    trailing = 8 * len(bitmap) - n_prb
    if trailing and bitmap and (bitmap[-1] >> (8 - trailing)):
        raise TrailingBitmapBitsSet(f"bitmap bits beyond PRB {n_prb - 1} are set")


def decode(buf: bytes | bytearray | memoryview, start: int = 0) -> tuple[E3Message, int]:
    """Decode one frame starting at ``start``; returns (message, bytes consumed).

    Raises NeedMoreBytes when the buffer holds only a frame prefix, and a
    DecodeError subclass when the bytes cannot be a valid frame. Never
    reads past the supplied buffer.
    """
    view = memoryview(buf)[start:]
    if len(view) < HEADER_LEN:
        raise NeedMoreBytes(f"have {len(view)} bytes of an 8-byte header")
    magic, version, mtype, length = _HEADER.unpack_from(view)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version:#x}")
    if length > MAX_PAYLOAD:
        raise LengthMismatch(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    if len(view) < HEADER_LEN + length:
        raise NeedMoreBytes(f"payload truncated: have {len(view) - HEADER_LEN} of {length}")
    payload = view[HEADER_LEN : HEADER_LEN + length]
    consumed = HEADER_LEN + length

    if mtype == TYPE_SETUP_REQUEST:
        if length != _SETUP_REQUEST.size:
            raise LengthMismatch(f"SetupRequest payload must be {_SETUP_REQUEST.size} bytes")
        ran_id, n_prb, fft_size, mu = _SETUP_REQUEST.unpack(payload)
        return SetupRequest(ran_id, n_prb, fft_size, mu), consumed
    if mtype == TYPE_SETUP_RESPONSE:
        if length != 1:
            raise LengthMismatch("SetupResponse payload must be 1 byte")
        return SetupResponse(accepted=payload[0] != 0), consumed
    if mtype == TYPE_SUBSCRIBE:
        if length != _SUBSCRIBE.size:
            raise LengthMismatch(f"Subscribe payload must be {_SUBSCRIBE.size} bytes")
        stream_id, period = _SUBSCRIBE.unpack(payload)
        return Subscribe(stream_id, period), consumed
    if mtype == TYPE_SUBSCRIBE_ACK:
        if length != 1:
            raise LengthMismatch("SubscribeAck payload must be 1 byte")
        return SubscribeAck(stream_id=payload[0]), consumed
    if mtype == TYPE_IQ_REPORT:
        if length < _IQ_HEAD.size:
            raise LengthMismatch(f"IqReport payload must be >= {_IQ_HEAD.size} bytes")
        frame, slot, symbol, n_samples = _IQ_HEAD.unpack_from(payload)
        if length != _IQ_HEAD.size + 8 * n_samples:
            raise LengthMismatch(
                f"IqReport declares {n_samples} samples but payload is {length} bytes"
            )
        iq = np.frombuffer(payload, dtype="<c8", offset=_IQ_HEAD.size).copy()
        return IqReport(frame, slot, symbol, iq), consumed
    if mtype == TYPE_CONTROL_ACTION:
        if length < _CONTROL_HEAD.size:
            raise LengthMismatch(f"ControlAction payload must be >= {_CONTROL_HEAD.size} bytes")
        frame, n_prb = _CONTROL_HEAD.unpack_from(payload)
        bitmap = bytes(payload[_CONTROL_HEAD.size :])
        if len(bitmap) != bitmap_len(n_prb):
            raise LengthMismatch(
                f"ControlAction for {n_prb} PRBs needs {bitmap_len(n_prb)} bitmap "
                f"bytes, got {len(bitmap)}"
            )
        _check_trailing_bits(bitmap, n_prb)
        return ControlAction(frame, n_prb, bitmap), consumed
    if mtype == TYPE_ERROR:
        if length != 1:
            raise LengthMismatch("Error payload must be 1 byte")
        return ErrorMsg(code=payload[0]), consumed
    raise UnknownType(f"unknown message type {mtype:#04x}")


def decode_all(buf: bytes) -> list[E3Message]:
    """Decode a buffer holding zero or more complete frames."""
    msgs = []
    pos = 0
    while pos < len(buf):
        msg, consumed = decode(buf, pos)
        msgs.append(msg)
        pos += consumed
    return msgs


class StreamDecoder:
    """Incremental decoder over an ordered byte stream.

    feed() buffers partial frames across calls and returns the messages
    completed so far. Corrupt input raises the underlying DecodeError and
    drops the buffer: framing cannot be trusted after corruption.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[E3Message]:
        self._buf.extend(data)
        msgs = []
        pos = 0
        while True:
            try:
                msg, consumed = decode(self._buf, pos)
            except NeedMoreBytes:
                break
            except DecodeError:
                # rebind rather than resize: the raised error's traceback
                # still holds memoryview exports into the old buffer
                self._buf = bytearray()
                raise
            msgs.append(msg)
            pos += consumed
        del self._buf[:pos]
        return msgs

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# --- session state machine ---------------------------------------------------


class Phase(Enum):
    IDLE = "idle"
    SETUP_PENDING = "setup-pending"
    ESTABLISHED = "established"
    SUBSCRIBED = "subscribed"


@dataclass(frozen=True)
class SessionState:
    """Shared session phase plus the parameters negotiated so far."""

    phase: Phase = Phase.IDLE
    ran_id: int | None = None
    n_prb: int | None = None
    fft_size: int | None = None
    mu: int | None = None
    period_frames: int | None = None


SENT = "sent"
RECEIVED = "received"
TRANSPORT_CLOSED = "transport-closed"

# actions returned by session_step
DELIVER = "deliver"
REJECT = "reject"
CLOSE = "close"


def session_step(state: SessionState, event) -> tuple[SessionState, list[tuple]]:
    """Advance the session by one event.

    ``event`` is ("sent", msg), ("received", msg) or the TRANSPORT_CLOSED
    sentinel. Returns the new state and a list of actions: ("deliver", msg)
    for messages that are legal in the current phase, ("reject", code) for
    protocol violations (the endpoint answers those with an Error frame),
    and ("close",) on transport loss. Total over all (state, event) pairs.
    """
    if event == TRANSPORT_CLOSED or event == (TRANSPORT_CLOSED,):
        return SessionState(), [(CLOSE,)]

    _direction, msg = event
    phase = state.phase

    if isinstance(msg, SetupRequest):
        if phase is Phase.IDLE:
            new = replace(
                state,
                phase=Phase.SETUP_PENDING,
                ran_id=msg.ran_id,
                n_prb=msg.n_prb,
                fft_size=msg.fft_size,
                mu=msg.mu,
            )
            return new, [(DELIVER, msg)]
        return state, [(REJECT, ERR_UNEXPECTED)]

    if isinstance(msg, SetupResponse):
        if phase is Phase.SETUP_PENDING:
            if msg.accepted:
                return replace(state, phase=Phase.ESTABLISHED), [(DELIVER, msg)]
            return SessionState(), [(DELIVER, msg)]
        return state, [(REJECT, ERR_UNEXPECTED)]

    if isinstance(msg, Subscribe):
        if phase in (Phase.ESTABLISHED, Phase.SUBSCRIBED):
            return replace(state, period_frames=msg.period_frames), [(DELIVER, msg)]
        return state, [(REJECT, ERR_UNEXPECTED)]

    if isinstance(msg, SubscribeAck):
        if phase is Phase.ESTABLISHED:
            return replace(state, phase=Phase.SUBSCRIBED), [(DELIVER, msg)]
        if phase is Phase.SUBSCRIBED:
            return state, [(DELIVER, msg)]
        return state, [(REJECT, ERR_UNEXPECTED)]

    if isinstance(msg, IqReport):
        if phase is Phase.SUBSCRIBED:
            return state, [(DELIVER, msg)]
        return state, [(REJECT, ERR_UNEXPECTED)]

    if isinstance(msg, ControlAction):
        if phase in (Phase.ESTABLISHED, Phase.SUBSCRIBED):
            return state, [(DELIVER, msg)]
        return state, [(REJECT, ERR_UNEXPECTED)]

    if isinstance(msg, ErrorMsg):
        return state, [(DELIVER, msg)]

    raise TypeError(f"not an E3 message: {msg!r}")
