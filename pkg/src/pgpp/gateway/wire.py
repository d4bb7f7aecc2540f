"""
Length-prefixed binary framing between the client agent and the gateway.

    frame   = length:u32be  body
    body    = version:u8  type:u8  payload

AUTH / STAGE carry a serialized SignedToken, AUTH_OK / STAGE_OK an f64be
authorization horizon (unix seconds), AUTH_FAIL a retryable flag byte then
the UTF-8 reason.
"""

from __future__ import annotations

import asyncio
import enum
import struct
from dataclasses import dataclass

from ..errors import TokenError, WireFormatError
from ..tokens import SignedToken

VERSION = 1
MAX_FRAME = 16 * 1024


class MsgType(enum.IntEnum):
    AUTH = 1
    AUTH_OK = 2
    AUTH_FAIL = 3
    STAGE = 4
    STAGE_OK = 5


@dataclass(frozen=True)
class Message:
    type: MsgType
    token: SignedToken | None = None
    until: float | None = None
    reason: str | None = None
    retryable: bool = False


def encode(msg: Message) -> bytes:
    t = MsgType(msg.type)
    if t in (MsgType.AUTH, MsgType.STAGE):
        if msg.token is None:
            raise WireFormatError(f"{t.name} needs a token")
        payload = msg.token.to_bytes()
    elif t in (MsgType.AUTH_OK, MsgType.STAGE_OK):
        payload = struct.pack(">d", msg.until)
    else:
        payload = bytes([int(msg.retryable)]) + (msg.reason or "").encode()
    body = bytes([VERSION, t]) + payload
    if len(body) > MAX_FRAME:
        raise WireFormatError("frame too large")
    return struct.pack(">I", len(body)) + body


def decode_body(body: bytes) -> Message:
    if len(body) < 2:
        raise WireFormatError("truncated frame")
    if body[0] != VERSION:
        raise WireFormatError(f"unsupported protocol version {body[0]}")
    try:
        t = MsgType(body[1])
    except ValueError:
        raise WireFormatError(f"unknown message type {body[1]}") from None
    payload = body[2:]
    if t in (MsgType.AUTH, MsgType.STAGE):
        try:
            return Message(t, token=SignedToken.from_bytes(payload))
        except TokenError as exc:
            raise WireFormatError(str(exc)) from None
    if t in (MsgType.AUTH_OK, MsgType.STAGE_OK):
        if len(payload) != 8:
            raise WireFormatError("bad horizon payload")
        return Message(t, until=struct.unpack(">d", payload)[0])
    if not payload:
        raise WireFormatError("empty AUTH_FAIL payload")
    return Message(t, reason=payload[1:].decode(errors="replace"), retryable=bool(payload[0]))


def decode(frame: bytes) -> Message:
    if len(frame) < 4:
        raise WireFormatError("truncated length prefix")
    (n,) = struct.unpack(">I", frame[:4])
    if n != len(frame) - 4:
        raise WireFormatError("length prefix does not match frame")
    return decode_body(frame[4:])


async def read_message(reader: asyncio.StreamReader) -> Message | None:
    """Next message from the stream, or None on clean EOF."""
    try:
        head = await reader.readexactly(4)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise WireFormatError("truncated length prefix") from None
    (n,) = struct.unpack(">I", head)
    if n > MAX_FRAME:
        raise WireFormatError(f"frame of {n} bytes exceeds limit")
    try:
        body = await reader.readexactly(n)
    except asyncio.IncompleteReadError:
        raise WireFormatError("connection closed mid-frame") from None
    return decode_body(body)
