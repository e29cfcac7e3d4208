"""Length-prefixed binary wire protocol (see docs/protocol.md).

Every frame is a 10-byte header ``<4sBBI`` (magic ``HSPI``, version,
opcode, payload length) followed by the payload.  All integers are
little-endian; logits travel as raw FP32 bit patterns.
"""

from __future__ import annotations

import asyncio
import math
import socket
import struct
from typing import Tuple

import numpy as np

from hspi.errors import ProtocolError
from hspi.oracle.local import OracleInfo, QueryResponse

MAGIC = b"HSPI"
VERSION = 1

HEADER = struct.Struct("<4sBBI")

OP_HELLO = 0x01
OP_INFO = 0x02
OP_QUERY = 0x03
OP_RESULT = 0x04
OP_ERROR = 0x7F

_MODES = {"logits": 0, "label-only": 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}


def pack_frame(opcode: int, payload: bytes = b"", version: int = VERSION) -> bytes:
    return HEADER.pack(MAGIC, version, opcode, len(payload)) + payload


def unpack_header(data: bytes, max_bytes: int) -> Tuple[int, int]:
    """Validate a header and return ``(opcode, payload_length)``."""
    magic, version, opcode, length = HEADER.unpack(data)
    if magic != MAGIC:
        raise ProtocolError("bad-magic", f"got {magic!r}", 400)
    if version != VERSION:
        raise ProtocolError("version-mismatch", f"peer speaks v{version}, this side v{VERSION}", 426)
    if length > max_bytes:
        raise ProtocolError("message-too-large", f"{length} bytes > {max_bytes}", 413)
    return opcode, length


# ═══════════════════════════════════════════════════════════════
# Transport helpers
# ═══════════════════════════════════════════════════════════════

async def read_frame(reader: asyncio.StreamReader, max_bytes: int) -> Tuple[int, bytes]:
    opcode, length = unpack_header(await reader.readexactly(HEADER.size), max_bytes)
    return opcode, await reader.readexactly(length)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection-closed", "peer closed the connection", 500)
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket, max_bytes: int) -> Tuple[int, bytes]:
    opcode, length = unpack_header(recv_exact(sock, HEADER.size), max_bytes)
    return opcode, recv_exact(sock, length)


class _Cursor:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, fmt: str) -> Tuple:
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > len(self.data):
            raise ProtocolError("malformed-payload", "payload truncated", 400)
        out = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("malformed-payload", "payload truncated", 400)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def text(self, width: str = "H") -> str:
        (n,) = self.take(width)
        try:
            return self.raw(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("malformed-payload", "invalid utf-8", 400) from exc

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ProtocolError("malformed-payload", f"{len(self.data) - self.pos} trailing bytes", 400)


def _text(s: str, width: str = "H") -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<" + width, len(b)) + b


def _shape(dims: Tuple[int, ...]) -> bytes:
    return struct.pack(f"<B{len(dims)}I", len(dims), *dims)


# ═══════════════════════════════════════════════════════════════
# Payload codecs
# ═══════════════════════════════════════════════════════════════

def encode_info(info: OracleInfo) -> bytes:
    return (struct.pack("<BIII", _MODES[info.response_mode], info.num_classes, info.batch_group, info.max_batch)
            + _shape(info.input_shape) + _text(info.profile_id) + _text(info.defense))


def decode_info(payload: bytes) -> OracleInfo:
    c = _Cursor(payload)
    mode, num_classes, batch_group, max_batch = c.take("BIII")
    (ndim,) = c.take("B")
    shape = c.take(f"{ndim}I")
    info = OracleInfo(
        profile_id=c.text(),
        input_shape=tuple(shape),
        num_classes=num_classes,
        response_mode=_MODE_NAMES.get(mode, "logits"),  # type: ignore[arg-type]
        batch_group=batch_group,
        max_batch=max_batch,
        defense=c.text(),
    )
    c.done()
    return info


def encode_query(x: np.ndarray) -> bytes:
    x = np.ascontiguousarray(x, dtype="<f8")
    if x.ndim < 1:
        raise ProtocolError("malformed-payload", "query needs a batch dimension", 400)
    return _shape(x.shape) + x.tobytes()


def decode_query(payload: bytes) -> np.ndarray:
    c = _Cursor(payload)
    (ndim,) = c.take("B")
    if ndim < 1:
        raise ProtocolError("malformed-payload", "query needs a batch dimension", 400)
    shape = c.take(f"{ndim}I")
    count = math.prod(shape)
    if 8 * count != len(payload) - c.pos:
        raise ProtocolError("malformed-payload", f"shape {shape} needs {8 * count} bytes, "
                            f"payload holds {len(payload) - c.pos}", 400)
    x = np.frombuffer(c.raw(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    c.done()
    return x


def encode_result(resp: QueryResponse) -> bytes:
    b = len(resp.labels)
    has_logits = resp.logits is not None
    num_classes = resp.logits.shape[1] if has_logits else 0
    out = struct.pack("<IIIB", b, num_classes, resp.served_batch_size, int(has_logits))
    if has_logits:
        out += np.ascontiguousarray(resp.logits, dtype=np.float32).view(np.uint32).astype("<u4").tobytes()
    return out + np.asarray(resp.labels).astype("<u4").tobytes()


def decode_result(payload: bytes) -> QueryResponse:
    c = _Cursor(payload)
    b, num_classes, served, has_logits = c.take("IIIB")
    logits = None
    if has_logits:
        bits = np.frombuffer(c.raw(4 * b * num_classes), dtype="<u4").astype(np.uint32)
        logits = bits.view(np.float32).reshape(b, num_classes)
    labels = np.frombuffer(c.raw(4 * b), dtype="<u4").astype(np.int64)
    c.done()
    return QueryResponse(labels=labels, logits=logits, served_batch_size=served)


def encode_error(exc: ProtocolError) -> bytes:
    return struct.pack("<H", exc.status) + _text(exc.code) + _text(exc.message, "I")


def decode_error(payload: bytes) -> ProtocolError:
    c = _Cursor(payload)
    (status,) = c.take("H")
    code = c.text()
    message = c.text("I")
    return ProtocolError(code, message, status)
