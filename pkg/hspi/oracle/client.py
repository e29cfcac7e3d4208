"""Blocking client for a remote oracle; satisfies the same contract as LocalOracle."""

from __future__ import annotations

import logging
import socket
from typing import Tuple

import numpy as np

from hspi.config import settings
from hspi.errors import ProtocolError, UsageError
from hspi.oracle import protocol
from hspi.oracle.local import OracleInfo, QueryResponse

logger = logging.getLogger(__name__)


def parse_address(address: str) -> Tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise UsageError("bad-address", f"expected host:port, got {address!r}")
    return host.strip("[]"), int(port)


class RemoteOracle:
    def __init__(self, host: str, port: int, timeout: float | None = None) -> None:
        self.address = f"{host}:{port}"
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout or settings.HSPI_CONNECT_TIMEOUT)
        except OSError as exc:
            raise ProtocolError("connection-failed", f"{self.address}: {exc}", 500) from exc
        try:
            self._info = decode_reply(self._call(protocol.OP_HELLO), protocol.OP_INFO, protocol.decode_info)
        except BaseException:
            self._sock.close()
            raise
        logger.info("Connected to %s (profile=%s, mode=%s)", self.address, self._info.profile_id,
                    self._info.response_mode)

    def _call(self, opcode: int, payload: bytes = b"") -> Tuple[int, bytes]:
        try:
            self._sock.sendall(protocol.pack_frame(opcode, payload))
            return protocol.recv_frame(self._sock, settings.HSPI_MAX_MESSAGE_BYTES)
        except OSError as exc:
            raise ProtocolError("connection-lost", f"{self.address}: {exc}", 500) from exc

    def info(self) -> OracleInfo:
        return self._info

    def query(self, inputs: np.ndarray) -> QueryResponse:
        return decode_reply(self._call(protocol.OP_QUERY, protocol.encode_query(np.asarray(inputs))),
                            protocol.OP_RESULT, protocol.decode_result)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "RemoteOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def decode_reply(frame: Tuple[int, bytes], expected: int, decoder):
    opcode, payload = frame
    if opcode == protocol.OP_ERROR:
        raise protocol.decode_error(payload)
    if opcode != expected:
        raise ProtocolError("bad-opcode", f"expected 0x{expected:02x}, got 0x{opcode:02x}", 400)
    return decoder(payload)


def connect(address: str, timeout: float | None = None) -> RemoteOracle:
    host, port = parse_address(address)
    return RemoteOracle(host, port, timeout)
