"""Oracle network service.

An asyncio TCP server speaking the binary protocol, plus an optional aiohttp
health endpoint.  The service stays up on bad requests: it answers with an
ERROR frame and keeps reading.  Only framing errors (bad magic, version
mismatch, oversized frame) close the connection.
"""

from __future__ import annotations

import asyncio
import dataclasses
import logging
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from hspi.config import read_flat_config, settings
from hspi.errors import ConfigError, ProtocolError
from hspi.oracle import protocol
from hspi.oracle.defense import parse_defense
from hspi.oracle.local import LocalOracle

logger = logging.getLogger(__name__)

# Framing errors after which the stream cannot be resynchronized
_FATAL = {"bad-magic", "version-mismatch", "message-too-large"}


class OracleConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", protected_namespaces=())

    model_path: Path
    registry_path: Path
    profile_id: str
    response_mode: Literal["logits", "label-only"] = "logits"
    defense: str = "none"
    host: str = "127.0.0.1"
    port: int = 7700

    @field_validator("defense")
    @classmethod
    def _check_defense(cls, v: str) -> str:
        parse_defense(v)
        return v


_CONFIG_KEYS = {
    "model": "model_path",
    "registry": "registry_path",
    "profile": "profile_id",
    "response_mode": "response_mode",
    "defense": "defense",
    "host": "host",
    "port": "port",
}


def load_oracle_config(path: str | Path) -> OracleConfig:
    block = read_flat_config(path)
    base = Path(path).parent
    fields = {}
    for key, (value, lineno) in block.entries.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError("unknown-field", f"{key!r} (allowed: {', '.join(_CONFIG_KEYS)})", lineno)
        if key in ("model", "registry"):
            value = str(base / value)
        fields[_CONFIG_KEYS[key]] = value
    try:
        return OracleConfig(**fields)
    except ValidationError as exc:
        err = exc.errors()[0]
        field = str(err["loc"][0]) if err["loc"] else ""
        key = next((k for k, f in _CONFIG_KEYS.items() if f == field), field)
        raise ConfigError("bad-oracle-config", f"{field}: {err['msg']}", block.line_of(key)) from exc


def build_oracle(config: OracleConfig) -> LocalOracle:
    from hspi.platform import registry_load
    from hspi.storage import load_model

    profile = registry_load(config.registry_path).get(config.profile_id)
    return LocalOracle(load_model(config.model_path), profile, config.response_mode, parse_defense(config.defense))


class OracleServer:
    def __init__(self, oracle: LocalOracle, host: str = "127.0.0.1", port: int = 0,
                 health_port: int | None = None, base_seed: int | None = None) -> None:
        self.oracle = oracle
        self.host = host
        self.port = port
        self.health_port = settings.HSPI_HEALTH_PORT if health_port is None else health_port
        self.base_seed = settings.HSPI_ORACLE_SEED if base_seed is None else base_seed
        self._server: asyncio.AbstractServer | None = None
        self._health_runner = None
        self._connections = 0

    async def start(self) -> int:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        info = self.oracle.info()
        logger.info("Oracle listening on %s:%d (profile=%s, mode=%s, defense=%s)",
                    self.host, self.port, info.profile_id, info.response_mode, info.defense)
        if self.health_port:
            await self._start_health_server()
        return self.port

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._health_runner is not None:
            await self._health_runner.cleanup()
        logger.info("Oracle stopped")

    # ── health endpoint ──────────────────────────────────────
    async def _start_health_server(self) -> None:
        from aiohttp import web

        async def _health(_r: web.Request) -> web.Response:
            return web.Response(text="ok")

        async def _info(_r: web.Request) -> web.Response:
            return web.json_response(dataclasses.asdict(self.oracle.info()))

        app = web.Application()
        app.router.add_get("/health", _health)
        app.router.add_get("/info", _info)
        self._health_runner = web.AppRunner(app)
        await self._health_runner.setup()
        site = web.TCPSite(self._health_runner, self.host, self.health_port)
        await site.start()
        logger.info("Health server on %s:%d", self.host, self.health_port)

    # ── connections ──────────────────────────────────────────
    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        index = self._connections
        self._connections += 1
        seed = self.base_seed + index
        session = self.oracle.session(seed)
        peer = writer.get_extra_info("peername")
        logger.info("Connection #%d from %s (defense seed=%d)", index, peer, seed)
        loop = asyncio.get_running_loop()
        try:
            while True:
                try:
                    opcode, payload = await protocol.read_frame(reader, settings.HSPI_MAX_MESSAGE_BYTES)
                    if opcode == protocol.OP_HELLO:
                        reply = protocol.pack_frame(protocol.OP_INFO, protocol.encode_info(session.info()))
                    elif opcode == protocol.OP_QUERY:
                        x = protocol.decode_query(payload)
                        resp = await loop.run_in_executor(None, session.query, x)
                        reply = protocol.pack_frame(protocol.OP_RESULT, protocol.encode_result(resp))
                    else:
                        raise ProtocolError("bad-opcode", f"unexpected opcode 0x{opcode:02x}", 400)
                except ProtocolError as exc:
                    logger.warning("Connection #%d: %s", index, exc)
                    reply = protocol.pack_frame(protocol.OP_ERROR, protocol.encode_error(exc))
                    if exc.code in _FATAL:
                        writer.write(reply)
                        await writer.drain()
                        break
                except asyncio.IncompleteReadError:
                    break
                except Exception as exc:
                    logger.error("Connection #%d: internal error: %s", index, exc, exc_info=True)
                    err = ProtocolError("internal", str(exc), 500)
                    reply = protocol.pack_frame(protocol.OP_ERROR, protocol.encode_error(err))
                writer.write(reply)
                await writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            logger.info("Connection #%d closed", index)
            writer.close()


async def _serve(config: OracleConfig) -> None:
    server = OracleServer(build_oracle(config), config.host, config.port)
    await server.start()
    try:
        await server.serve_forever()
    finally:
        await server.close()


def serve(config: OracleConfig) -> None:
    """Run the service until interrupted."""
    try:
        asyncio.run(_serve(config))
    except KeyboardInterrupt:
        logger.info("Interrupted")
