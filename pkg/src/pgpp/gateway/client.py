"""
Client side: a connection wrapper and the headless background agent.

The agent presents the current slice's token when connectivity comes up and
stages the next slice's token ahead of each boundary.
"""

from __future__ import annotations

import asyncio
import ssl
import time
from dataclasses import dataclass
from typing import Callable

from ..errors import WireFormatError
from ..tokens import SignedToken, Wallet
from .core import AuthResult, DenyReason, SliceClock
from .wire import Message, MsgType, encode, read_message


class GatewayClient:
    def __init__(self, host: str, port: int, ssl_context: ssl.SSLContext | None = None,
                 server_hostname: str | None = None):
        self.host = host
        self.port = port
        self.ssl_context = ssl_context
        self.server_hostname = server_hostname
        self._reader = None
        self._writer = None

    async def connect(self) -> "GatewayClient":
        kw = {}
        if self.ssl_context is not None:
            kw = {"ssl": self.ssl_context, "server_hostname": self.server_hostname or self.host}
        self._reader, self._writer = await asyncio.open_connection(self.host, self.port, **kw)
        return self

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, ssl.SSLError):
                pass
            self._writer = None

    async def __aenter__(self):
        return await self.connect()

    async def __aexit__(self, *exc):
        await self.close()

    async def _roundtrip(self, msg: Message) -> AuthResult:
        if self._writer is None:
            await self.connect()
        self._writer.write(encode(msg))
        await self._writer.drain()
        reply = await read_message(self._reader)
        if reply is None:
            raise WireFormatError("gateway closed the connection")
        if reply.type in (MsgType.AUTH_OK, MsgType.STAGE_OK):
            return AuthResult(True, reply.until)
        if reply.type is MsgType.AUTH_FAIL:
            try:
                reason = DenyReason(reply.reason)
            except ValueError:
                reason = DenyReason.MALFORMED
            return AuthResult(False, None, reason)
        raise WireFormatError(f"unexpected reply {reply.type.name}")

    async def authenticate(self, token: SignedToken) -> AuthResult:
        return await self._roundtrip(Message(MsgType.AUTH, token=token))

    async def stage(self, token: SignedToken) -> AuthResult:
        return await self._roundtrip(Message(MsgType.STAGE, token=token))


@dataclass
class AgentState:
    authorized_until: float = float("-inf")
    staged_slice: int | None = None
    last: AuthResult | None = None


class Agent:
    """Background job keeping the device authorized from its wallet."""

    def __init__(self, wallet: Wallet, clock: SliceClock, client_factory: Callable[[], GatewayClient],
                 now: Callable[[], float] = time.time, retry_s: float = 1.0, lead_s: float = 5.0):
        self.wallet = wallet
        self.clock = clock
        self.client_factory = client_factory
        self.now = now
        self.retry_s = retry_s
        self.lead_s = lead_s
        self.state = AgentState()

    async def step(self) -> AuthResult | None:
        """One pass: authenticate if unauthorized, then stage the next token."""
        t = self.now()
        cur = self.clock.slice_at(t)
        res = None
        async with self.client_factory() as client:
            if t >= self.state.authorized_until:
                tok = self.wallet.token_for(cur)
                if tok is None:
                    return None
                res = await client.authenticate(tok)
                self.state.last = res
                if not res.ok:
                    return res
                self.state.authorized_until = res.until
                self.state.staged_slice = None
            nxt = self.clock.slice_at(self.state.authorized_until)
            tok = self.wallet.token_for(nxt)
            if tok is not None and self.state.staged_slice != nxt:
                staged = await client.stage(tok)
                if staged.ok:
                    self.state.staged_slice = nxt
                res = res or staged
        return res

    async def run(self, connected: asyncio.Event, stop: asyncio.Event) -> None:
        """Re-authenticate whenever ``connected`` is set, until ``stop``."""
        while not stop.is_set():
            await connected.wait()
            try:
                res = await self.step()
            except (OSError, WireFormatError):
                res = None
            if res is not None and res.ok:
                wait = max(self.retry_s, self.state.authorized_until - self.now() - self.lead_s)
            else:
                wait = self.retry_s
            try:
                await asyncio.wait_for(stop.wait(), timeout=wait)
            except asyncio.TimeoutError:
                pass
