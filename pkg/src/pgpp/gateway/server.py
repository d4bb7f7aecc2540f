"""asyncio listener for the gateway, optionally behind TLS."""

from __future__ import annotations

import asyncio
import datetime
import ipaddress
import logging
import ssl
from concurrent.futures import ThreadPoolExecutor

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

from ..errors import WireFormatError
from .core import AuthResult, DenyReason, Gateway
from .wire import Message, MsgType, encode, read_message

log = logging.getLogger(__name__)


def self_signed_cert(host: str = "127.0.0.1", days: int = 30) -> tuple[bytes, bytes]:
    """(cert_pem, key_pem) for a throwaway P-256 certificate naming ``host``."""
    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, host)])
    try:
        san = x509.IPAddress(ipaddress.ip_address(host))
    except ValueError:
        san = x509.DNSName(host)
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=days))
        .add_extension(x509.SubjectAlternativeName([san]), critical=False)
        .sign(key, hashes.SHA256())
    )
    key_pem = key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )
    return cert.public_bytes(serialization.Encoding.PEM), key_pem


def server_ssl_context(certfile, keyfile) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.load_cert_chain(certfile, keyfile)
    return ctx


def client_ssl_context(cafile) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.load_verify_locations(cafile)
    return ctx


def _reply(kind: MsgType, res: AuthResult) -> Message:
    if res.ok:
        return Message(MsgType.AUTH_OK if kind is MsgType.AUTH else MsgType.STAGE_OK, until=res.until)
    return Message(MsgType.AUTH_FAIL, reason=res.reason.value, retryable=res.retryable)


class GatewayServer:
    """Serves AUTH / STAGE requests; the client address is the socket peer address.

    Store-touching calls run on a thread pool so one slow spend does not
    stall the event loop.
    """

    def __init__(self, gateway: Gateway, host: str = "127.0.0.1", port: int = 0,
                 ssl_context: ssl.SSLContext | None = None, workers: int = 8):
        self.gateway = gateway
        self.host = host
        self.port = port
        self.ssl_context = ssl_context
        self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="pgpp-gw")
        self._server: asyncio.base_events.Server | None = None

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, self.host, self.port, ssl=self.ssl_context)
        sock = self._server.sockets[0].getsockname()
        self.port = sock[1]
        return sock[0], sock[1]

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self._executor.shutdown(wait=False)

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        address = str(peer[0]) if peer else "unknown"
        loop = asyncio.get_running_loop()
        try:
            while True:
                try:
                    msg = await read_message(reader)
                except WireFormatError as exc:
                    log.info("malformed frame from %s: %s", address, exc)
                    writer.write(encode(Message(MsgType.AUTH_FAIL, reason=DenyReason.MALFORMED.value)))
                    await writer.drain()
                    break
                if msg is None:
                    break
                if msg.type is MsgType.AUTH:
                    res = await loop.run_in_executor(self._executor, self.gateway.authenticate, address, msg.token)
                elif msg.type is MsgType.STAGE:
                    res = await loop.run_in_executor(self._executor, self.gateway.stage, address, msg.token)
                else:
                    res = AuthResult(False, None, DenyReason.MALFORMED)
                writer.write(encode(_reply(msg.type, res)))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, ssl.SSLError):
                pass
