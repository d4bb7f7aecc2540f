"""Token gateway: session table, wire protocol, server and client agent."""

from .client import Agent, GatewayClient
from .core import (
    AuthResult,
    DecisionLog,
    DenyReason,
    Gateway,
    SessionEntry,
    SliceClock,
    audit_decision_log,
    audit_state_schema,
)
from .server import GatewayServer, client_ssl_context, self_signed_cert, server_ssl_context

__all__ = [
    "Agent", "AuthResult", "DecisionLog", "DenyReason", "Gateway", "GatewayClient", "GatewayServer",
    "SessionEntry", "SliceClock", "audit_decision_log", "audit_state_schema", "client_ssl_context",
    "self_signed_cert", "server_ssl_context",
]
