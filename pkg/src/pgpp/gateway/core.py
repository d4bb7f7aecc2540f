"""
Session table and forwarding gate of the token gateway.

The gateway binds an authorization to the client's network address for the
lifetime of the token's slice. It never learns who the client is: its state
is addresses, expiries and token digests, nothing else.
"""

from __future__ import annotations

import enum
import json
import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from ..errors import StoreUnavailableError
from ..spent import SpentKey, SpentTokenStore
from ..tokens import PublicKeySet, RejectReason, SignedToken, check_token, verify_and_spend


@dataclass(frozen=True)
class SliceClock:
    """Maps wall-clock seconds to slice indices: slice i covers [start + i*len, start + (i+1)*len)."""

    period_start: float
    slice_seconds: float

    def __post_init__(self):
        if not self.slice_seconds > 0:
            raise ValueError("slice_seconds must be positive")

    def slice_at(self, t: float) -> int:
        return math.floor((t - self.period_start) / self.slice_seconds)

    def slice_start(self, i: int) -> float:
        return self.period_start + i * self.slice_seconds

    def slice_end(self, i: int) -> float:
        return self.period_start + (i + 1) * self.slice_seconds


class DenyReason(str, enum.Enum):
    BAD_SIGNATURE = "bad-signature"
    WRONG_SLICE = "wrong-slice"
    DOUBLE_SPEND = "double-spend"
    STORE_UNAVAILABLE = "store-unavailable"
    NO_SESSION = "no-session"
    MALFORMED = "malformed"

    @property
    def retryable(self) -> bool:
        return self is DenyReason.STORE_UNAVAILABLE


_FROM_VERDICT = {
    RejectReason.BAD_SIGNATURE: DenyReason.BAD_SIGNATURE,
    RejectReason.WRONG_SLICE: DenyReason.WRONG_SLICE,
    RejectReason.DOUBLE_SPEND: DenyReason.DOUBLE_SPEND,
}


@dataclass(frozen=True)
class AuthResult:
    ok: bool
    until: float | None = None
    reason: DenyReason | None = None

    @property
    def retryable(self) -> bool:
        return self.reason is not None and self.reason.retryable


@dataclass
class SessionEntry:
    address: str
    authorized_until: float
    slice_index: int
    staged_next: SignedToken | None = None


class DecisionLog:
    """Append-only JSONL record of gateway decisions (ts, address, event, reason, ...)."""

    def __init__(self, path=None):
        self.path = path
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        self._fh = open(path, "a", encoding="utf-8") if path is not None else None

    def write(self, **entry) -> None:
        with self._lock:
            self.entries.append(entry)
            if self._fh is not None:
                self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
                self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @staticmethod
    def read(path) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


class Gateway:
    """Token-gated forwarding for client addresses.

    ``authenticate`` spends a current-slice token; ``stage`` pre-checks the
    next slice's token, which is spent lazily the first time traffic arrives
    after the boundary. Mutations are serialized per address so a slow store
    call for one client does not hold up the others.
    """

    def __init__(
        self,
        keys: PublicKeySet,
        store: SpentTokenStore,
        clock: SliceClock,
        window: int = 0,
        log: DecisionLog | None = None,
        now: Callable[[], float] = time.time,
        name: str = "gw",
    ):
        self.keys = keys
        self.store = store
        self.clock = clock
        self.window = window
        self.log = log if log is not None else DecisionLog()
        self.now = now
        self.name = name
        self._sessions: dict[str, SessionEntry] = {}
        self._table_lock = threading.Lock()
        self._addr_locks: dict[str, threading.Lock] = {}

    def _lock_for(self, address: str) -> threading.Lock:
        with self._table_lock:
            lock = self._addr_locks.get(address)
            if lock is None:
                lock = self._addr_locks[address] = threading.Lock()
            return lock

    def _record(self, t: float, address: str, event: str, reason=None, **extra) -> None:
        self.log.write(
            ts=t, gateway=self.name, address=address, event=event,
            reason=None if reason is None else reason.value, **extra,
        )

    def session(self, address: str) -> SessionEntry | None:
        return self._sessions.get(address)

    # -- operations -----------------------------------------------------------

    def _spend(self, address: str, signed: SignedToken, current: int, t: float, event: str) -> AuthResult:
        try:
            verdict = verify_and_spend(signed, self.keys, self.store, current, self.window)
        except StoreUnavailableError:
            self._record(t, address, event, DenyReason.STORE_UNAVAILABLE)
            return AuthResult(False, None, DenyReason.STORE_UNAVAILABLE)
        i = signed.token.slice_index
        if not verdict.accepted:
            entry = self._sessions.get(address)
            if (
                verdict.reason is RejectReason.DOUBLE_SPEND
                and entry is not None
                and t < entry.authorized_until
                and entry.slice_index >= i
            ):
                # re-presentation by an address already covered, e.g. after a
                # staged token was promoted: confirm, extend nothing
                self._record(
                    t, address, event, None, slice=i, digest=verdict.key.digest.hex(), until=entry.authorized_until
                )
                return AuthResult(True, entry.authorized_until)
            reason = _FROM_VERDICT[verdict.reason]
            self._record(t, address, event, reason)
            return AuthResult(False, None, reason)
        until = self.clock.slice_end(i)
        with self._table_lock:
            entry = self._sessions.get(address)
            if entry is None:
                entry = self._sessions[address] = SessionEntry(address, until, i)
            elif until > entry.authorized_until:
                entry.authorized_until = until
                entry.slice_index = i
            if entry.staged_next is not None and entry.staged_next.token.slice_index <= i:
                entry.staged_next = None
        self._record(
            t, address, event, None, slice=i, digest=verdict.key.digest.hex(), until=entry.authorized_until
        )
        return AuthResult(True, entry.authorized_until)

    def authenticate(self, address: str, signed: SignedToken, now: float | None = None) -> AuthResult:
        t = self.now() if now is None else now
        with self._lock_for(address):
            return self._spend(address, signed, self.clock.slice_at(t), t, "auth")

    def stage(self, address: str, signed: SignedToken, now: float | None = None) -> AuthResult:
        """Hold the next slice's token so the session survives the boundary.

        The signature and slice are checked now; the spend happens at the
        boundary. Requires a live session.
        """
        t = self.now() if now is None else now
        with self._lock_for(address):
            entry = self._sessions.get(address)
            if entry is None or t >= entry.authorized_until:
                self._record(t, address, "stage", DenyReason.NO_SESSION)
                return AuthResult(False, None, DenyReason.NO_SESSION)
            nxt = self.clock.slice_at(entry.authorized_until)
            verdict = check_token(signed, self.keys, nxt, 0)
            if not verdict.accepted:
                reason = _FROM_VERDICT[verdict.reason]
                self._record(t, address, "stage", reason)
                return AuthResult(False, None, reason)
            entry.staged_next = signed
            self._record(t, address, "stage", None, slice=nxt, digest=verdict.key.digest.hex())
            return AuthResult(True, entry.authorized_until)

    def forwarding_decision(self, address: str, now: float | None = None) -> bool:
        """Forward iff an unexpired session covers ``address``; default drop."""
        t = self.now() if now is None else now
        entry = self._sessions.get(address)
        if entry is not None and t < entry.authorized_until:
            self._record(t, address, "forward", slice=self.clock.slice_at(t))
            return True
        if entry is not None and entry.staged_next is not None:
            with self._lock_for(address):
                staged, entry.staged_next = entry.staged_next, None
                if staged is not None and t >= entry.authorized_until:
                    res = self._spend(address, staged, self.clock.slice_at(t), t, "promote")
                    if res.ok and t < res.until:
                        self._record(t, address, "forward", slice=self.clock.slice_at(t))
                        return True
                elif staged is not None:
                    entry.staged_next = staged
                    self._record(t, address, "forward", slice=self.clock.slice_at(t))
                    return True
        self._record(t, address, "drop")
        return False

    def expire(self, now: float | None = None) -> int:
        """Drop sessions that are past their horizon and have nothing staged."""
        t = self.now() if now is None else now
        with self._table_lock:
            dead = [a for a, e in self._sessions.items() if t >= e.authorized_until and e.staged_next is None]
            for a in dead:
                del self._sessions[a]
        return len(dead)

    # -- audit ----------------------------------------------------------------

    def state_snapshot(self) -> dict:
        """Everything the gateway keeps, in serializable form."""
        with self._table_lock:
            sessions = [
                {
                    "address": e.address,
                    "authorized_until": e.authorized_until,
                    "slice_index": e.slice_index,
                    "staged_digest": None if e.staged_next is None else e.staged_next.digest().hex(),
                }
                for e in sorted(self._sessions.values(), key=lambda e: e.address)
            ]
        return {"period_id": self.keys.period_id, "sessions": sessions, "log": list(self.log.entries)}


SESSION_FIELDS = frozenset({"address", "authorized_until", "slice_index", "staged_digest"})
LOG_FIELDS = frozenset({"ts", "gateway", "address", "event", "reason", "slice", "digest", "until"})


def audit_state_schema(snapshot: Mapping) -> list[str]:
    """Field names in a snapshot outside the address/expiry/digest whitelist."""
    bad = [k for k in snapshot if k not in {"period_id", "sessions", "log"}]
    for s in snapshot.get("sessions", []):
        bad += [f"sessions.{k}" for k in s if k not in SESSION_FIELDS]
    for e in snapshot.get("log", []):
        bad += [f"log.{k}" for k in e if k not in LOG_FIELDS]
    return sorted(set(bad))


def audit_decision_log(entries: Iterable[Mapping], store: SpentTokenStore, period_id: str) -> list[str]:
    """Replay a decision log; every forward must fall inside the horizon of an
    accepted, store-recorded token for that address. Returns violations."""
    covered: dict[str, list[tuple[float, float]]] = {}
    problems = []
    for n, e in enumerate(entries):
        if e["event"] in ("auth", "promote") and e.get("reason") is None:
            key = SpentKey(period_id, int(e["slice"]), bytes.fromhex(e["digest"]))
            if key not in store:
                problems.append(f"entry {n}: accepted token {e['digest'][:16]} missing from spent store")
            covered.setdefault(e["address"], []).append((float(e["ts"]), float(e["until"])))
        elif e["event"] == "forward":
            ts = float(e["ts"])
            if not any(a <= ts < b for a, b in covered.get(e["address"], ())):
                problems.append(f"entry {n}: forward for {e['address']} at {ts} without an accepted token")
    return problems
