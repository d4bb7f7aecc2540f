"""
Attach authentication (AKA) under a shared IMSI.

Every SIM shares one IMSI and key, but each keeps its own 48-bit sequence
counter, while the HSS keeps one counter for the IMSI. A UE whose counter no
longer matches the one embedded in the HSS's AUTN reports a sync_failure with
its own counter, the HSS re-issues a vector bound to that counter, and the UE
attaches again.

Cryptography is modelled with HMAC-SHA256 rather than MILENAGE; the
phenomenon is counter algebra and does not depend on the cipher.

Resynchronisation detail: the re-issued vector is bound to the UE's reported
counter, but the shared HSS counter is not rewound to it. The HSS counter
advances by one per successful attach, so after any run it equals the number
of successes mod 2^48.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import heapq
import hmac
import json
import math
import secrets
from dataclasses import asdict, dataclass, field
from typing import Callable, Collection, Hashable, Iterable

import numpy as np

from .errors import AuthRejectError

SQN_BITS = 48
SQN_MOD = 1 << SQN_BITS
K_LEN = 16
RAND_LEN = 16

PGPP_SHARED_IMSI = "001010000000001"


class Role(enum.Enum):
    UE = "UE"
    HSS = "HSS"


@dataclass
class AkaPeer:
    role: Role
    k: bytes
    sqn: int = 0
    ue_id: Hashable | None = None  # UE side only; never put on the wire

    def __post_init__(self):
        if len(self.k) != K_LEN:
            raise ValueError(f"K must be {K_LEN} bytes")
        if self.role is Role.HSS and self.ue_id is not None:
            raise ValueError("the HSS record carries no UE identity")
        self.sqn %= SQN_MOD

    @classmethod
    def ue(cls, k: bytes, sqn: int = 0, ue_id: Hashable | None = None) -> "AkaPeer":
        return cls(Role.UE, k, sqn, ue_id)

    @classmethod
    def hss(cls, k: bytes, sqn: int = 0) -> "AkaPeer":
        return cls(Role.HSS, k, sqn)


def _f(k: bytes, label: bytes, *parts: bytes) -> bytes:
    return hmac.new(k, label + b"|" + b"".join(parts), hashlib.sha256).digest()


def _sqn_bytes(sqn: int) -> bytes:
    return (sqn % SQN_MOD).to_bytes(6, "big")


@dataclass(frozen=True)
class AuthVector:
    rand: bytes
    autn: bytes  # (SQN xor AK) || MAC, 6 + 8 bytes
    xres: bytes
    k_asme: bytes

    def to_wire(self) -> dict:
        # what the MME forwards to the UE
        return {"rand": self.rand.hex(), "autn": self.autn.hex()}


def make_vector(k: bytes, sqn: int, rand: bytes) -> AuthVector:
    """Deterministic in (K, sqn, rand)."""
    s = _sqn_bytes(sqn)
    ak = _f(k, b"ak", rand)[:6]
    conc = bytes(a ^ b for a, b in zip(s, ak))
    mac = _f(k, b"mac", s, rand)[:8]
    return AuthVector(rand, conc + mac, _f(k, b"res", rand)[:8], _f(k, b"kasme", s, rand))


def hss_generate_vector(hss: AkaPeer, rand: bytes | None = None, sqn: int | None = None) -> AuthVector:
    """Fresh RAND, AUTN bound to the HSS counter (or to ``sqn`` when resynchronising)."""
    if hss.role is not Role.HSS:
        raise ValueError("vectors are generated by the HSS")
    rand = secrets.token_bytes(RAND_LEN) if rand is None else rand
    return make_vector(hss.k, hss.sqn if sqn is None else sqn, rand)


@dataclass(frozen=True)
class UeOk:
    res: bytes
    k_asme: bytes
    sqn: int


@dataclass(frozen=True)
class SyncFailure:
    ue_sqn: int


def ue_check(ue: AkaPeer, vector: AuthVector, window: int = 0) -> UeOk | SyncFailure:
    """Verify AUTN with the UE's K, then compare counters.

    Accepts when 0 <= (SQN_HSS - SQN_UE) mod 2^48 <= window; window 0 is
    an exact match. A MAC mismatch raises AuthRejectError.
    """
    if ue.role is not Role.UE:
        raise ValueError("ue_check runs on the UE")
    ak = _f(ue.k, b"ak", vector.rand)[:6]
    s = bytes(a ^ b for a, b in zip(vector.autn[:6], ak))
    if not hmac.compare_digest(_f(ue.k, b"mac", s, vector.rand)[:8], vector.autn[6:]):
        raise AuthRejectError("AUTN MAC mismatch")
    sqn = int.from_bytes(s, "big")
    if (sqn - ue.sqn) % SQN_MOD > window:
        return SyncFailure(ue.sqn)
    return UeOk(_f(ue.k, b"res", vector.rand)[:8], _f(ue.k, b"kasme", s, vector.rand), sqn)


def hss_resync(hss: AkaPeer, ue_sqn: int, rand: bytes | None = None) -> AuthVector:
    """Vector for the retry after a sync_failure, bound to the UE's reported counter."""
    return hss_generate_vector(hss, rand, ue_sqn)


def commit_success(hss: AkaPeer, ue: AkaPeer, ok: UeOk) -> None:
    hss.sqn = (hss.sqn + 1) % SQN_MOD
    ue.sqn = (ok.sqn + 1) % SQN_MOD


def pgpp_context_key(imsi: str, connection_salt: bytes | str | int) -> str:
    """Per-connection context key: SHA-256(imsi || salt) truncated to 128 bits, hex."""
    if isinstance(connection_salt, int):
        connection_salt = connection_salt.to_bytes(max(1, (connection_salt.bit_length() + 7) // 8), "big")
    elif isinstance(connection_salt, str):
        connection_salt = connection_salt.encode()
    h = hashlib.sha256(imsi.encode() + b"\x00" + connection_salt).digest()
    return h[:16].hex()


# -----------------------------------------------------------------------------
# Single attach, no timing


@dataclass
class AttachTrace:
    attempts: int
    sync_failures: int
    messages: list[dict] = field(default_factory=list)


def attach(hss: AkaPeer, ue: AkaPeer, context: str, imsi: str = PGPP_SHARED_IMSI,
           window: int = 0, max_attempts: int = 4) -> AttachTrace:
    """Run one UE's attach to completion against ``hss``; raises AuthRejectError on a wrong K."""
    tr = AttachTrace(0, 0)
    vec = hss_generate_vector(hss)
    while True:
        tr.attempts += 1
        tr.messages.append({"type": "attach_request", "imsi": imsi, "context": context})
        tr.messages.append({"type": "auth_request", "context": context, **vec.to_wire()})
        res = ue_check(ue, vec, window)
        if isinstance(res, UeOk):
            tr.messages.append({"type": "auth_response", "context": context, "res": res.res.hex()})
            commit_success(hss, ue, res)
            return tr
        tr.sync_failures += 1
        tr.messages.append({"type": "auth_failure", "context": context, "cause": "sync_failure",
                            "sqn": res.ue_sqn})
        if tr.attempts >= max_attempts:
            raise RuntimeError("attach did not converge")
        vec = hss_resync(hss, res.ue_sqn)


MESSAGE_FIELDS = frozenset({"type", "imsi", "context", "rand", "autn", "res", "cause", "sqn"})


# -----------------------------------------------------------------------------
# Mass attach


@dataclass(frozen=True)
class AttachOutcome:
    ue_id: int
    attempts: int
    total_delay_ms: float
    result: str  # "attached" | "failed"
    sync_failures: int = 0
    arrival_ms: float = 0.0
    completion_ms: float = 0.0

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


def gamma_latency(mean_ms: float = 200.0, cv: float = 0.25) -> Callable[[np.random.Generator], float]:
    shape = 1.0 / (cv * cv)
    scale = mean_ms / shape
    return lambda rng: float(rng.gamma(shape, scale))


def _latency(spec) -> Callable[[np.random.Generator], float]:
    if spec is None:
        return gamma_latency()
    if callable(spec):
        return spec
    value = float(spec)
    return lambda rng: value


@dataclass
class MassAttach:
    outcomes: list[AttachOutcome]
    hss_sqn: dict  # record key -> final counter
    messages: list[dict]


# event kinds; ties at equal time resolve by sequence number
_ARRIVE, _HSS_VECTOR, _UE_CHECK, _HSS_RESYNC, _DONE = range(5)


def run_mass_attach(
    n_ues: int,
    shared_imsi: bool = True,
    per_round_latency_ms=None,
    seed: int = 0,
    *,
    sequential: bool = False,
    arrival_window_ms: float = 50.0,
    hss_service_ms: float = 2.0,
    window: int = 0,
    ue_start_sqn: int = 0,
    rejected_ues: Collection[int] = (),
    imsi: str = PGPP_SHARED_IMSI,
) -> MassAttach:
    """Event-driven attach storm against one HSS.

    Each round costs one latency sample: half to reach the HSS, half back.
    The HSS serves requests one at a time (``hss_service_ms`` each). A
    sync_failure costs a resync round and then one more full attach round.
    ``sequential`` starts UE k only after UE k-1 has finished; otherwise
    arrivals are uniform in [0, arrival_window_ms) in seeded random order.
    UEs in ``rejected_ues`` hold the wrong K and fail with an auth-reject.
    """
    if n_ues < 1:
        raise ValueError("n_ues must be at least 1")
    rng = np.random.default_rng(seed)
    lat = _latency(per_round_latency_ms)
    key = bytes(rng.integers(0, 256, K_LEN, dtype=np.uint8))
    bad_key = bytes(b ^ 0xFF for b in key)

    if shared_imsi:
        records = {imsi: AkaPeer.hss(key)}
        record_of = lambda u: imsi  # noqa: E731
    else:
        records = {f"{imsi}-{u}": AkaPeer.hss(key) for u in range(n_ues)}
        record_of = lambda u: f"{imsi}-{u}"  # noqa: E731
    ues = [AkaPeer.ue(bad_key if u in rejected_ues else key, ue_start_sqn, ue_id=u) for u in range(n_ues)]
    contexts = [pgpp_context_key(imsi, rng.bytes(16)) for _ in range(n_ues)]

    if sequential:
        arrivals = {0: 0.0}
    else:
        times = np.sort(rng.uniform(0.0, arrival_window_ms, n_ues))
        order = rng.permutation(n_ues)
        arrivals = {int(u): float(t) for u, t in zip(order, times)}

    events: list = []
    seq = 0

    def push(t, kind, u, data=None):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, u, data))
        seq += 1

    for u, t in arrivals.items():
        push(t, _ARRIVE, u)

    hss_free = 0.0
    attempts = [0] * n_ues
    failures = [0] * n_ues
    round_lat = [0.0] * n_ues
    arrived = [0.0] * n_ues
    outcomes: dict[int, AttachOutcome] = {}
    messages: list[dict] = []

    def hss_slot(t):
        nonlocal hss_free
        start = max(t, hss_free)
        hss_free = start + hss_service_ms
        return hss_free

    while events:
        t, _, kind, u, data = heapq.heappop(events)
        if kind == _ARRIVE:
            arrived[u] = t
            attempts[u] = 1
            round_lat[u] = lat(rng)
            messages.append({"type": "attach_request", "imsi": imsi, "context": contexts[u]})
            push(t + round_lat[u] / 2, _HSS_VECTOR, u)
        elif kind == _HSS_VECTOR:
            done = hss_slot(t)
            vec = hss_generate_vector(records[record_of(u)], rand=rng.bytes(RAND_LEN))
            push(done + round_lat[u] / 2, _UE_CHECK, u, vec)
        elif kind == _HSS_RESYNC:
            done = hss_slot(t)
            vec = hss_resync(records[record_of(u)], data, rand=rng.bytes(RAND_LEN))
            # the UE restarts the attach: one more full round before the vector is checked
            attempts[u] += 1
            messages.append({"type": "attach_request", "imsi": imsi, "context": contexts[u]})
            push(done + round_lat[u] / 2 + lat(rng), _UE_CHECK, u, vec)
        elif kind == _UE_CHECK:
            messages.append({"type": "auth_request", "context": contexts[u], **data.to_wire()})
            try:
                res = ue_check(ues[u], data, window)
            except AuthRejectError:
                messages.append({"type": "auth_failure", "context": contexts[u], "cause": "mac_failure"})
                push(t, _DONE, u, "failed")
                continue
            if isinstance(res, UeOk):
                messages.append({"type": "auth_response", "context": contexts[u], "res": res.res.hex()})
                commit_success(records[record_of(u)], ues[u], res)
                push(t, _DONE, u, "attached")
            else:
                failures[u] += 1
                messages.append(
                    {"type": "auth_failure", "context": contexts[u], "cause": "sync_failure", "sqn": res.ue_sqn}
                )
                round_lat[u] = lat(rng)
                push(t + round_lat[u] / 2, _HSS_RESYNC, u, res.ue_sqn)
        elif kind == _DONE:
            outcomes[u] = AttachOutcome(
                ue_id=u, attempts=attempts[u], total_delay_ms=t - arrived[u], result=data,
                sync_failures=failures[u], arrival_ms=arrived[u], completion_ms=t,
            )
            if sequential and u + 1 < n_ues:
                push(t, _ARRIVE, u + 1)

    return MassAttach(
        [outcomes[u] for u in range(n_ues)],
        {r: p.sqn for r, p in records.items()},
        messages,
    )


def simulate_mass_attach(n_ues: int, shared_imsi: bool = True, per_round_latency_ms=None, seed: int = 0,
                         **kw) -> list[AttachOutcome]:
    return run_mass_attach(n_ues, shared_imsi, per_round_latency_ms, seed, **kw).outcomes


def sequential_failure_law(n: int) -> list[int]:
    """Closed form for sequential arrivals from counter 0: UE k sees min(1, k-1) failures."""
    return [min(1, k - 1) for k in range(1, n + 1)]


# -----------------------------------------------------------------------------
# Output


def write_outcomes_jsonl(outcomes: Iterable[AttachOutcome], fh) -> None:
    for o in outcomes:
        fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")


def read_outcomes_jsonl(fh) -> list[AttachOutcome]:
    return [AttachOutcome(**json.loads(line)) for line in fh if line.strip()]


def delay_histogram(outcomes: Iterable[AttachOutcome], bin_ms: float = 50.0) -> list[tuple[float, float, int, float]]:
    """Rows (bin_start_ms, bin_end_ms, count, density) over attached UEs; density integrates to 1."""
    delays = [o.total_delay_ms for o in outcomes if o.result == "attached"]
    if not delays:
        return []
    nbins = max(1, math.ceil(max(delays) / bin_ms + 1e-12))
    counts = [0] * nbins
    for d in delays:
        counts[min(int(d // bin_ms), nbins - 1)] += 1
    total = len(delays)
    return [(i * bin_ms, (i + 1) * bin_ms, c, c / (total * bin_ms)) for i, c in enumerate(counts)]


def write_delay_histogram_csv(outcomes: Iterable[AttachOutcome], fh, bin_ms: float = 50.0) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["bin_start_ms", "bin_end_ms", "count", "density"])
    for a, b, c, d in delay_histogram(outcomes, bin_ms):
        w.writerow([f"{a:g}", f"{b:g}", c, f"{d:.9g}"])
