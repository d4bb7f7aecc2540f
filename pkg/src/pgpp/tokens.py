"""
Anonymous access tokens: RSA blind signatures over per-slice keys.

A billing period is cut into ``s`` slices, each with its own RSA keypair. A
token is the 64-byte message m = i || r (big-endian 256-bit slice index i,
256-bit random nonce r). The client blinds FDH(m), the billing authority signs
the blinded value with the slice key, and the client unblinds to a plain RSA
signature on FDH(m). Spending a token inserts a digest of m into a shared
spent store, so a token presented twice is caught.

Wire layout of m (64 bytes):
    bytes  0..31  i, big-endian; bit 255 = priority flag,
                  bits 248..254 = token kind, bits 0..247 = slice index
    bytes 32..63  r
"""

from __future__ import annotations

import enum
import hashlib
import json
import secrets
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2
from cryptography.hazmat.primitives.asymmetric import rsa

from .errors import TokenError
from .spent import SpentKey, SpentTokenStore

KEY_BITS = 2048
PUBLIC_EXPONENT = 65537
MESSAGE_LEN = 64
NONCE_LEN = 32

_SLICE_BITS = 248
_SLICE_MASK = (1 << _SLICE_BITS) - 1
_KIND_SHIFT = 248
_KIND_MASK = 0x7F
_PRIORITY_BIT = 255

_FDH_TAG = b"pgpp-fdh-v1"


class TokenKind(enum.IntEnum):
    TIME = 0
    METERED = 1


@dataclass(frozen=True)
class Token:
    slice_index: int
    nonce: bytes
    kind: TokenKind = TokenKind.TIME
    priority: bool = False

    def __post_init__(self):
        if not 0 <= self.slice_index <= _SLICE_MASK:
            raise TokenError(f"slice index {self.slice_index} out of range")
        if len(self.nonce) != NONCE_LEN:
            raise TokenError(f"nonce must be {NONCE_LEN} bytes")

    @classmethod
    def fresh(cls, slice_index: int, kind: TokenKind = TokenKind.TIME, priority: bool = False) -> "Token":
        return cls(slice_index, secrets.token_bytes(NONCE_LEN), TokenKind(kind), priority)

    @property
    def i(self) -> int:
        return self.slice_index | (int(self.kind) << _KIND_SHIFT) | (int(self.priority) << _PRIORITY_BIT)

    def message(self) -> bytes:
        return self.i.to_bytes(32, "big") + self.nonce

    @classmethod
    def from_message(cls, m: bytes) -> "Token":
        if len(m) != MESSAGE_LEN:
            raise TokenError(f"token message must be {MESSAGE_LEN} bytes, got {len(m)}")
        i = int.from_bytes(m[:32], "big")
        try:
            kind = TokenKind((i >> _KIND_SHIFT) & _KIND_MASK)
        except ValueError:
            raise TokenError("unknown token kind") from None
        return cls(i & _SLICE_MASK, bytes(m[32:]), kind, bool(i >> _PRIORITY_BIT))

    def digest(self) -> bytes:
        return hashlib.sha256(self.message()).digest()


def fdh(message: bytes, n: int) -> int:
    """Full-domain hash: SHA-256 in counter mode to the modulus length, reduced mod n."""
    k = (n.bit_length() + 7) // 8
    out = bytearray()
    counter = 0
    while len(out) < k:
        out += hashlib.sha256(_FDH_TAG + counter.to_bytes(4, "big") + message).digest()
        counter += 1
    return int.from_bytes(bytes(out[:k]), "big") % n


# -----------------------------------------------------------------------------
# Keys


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int = PUBLIC_EXPONENT

    def __post_init__(self):
        object.__setattr__(self, "_n", gmpy2.mpz(self.n))

    @property
    def size_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True, repr=False)
class PrivateKey:
    n: int
    e: int
    d: int
    p: int
    q: int

    def __post_init__(self):
        p, q = gmpy2.mpz(self.p), gmpy2.mpz(self.q)
        object.__setattr__(self, "_p", p)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_dp", gmpy2.mpz(self.d) % (p - 1))
        object.__setattr__(self, "_dq", gmpy2.mpz(self.d) % (q - 1))
        object.__setattr__(self, "_qinv", gmpy2.invert(q, p))

    def __repr__(self) -> str:
        return f"PrivateKey(n=<{self.n.bit_length()} bits>)"

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.n, self.e)

    def raw_sign(self, x: int) -> int:
        # CRT exponentiation
        x = gmpy2.mpz(x)
        s1 = gmpy2.powmod(x, self._dp, self._p)
        s2 = gmpy2.powmod(x, self._dq, self._q)
        h = (self._qinv * (s1 - s2)) % self._p
        return int(s2 + h * self._q)

    @classmethod
    def generate(cls, bits: int = KEY_BITS) -> "PrivateKey":
        key = rsa.generate_private_key(public_exponent=PUBLIC_EXPONENT, key_size=bits)
        nums = key.private_numbers()
        return cls(nums.public_numbers.n, nums.public_numbers.e, nums.d, nums.p, nums.q)

    def to_dict(self) -> dict:
        return {"n": hex(self.n), "e": self.e, "d": hex(self.d), "p": hex(self.p), "q": hex(self.q)}

    @classmethod
    def from_dict(cls, d: dict) -> "PrivateKey":
        return cls(int(d["n"], 16), int(d["e"]), int(d["d"], 16), int(d["p"], 16), int(d["q"], 16))


@dataclass(frozen=True)
class PublicKeySet:
    """The per-period public keys as published to the key repository."""

    period_id: str
    keys: tuple[PublicKey, ...]

    @property
    def s(self) -> int:
        return len(self.keys)

    def __getitem__(self, slice_index: int) -> PublicKey:
        return self.keys[slice_index]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "period_id": self.period_id,
            "s": self.s,
            "keys": [
                {"slice_index": i, "modulus": hex(k.n), "exponent": k.e} for i, k in enumerate(self.keys)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "PublicKeySet":
        if d.get("version") != 1:
            raise TokenError(f"unsupported key repository version {d.get('version')!r}")
        rows = sorted(d["keys"], key=lambda r: r["slice_index"])
        if [r["slice_index"] for r in rows] != list(range(d["s"])):
            raise TokenError("key repository slice indices are not 0..s-1")
        return cls(str(d["period_id"]), tuple(PublicKey(int(r["modulus"], 16), int(r["exponent"])) for r in rows))

    @classmethod
    def from_json(cls, text: str) -> "PublicKeySet":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, repr=False)
class SliceKeySet:
    period_id: str
    keys: tuple[PrivateKey, ...]

    def __post_init__(self):
        if len(self.keys) < 1:
            raise TokenError("a period needs at least one slice")

    def __repr__(self) -> str:
        return f"SliceKeySet(period_id={self.period_id!r}, s={self.s})"

    @property
    def s(self) -> int:
        return len(self.keys)

    def public(self) -> PublicKeySet:
        return PublicKeySet(self.period_id, tuple(k.public for k in self.keys))

    def to_dict(self) -> dict:
        return {"version": 1, "period_id": self.period_id, "keys": [k.to_dict() for k in self.keys]}

    @classmethod
    def from_dict(cls, d: dict) -> "SliceKeySet":
        return cls(str(d["period_id"]), tuple(PrivateKey.from_dict(k) for k in d["keys"]))


def gen_period_keys(period_id: str, s: int, bits: int = KEY_BITS) -> SliceKeySet:
    """``s`` independent RSA keypairs for one billing period (OS CSPRNG)."""
    if s < 1:
        raise TokenError("slice count s must be at least 1")
    return SliceKeySet(str(period_id), tuple(PrivateKey.generate(bits) for _ in range(s)))


# -----------------------------------------------------------------------------
# Blind / sign / unblind / verify


@dataclass(frozen=True, repr=False)
class BlindingSecret:
    token: Token
    b_inv: int
    n: int


def blind(token: Token, pubkey: PublicKey, rng=None) -> tuple[int, BlindingSecret]:
    """Return (FDH(m) * b^e mod n, secret) for a fresh random unit b."""
    rng = rng or secrets.SystemRandom()
    n = pubkey._n
    h = fdh(token.message(), pubkey.n)
    while True:
        b = gmpy2.mpz(rng.randrange(2, pubkey.n - 1))
        if gmpy2.gcd(b, n) == 1:
            break
    blinded = (h * gmpy2.powmod(b, pubkey.e, n)) % n
    return int(blinded), BlindingSecret(token, int(gmpy2.invert(b, n)), pubkey.n)


def sign_blinded(blinded: int, privkey: PrivateKey) -> int:
    if not 0 <= blinded < privkey.n:
        raise TokenError("blinded value outside the RSA domain [0, n)")
    return privkey.raw_sign(blinded)


@dataclass(frozen=True)
class SignedToken:
    token: Token
    signature: int
    period_id: str = ""

    def digest(self) -> bytes:
        return self.token.digest()

    def to_bytes(self) -> bytes:
        sig = self.signature.to_bytes((self.signature.bit_length() + 7) // 8 or 1, "big")
        pid = self.period_id.encode()
        return (
            self.token.message()
            + len(sig).to_bytes(2, "big")
            + sig
            + len(pid).to_bytes(2, "big")
            + pid
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SignedToken":
        try:
            m = blob[:MESSAGE_LEN]
            off = MESSAGE_LEN
            slen = int.from_bytes(blob[off:off + 2], "big")
            off += 2
            sig = int.from_bytes(blob[off:off + slen], "big")
            off += slen
            plen = int.from_bytes(blob[off:off + 2], "big")
            off += 2
            pid = blob[off:off + plen].decode()
            if off + plen != len(blob) or slen == 0:
                raise ValueError("length mismatch")
        except (ValueError, UnicodeDecodeError) as exc:
            raise TokenError(f"malformed signed token: {exc}") from None
        return cls(Token.from_message(m), sig, pid)

    def to_dict(self) -> dict:
        return {"i": self.token.i, "r": self.token.nonce.hex(), "signature": hex(self.signature)}

    @classmethod
    def from_dict(cls, d: dict, period_id: str = "") -> "SignedToken":
        m = int(d["i"]).to_bytes(32, "big") + bytes.fromhex(d["r"])
        return cls(Token.from_message(m), int(d["signature"], 16), period_id)


def unblind(blinded_signature: int, secret: BlindingSecret, period_id: str = "") -> SignedToken:
    s = (gmpy2.mpz(blinded_signature) * secret.b_inv) % secret.n
    return SignedToken(secret.token, int(s), period_id)


def verify(signed: SignedToken, pubkey: PublicKey) -> bool:
    s = signed.signature
    if not 0 < s < pubkey.n:
        return False
    return gmpy2.powmod(gmpy2.mpz(s), pubkey.e, pubkey._n) == fdh(signed.token.message(), pubkey.n)


class RejectReason(str, enum.Enum):
    BAD_SIGNATURE = "bad-signature"
    WRONG_SLICE = "wrong-slice"
    DOUBLE_SPEND = "double-spend"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None
    key: SpentKey | None = None

    def __bool__(self) -> bool:
        return self.accepted


def check_token(signed: SignedToken, keys: PublicKeySet, current_slice: int, window: int = 0) -> Verdict:
    """Signature and slice-window checks, without touching the spent store."""
    idx = signed.token.slice_index
    if signed.period_id and signed.period_id != keys.period_id:
        return Verdict(False, RejectReason.BAD_SIGNATURE)
    if idx >= keys.s or not verify(signed, keys[idx]):
        return Verdict(False, RejectReason.BAD_SIGNATURE)
    if abs(idx - current_slice) > window:
        return Verdict(False, RejectReason.WRONG_SLICE)
    return Verdict(True, None, SpentKey(keys.period_id, idx, signed.digest()))


def verify_and_spend(
    signed: SignedToken,
    keys: PublicKeySet,
    store: SpentTokenStore,
    current_slice: int,
    window: int = 0,
) -> Verdict:
    """Accept iff the signature verifies, the slice is within ``window`` of
    ``current_slice``, and the store's atomic insert of the digest succeeds.

    StoreUnavailableError propagates; nothing is accepted without the store.
    """
    verdict = check_token(signed, keys, current_slice, window)
    if not verdict.accepted:
        return verdict
    if not store.add(verdict.key):
        return Verdict(False, RejectReason.DOUBLE_SPEND, verdict.key)
    return verdict


# -----------------------------------------------------------------------------
# Issuance


class BillingAuthority:
    """Holds the period's signing keys; signs blinded values after payment.

    It never sees token messages, only blinded integers.
    """

    def __init__(self, keyset: SliceKeySet):
        self.keyset = keyset
        self._lock = threading.Lock()

    @property
    def public(self) -> PublicKeySet:
        return self.keyset.public()

    def sign_blinded(self, slice_index: int, blinded: int) -> int:
        if not 0 <= slice_index < self.keyset.s:
            raise TokenError(f"no key for slice {slice_index}")
        with self._lock:
            return sign_blinded(blinded, self.keyset.keys[slice_index])

    def sign_batch(self, requests: Sequence[tuple[int, int]]) -> list[int]:
        """Sign a batch of (slice_index, blinded) in one request."""
        return [self.sign_blinded(i, b) for i, b in requests]


@dataclass
class Wallet:
    period_id: str
    tokens: list[SignedToken] = field(default_factory=list)

    def token_for(self, slice_index: int) -> SignedToken | None:
        for t in self.tokens:
            if t.token.slice_index == slice_index:
                return t
        return None

    def to_dict(self) -> dict:
        return {"version": 1, "period_id": self.period_id, "tokens": [t.to_dict() for t in self.tokens]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Wallet":
        pid = str(d["period_id"])
        return cls(pid, [SignedToken.from_dict(t, pid) for t in d["tokens"]])

    @classmethod
    def from_json(cls, text: str) -> "Wallet":
        return cls.from_dict(json.loads(text))

    def serialized_size(self) -> int:
        return len(self.to_json().encode())


def issue_wallet(
    authority: BillingAuthority,
    keys: PublicKeySet,
    slices: Iterable[int] | None = None,
    kind: TokenKind = TokenKind.TIME,
    priority: bool = False,
) -> Wallet:
    """Client side of issuance: make, blind, submit, unblind, and check tokens."""
    slices = list(range(keys.s)) if slices is None else list(slices)
    tokens = [Token.fresh(i, kind, priority) for i in slices]
    blinded = [blind(t, keys[t.slice_index]) for t in tokens]
    sigs = authority.sign_batch([(t.slice_index, b) for t, (b, _) in zip(tokens, blinded)])
    wallet = Wallet(keys.period_id)
    for (b, secret), sig in zip(blinded, sigs):
        signed = unblind(sig, secret, keys.period_id)
        if not verify(signed, keys[signed.token.slice_index]):
            raise TokenError(f"issuer returned an invalid signature for slice {signed.token.slice_index}")
        wallet.tokens.append(signed)
    return wallet
