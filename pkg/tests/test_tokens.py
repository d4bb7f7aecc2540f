from __future__ import annotations

import hashlib
import secrets
import threading

import gmpy2
import pytest

from pgpp.errors import StoreUnavailableError, TokenError
from pgpp.spent import MemorySpentStore, SpentKey, SqliteSpentStore
from pgpp.tokens import (
    MESSAGE_LEN,
    BillingAuthority,
    PublicKeySet,
    RejectReason,
    SignedToken,
    SliceKeySet,
    Token,
    TokenKind,
    Wallet,
    blind,
    fdh,
    gen_period_keys,
    issue_wallet,
    sign_blinded,
    unblind,
    verify,
    verify_and_spend,
)


@pytest.fixture(scope="module")
def keys() -> SliceKeySet:
    return gen_period_keys("2026-10", 4)


@pytest.fixture(scope="module")
def wallet(keys) -> Wallet:
    return issue_wallet(BillingAuthority(keys), keys.public())


def test_key_set_shape(keys):
    assert keys.s == 4
    assert all(k.n.bit_length() == 2048 for k in keys.keys)
    assert len({k.n for k in keys.keys}) == 4
    one = gen_period_keys("p", 1)
    assert one.s == 1
    with pytest.raises(TokenError):
        gen_period_keys("p", 0)


def test_distinct_periods_share_no_moduli(keys):
    other = gen_period_keys("2026-11", 4)
    assert not {k.n for k in keys.keys} & {k.n for k in other.keys}


def test_repository_round_trip_many_slices():
    small = [gen_period_keys("x", 1).keys[0]] * 720  # reuse one key; this checks the format only
    ks = SliceKeySet("2026-10", tuple(small))
    text = ks.public().to_json()
    back = PublicKeySet.from_json(text)
    assert back == ks.public() and back.s == 720
    assert SliceKeySet.from_dict(ks.to_dict()).public() == ks.public()


def test_token_layout():
    t = Token(5, bytes(range(32)))
    m = t.message()
    assert len(m) == MESSAGE_LEN
    assert m[:32] == (5).to_bytes(32, "big") and m[32:] == bytes(range(32))
    assert Token.from_message(m) == t
    tagged = Token(5, bytes(32), TokenKind.METERED, priority=True)
    i = int.from_bytes(tagged.message()[:32], "big")
    assert i >> 255 == 1 and (i >> 248) & 0x7F == 1 and i & ((1 << 248) - 1) == 5
    assert Token.from_message(tagged.message()) == tagged
    with pytest.raises(TokenError):
        Token(1, b"short")
    with pytest.raises(TokenError):
        Token.from_message(b"x" * 63)


def test_fdh_covers_the_modulus(keys):
    n = keys.keys[0].n
    vals = [fdh(secrets.token_bytes(64), n) for _ in range(200)]
    assert all(0 <= v < n for v in vals)
    assert max(vals).bit_length() >= 2040
    assert fdh(b"a", n) == fdh(b"a", n) != fdh(b"b", n)


def test_blind_sign_unblind_verify(keys):
    pk, sk = keys.public()[2], keys.keys[2]
    tok = Token.fresh(2)
    b1, sec = blind(tok, pk)
    b2, _ = blind(tok, pk)
    assert b1 != b2
    signed = unblind(sign_blinded(b1, sk), sec)
    assert verify(signed, pk)
    # plain RSA-FDH signature: s^e = FDH(m)
    assert pow(signed.signature, pk.e, pk.n) == fdh(tok.message(), pk.n)
    assert not verify(signed, keys.public()[1])


def test_sign_rejects_values_outside_domain(keys):
    with pytest.raises(TokenError):
        sign_blinded(keys.keys[0].n, keys.keys[0])
    with pytest.raises(TokenError):
        sign_blinded(-1, keys.keys[0])


def test_batch_issue_verifies(wallet, keys):
    assert len(wallet.tokens) == keys.s
    assert all(verify(t, keys.public()[t.token.slice_index]) for t in wallet.tokens)


def test_verify_and_spend_paths(wallet, keys):
    store = MemorySpentStore()
    pub = keys.public()
    t1 = wallet.token_for(1)
    assert verify_and_spend(t1, pub, store, 1).accepted
    again = verify_and_spend(t1, pub, store, 1)
    assert not again.accepted and again.reason is RejectReason.DOUBLE_SPEND
    t2 = wallet.token_for(2)
    wrong = verify_and_spend(t2, pub, store, 1)
    assert wrong.reason is RejectReason.WRONG_SLICE
    assert verify_and_spend(t2, pub, store, 1, window=1).accepted
    forged = SignedToken(t2.token, t2.signature ^ 1, pub.period_id)
    assert verify_and_spend(forged, pub, store, 2).reason is RejectReason.BAD_SIGNATURE
    out_of_range = SignedToken(Token.fresh(99), 5, pub.period_id)
    assert verify_and_spend(out_of_range, pub, store, 99).reason is RejectReason.BAD_SIGNATURE


def test_random_forgeries_rejected(keys):
    pub = keys.public()
    store = MemorySpentStore()
    for _ in range(2000):
        m = secrets.token_bytes(64)
        m = (int.from_bytes(m[:32], "big") % pub.s).to_bytes(32, "big") + m[32:]
        fake = SignedToken(Token.from_message(m), secrets.randbelow(pub[0].n), pub.period_id)
        assert not verify_and_spend(fake, pub, store, fake.token.slice_index).accepted
    assert len(store) == 0


def test_store_unavailable_is_never_an_accept(wallet, keys):
    store = MemorySpentStore()
    store.available = False
    with pytest.raises(StoreUnavailableError):
        verify_and_spend(wallet.token_for(0), keys.public(), store, 0)


def test_store_holds_only_digests(wallet, keys):
    store = MemorySpentStore()
    t = wallet.token_for(3)
    verify_and_spend(t, keys.public(), store, 3)
    (key,) = list(store.keys())
    assert key == SpentKey("2026-10", 3, hashlib.sha256(t.token.message()).digest())


@pytest.mark.parametrize("T", [2, 8, 64])
@pytest.mark.parametrize("backend", ["memory", "sqlite"])
def test_concurrent_presenters_one_winner(T, backend, tmp_path, wallet, keys):
    store = MemorySpentStore() if backend == "memory" else SqliteSpentStore(tmp_path / "spent.db")
    pub = keys.public()
    t = wallet.token_for(0)
    barrier = threading.Barrier(T)
    results = []

    def present():
        barrier.wait()
        results.append(verify_and_spend(t, pub, store, 0).accepted)

    threads = [threading.Thread(target=present) for _ in range(T)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert sorted(results) == [False] * (T - 1) + [True]
    store.close()


def test_sqlite_store_is_durable(tmp_path):
    path = tmp_path / "spent.db"
    key = SpentKey("p", 3, b"\x01" * 32)
    s1 = SqliteSpentStore(path)
    assert s1.add(key) and not s1.add(key)
    s1.close()
    s2 = SqliteSpentStore(path)
    assert key in s2 and len(s2) == 1 and not s2.add(key)
    assert list(s2.keys()) == [key]
    s2.close()


def test_sqlite_failure_surfaces(tmp_path):
    s = SqliteSpentStore(tmp_path / "spent.db")
    s.close()
    (tmp_path / "spent.db").unlink()
    (tmp_path / "spent.db").mkdir()
    with pytest.raises(StoreUnavailableError):
        s.add(SpentKey("p", 0, b"\x00" * 32))


def test_wallet_formats(wallet, keys):
    back = Wallet.from_json(wallet.to_json())
    assert back == wallet
    for t in wallet.tokens:
        assert SignedToken.from_bytes(t.to_bytes()) == t
    with pytest.raises(TokenError):
        SignedToken.from_bytes(wallet.tokens[0].to_bytes()[:-1])


def test_storage_bound_for_an_hourly_month():
    ks = gen_period_keys("m", 1)
    sk = ks.keys[0]
    pub = ks.public()
    tokens = []
    for i in range(720):
        tok = Token.fresh(i)
        b, sec = blind(tok, pub[0])
        tokens.append(unblind(sign_blinded(b, sk), sec, "m"))
    assert Wallet("m", tokens).serialized_size() <= 2 * 1024 * 1024


class _ConstantRng:
    """Broken blinding source: always the same factor."""

    def randrange(self, lo, hi):
        return lo + 12345


def _blindness_win_rate(keys, n_trials, rng) -> float:
    """Signer holds d and sees one blinded value per round, drawn from t0 or
    t1 by a hidden coin beta; it guesses beta, then beta is revealed."""
    pk, sk = keys.public()[0], keys.keys[0]
    n = gmpy2.mpz(pk.n)
    t0, t1 = Token.fresh(0), Token.fresh(0)
    inv0 = gmpy2.invert(sk.raw_sign(fdh(t0.message(), pk.n)), n)
    inv1 = gmpy2.invert(sk.raw_sign(fdh(t1.message(), pk.n)), n)
    coin = secrets.SystemRandom()
    seen: set = set()
    wins = 0
    for _ in range(n_trials):
        beta = coin.randrange(2)
        b, _ = blind(t1 if beta else t0, pk, rng)
        u = gmpy2.mpz(sk.raw_sign(b))
        r0, r1 = u * inv0 % n, u * inv1 % n
        # a repeated blinding factor links rounds; otherwise a fixed rule
        if r0 in seen:
            guess = 0
        elif r1 in seen:
            guess = 1
        else:
            guess = 0 if r0 < r1 else 1
        wins += guess == beta
        seen.add(r1 if beta else r0)
    return wins / n_trials


def test_blindness_game(keys):
    n_trials = 10_000
    rate = _blindness_win_rate(keys, n_trials, secrets.SystemRandom())
    # 99% binomial interval around 0.5
    assert abs(rate - 0.5) <= 2.576 * (0.25 / n_trials) ** 0.5


def test_blindness_game_detects_a_fixed_blinding_factor(keys):
    assert _blindness_win_rate(keys, 200, _ConstantRng()) >= 0.99
