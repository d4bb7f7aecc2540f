"""
A billing period of anonymous tokens, from issuance to forwarding.

The authority signs blinded tokens without seeing them, and the gateway
only ever learns "some paid client holds a valid unspent token for this
slice". Run from the repo root: python demos/tokens_gateway.py
"""
from pgpp.gateway import Gateway, SliceClock
from pgpp.spent import MemorySpentStore
from pgpp.tokens import BillingAuthority, gen_period_keys, issue_wallet

keys = gen_period_keys("2026-10", s=4)  # 4 slices, RSA-2048 per slice
pub = keys.public()
authority = BillingAuthority(keys)
wallet = issue_wallet(authority, pub)  # blind, sign, unblind, verify
print("wallet:", len(wallet.tokens), "tokens,", wallet.serialized_size(), "bytes")

clock = SliceClock(0.0, 100.0)  # period starts at t=0, 100 s slices
store = MemorySpentStore()
gw = Gateway(pub, store, clock)

r = gw.authenticate("10.0.0.7", wallet.token_for(0), now=5.0)
print("auth slice 0:", r)
print("stage slice 1:", gw.stage("10.0.0.7", wallet.token_for(1), now=90.0))
print("forward at t=50 :", gw.forwarding_decision("10.0.0.7", now=50.0))
print("forward at t=150:", gw.forwarding_decision("10.0.0.7", now=150.0), "(staged token spent)")
print("forward at t=250:", gw.forwarding_decision("10.0.0.7", now=250.0), "(no token for slice 2)")

# a copied token is worth nothing at a second gateway sharing the store
other = Gateway(pub, store, clock, name="gw-b")
print("replay elsewhere:", other.authenticate("10.9.9.9", wallet.token_for(0), now=6.0))
print("spent tokens:", len(store))
