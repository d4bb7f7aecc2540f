"""
Command-line entry point ``pgpp``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, PgppError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


# -- topology -------------------------------------------------------------------


def cmd_topology(args) -> int:
    from .topology import Topology, load_topology, synth_topology, write_sites_csv

    if args.input:
        sites, _ = load_topology(args.input)
        topo = Topology.build(sites)
    else:
        topo = synth_topology(n_sites=args.n_sites, n_clusters=args.n_clusters, seed=args.seed,
                              n_tas=args.n_tas or None)
    if args.k:
        topo = topo.with_kmeans_tas(args.k, args.seed)
    _write_text(args.out, topo.to_json())
    if args.sites_csv:
        with open(args.sites_csv, "w", newline="") as fh:
            write_sites_csv(topo.sites, fh)
    nbrs = [len(c.neighbors) for c in topo.cells]
    print(json.dumps({
        "sites": len(topo.sites), "tracking_areas": len(topo.ta_map),
        "mean_neighbors": sum(nbrs) / len(nbrs), "ta_map_id": topo.ta_map.digest(),
    }), file=sys.stderr)
    return EXIT_OK


# -- simulate / metrics ------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .mobility import attach_all, hold_until, read_traces_csv, synth_traces
    from .paging import TrafficConfig, run_sim
    from .topology import Topology, synth_topology

    if args.topology:
        topo = Topology.from_json(Path(args.topology).read_text())
    else:
        topo = synth_topology(n_sites=args.n_sites, seed=args.seed, n_tas=args.n_tas or None)
    if args.k:
        topo = topo.with_kmeans_tas(args.k, args.seed)
    if args.traces:
        with open(args.traces, newline="") as fh:
            traces = [hold_until(t, args.duration) for t in read_traces_csv(fh)]
    else:
        traces = synth_traces(topo.region, args.cars, args.pedestrians, args.duration, args.seed)
    timelines = attach_all(traces, topo.locator, topo.ta_map)
    report = run_sim(timelines, topo.ta_map, args.mode, args.tal_length,
                     TrafficConfig(args.call_fraction, args.call_duration), args.seed, args.tal_policy)
    _write_text(args.out, report.to_json())
    if args.per_enb_csv:
        with open(args.per_enb_csv, "w", newline="") as fh:
            report.write_per_enb_csv(fh)
    print(f"total pages {report.total_pages} over {len(report.page_records)} page events", file=sys.stderr)
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .experiment import point_metrics
    from .paging import SimReport
    from .topology import Topology

    report = SimReport.from_json(Path(args.report).read_text())
    topo = Topology.from_json(Path(args.topology).read_text())
    m = point_metrics(report, topo, args.pages_per_sec)
    _write_text(args.out, json.dumps(m, indent=1, sort_keys=True))
    return EXIT_OK


# -- tokens / billing --------------------------------------------------------------


def cmd_tokens(args) -> int:
    from .tokens import PublicKeySet, Wallet, gen_period_keys, verify

    if args.tokens_cmd == "keygen":
        ks = gen_period_keys(args.period, args.slices, args.bits)
        _write_text(args.private, json.dumps(ks.to_dict()))
        _write_text(args.public, ks.public().to_json())
        return EXIT_OK
    if args.tokens_cmd == "verify":
        keys = PublicKeySet.from_json(Path(args.keys).read_text())
        wallet = Wallet.from_json(Path(args.wallet).read_text())
        bad = [t.token.slice_index for t in wallet.tokens if not verify(t, keys[t.token.slice_index])]
        print(json.dumps({"tokens": len(wallet.tokens), "invalid_slices": bad,
                          "bytes": wallet.serialized_size()}))
        return EXIT_OK if not bad else EXIT_FAIL
    raise ConfigError("unknown tokens subcommand")


def cmd_billing(args) -> int:
    from .tokens import BillingAuthority, SliceKeySet, issue_wallet

    ks = SliceKeySet.from_dict(_read_json(args.keys))
    if ks.period_id != args.period:
        raise ConfigError(f"key file is for period {ks.period_id!r}, not {args.period!r}")
    slices = None
    if args.slices:
        lo, _, hi = args.slices.partition("-")
        slices = range(int(lo), int(hi or lo) + 1)
    wallet = issue_wallet(BillingAuthority(ks), ks.public(), slices)
    _write_text(args.out, wallet.to_json())
    print(f"issued {len(wallet.tokens)} tokens for period {ks.period_id} "
          f"({wallet.serialized_size()} bytes)", file=sys.stderr)
    return EXIT_OK


# -- gateway / client -----------------------------------------------------------------


def _load_table(path: str | None) -> dict:
    if not path:
        return {}
    from .experiment import tomllib

    try:
        return tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _make_store(spec: str):
    from .spent import MemorySpentStore, SqliteSpentStore

    if spec == "memory":
        return MemorySpentStore()
    if spec.startswith("sqlite:"):
        return SqliteSpentStore(spec[len("sqlite:"):])
    raise ConfigError(f"unknown store backend {spec!r} (use memory or sqlite:<path>)")


def cmd_gateway(args) -> int:
    from .gateway import DecisionLog, Gateway, GatewayServer, SliceClock, server_ssl_context
    from .tokens import PublicKeySet

    conf = _load_table(args.config)

    def opt(name, default=None):
        v = getattr(args, name, None)
        return v if v is not None else conf.get(name, default)

    keys_path = opt("keys")
    if not keys_path:
        raise ConfigError("gateway needs a public key repository (--keys or keys = ...)")
    keys = PublicKeySet.from_dict(_read_json(keys_path))
    clock = SliceClock(float(opt("period_start", 0.0)), float(opt("slice_seconds", 3600.0)))
    cert, key = opt("cert"), opt("key")
    ctx = server_ssl_context(cert, key) if cert and key else None
    gw = Gateway(keys, _make_store(opt("store", "memory")), clock, int(opt("window", 0)),
                 DecisionLog(opt("log")), name=opt("name", "gw"))
    server = GatewayServer(gw, opt("host", "127.0.0.1"), int(opt("port", 8443)), ctx)

    async def main():
        host, port = await server.start()
        print(f"gateway listening on {host}:{port} ({'TLS' if ctx else 'plaintext'})", file=sys.stderr)
        try:
            if args.duration:
                await asyncio.sleep(args.duration)
            else:
                await server.serve_forever()
        finally:
            await server.close()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_client(args) -> int:
    from .gateway import Agent, GatewayClient, SliceClock, client_ssl_context
    from .tokens import Wallet

    wallet = Wallet.from_json(Path(args.wallet).read_text())
    clock = SliceClock(args.period_start, args.slice_seconds)
    ctx = client_ssl_context(args.cafile) if args.cafile else None
    agent = Agent(wallet, clock, lambda: GatewayClient(args.host, args.port, ctx))

    async def main():
        if not args.watch:
            return await agent.step()
        connected, stop = asyncio.Event(), asyncio.Event()
        connected.set()
        task = asyncio.create_task(agent.run(connected, stop))
        await asyncio.sleep(args.watch)
        stop.set()
        await task
        return agent.state.last

    res = asyncio.run(main())
    if res is None:
        print("no token in wallet for the current slice", file=sys.stderr)
        return EXIT_FAIL
    out = {"ok": res.ok, "until": res.until, "reason": res.reason.value if res.reason else None,
           "retryable": res.retryable}
    print(json.dumps(out))
    return EXIT_OK if res.ok else EXIT_FAIL


# -- aka ------------------------------------------------------------------------------


def cmd_aka(args) -> int:
    from .aka import gamma_latency, run_mass_attach, write_delay_histogram_csv, write_outcomes_jsonl

    res = run_mass_attach(args.ues, args.shared_imsi, gamma_latency(args.latency_ms, args.latency_cv),
                          args.seed, sequential=args.sequential)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "outcomes.jsonl", "w") as fh:
        write_outcomes_jsonl(res.outcomes, fh)
    with open(out / "delay_hist.csv", "w", newline="") as fh:
        write_delay_histogram_csv(res.outcomes, fh, args.bin_ms)
    done = [o.completion_ms for o in res.outcomes]
    print(json.dumps({
        "ues": args.ues, "shared_imsi": args.shared_imsi,
        "sync_failures": sum(o.sync_failures for o in res.outcomes),
        "attached": sum(o.result == "attached" for o in res.outcomes),
        "last_completion_ms": max(done), "hss_sqn": res.hss_sqn,
    }))
    return EXIT_OK


# -- logs / experiments -----------------------------------------------------------------


def cmd_analyze_log(args) -> int:
    from .paging import analyze_paging_log

    rows = []
    with open(args.log, newline="") as fh:
        reader = csv.reader(fh)
        for n, row in enumerate(reader, start=1):
            if n == 1 and row and row[0].strip().lower() in ("timestamp", "ts", "time"):
                continue
            try:
                rows.append((float(row[0]), row[1].strip()))
            except (IndexError, ValueError):
                raise ConfigError(f"{args.log} line {n}: expected timestamp,identifier") from None
    s = analyze_paging_log(rows, args.collapse)
    top = sorted(s.counts.items(), key=lambda kv: (-kv[1], kv[0]))[: args.top]
    print(json.dumps({
        "identifiers": len(s.counts), "pages": sum(s.counts.values()),
        "repeat_fraction": s.repeat_fraction(), "intervals": len(s.intervals),
        "median_interval_s": sorted(s.intervals)[len(s.intervals) // 2] if s.intervals else None,
        "top": top,
    }, indent=1))
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import ExperimentConfig, emit_figures_data, failed_points, run_experiment

    cfg = ExperimentConfig.load(args.config)
    manifest = run_experiment(cfg, args.out)
    if args.figures:
        emit_figures_data(manifest)
    bad = failed_points(manifest)
    print(f"{len(manifest['points']) - len(bad)}/{len(manifest['points'])} sweep points ok; "
          f"manifest at {Path(manifest['metadata']['output_dir']) / 'manifest.json'}", file=sys.stderr)
    return EXIT_PARTIAL if bad else EXIT_OK


def cmd_figures(args) -> int:
    from .experiment import emit_figures_data

    paths, warnings = emit_figures_data(args.manifest, args.out)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps(paths, indent=1))
    return EXIT_OK


# -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgpp", description=__doc__.splitlines()[1])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("topology", help="load or synthesize a topology and write it as JSON")
    t.add_argument("--input", help="CSV of enb_id,lat,lon,ta_id (default: synthesize)")
    t.add_argument("--n-sites", type=int, default=500)
    t.add_argument("--n-clusters", type=int, default=8)
    t.add_argument("--n-tas", type=int, default=0)
    t.add_argument("--k", type=int, default=0, help="re-cluster into k custom tracking areas")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="-")
    t.add_argument("--sites-csv")
    t.set_defaults(func=cmd_topology)

    s = sub.add_parser("simulate", help="run one paging simulation")
    s.add_argument("--topology", help="topology JSON (default: synthesize)")
    s.add_argument("--n-sites", type=int, default=500)
    s.add_argument("--n-tas", type=int, default=0)
    s.add_argument("--k", type=int, default=0)
    s.add_argument("--traces")
    s.add_argument("--cars", type=int, default=500)
    s.add_argument("--pedestrians", type=int, default=500)
    s.add_argument("--duration", type=int, default=720, help="ticks of 5 s")
    s.add_argument("--mode", choices=["conventional", "tal"], default="conventional")
    s.add_argument("--tal-length", type=int, default=1)
    s.add_argument("--tal-policy", choices=["grow", "anchor"], default="grow")
    s.add_argument("--call-fraction", type=float, default=0.05)
    s.add_argument("--call-duration", type=int, default=36)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="-")
    s.add_argument("--per-enb-csv")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("metrics", help="anonymity and capacity metrics of a simulation report")
    m.add_argument("report")
    m.add_argument("--topology", required=True)
    m.add_argument("--pages-per-sec", type=float, default=525)
    m.add_argument("--out", default="-")
    m.set_defaults(func=cmd_metrics)

    k = sub.add_parser("tokens", help="period keys and wallet checks")
    ksub = k.add_subparsers(dest="tokens_cmd", required=True)
    kg = ksub.add_parser("keygen")
    kg.add_argument("--period", required=True)
    kg.add_argument("--slices", type=int, required=True)
    kg.add_argument("--bits", type=int, default=2048)
    kg.add_argument("--private", required=True)
    kg.add_argument("--public", required=True)
    kv = ksub.add_parser("verify")
    kv.add_argument("--wallet", required=True)
    kv.add_argument("--keys", required=True)
    k.set_defaults(func=cmd_tokens)

    b = sub.add_parser("billing", help="billing authority")
    bsub = b.add_subparsers(dest="billing_cmd", required=True)
    bi = bsub.add_parser("issue", help="issue a wallet of blind-signed tokens")
    bi.add_argument("--period", required=True)
    bi.add_argument("--keys", required=True, help="private key set JSON")
    bi.add_argument("--slices", help="range like 0-23 (default: all)")
    bi.add_argument("--out", default="-")
    b.set_defaults(func=cmd_billing)

    g = sub.add_parser("gateway", help="token gateway")
    gsub = g.add_subparsers(dest="gateway_cmd", required=True)
    gs = gsub.add_parser("serve")
    gs.add_argument("--config", help="TOML with keys, host, port, store, cert, key, log, ...")
    gs.add_argument("--keys")
    gs.add_argument("--host")
    gs.add_argument("--port", type=int)
    gs.add_argument("--store", help="memory or sqlite:<path>")
    gs.add_argument("--period-start", dest="period_start", type=float)
    gs.add_argument("--slice-seconds", dest="slice_seconds", type=float)
    gs.add_argument("--window", type=int)
    gs.add_argument("--cert")
    gs.add_argument("--key")
    gs.add_argument("--log")
    gs.add_argument("--name")
    gs.add_argument("--duration", type=float, default=0.0, help="stop after this many seconds")
    g.set_defaults(func=cmd_gateway)

    c = sub.add_parser("client", help="device agent")
    csub = c.add_subparsers(dest="client_cmd", required=True)
    ca = csub.add_parser("authenticate")
    ca.add_argument("--wallet", required=True)
    ca.add_argument("--host", default="127.0.0.1")
    ca.add_argument("--port", type=int, default=8443)
    ca.add_argument("--cafile")
    ca.add_argument("--period-start", type=float, default=0.0)
    ca.add_argument("--slice-seconds", type=float, default=3600.0)
    ca.add_argument("--watch", type=float, default=0.0, help="keep re-authenticating for N seconds")
    c.set_defaults(func=cmd_client)

    a = sub.add_parser("aka", help="shared-IMSI attach model")
    asub = a.add_subparsers(dest="aka_cmd", required=True)
    am = asub.add_parser("simulate")
    am.add_argument("--ues", type=int, required=True)
    am.add_argument("--shared-imsi", action=argparse.BooleanOptionalAction, default=False)
    am.add_argument("--sequential", action="store_true")
    am.add_argument("--seed", type=int, default=0)
    am.add_argument("--latency-ms", type=float, default=200.0)
    am.add_argument("--latency-cv", type=float, default=0.25)
    am.add_argument("--bin-ms", type=float, default=50.0)
    am.add_argument("--out-dir", default="aka_out")
    a.set_defaults(func=cmd_aka)

    al = sub.add_parser("analyze-log", help="per-identifier page counts from a timestamp,identifier CSV")
    al.add_argument("log")
    al.add_argument("--collapse", type=float, default=1.0)
    al.add_argument("--top", type=int, default=10)
    al.set_defaults(func=cmd_analyze_log)

    r = sub.add_parser("run", help="run an experiment sweep from a TOML config")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--figures", action="store_true")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("figures", help="emit plot-ready CSVs from a manifest")
    f.add_argument("manifest", help="manifest.json or its directory")
    f.add_argument("--out")
    f.set_defaults(func=cmd_figures)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PgppError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
