from __future__ import annotations

import json
import socket
import threading
import time

import pytest

from pgpp import experiment
from pgpp.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_PARTIAL, main
from pgpp.errors import SimulationError

SMALL_TOML = """\
seed = 3

[topology]
n_sites = 50
n_clusters = 3
n_tas = 5
extent_m = 12000.0

[mobility]
n_cars = 15
n_pedestrians = 15
duration_ticks = 40

[sweep]
tal_lengths = [1, 4]
"""


@pytest.fixture(scope="module")
def key_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("keys")
    priv, pub = d / "private.json", d / "public.json"
    assert main(["tokens", "keygen", "--period", "2026-10", "--slices", "3",
                 "--private", str(priv), "--public", str(pub)]) == EXIT_OK
    return priv, pub


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_topology_simulate_metrics(tmp_path, capsys):
    topo, rep = tmp_path / "topo.json", tmp_path / "rep.json"
    assert main(["topology", "--n-sites", "40", "--n-tas", "4", "--seed", "1", "--out", str(topo),
                 "--sites-csv", str(tmp_path / "sites.csv")]) == EXIT_OK
    assert len(json.loads(topo.read_text())["sites"]) == 40
    assert main(["topology", "--input", str(tmp_path / "sites.csv"), "--k", "3",
                 "--out", str(tmp_path / "k.json")]) == EXIT_OK
    assert main(["simulate", "--topology", str(topo), "--cars", "10", "--pedestrians", "10",
                 "--duration", "30", "--mode", "tal", "--tal-length", "2", "--out", str(rep),
                 "--per-enb-csv", str(tmp_path / "per_enb.csv")]) == EXIT_OK
    capsys.readouterr()
    assert main(["metrics", str(rep), "--topology", str(topo)]) == EXIT_OK
    m = _json_out(capsys)
    assert m["mode"] == "tal" and m["tal_length"] == 2 and m["n_enbs"] == 40


def test_billing_and_token_verify(tmp_path, key_files, capsys):
    priv, pub = key_files
    wallet = tmp_path / "wallet.json"
    assert main(["billing", "issue", "--period", "2026-10", "--keys", str(priv),
                 "--slices", "0-1", "--out", str(wallet)]) == EXIT_OK
    capsys.readouterr()
    assert main(["tokens", "verify", "--wallet", str(wallet), "--keys", str(pub)]) == EXIT_OK
    assert _json_out(capsys) == {"tokens": 2, "invalid_slices": [],
                                 "bytes": len(wallet.read_text().encode())}
    w = json.loads(wallet.read_text())
    w["tokens"][1]["signature"] = "0" + w["tokens"][0]["signature"][1:]
    wallet.write_text(json.dumps(w))
    assert main(["tokens", "verify", "--wallet", str(wallet), "--keys", str(pub)]) == EXIT_FAIL


def test_billing_period_mismatch_is_config_error(tmp_path, key_files):
    priv, _ = key_files
    assert main(["billing", "issue", "--period", "2027-01", "--keys", str(priv)]) == EXIT_CONFIG
    assert main(["billing", "issue", "--period", "x", "--keys", str(tmp_path / "none")]) == EXIT_CONFIG


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_listening(port: int, timeout: float = 10.0) -> None:
    end = time.time() + timeout
    while time.time() < end:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=0.2).close()
            return
        except OSError:
            time.sleep(0.05)
    raise AssertionError("gateway did not come up")


def test_gateway_serve_and_client_authenticate(tmp_path, key_files, capsys):
    priv, pub = key_files
    wallet = tmp_path / "wallet.json"
    main(["billing", "issue", "--period", "2026-10", "--keys", str(priv), "--out", str(wallet)])
    port = _free_port()
    start = time.time()
    conf = tmp_path / "gw.toml"
    conf.write_text(
        f'keys = "{pub}"\nport = {port}\nstore = "sqlite:{tmp_path / "spent.db"}"\n'
        f'period_start = {start}\nslice_seconds = 3600.0\nlog = "{tmp_path / "decisions.jsonl"}"\n'
    )
    codes = []
    th = threading.Thread(target=lambda: codes.append(main(["gateway", "serve", "--config", str(conf),
                                                                 "--duration", "4"])))
    th.start()
    try:
        _wait_listening(port)
        capsys.readouterr()
        assert main(["client", "authenticate", "--wallet", str(wallet), "--port", str(port),
                     "--period-start", str(start)]) == EXIT_OK
        out = _json_out(capsys)
        assert out["ok"] and out["until"] == pytest.approx(start + 3600.0)
    finally:
        th.join()
    assert codes == [EXIT_OK]
    events = [json.loads(line)["event"] for line in (tmp_path / "decisions.jsonl").read_text().splitlines()]
    assert events == ["auth", "stage"]


def test_gateway_config_errors(tmp_path, key_files):
    _, pub = key_files
    assert main(["gateway", "serve", "--duration", "0.1"]) == EXIT_CONFIG
    assert main(["gateway", "serve", "--keys", str(tmp_path / "none.json")]) == EXIT_CONFIG
    assert main(["gateway", "serve", "--keys", str(pub), "--store", "redis://x"]) == EXIT_CONFIG


def test_client_without_gateway_fails(tmp_path, key_files):
    priv, _ = key_files
    wallet = tmp_path / "wallet.json"
    main(["billing", "issue", "--period", "2026-10", "--keys", str(priv), "--out", str(wallet)])
    assert main(["client", "authenticate", "--wallet", str(wallet), "--port", str(_free_port()),
                 "--period-start", str(time.time())]) == EXIT_FAIL


@pytest.mark.parametrize("shared,expect_failures", [("--shared-imsi", True), ("--no-shared-imsi", False)])
def test_aka_simulate(tmp_path, capsys, shared, expect_failures):
    out = tmp_path / "aka"
    assert main(["aka", "simulate", "--ues", "30", shared, "--seed", "2", "--out-dir", str(out)]) == EXIT_OK
    s = _json_out(capsys)
    assert s["attached"] == 30 and (s["sync_failures"] > 0) == expect_failures
    assert sum(s["hss_sqn"].values()) == 30
    assert len((out / "outcomes.jsonl").read_text().splitlines()) == 30
    assert (out / "delay_hist.csv").read_text().startswith("bin_start_ms,bin_end_ms,count,density")


def test_aka_sequential_law(tmp_path, capsys):
    assert main(["aka", "simulate", "--ues", "20", "--shared-imsi", "--sequential",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    assert _json_out(capsys)["sync_failures"] == 19


def test_analyze_log(tmp_path, capsys):
    log = tmp_path / "pages.csv"
    log.write_text("timestamp,identifier\n0,a\n0.5,a\n10,a\n12,b\n")
    assert main(["analyze-log", str(log), "--collapse", "1.0"]) == EXIT_OK
    s = _json_out(capsys)
    assert s["identifiers"] == 2 and s["pages"] == 3
    log.write_text("0,a\nnot-a-number,b\n")
    assert main(["analyze-log", str(log)]) == EXIT_CONFIG


def test_run_and_figures(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(SMALL_TOML)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out"), "--figures"]) == EXIT_OK
    assert (tmp_path / "out" / "figures" / "anonymity.csv").is_file()
    capsys.readouterr()
    assert main(["figures", str(tmp_path / "out"), "--out", str(tmp_path / "fig")]) == EXIT_OK
    assert set(_json_out(capsys)) == set(experiment.FIGURE_COLUMNS)


def test_run_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[sweep]\ntal_lengths = [32]\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    bad.write_text("this is not toml = = \n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_run_partial_failure_exit_code(tmp_path, monkeypatch):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(SMALL_TOML)
    real = experiment.run_point

    def flaky(c, point):
        if point["mode"] == "conventional":
            raise SimulationError("injected")
        return real(c, point)

    monkeypatch.setattr(experiment, "run_point", flaky)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_PARTIAL


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--mode", "bogus"])
    assert exc.value.code == 2
