from pathlib import Path

import pytest

from tsnsim import cli
from tsnsim.engine import InvariantViolation
from tsnsim.scenario import (
    Scenario,
    ScenarioError,
    format_scenario,
    load_scenario,
    paper_scenario,
    parse_scenario,
)

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "scenarios" / "paper_case_d.scenario"
SYNC = ROOT / "scenarios" / "sync_drift.scenario"

MINIMAL = """\
name = minimal
[flow.st]
vlan_id = 100
class = ST
"""


def short_file(tmp_path, duration_ns=200_000_000):
    text = GOLDEN.read_text().replace("duration_ns = 10000000000", f"duration_ns = {duration_ns}")
    p = tmp_path / "short.scenario"
    p.write_text(text)
    return p


def test_minimal_file_fills_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.name == "minimal"
    assert list(sc.flows) == ["st"]
    f = sc.flows["st"]
    assert (f.rate_bps, f.packet_len_bytes, f.traffic_class) == (10_000_000, 1000, "ST")
    assert sc.scheduler.kind == "utas" and sc.scheduler.cycle_ns == 5_000_000
    assert sc.topology.queue_capacity == 64
    assert sc.validate() == []


def test_st_fraction_above_cap_rejected():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(MINIMAL + "[scheduler]\nst_fraction = 0.8\n")
    assert any("70%" in e for e in exc.value.errors)


def test_golden_case_d():
    sc = load_scenario(GOLDEN)
    assert sc.scheduler.kind == "utas"
    assert sc.scheduler.cycle_ns == 5_000_000 and sc.scheduler.st_fraction == 0.7
    assert sc.topology.queue_capacity == 64 and sc.topology.egress_cap_bps == 15_000_000
    assert sorted(sc.flows) == ["be", "st"]
    for f in sc.flows.values():
        assert (f.rate_bps, f.packet_len_bytes) == (10_000_000, 1000)
    assert sc.build_gcl().spans(0) == [(0, 3_500_000)]


def test_golden_file_is_formatter_output():
    sc = paper_scenario("utas", 1, 10_000_000_000)
    body = GOLDEN.read_text().split("\n", 1)[1]  # drop the comment line
    assert body == format_scenario(sc)


def test_format_parse_roundtrip_keeps_every_parameter():
    sc = paper_scenario("taprio", 9, 123_456_789)
    sc.clocks["sw2"].slope_ppm = 5.6
    sc.sync.enabled = True
    again = parse_scenario(format_scenario(sc))
    assert again == sc


def test_external_gcl_file_loaded():
    sc = load_scenario(SYNC)
    assert sc.gcl_text is not None
    assert sc.build_gcl().spans(1) == [(3_500_000, 5_000_000)]


@pytest.mark.parametrize("text,needle", [
    ("bogus = 1\n", "line 1: unknown key 'bogus'"),
    ("[flow.st]\nvlan_id = 1\nclass = ST\n[flow.st]\n", "line 4: duplicate section"),
    ("[nowhere]\n", "line 1: unknown section"),
    ("seed = one\n", "line 1: seed"),
    ("seed = 1\nseed = 2\n", "line 2: duplicate key"),
    ("just text\n", "line 1: expected 'key = value'"),
    ("[scheduler]\nkind = fifo\n", "kind"),
    ("duration_ns = 0\n", "duration_ns must be positive"),
])
def test_parse_errors_are_located(text, needle):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text)
    assert any(needle in e for e in exc.value.errors), exc.value.errors


def test_all_errors_reported_together():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario("bogus = 1\n[nowhere]\nseed = x\n")
    assert len(exc.value.errors) >= 2


def test_gated_policy_needs_gcl_fraction_positive():
    sc = Scenario(scheduler=paper_scenario().scheduler)
    sc.scheduler.st_fraction = 0.0
    assert sc.validate()


# -- command line -------------------------------------------------------


def test_validate_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", "--scenario", str(GOLDEN)]) == 0
    bad = tmp_path / "bad.scenario"
    bad.write_text(MINIMAL + "[scheduler]\nst_fraction = 0.8\n")
    assert cli.main(["validate", "--scenario", str(bad)]) == 1
    assert "70%" in capsys.readouterr().err
    assert cli.main(["validate", "--scenario", str(tmp_path / "missing")]) == 1


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    def boom(scenario):
        raise InvariantViolation("forced", now=1)

    monkeypatch.setattr(cli, "run_case", boom)
    rc = cli.main(["run", "--scenario", str(short_file(tmp_path)), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    rc = cli.main(["run", "--scenario", str(short_file(tmp_path)), "--scheduler", "sp",
                   "--seed", "4", "--out", str(out)])
    assert rc == 0
    for name in ("latency.csv", "cdf.csv", "occupancy.csv", "summary.csv", "metadata.txt"):
        assert (out / name).read_text().endswith("\n")
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == cli.SUMMARY_HEADER
    assert [r.split(",")[:2] for r in summary[1:]] == [["sp", "ST"], ["sp", "BE"]]
    meta = parse_scenario((out / "metadata.txt").read_text())
    assert meta.seed == 4 and meta.scheduler.kind == "sp"


def test_suite_order_and_determinism(tmp_path):
    path = short_file(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["suite", "--scenario", str(path), "--out", str(a)]) == 0
    assert cli.main(["suite", "--scenario", str(path), "--out", str(b), "--jobs", "2"]) == 0
    rows = (a / "summary.csv").read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["rr", "rr", "sp", "sp", "taprio", "taprio", "utas", "utas"]
    for f in sorted(a.rglob("*.csv")) + sorted(a.rglob("*.txt")):
        assert f.read_bytes() == (b / f.relative_to(a)).read_bytes(), f


def test_suite_survives_one_failing_case(tmp_path, monkeypatch):
    real = cli.run_case

    def flaky(scenario):
        if scenario.scheduler.kind == "sp":
            raise RuntimeError("sp exploded")
        return real(scenario)

    monkeypatch.setattr(cli, "run_case", flaky)
    base = load_scenario(short_file(tmp_path))
    results = cli.run_suite(base, ["utas", "sp", "rr"], tmp_path / "s")
    assert list(results) == ["rr", "sp", "utas"]
    assert results["sp"].error == "RuntimeError: sp exploded"
    assert results["utas"].bundle is not None and results["rr"].bundle is not None
    kinds = [r.split(",")[0] for r in (tmp_path / "s" / "summary.csv").read_text().splitlines()[1:]]
    assert "sp" not in kinds and "utas" in kinds


def test_sync_command(tmp_path, capsys):
    out = tmp_path / "sync"
    assert cli.main(["sync", "--scenario", str(SYNC), "--out", str(out)]) == 0
    assert "slope=" in capsys.readouterr().out
    lines = (out / "sync.csv").read_text().splitlines()
    assert lines[0] == "probe_time_ns,rtt_ns,offset_ns"
    assert len(lines) == 1 + 500 + 1 and lines[-1].startswith("# slope=")
    verify = (out / "sync_verify.csv").read_text().splitlines()
    assert verify[0].endswith("true_offset_ns") and len(verify) == 51


def test_shaper_burst_must_hold_a_frame():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(MINIMAL + "[topology]\nshaper_burst_bytes = 500\n")
    assert any("shaper_burst_bytes" in e for e in exc.value.errors)
