from __future__ import annotations

import io
import json

import pytest

from gwvir.cli import RunReport, parse_key, run
from gwvir.engine import make_key
from gwvir.errors import ParseError
from gwvir.target import preset, serialize_target


def go(*argv, env=None, monkeypatch=None, tmp_path=None):
    buf = io.StringIO()
    code, report = run(list(argv), out=buf)
    return code, report, buf.getvalue()


def test_targets_list():
    code, report, text = go("targets", "list")
    assert code == 0 and "P2" in text and report.outcome == "pass"


def test_targets_show_round_trip():
    code, report, _ = go("targets", "show", "--target", "P1", "--format", "structured")
    assert code == 0
    doc = json.loads(serialize_target(preset("P1")))
    assert report.details[0] == doc


def test_nd_table():
    code, report, text = go("nd", "--target", "P2", "--max", "4")
    assert code == 0
    assert [d["N_d"] for d in report.details] == ["1", "1", "12", "620"]
    code, _, _ = go("nd", "--target", "P1", "--max", "2")
    assert code == 2


def test_invariant_key_syntax():
    key = parse_key("deg=3;ins=(0,3)(0,3)(1,1)", 1)
    assert key == make_key([(0, 3), (0, 3), (1, 1)], (3,))
    key = parse_key("deg=;ins=(0,1)(0,1)(0,1)", 0)
    assert key == make_key([(0, 1)] * 3, ())
    with pytest.raises(ParseError):
        parse_key("ins=(0,1);deg=", 0)
    with pytest.raises(ParseError):
        parse_key("deg=1;ins=(0,1)", 0)


def test_invariant_command():
    code, report, _ = go("invariant", "--target", "point",
                         "--key", "deg=;ins=(2,1)(0,1)(0,1)(0,1)(0,1)")
    assert code == 0 and report.details[0]["value"] == "1"


def test_psi_pass_and_exit_codes():
    code, report, text = go("psi", "--target", "point", "--n", "1",
                            "--insertions", "4", "--level", "3")
    assert code == 0 and report.outcome == "pass"
    assert "all coefficients zero" in text


def test_psi_usage_error_bad_target(tmp_path):
    bad = tmp_path / "bad.json"
    doc = json.loads(serialize_target(preset("P2")))
    doc["eta"][0][1] = "1"
    bad.write_text(json.dumps(doc))
    code, report, text = go("psi", "--target", str(bad), "--n", "1")
    assert code == 2 and "eta not symmetric" in text


def test_psi_tilde_command():
    code, report, _ = go("psi-tilde", "--target", "P1", "--n", "1",
                         "--insertions", "3", "--level", "2", "--degree", "2")
    assert code == 0 and report.outcome == "pass"


def test_commutator_command():
    code, report, _ = go("commutator", "--target", "P2", "--m", "1", "--n", "2",
                         "--insertions", "2", "--level", "5", "--degree", "0")
    assert code == 0
    code, _, _ = go("commutator", "--target", "P2", "--m", "0", "--n", "2")
    assert code == 2


def test_commutator_bracket_probe():
    code, report, _ = go("commutator", "--target", "P1", "--m", "-1", "--n", "1",
                         "--level", "4", "--degree", "0")
    assert code == 0
    assert report.details[0]["scale_vs_L0"] == "-2"


def test_central_condition_command():
    for name, value in (("point", "1/16"), ("P1", "0"), ("P2", "-5/16")):
        code, report, _ = go("central-condition", "--target", name)
        assert code == 0 and report.details[0]["lhs"] == value


def test_identities_command_and_usage():
    code, report, _ = go("identities", "--target", "point", "--tags", "TRR,StringRec",
                         "--insertions", "3", "--level", "2", "--degree", "0")
    assert code == 0 and all(d["failures"] == 0 for d in report.details)
    code, _, _ = go("identities", "--target", "point")
    assert code == 2
    code, _, _ = go("identities", "--target", "point", "--tags", "Nope")
    assert code == 2


def test_identities_jobs_deterministic():
    args = ("identities", "--target", "point", "--tags",
            "TRR,GenWDVV,StringCorr3", "--insertions", "3", "--level", "2",
            "--degree", "0", "--format", "structured")
    _, r1, _ = go(*args)
    _, r2, _ = go(*args, "--jobs", "3")
    d1, d2 = r1.to_dict(), r2.to_dict()
    d1.pop("wall_time_ms"), d2.pop("wall_time_ms")
    assert d1 == d2


def test_report_round_trip_and_determinism():
    args = ("psi", "--target", "P1", "--n", "1", "--insertions", "3",
            "--level", "2", "--degree", "1", "--format", "structured")
    code1, r1, text1 = go(*args)
    code2, r2, text2 = go(*args)
    assert code1 == code2 == 0
    again = RunReport.from_json(text1)
    assert again.to_dict() == r1.to_dict()
    d1, d2 = r1.to_dict(), r2.to_dict()
    d1.pop("wall_time_ms"), d2.pop("wall_time_ms")
    assert d1 == d2
    assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)


def test_cache_workflow(tmp_path, monkeypatch):
    monkeypatch.setenv("GW_CACHE_DIR", str(tmp_path / "caches"))
    warm = ("cache", "warm", "--target", "P1", "--insertions", "2",
            "--level", "1", "--degree", "2")
    code, report, _ = go(*warm)
    assert code == 0
    path = tmp_path / "caches" / f"{preset('P1').fingerprint}.jsonl"
    assert path.exists()
    first = path.read_bytes()
    code, report, _ = go("cache", "verify", "--target", "P1")
    assert code == 0
    code, _, _ = go(*warm)
    assert path.read_bytes() == first  # byte-identical rebuild
    code, report, _ = go("cache", "clear", "--target", "P1")
    assert code == 0 and not path.exists()
    code, report, _ = go("cache", "clear", "--target", "P1")
    assert code == 0  # idempotent
    code, _, _ = go("cache", "verify", "--target", "P1")
    assert code == 3  # verify with no cache present


def test_cache_fingerprint_conflict(tmp_path, monkeypatch):
    monkeypatch.setenv("GW_CACHE_DIR", str(tmp_path))
    code, _, _ = go("cache", "warm", "--target", "P1", "--insertions", "2",
                    "--level", "1")
    assert code == 0
    # Pretend the P1 cache belongs to P2 by renaming it.
    src = tmp_path / f"{preset('P1').fingerprint}.jsonl"
    dst = tmp_path / f"{preset('P2').fingerprint}.jsonl"
    src.rename(dst)
    code, _, text = go("cache", "verify", "--target", "P2")
    assert code == 3 and "fingerprint" in text


def test_cache_poison_detected(tmp_path, monkeypatch):
    monkeypatch.setenv("GW_CACHE_DIR", str(tmp_path))
    code, _, _ = go("cache", "warm", "--target", "P1", "--insertions", "3",
                    "--level", "1", "--degree", "2")
    assert code == 0
    path = tmp_path / f"{preset('P1').fingerprint}.jsonl"
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines[1:], start=1):
        rec = json.loads(line)
        if rec["val"] != "0":
            rec["val"] = "999"
            lines[i] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
            break
    path.write_text("\n".join(lines) + "\n")
    code, _, text = go("cache", "verify", "--target", "P1")
    assert code == 3


def test_free_energy_command():
    code, report, _ = go("free-energy", "--target", "P2", "--insertions", "3",
                         "--level", "1", "--degree", "1", "--format", "structured")
    assert code == 0
    table = {d["monomial"]: d["value"] for d in report.details}
    assert table.get("t(0,3)^2 q^1") == "1/2"


def test_engine_error_exit_code(tmp_path):
    # A valid non-preset target has no shipped backend: TargetUnsupported -> 3.
    doc = json.loads(serialize_target(preset("P2")))
    doc["name"] = "custom-surface"
    path = tmp_path / "custom.json"
    path.write_text(json.dumps(doc))
    code, report, text = go("invariant", "--target", str(path),
                            "--key", "deg=1;ins=(0,3)(0,3)")
    assert code == 3
    assert report is not None and report.outcome == "error"
    assert "TargetUnsupported" in text


def test_table_backend_ingestion(tmp_path):
    doc = json.loads(serialize_target(preset("P2")))
    doc["name"] = "custom-surface"
    path = tmp_path / "custom.json"
    path.write_text(json.dumps(doc))
    table = tmp_path / "table.jsonl"
    table.write_text('{"ins":[[0,3],[0,3]],"deg":[1],"val":"1"}\n')
    code, report, _ = go("invariant", "--target", str(path), "--table", str(table),
                         "--key", "deg=1;ins=(0,3)(0,3)")
    assert code == 0 and report.details[0]["value"] == "1"


def test_psi_families_flag():
    code, report, _ = go("psi", "--target", "P1", "--n", "1", "--insertions", "3",
                         "--level", "2", "--degree", "1", "--families",
                         "--format", "structured")
    assert code == 0
    assert {"shift_relations": "hold"} in report.details
