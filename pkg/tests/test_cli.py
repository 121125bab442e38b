import json
import os
import subprocess
import sys

import pytest

from ncsim.cli import main
from ncsim.isa import disassemble, encode_listing2


@pytest.fixture
def listing2(tmp_path):
    p = tmp_path / "l2.s"
    p.write_text(disassemble(encode_listing2(0x2A)))
    return p


def hot_rows(csv_text):
    return [line for line in csv_text.splitlines()[1:] if line.endswith(",1")]


def test_run_hlt(tmp_path, capsys):
    prog = tmp_path / "hlt.s"
    prog.write_text("HLT\n")
    assert main(["run", str(prog), "--out", str(tmp_path / "o")]) == 0
    assert hot_rows((tmp_path / "o" / "hlt.signal.csv").read_text()) == []
    assert (tmp_path / "o" / "hlt.trace.jsonl").read_text().count("\n") == 1


def test_run_listing2_one_hot(listing2, tmp_path):
    assert main(["run", str(listing2), "--out", str(tmp_path / "o")]) == 0
    assert hot_rows((tmp_path / "o" / "l2.signal.csv").read_text()) == ["42,4,1"]
    doc = json.loads((tmp_path / "o" / "l2.json").read_text())
    assert doc["fault_records"][0]["kind"] == "NonCanonical"
    for line in (tmp_path / "o" / "l2.trace.jsonl").read_text().splitlines():
        json.loads(line)


def test_run_malformed_config(listing2, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("preset: zen\nwindow_cyles: 10\n")
    assert main(["run", str(listing2), "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "window_cyles" in capsys.readouterr().err


def test_run_parse_error(tmp_path, capsys):
    prog = tmp_path / "bad.s"
    prog.write_text("LDI r1, 1\nJNZ r1, nowhere\n")
    assert main(["run", str(prog), "--out", str(tmp_path)]) == 1
    assert "nowhere" in capsys.readouterr().err


def test_run_missing_program(tmp_path):
    assert main(["run", str(tmp_path / "none.s")]) == 1


def test_run_runtime_failure(tmp_path, capsys):
    prog = tmp_path / "loop.s"
    prog.write_text("top:\nLDI r1, 1\nJNZ r1, top\n")
    cfg = tmp_path / "c.yaml"
    cfg.write_text("max_cycles: 200\n")
    assert main(["run", str(prog), "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "SimulationError" in capsys.readouterr().err


def test_scenarios_filter(tmp_path, capsys):
    assert main(["scenarios", "--filter", "noncanon_*", "--seeds", "2",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "noncanon_stlf_flushed" in out and "2/2" in out
    assert (tmp_path / "scenarios.json").exists()


def test_scenarios_meltdown_legacy(tmp_path, capsys):
    assert main(["scenarios", "--filter", "meltdown_kernel", "--preset", "legacy_intel",
                 "--out", str(tmp_path)]) == 0
    assert "leak:1" in capsys.readouterr().out


def test_scenarios_empty_match(capsys):
    assert main(["scenarios", "--filter", "zzz*"]) == 0
    assert "0 scenarios" in capsys.readouterr().out


def test_scenarios_failure_exit(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("threshold: 1\n")  # every reload counts as a miss
    rc = main(["scenarios", "--filter", "noncanon_l1d", "--config", str(cfg),
               "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "noncanon_l1d[zen]" in capsys.readouterr().err


def test_covert(tmp_path, capsys):
    payload = tmp_path / "p.bin"
    payload.write_bytes(bytes(range(256)) * 4)
    assert main(["covert", "--payload", str(payload), "--out", str(tmp_path / "a")]) == 0
    first = (tmp_path / "a" / "covert.json").read_text()
    doc = json.loads(first)
    assert doc["errors"] == 0 and doc["payload_bytes"] == 1024
    assert doc["bandwidth_bytes_per_mcycle"] > 0
    assert main(["covert", "--payload", str(payload), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "covert.json").read_text() == first


def test_covert_empty_payload(tmp_path, capsys):
    payload = tmp_path / "empty.bin"
    payload.write_bytes(b"")
    assert main(["covert", "--payload", str(payload)]) == 1
    assert "empty" in capsys.readouterr().err


def test_covert_broken_channel(tmp_path, capsys):
    payload = tmp_path / "p.bin"
    payload.write_bytes(b"xyz")
    cfg = tmp_path / "c.yaml"
    cfg.write_text("preset: mds_resistant\n")
    assert main(["covert", "--payload", str(payload), "--config", str(cfg),
                 "--out", str(tmp_path)]) == 3
    assert "ChannelBroken" in capsys.readouterr().err


def test_calibrate(capsys):
    assert main(["calibrate"]) == 0
    assert json.loads(capsys.readouterr().out)["threshold"] == 27


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["covert"])
    assert exc.value.code == 1


def test_console_script_and_env_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"output_dir: {tmp_path / 'envout'}\njitter: 2\n")
    env = dict(os.environ, NCSIM_CONFIG=str(cfg))
    out = subprocess.run([sys.executable, "-m", "ncsim.cli", "calibrate"], env=env,
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["jitter"] == 2
    prog = tmp_path / "hlt.s"
    prog.write_text("HLT\n")
    subprocess.run([sys.executable, "-m", "ncsim.cli", "run", str(prog)], env=env, check=True,
                   capture_output=True)
    assert (tmp_path / "envout" / "hlt.signal.csv").exists()
