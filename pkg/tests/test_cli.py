import io
import json

from hearthmesh.cli import main, repl
from hearthmesh.sim import Simulation


def test_validate(data_dir, capsys):
    assert main(["validate", str(data_dir / "worked_home.json")]) == 0
    out = capsys.readouterr().out
    assert "worked-home: OK" in out and "4 subsystems" in out and "6 devices" in out


def test_run_json_and_csv(data_dir, capsys):
    args = [str(data_dir / "worked_home.json"), str(data_dir / "worked_scenario.json")]
    assert main(["run", *args]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert [r["kind"] for r in rep["interactions"]] == ["direct", "within-subsystem", "between-subsystems"]
    assert main(["run", *args, "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("id,at_ms,")
    assert main(["run", *args, "--format", "trace"]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert json.loads(first)["kind"]


def test_run_mode_override(data_dir, capsys):
    args = [str(data_dir / "worked_home.json"), str(data_dir / "worked_scenario.json"), "--mode", "broker"]
    assert main(["run", *args]) == 0
    assert json.loads(capsys.readouterr().out)["mode"] == "broker"


def test_exit_codes(data_dir, tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    assert main(["validate", str(bad)]) == 1
    assert main(["frobnicate"]) == 2
    assert main(["run", str(data_dir / "worked_home.json")]) == 2
    assert main(["matrix", str(data_dir / "worked_home.json"), "--grid", "colour=red"]) == 2
    assert main(["matrix", str(data_dir / "worked_home.json"), "--grid", "mode=peer"]) == 2
    capsys.readouterr()


def test_matrix_csv(data_dir, capsys):
    assert main(["matrix", str(data_dir / "worked_home.json"), "--grid", "node-count=4,8", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and "node-count" in lines[0]


def test_repl_session(worked_home):
    sim = Simulation(worked_home)
    script = io.StringIO("@balcony: turn on the light\n:wait 3000\n@living-room: turn off the bedroom light\n"
                         "@attic: hello\n:state balcony-ceiling-light\n:quit\n")
    out = io.StringIO()
    assert repl(sim, script, out) == 0
    text = out.getvalue()
    assert "direct listener=balcony-ceiling-light" in text
    assert "between-subsystems listener=living-room-lamp" in text and "hops=2" in text
    assert "unknown room 'attic'" in text
    assert "balcony-ceiling-light: brightness=low power=on" in text
