import json
import os
import subprocess
import sys

import pytest

from torcover import config as cfgmod
from torcover.cli import main
from torcover.errors import ConfigInvalid


def _write(path, text):
    path.write_text(text)
    return str(path)


def _files(d, ext):
    return sorted(f for f in os.listdir(d) if f.endswith(ext))


def test_green_prints_json(tmp_path, capsys):
    code = main(["run", "--kind", "green", "--point", "1,0,0", "--out", str(tmp_path)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["point"] == [1, 0, 0] and 0.5 < out["g"] < 0.6 and 0 <= out["error"] <= 1e-4
    assert len(out["config_hash"]) == 64
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == out["config_hash"] and man["exit_code"] == 0
    assert set(man["versions"]) >= {"torcover", "numpy", "scipy", "numba", "python"}
    assert len(man["files"]) == 1 and man["files"][0].startswith("green-" + out["config_hash"][:12])
    assert man["files"][0] in os.listdir(tmp_path)


def test_missing_required_key(tmp_path, capsys):
    path = _write(tmp_path / "c.cfg", "kind = cover\nreplicates = 10\n")
    assert main(["run", "--config", path]) == 1
    assert "'N'" in capsys.readouterr().err


def test_unknown_and_inapplicable_keys():
    with pytest.raises(ConfigInvalid, match="colour"):
        cfgmod.resolve({"kind": "green", "point": "0,0,0", "colour": "red"})
    with pytest.raises(ConfigInvalid, match="'rho'"):
        cfgmod.resolve({"kind": "green", "point": "0,0,0", "rho": "0.2"})
    with pytest.raises(ConfigInvalid, match="'N'"):
        cfgmod.resolve({"kind": "cover", "N": "ten"})
    with pytest.raises(ConfigInvalid, match="duplicate"):
        cfgmod.parse_text("kind = green\nkind = cover\n")
    with pytest.raises(ConfigInvalid, match="threads"):
        cfgmod.resolve({"kind": "green", "point": "0,0,0", "threads": "0"})


def test_hash_ignores_output_location_and_threads():
    a = cfgmod.resolve({"kind": "cover", "N": "6", "replicates": "50", "out": "x", "threads": "1"})
    b = cfgmod.resolve({"kind": "cover", "N": "6", "replicates": "50", "out": "y", "threads": "4"})
    c = cfgmod.resolve({"kind": "cover", "N": "6", "replicates": "51"})
    assert a.hash == b.hash != c.hash
    assert a.canonical().splitlines() == sorted(a.canonical().splitlines())
    # defaults are part of the hashed record
    d = cfgmod.resolve({"kind": "cover", "N": "6", "replicates": "50", "seed": "0"})
    assert d.hash == a.hash


COVER = "kind = cover\ntest = gumbel\nN = 6\nreplicates = 120\nseed = 11\n"


def test_reruns_are_byte_identical(tmp_path):
    path = _write(tmp_path / "c.cfg", COVER)
    outs = []
    for i, threads in enumerate(("1", "3")):
        out = tmp_path / f"o{i}"
        assert main(["run", "--config", path, "--out", str(out), "--threads", threads]) == 0
        outs.append(out)
    names = _files(outs[0], ".csv")
    assert names and names == _files(outs[1], ".csv")
    h = cfgmod.resolve(cfgmod.load(path)).hash
    assert all(h[:12] in n and n.endswith("-s11.csv") for n in names)
    for n in names + [f for f in _files(outs[0], ".json") if f != "manifest.json"]:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()


def test_flag_override_changes_hash(tmp_path):
    path = _write(tmp_path / "c.cfg", COVER)
    main(["run", "--config", path, "--out", str(tmp_path / "a")])
    main(["run", "--config", path, "--seed", "12", "--out", str(tmp_path / "b")])
    ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["config_hash"]
    hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["config_hash"]
    assert ha != hb


def test_flagged_run_exits_2(tmp_path):
    path = _write(tmp_path / "v.cfg", "kind = cover\ntest = vacancy\nN = 8\nu = 1.0\nreplicates = 100\n")
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 2
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["exit_code"] == 2 and man["flags"]


def test_empty_suite_exits_0(tmp_path):
    m = _write(tmp_path / "m.txt", "# nothing\n")
    assert main(["suite", m, "--out", str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s" / "suite.json").read_text())["rows"] == []


def test_suite_names_failing_row(tmp_path, capsys):
    _write(tmp_path / "ok.cfg", "kind = green\npoint = 0,0,0\n")
    _write(tmp_path / "bad.cfg", "kind = cover\ntest = vacancy\nN = 8\nreplicates = 100\n")
    m = _write(tmp_path / "m.txt", "ok.cfg\nbad.cfg\n")
    assert main(["suite", m, "--out", str(tmp_path / "s")]) == 2
    lines = (tmp_path / "s" / "suite.csv").read_text().splitlines()
    assert lines[0] == "entry,status,detail"
    assert lines[1].split(",")[1] == "pass"
    bad = lines[2].split(",")
    assert bad[0].endswith("bad.cfg") and bad[1] == "fail" and "u=1" in lines[2]


def test_suite_rejects_unknown_criterion(tmp_path):
    m = _write(tmp_path / "m.txt", "acceptance:12\n")
    assert main(["suite", m, "--out", str(tmp_path / "s")]) == 1


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "torcover.cli", "run", "--kind", "interlace", "--K", "point",
                        "--samples", "500", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode in (0, 2), r.stderr
    assert "manifest.json" in os.listdir(tmp_path)
    r = subprocess.run([sys.executable, "-m", "torcover.cli", "run", "--kind", "qsd", "--N", "20",
                        "--centers", "0,0,0", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 1 and "error" in r.stderr
