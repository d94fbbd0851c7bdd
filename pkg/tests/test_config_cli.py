import json
import re
import math

import numpy as np
import pytest

from refugia import cli
from refugia.cli import main, parse_range
from refugia.config import config_from_dict, load_text, parse_config
from refugia.errors import ParseError, ValidationError
from refugia.svg import Plot

RING_TOML = """
seed = 1
output = "{out}"

[domain]
kind = "ring1d"
resolution = [64]
refuge_length = 3.141592653589793

[params]
lam = 1.2
mu = 2.0
alpha = 1.0

[continuation]
lam_window = [0.0, 2.0]
max_steps = 40

[evolution]
T = 0.5

[multistart]
n_starts = 4
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "ring.toml"
    path.write_text(RING_TOML.format(out=(tmp_path / "out").as_posix()))
    return path


def test_parse_ring_config(cfg_file):
    cfg = parse_config(cfg_file)
    assert cfg.params.lam == 1.2 and cfg.params.alpha == 1.0
    assert cfg.grid.n == 64
    assert cfg.continuation.lam_window == (0.0, 2.0)
    assert cfg.multistart.n_starts == 4
    assert len(cfg.config_hash()) == 16


def test_json_config(tmp_path):
    data = {"domain": {"kind": "rect2d_with_hole", "resolution": [32, 16]},
            "params": {"lam": 1.0, "mu": -0.5}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(data))
    cfg = parse_config(path)
    assert cfg.grid.spec.kind == "rect2d_with_hole"
    assert cfg.params.mu == -0.5


def test_negative_b_rejected():
    text = '[domain]\nkind="ring1d"\nresolution=[64]\n[params]\nlam=1\nmu=1\nb=-1\n'
    with pytest.raises(ValidationError, match="b must be positive"):
        config_from_dict(load_text(text, "toml"), text)


@pytest.mark.parametrize("arc", [2 * math.pi, 7.0])
def test_refuge_arc_too_long(arc):
    data = {"domain": {"kind": "ring1d", "resolution": [64], "refuge_length": arc}}
    with pytest.raises(ValidationError):
        config_from_dict(data)


def test_unknown_keys_report_line():
    text = '[domain]\nkind="ring1d"\nresolution=[64]\n[params]\nlam=1\nmu=1\ngamma=3\n'
    with pytest.raises(ValidationError, match="line 7"):
        config_from_dict(load_text(text, "toml"), text)
    with pytest.raises(ValidationError, match="unknown key"):
        config_from_dict({"domain": {"kind": "ring1d", "resolution": [64]}, "extra": 1})


def test_bad_values_rejected():
    base = {"domain": {"kind": "ring1d", "resolution": [64]}}
    for bad in ({"seed": -1}, {"newton": {"max_iter": 2.5}}, {"evolution": {"scheme": "spectral"}},
                {"params": {"lam": 1, "mu": 1, "alpha": 2.0}, "evolution": {"delta": 0.5}},
                {"continuation": {"lam_window": [2, 1]}}, {"params": {"lam": "x", "mu": 1}}):
        with pytest.raises(ValidationError):
            config_from_dict(base | bad)
    with pytest.raises(ValidationError):
        config_from_dict({"params": {"lam": 1, "mu": 1}})


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        load_text("[domain\nkind=1", "toml")
    with pytest.raises(ParseError, match="line 1"):
        load_text("{bad json", "json")
    with pytest.raises(ParseError):
        parse_config(tmp_path / "missing.toml")


def test_parse_range():
    assert np.allclose(parse_range("0:1:3"), [0, 0.5, 1])
    assert np.allclose(parse_range("1:100:3:log"), [1, 10, 100])
    assert np.allclose(parse_range("-2:2:5"), [-2, -1, 0, 1, 2])
    for bad in ("1:2", "a:b:c", "0:1:0", "0:1:3:lin", "0:1:3:log"):
        with pytest.raises(Exception):
            parse_range(bad)


def test_unknown_subcommand_exit_2(capsys):
    assert main(["bogus"]) == 2
    assert main([]) == 2


def test_missing_config_exit_4(tmp_path):
    assert main(["eig", "--config", str(tmp_path / "nope.toml")]) == 4
    bad = tmp_path / "bad.toml"
    bad.write_text('[domain]\nkind="ring1d"\nresolution=[64]\n[params]\nlam=1\nmu=1\nb=-1\n')
    assert main(["eig", "--config", str(bad)]) == 4


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_eig_deterministic_and_manifest(cfg_file, tmp_path):
    out = tmp_path / "out" / "eig"
    assert main(["eig", "--config", str(cfg_file), "--mu-grid", "0.1:10:5:log"]) == 0
    first = (out / "eig.csv").read_bytes()
    assert main(["eig", "--config", str(cfg_file), "--mu-grid", "0.1:10:5:log"]) == 0
    assert (out / "eig.csv").read_bytes() == first
    assert first.startswith(b"# refugia-csv v1 config_hash=")
    man = _manifest(out)
    assert man["outputs"] == ["eig.csv"]
    assert man["exit_code"] == 0
    files = {p.name for p in out.iterdir()}
    assert files == {"eig.csv", "manifest.json"}


def test_regions_command(cfg_file, tmp_path):
    code = main(["regions", "--config", str(cfg_file), "--lambda", "0.1:3:6", "--mu=-2:2:5", "--alpha", "2"])
    assert code == 0
    out = tmp_path / "out" / "regions"
    man = _manifest(out)
    assert sorted(man["outputs"]) == ["regions.csv", "regions.svg"]
    svg = (out / "regions.svg").read_text()
    assert svg.startswith("<svg") and "sigma1" in svg and "|mu|/c" in svg
    lines = (out / "regions.csv").read_text().splitlines()
    assert len(lines) == 2 + 30
    verdicts = {l.split(",")[2] for l in lines[2:]}
    assert verdicts <= {"nonexistence_by_prop43", "nonexistence_by_prop44",
                        "existence_guaranteed", "indeterminate"}


def test_steady_command(cfg_file, tmp_path):
    assert main(["steady", "--config", str(cfg_file), "--starts", "3"]) == 0
    out = tmp_path / "out" / "steady"
    data = json.loads((out / "steady.json").read_text())
    assert data["solutions"]
    assert set(_manifest(out)["outputs"]) == {"steady.csv", "steady.json"}
    first = (out / "steady.csv").read_bytes()
    assert main(["steady", "--config", str(cfg_file), "--starts", "3"]) == 0
    assert (out / "steady.csv").read_bytes() == first


def test_continue_command_with_fold(tmp_path):
    from refugia.geometry import DomainSpec, build_grid
    from refugia.thresholds import alpha_star

    a4 = 4 * alpha_star(build_grid(DomainSpec.ring(n=64)), 2.0, 1.0, 1.0)
    path = tmp_path / "c.toml"
    path.write_text(RING_TOML.format(out=(tmp_path / "out").as_posix())
                    .replace("alpha = 1.0", f"alpha = {a4!r}").replace("max_steps = 40", "max_steps = 400"))
    assert main(["continue", "--config", str(path), "--from", "gamma-v"]) == 0
    out = tmp_path / "out" / "continue"
    man = _manifest(out)
    assert man["summary"]["folds"]
    assert man["summary"]["fold_lams"][0] < man["summary"]["origin_lam"]
    assert sorted(man["outputs"]) == ["branch.csv", "branch.svg"]


def test_continue_requires_source(cfg_file):
    assert main(["continue", "--config", str(cfg_file)]) == 2


def test_evolve_command(cfg_file, tmp_path):
    code = main(["evolve", "--config", str(cfg_file), "--T", "0.5", "--snapshots", "2"])
    assert code == 5
    out = tmp_path / "out" / "evolve"
    man = _manifest(out)
    assert set(man["outputs"]) == {"evolve.csv", "snapshots.json", "final_state.json"}
    assert man["summary"]["status"] == "T_reached"
    # a rerun without snapshots removes the stale snapshot file
    assert main(["evolve", "--config", str(cfg_file), "--T", "0.5", "--snapshots", "0"]) == 5
    assert not (out / "snapshots.json").exists()
    assert {p.name for p in out.iterdir()} == {"evolve.csv", "final_state.json", "manifest.json"}


def test_asymptotics_command(cfg_file, tmp_path):
    assert main(["asymptotics", "--config", str(cfg_file), "--mode", "lambda0"]) == 0
    man = _manifest(tmp_path / "out" / "asymptotics")
    assert abs(man["summary"]["slope"] - 1) < 0.1
    assert man["summary"]["det"] < 0


def test_verify_bad_criteria(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--criteria", "99"]) == 2
    assert main(["verify", "--out", str(tmp_path), "--criteria", "x"]) == 2


def test_verify_single(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path), "--criteria", "3"]) == 0
    assert re.search(r"criterion\s+3 PASS", capsys.readouterr().out)
    assert (tmp_path / "verify" / "verify.csv").exists()


def test_worker_count(monkeypatch):
    monkeypatch.setenv("REFUGIA_THREADS", "3")
    assert cli.worker_count() == 3
    monkeypatch.setenv("REFUGIA_THREADS", "zero")
    assert cli.worker_count() == 1


def test_svg_plot():
    p = Plot(title="t<1>", xlabel="x", ylabel="y", logy=True)
    p.add([1, 2, 3], [1, 10, 100], "a", markers=True)
    p.add([1, 2, 3], [np.nan, 2, 3], "b", dashed=True)
    svg = p.render()
    assert svg.count("<polyline") == 2
    assert svg.count("<circle") == 3
    assert "t&lt;1&gt;" in svg
