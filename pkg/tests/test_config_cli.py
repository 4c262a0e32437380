import json
from pathlib import Path

import numpy as np
import pytest

from gcclab.cli import main, output_dir, replay
from gcclab.config import ConfigError, ScenarioConfig, load_config
from gcclab.render import read_csv, sha256

SMALL = ["--resolution", "32", "--preset", "omega1", "--T", "0.5", "--count", "2"]


def _manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("text, path", [
    ("solver:\n  foo: 1\n", "solver.foo"),
    ("resolution: abc\n", "resolution"),
    ("solver:\n  cfl: 0.8\n", "solver.cfl"),
    ("region:\n  epsilon: 0.1\n  epsilon0: 0.2\n", "region.epsilon0"),
    ("domain:\n  shape: polygon\n  vertices: [[0, 0], [1, 0], [1]]\n", "domain.vertices[2]"),
    ("experiment:\n  data:\n    kind: noise\n", "experiment.data.kind"),
    ("region:\n  k: true\n", "region.k"),
])
def test_config_errors_name_the_field(text, path):
    with pytest.raises(ConfigError) as exc:
        load_config(text)
    assert exc.value.path == path


def test_exponent_literal_is_a_number():
    assert load_config("experiment:\n  data:\n    norm: 1e6\n").experiment.data.norm == 1e6
    with pytest.raises(ConfigError):
        load_config("experiment:\n  data:\n    norm: big\n")


def test_defaults_round_trip():
    cfg = load_config("name: x\nsolver:\n  T: 2\n")
    assert cfg.solver.T == 2.0 and isinstance(cfg.solver.T, float)
    assert load_config(cfg.to_dict()) == cfg
    assert ScenarioConfig().validate() == ScenarioConfig()


def test_shipped_configs_load():
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert files
    for f in files:
        load_config(f)


def test_exit_code_config_error(tmp_path, capsys):
    assert main(["simulate", *SMALL, "--set", "solver.bogus=1", "--out", str(tmp_path)]) == 2
    assert "config error at solver.bogus" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "missing.yaml")]) == 2


def test_exit_code_rejected_nonlinearity(tmp_path):
    args = ["simulate", *SMALL, "--set", "nonlinearity.f=linear", "--set", "nonlinearity.k=-100", "--out", str(tmp_path)]
    assert main(args) == 2


def test_exit_code_numerical_abort(tmp_path, capsys):
    args = ["simulate", *SMALL, "--set", "experiment.data.norm=1e6", "--set", "damping.where=none", "--out", str(tmp_path)]
    assert main(args) == 3
    assert "numerical abort" in capsys.readouterr().err


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", *SMALL, "--out", str(out)]) == 0
    return out


def test_energy_csv_layout(simulated):
    header, rows = read_csv(simulated / "energy.csv")
    assert header == ["t", "E", "totalE", "dissipation", "residual"]
    assert (simulated / "energy.csv").read_bytes().count(b"\r\n") == len(rows) + 1
    E = np.array([float(r[2]) for r in rows])
    assert np.all(np.diff(E) <= 1e-12 * E[0])


def test_manifest_contents(simulated):
    man = _manifest(simulated)
    assert man["subcommand"] == "simulate" and man["passed"]
    assert man["config"]["solver"]["T"] == 0.5
    assert man["config"]["experiment"]["data"]["seed"] == 2024
    for f in man["files"]:
        assert sha256(simulated / f["name"]) == f["sha256"]


def test_rerun_is_byte_identical(simulated, tmp_path):
    assert main(["simulate", *SMALL, "--out", str(tmp_path)]) == 0
    a = {f["name"]: f["sha256"] for f in _manifest(simulated)["files"]}
    b = {f["name"]: f["sha256"] for f in _manifest(tmp_path)["files"]}
    assert a == b
    assert (simulated / "manifest.json").read_bytes() != b"" and _manifest(simulated)["files"] == _manifest(tmp_path)["files"]


def test_render_reproduces_svgs(simulated):
    before = {p.name: p.read_bytes() for p in simulated.glob("*.svg")}
    for p in simulated.glob("*.svg"):
        p.unlink()
    assert main(["render", str(simulated / "manifest.json")]) == 0
    after = {p.name: p.read_bytes() for p in simulated.glob("*.svg")}
    assert before and before == after


def test_replay(simulated):
    same, bad = replay(simulated / "manifest.json")
    assert same and bad == []


def test_report_detects_tampering(simulated, tmp_path):
    assert main(["report", str(simulated)]) == 0
    copy = tmp_path / "copy"
    copy.mkdir()
    for p in simulated.iterdir():
        (copy / p.name).write_bytes(p.read_bytes())
    (copy / "energy.csv").write_bytes(b"t\r\n")
    assert main(["report", str(copy)]) != 0


def test_gcc_failure_exit_one(tmp_path):
    args = ["gcc", "--resolution", "16", "--preset", "omega3", "--set", "experiment.gcc.n_pos=4",
            "--set", "experiment.gcc.n_dir=8", "--set", "experiment.gcc.t_max=5", "--out", str(tmp_path)]
    assert main(args) == 1
    header, rows = read_csv(tmp_path / "trapped_rays.csv")
    assert rows


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = load_config({})
    monkeypatch.delenv("GCCLAB_OUT", raising=False)
    assert output_dir("gcc", None, cfg) == Path("gcclab_out") / "gcc"
    monkeypatch.setenv("GCCLAB_OUT", str(tmp_path))
    assert output_dir("gcc", None, cfg) == tmp_path / "gcc"
    cfg.output_dir = "from_config"
    assert output_dir("gcc", None, cfg) == Path("from_config")
    assert output_dir("gcc", "flag", cfg) == Path("flag")
