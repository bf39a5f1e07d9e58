import json
import math

import pytest
from click.testing import CliRunner

from bubbletree.cli import dumps, main, run_report
from bubbletree.config import Config, load_config, parse_config
from bubbletree.errors import InputError, ParameterOutOfRange
from bubbletree.geom_core import energies, identity_sphere, write_imm
from bubbletree.scenarios import ScenarioSpec, branched_cover, generate_scenario, member


def test_parse_config_with_comments():
    cfg = parse_config("# run\neta = 0.05  # smaller\n\nlevel = 5\n")
    assert cfg.eta == 0.05 and cfg.level == 5
    assert cfg.sigma_max == Config().sigma_max


@pytest.mark.parametrize("text", ["colour = red", "eta 0.1", "level = five", "sigma_max = 1.5"])
def test_parse_config_rejects(text):
    with pytest.raises(InputError):
        parse_config(text)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_config(tmp_path / "nope.cfg")
    assert load_config() == Config()


def test_overrides_skip_none():
    cfg = Config().updated(eta=0.2, level=None)
    assert cfg.eta == 0.2 and cfg.level == Config().level


def test_dumps_is_deterministic_and_strict():
    rep = {"b": 1.0 / 3.0, "a": [math.inf, math.nan, -0.0], "n": None, "ok": True}
    text = dumps(rep)
    assert text == dumps(dict(rep))
    back = json.loads(text)
    assert back["a"] == [None, None, -0.0]
    assert back["b"] == 1.0 / 3.0
    assert list(back) == ["b", "a", "n", "ok"]


def test_round_scenario_energies():
    rep = energies(member(ScenarioSpec("round", level=5), 1.0))
    assert rep.A == pytest.approx(4 * math.pi, rel=0.01)


def test_cover_scenario():
    Phi = branched_cover(2, 5)
    assert energies(Phi).A == pytest.approx(8 * math.pi, rel=0.01)
    assert sorted(b.order for b in Phi.branch_points) == [2, 2]


def test_neck_member_matches_profile():
    F = generate_scenario(ScenarioSpec("neck2", schedule=(0.05,)))
    assert energies(F.last).G == pytest.approx(F.reference[-1]["G"], rel=0.02)


def test_scenario_spec_ranges():
    with pytest.raises(ParameterOutOfRange):
        ScenarioSpec("neck2", schedule=(0.5,))
    with pytest.raises(ParameterOutOfRange):
        ScenarioSpec("branched_cover", degree=7)


def test_run_report_scenario():
    rep, code = run_report("scenario", {"name": "round"}, Config(level=4))
    assert code == 0
    assert [c["name"] for c in rep["checks"]] == ["dn2_floor"]


# ------------------------------------------------------------------ CLI

@pytest.fixture
def runner():
    return CliRunner()


def test_cli_scenario_ok(runner, tmp_path):
    out = tmp_path / "round.obj"
    res = runner.invoke(main, ["scenario", "round", "--subdiv", "4", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["scenario"]["level"] == 4
    assert out.read_text().startswith("v ")


def test_cli_unknown_scenario(runner):
    assert runner.invoke(main, ["scenario", "torus"]).exit_code == 2


def test_cli_bad_config(runner, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("eta = -1\n")
    assert runner.invoke(main, ["--config", str(cfg), "scenario", "round"]).exit_code == 2


def test_cli_analyze_round(runner, tmp_path):
    path = tmp_path / "round.imm"
    write_imm(identity_sphere(4), path)
    res = runner.invoke(main, ["analyze", "--input", str(path)])
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output)
    assert rep["branches"] == []
    assert rep["energies"]["A"] == pytest.approx(4 * math.pi, rel=0.01)
    assert all(c["pass"] for c in rep["checks"])


def test_cli_analyze_missing_file(runner, tmp_path):
    assert runner.invoke(main, ["analyze", "--input", str(tmp_path / "x.imm")]).exit_code == 2


def test_cli_cutfill_energy_guard(runner, tmp_path):
    path = tmp_path / "neck.imm"
    write_imm(member(ScenarioSpec("neck2"), 0.05), path)
    args = ["cutfill", "--input", str(path), "--center", "0,0,-1",
            "--outer", "0.0991", "--inner", "0.0062"]
    assert runner.invoke(main, args).exit_code == 3
    assert runner.invoke(main, args[:-1] + ["0.2"]).exit_code == 2
    assert runner.invoke(main, ["cutfill", "--input", str(path), "--center", "0,0",
                                "--outer", "0.1", "--inner", "0.01"]).exit_code == 2


def test_cli_verify_drop_fails(runner, tmp_path):
    xi = identity_sphere(3)
    A = energies(xi).A
    node = {"id": "1", "parent": None, "depth": 1,
            "ball": {"center": [0, 0, 1], "radius": math.pi},
            "energy": {"A": A, "W": 0.0, "F": 0.0}, "degree": 1}
    child = dict(node, id="1.1", parent="1", depth=2,
                 ball={"center": [0, 0, -1], "radius": 0.1})
    path = tmp_path / "rep.json"
    path.write_text(json.dumps({"tree": {"nodes": [node, child]},
                                "quantization": {"area_last": 2 * A, "degree_sum_err": 0}}))
    assert runner.invoke(main, ["verify", "--report", str(path)]).exit_code == 0
    assert runner.invoke(main, ["verify", "--report", str(path), "--drop", "1.1"]).exit_code == 1
