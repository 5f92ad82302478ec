import csv
import hashlib
import json

import pytest

from cavity_oat.cli import main, preset_names, preset_path
from cavity_oat.errors import ConfigError, EngineError
from cavity_oat.metrology import crossover_times
from cavity_oat.model import ModelParams
from cavity_oat.runner import evaluate_assertions, run_scenario, write_outputs
from cavity_oat.scenario import apply_overrides, load_config, parse_scenario, scenario_from_dict

PRESETS = preset_names()

SMALL = {
    "name": "small",
    "params": {"N": 4},
    "photon_input": {"kind": "coherent", "n_bar": 2.0},
    "time_grid": {"t_end": 0.2, "points": 5},
    "engines": ["exact_sum", "closed_form"],
    "observables": ["qfi_eigen", "purity"],
}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


# -- schema -------------------------------------------------------------------

def test_catalog_contents():
    assert set(PRESETS) >= {"fig2-left", "fig2-right", "fig2-loss-a", "fig2-loss-b", "oat-baseline",
                            "appendix-c-params"}


@pytest.mark.parametrize("name", PRESETS)
def test_presets_parse(name):
    s = parse_scenario(preset_path(name))
    assert s.name == name
    assert len(s.times()) == s.time_grid.points


@pytest.mark.parametrize("bad", [
    {"unknown_key": 1},
    {"params": {"N": 4, "chi": 2.0}},
    {"photon_input": {"kind": "coherent"}},
    {"photon_input": {"kind": "vacuum", "n_bar": 1.0}},
    {"engines": []},
    {"engines": ["magic"]},
    {"time_grid": {"t_end": -1.0, "points": 3}},
    {"params": {"N": 0}},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        scenario_from_dict({**SMALL, **bad})


def test_block_engine_rejects_tunneling_with_hint():
    data = {**SMALL, "params": {"N": 4, "J": 0.5}, "photon_input": {"kind": "vacuum"},
            "engines": ["lindblad_blocks"]}
    with pytest.raises(ConfigError, match="BlockFormInvalid"):
        scenario_from_dict(data)
    scenario_from_dict({**data, "engines": ["lindblad_dense"], "integrator": {"n_max": 4}})


def test_closed_form_rejects_loss():
    with pytest.raises(ConfigError, match="kappa"):
        scenario_from_dict({**SMALL, "params": {"N": 4, "kappa": 1.0}})


def test_overrides_parse_json_and_dotted_keys():
    d = apply_overrides(SMALL, ["params.N=6", "photon_input.n_bar=3.5", "name=other", "engines.0=\"oat_baseline\""])
    assert d["params"]["N"] == 6 and d["photon_input"]["n_bar"] == 3.5
    assert d["name"] == "other" and d["engines"][0] == "oat_baseline"
    assert SMALL["params"]["N"] == 4
    with pytest.raises(ConfigError):
        apply_overrides(SMALL, ["no_equals_sign"])


def test_kappa_resolves_as_rate_over_tau():
    s = parse_scenario(preset_path("fig2-loss-a"))
    tau_a = crossover_times(ModelParams(N=20), n_bar=40.0).tau_a
    kappas = [p.kappa for p, _, _ in s.sweep_points()]
    assert kappas == pytest.approx([0.1 / tau_a, 1 / tau_a, 10 / tau_a], rel=1e-14)
    assert s.times()[-1] == pytest.approx(10 * tau_a, rel=1e-14)


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


# -- runner -------------------------------------------------------------------

def test_columns_and_rows(tmp_path):
    s = scenario_from_dict(SMALL)
    result = run_scenario(s)
    files = write_outputs(result, tmp_path)
    with open(tmp_path / "small_sweep0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t [1/U]", "F_exact_sum [1]", "F_eigen_closed_form [1]", "purity_closed_form [1]",
                       "warnings [text]"]
    assert len(rows) == 1 + 5
    assert all(len(r) == len(rows[0]) for r in rows)
    assert float(rows[1][1]) == pytest.approx(4.0, abs=1e-12)
    assert {f.name for f in files} >= {"small_sweep0.csv", "manifest.json"}


def test_engines_agree_on_small_case():
    sw = run_scenario(scenario_from_dict(SMALL)).sweeps[0]
    a, b = sw.column("F_exact_sum"), sw.column("F_eigen_closed_form")
    assert max(abs(x - y) for x, y in zip(a, b)) < 1e-8


def test_manifest_round_trip_and_hashes(tmp_path):
    s = scenario_from_dict(SMALL)
    write_outputs(run_scenario(s), tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert scenario_from_dict(m["config"]) == s
    assert m["resolved"]["times"] == pytest.approx(list(s.times()))
    for name, digest in m["files"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL)
    for out in ("a", "b"):
        assert main(["run", str(cfg), "--out", str(tmp_path / out)]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_engine_error_is_tagged():
    data = {"name": "boom", "params": {"N": 4, "kappa": 1.0}, "photon_input": {"kind": "coherent", "n_bar": 20.0},
            "time_grid": {"t_end": 0.5, "points": 3}, "engines": ["lindblad_blocks"],
            "observables": ["purity"], "integrator": {"n_max": 3}}
    with pytest.raises(EngineError) as info:
        run_scenario(scenario_from_dict(data))
    assert info.value.sweep_index == 0 and info.value.t == 0.0


def test_lossy_presets_order_by_kappa():
    for name in ("fig2-loss-a", "fig2-loss-b"):
        result = run_scenario(parse_scenario(preset_path(name)))
        peaks = [max(sw.column("F_eigen_lindblad_blocks")) for sw in result.sweeps]
        assert peaks[0] > peaks[1] > peaks[2]
        assert all(max(sw.column("purity_lindblad_blocks")) <= 1 + 1e-9 for sw in result.sweeps)


@pytest.mark.parametrize("name", PRESETS)
def test_preset_assertions(name):
    outcomes = evaluate_assertions(run_scenario(parse_scenario(preset_path(name))))
    assert outcomes
    failed = [o.detail for o in outcomes if not o.passed]
    assert not failed, failed


# -- CLI ----------------------------------------------------------------------

def test_cli_exit_ok_and_output(tmp_path, capsys):
    cfg = _write(tmp_path, {**SMALL, "assertions": [
        {"kind": "value", "column": "F_exact_sum", "t": 0.0, "op": ">=", "value": {"multiple": 0.99, "of": "N"}}]})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "[PASS] assertion 0 (value)" in capsys.readouterr().out


def test_cli_exit_assertion(tmp_path, capsys):
    cfg = _write(tmp_path, {**SMALL, "assertions": [
        {"kind": "value", "column": "F_exact_sum", "t": 0.0, "op": ">", "value": 100.0}]})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_cli_exit_config(tmp_path, capsys):
    cfg = _write(tmp_path, {**SMALL, "bogus": True})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 2
    assert main(["run", str(cfg), "--preset", "fig2-left"]) == 2
    assert main(["run", "--preset", "no-such-preset"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_exit_engine(tmp_path, capsys):
    cfg = _write(tmp_path, {"name": "boom", "params": {"N": 4, "kappa": 1.0},
                            "photon_input": {"kind": "coherent", "n_bar": 20.0},
                            "time_grid": {"t_end": 0.5, "points": 3}, "engines": ["lindblad_blocks"],
                            "observables": ["purity"], "integrator": {"n_max": 3}})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "sweep 0, t=0.0" in capsys.readouterr().err


def test_cli_validate_and_list(capsys):
    assert main(["validate", "--preset", "fig2-right", "--override", "params.N=20"]) == 0
    assert main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    assert "fig2-right: valid" in out
    assert all(name in out for name in PRESETS)


def test_cli_n100_override_of_loss_preset(tmp_path):
    code = main(["run", "--preset", "fig2-loss-a", "--override", "params.N=100", "--out", str(tmp_path / "o")])
    assert code == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["config"]["params"]["N"] == 100 and all(a["passed"] for a in m["assertions"])
