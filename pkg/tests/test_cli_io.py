import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crtbp_reach import export, plots
from crtbp_reach.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main, run
from crtbp_reach.config import ConfigError, validate_config
from crtbp_reach.dynamics import SystemParams
from crtbp_reach.integrator import DiscreteTrajectory, propagate

P = SystemParams(mu=0.0125, h=1e-3)


# ---- configuration


def errors_of(raw, **kw):
    with pytest.raises(ConfigError) as exc:
        validate_config(raw, **kw)
    return dict(exc.value.errors)


def test_empty_config_lists_required_fields():
    errs = errors_of("  \n")
    assert "system.mu" in errs[""]


def test_mu_above_half_is_a_range_error():
    errs = errors_of(json.dumps({"scenario": "lagrange", "system": {"mu": 0.6}}))
    assert "system.mu" in errs


def test_minimal_simulate_config_gets_documented_defaults():
    cfg = validate_config('{"scenario": "simulate", "system": {"mu": 0.0125}}')
    assert cfg.system.h == 1e-3
    assert cfg.system.u_max == 0.0
    assert cfg.simulate.tf == 50.0
    assert cfg.reach.n_theta == 24 and cfg.reach.n_arcs == 4


def test_parse_error_has_line_and_column():
    errs = errors_of('{"system": {\n  "mu": 0.0125,,\n}}')
    assert "line 2, column" in errs[""]


def test_unknown_keys_rejected_with_path():
    errs = errors_of({"scenario": "simulate", "system": {"mu": 0.01, "muu": 1}})
    assert "system.muu" in errs


def test_nonfinite_and_short_state_rejected():
    errs = errors_of({"scenario": "simulate", "system": {"mu": 0.01}, "simulate": {"state0": [1, 2, 3]}})
    assert "simulate.state0" in errs
    errs = errors_of('{"scenario": "simulate", "system": {"mu": NaN}}')
    assert "system.mu" in errs


def test_scenario_selection():
    raw = {"system": {"mu": 0.01}}
    assert validate_config(raw, scenario="orbit").scenario == "orbit"
    assert "scenario" in errors_of(raw)
    assert "scenario" in errors_of({"scenario": "orbit", **raw}, scenario="reach")
    # mu = 0 is a valid two-body system for simulate but has no L1
    assert validate_config({"scenario": "simulate", "system": {"mu": 0.0}}).system.mu == 0.0
    assert "system.mu" in errors_of({"scenario": "orbit", "system": {"mu": 0.0}})


def test_orbit_block_takes_one_target():
    assert "orbit" in errors_of({"scenario": "orbit", "system": {"mu": 0.01}, "orbit": {"x0": 0.8, "energy": -1.6}})


def test_documented_defaults_match_models():
    from pathlib import Path

    from crtbp_reach.config import RunConfig

    doc = (Path(__file__).parents[1] / "docs" / "config.md").read_text()
    cfg = validate_config({"scenario": "simulate", "system": {"mu": 0.0125}}).model_dump(mode="json")
    for block in ("system", "simulate", "orbit", "manifold", "reach", "target"):
        for key, value in cfg[block].items():
            if isinstance(value, dict):
                continue
            assert f"`{block}.{key}`" in doc, f"{block}.{key} undocumented"
    assert RunConfig.model_fields.keys() >= {"output_dir", "seed"}


# ---- serialization

finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.just(4)), elements=finite_floats), finite_floats.filter(lambda h: h > 0))
def test_trajectory_json_round_trip_is_bit_exact(states, h):
    traj = DiscreteTrajectory(states, np.ones((len(states) - 1, 2)) * 0.1, h, P)
    back = export.trajectory_from_dict(json.loads(export.dumps(export.trajectory_to_dict(traj))))
    assert back.states.tobytes() == traj.states.tobytes()
    assert back.controls.tobytes() == traj.controls.tobytes()
    assert back.h == traj.h
    assert back.params == traj.params


def test_trajectory_files_round_trip(tmp_path):
    traj = propagate([0.8, 0.0, 0.0, 0.2], (0.01, -0.02), 100, P)
    export.save_trajectory_json(tmp_path / "t.json", traj)
    back = export.load_trajectory_json(tmp_path / "t.json")
    assert np.array_equal(back.states, traj.states)
    export.write_trajectory_csv(tmp_path / "t.csv", traj)
    header, data = export.read_csv(tmp_path / "t.csv")
    assert header == ["t", "x", "y", "vx", "vy", "ux", "uy"]
    assert np.array_equal(data[:, 1:5], traj.states)
    assert np.array_equal(data[:-1, 5:], traj.controls)


def test_config_round_trip():
    cfg = validate_config({"scenario": "reach", "system": {"mu": 0.0125, "u_max": 0.1}, "reach": {"thetas_deg": [0.1, 70.0]}})
    again = validate_config(cfg.canonical_json())
    assert again == cfg
    assert again.canonical_json() == cfg.canonical_json()


def test_json_writes_nonfinite_as_null():
    text = export.dumps({"x": float("nan"), "y": np.array([1.0, np.inf])})
    assert json.loads(text) == {"x": None, "y": [1.0, None]}
    assert "NaN" not in text and "Infinity" not in text


def test_hashes():
    assert export.git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    a = export.tree_hash({"a": b"1", "b": b"2"})
    assert a == export.tree_hash({"b": b"2", "a": b"1"})
    assert a != export.tree_hash({"a": b"1", "b": b"3"})


# ---- plots


def make_fig():
    fig = plots.Figure("t", "x", "y")
    fig.add("line", [0, 1, 2], [0.0, 1.0, 0.5])
    fig.add("pts", [0.5], [0.5], kind="points")
    return fig


def test_svg_is_deterministic_and_parses():
    a, b = plots.render(make_fig()), plots.render(make_fig())
    assert a == b
    root = ET.fromstring(a)
    assert root.get("viewBox") == "0 0 640 480"


def test_empty_series_named_in_error():
    fig = plots.Figure("t", "x", "y")
    fig.add("empty trajectory", [], [])
    with pytest.raises(plots.PlotError, match="empty trajectory"):
        plots.render(fig)
    with pytest.raises(plots.PlotError):
        plots.render(plots.Figure("nothing", "x", "y"))


def test_single_point_renders_one_marker():
    fig = plots.Figure("single", "x", "vx")
    fig.add("section", [0.9], [0.01], kind="marker")
    svg = plots.render(fig)
    ET.fromstring(svg)
    assert svg.count('class="marker"') == 1


def test_nonfinite_series_rejected():
    fig = plots.Figure("t", "x", "y")
    fig.add("bad", [0, 1], [0, float("inf")])
    with pytest.raises(plots.PlotError, match="bad"):
        plots.render(fig)


# ---- command line


def write_cfg(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_lagrange_run_writes_manifest(tmp_path):
    cfg = validate_config({"system": {"mu": 0.0125}}, scenario="lagrange")
    m = run(cfg, tmp_path)
    data = json.loads((tmp_path / "lagrange.json").read_text())
    assert len(data["points"]) == 5
    assert all(p["grad_norm"] <= 1e-12 for p in data["points"].values())
    for f in m.files:
        assert (tmp_path / f["name"]).stat().st_size > 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["output_hash"] == m.output_hash


def test_simulate_run_outputs(tmp_path):
    cfg = validate_config({"system": {"mu": 0.0125}, "simulate": {"tf": 2.0}}, scenario="simulate")
    m = run(cfg, tmp_path)
    names = {f["name"] for f in m.files}
    assert {"trajectory.csv", "trajectory.json", "energy.csv", "energy_stats.json", "energy.svg", "trajectory.svg"} <= names
    stats = json.loads((tmp_path / "energy_stats.json").read_text())
    assert stats["variational"]["max_deviation"] < 1e-5


def test_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path, {"system": {"mu": 0.0125}})
    assert main(["lagrange", "--config", str(good), "--out", str(tmp_path / "o")]) == EXIT_OK
    bad = write_cfg(tmp_path, {"system": {"mu": 0.7}})
    assert main(["lagrange", "--config", str(bad)]) == EXIT_CONFIG
    assert "system.mu" in capsys.readouterr().err
    assert main(["lagrange", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    crash = write_cfg(tmp_path, {"system": {"mu": 0.0125}, "simulate": {"state0": [0.9875, 0.0, 0.0, 0.0], "tf": 0.1}})
    assert main(["simulate", "--config", str(crash), "--out", str(tmp_path / "c")]) == EXIT_SOLVER
    assert "simulate" in capsys.readouterr().err


def test_thread_env_override(tmp_path, monkeypatch):
    from crtbp_reach.cli import _thread_count

    monkeypatch.setenv("CRTBP_THREADS", "3")
    assert _thread_count(1) == 3
    monkeypatch.setenv("CRTBP_THREADS", "zero")
    with pytest.raises(ConfigError):
        _thread_count(1)
    monkeypatch.delenv("CRTBP_THREADS")
    assert _thread_count(None) == 1


def test_orbit_scenario_is_reproducible(tmp_path):
    cfg = validate_config({"system": {"mu": 0.0125}}, scenario="orbit")
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert a.output_hash == b.output_hash
    for f in a.files:
        if f["name"].endswith(".svg"):
            assert (tmp_path / "a" / f["name"]).read_bytes() == (tmp_path / "b" / f["name"]).read_bytes()
