import json

import numpy as np
import pytest

from mtled.benchmarks import make_cube_model
from mtled.cli import main
from mtled.model_io import save_model


@pytest.fixture(scope="module")
def tiny_model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "tiny.model"
    # 27 nodes solve in well under a second; the reduced safety factor keeps
    # the explicit step clear of this layout's stability edge
    model, config = make_cube_model((3, 3, 3), radius_factor=1.75, safety=0.3)
    save_model(path, model, config)
    return path


def test_check_model_passes_for_sound_discretization(tiny_model_file, capsys):
    assert main(["check", "model", str(tiny_model_file)]) == 0
    out = capsys.readouterr().out
    assert "27 nodes" in out
    assert "total mass" in out
    assert "critical step" in out


def test_check_model_flags_starved_supports(tmp_path, capsys):
    from dataclasses import replace

    # radius below the grid spacing: every integration point sees < 4 nodes
    model, config = make_cube_model((3, 3, 3))
    path = tmp_path / "starved.model"
    save_model(path, model, replace(config, radius=0.02))
    assert main(["check", "model", str(path)]) == 1
    out = capsys.readouterr().out
    assert "inadmissible integration points" in out


def test_solve_writes_the_advertised_artifacts(tiny_model_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", str(tiny_model_file), "--out", str(out),
                 "--snapshots", "3"]) == 0
    assert (out / "tiny_final.vtk").exists()
    assert (out / "tiny_series.csv").exists()
    assert sorted(p.name for p in out.glob("tiny_snap_*.vtk")) == [
        "tiny_snap_0000.vtk", "tiny_snap_0001.vtk", "tiny_snap_0002.vtk"
    ]
    summary = json.loads((out / "tiny_summary.json").read_text())
    assert summary["converged"] is True
    assert summary["n_nodes"] == 27
    assert len(summary["reaction"]) == 3
    assert summary["ebc_error_max"] < 1e-10
    header = (out / "tiny_series.csv").read_text().splitlines()[0]
    assert header == "step,time,load_factor,max_increment,reaction_x,reaction_y,reaction_z"
    stdout = capsys.readouterr().out
    assert "converged" in stdout


def test_solve_reports_errors_against_reference(tiny_model_file, tmp_path, capsys):
    out1 = tmp_path / "first"
    assert main(["solve", str(tiny_model_file), "--out", str(out1),
                 "--snapshots", "0"]) == 0
    summary = json.loads((out1 / "tiny_summary.json").read_text())
    # replay against the final field itself: error metrics must be ~zero
    from mtled.export import read_vtk

    _, _, fields = read_vtk(out1 / "tiny_final.vtk")
    ref = tmp_path / "ref.csv"
    np.savetxt(ref, fields["displacement"], delimiter=",", header="ux,uy,uz")
    out2 = tmp_path / "second"
    assert main(["solve", str(tiny_model_file), "--out", str(out2),
                 "--reference", str(ref)]) == 0
    stdout = capsys.readouterr().out
    assert "nrmse" in stdout.lower()
    replay = json.loads((out2 / "tiny_summary.json").read_text())
    assert max(abs(v) for v in replay["nrmse"]) < 1e-6
    assert replay["steps"] == summary["steps"]


def test_solve_rejects_mismatched_reference(tiny_model_file, tmp_path):
    ref = tmp_path / "short.csv"
    np.savetxt(ref, np.zeros((5, 3)), delimiter=",")
    assert main(["solve", str(tiny_model_file), "--out", str(tmp_path / "o"),
                 "--reference", str(ref)]) == 1


def test_missing_model_file_is_a_usage_error(tmp_path):
    assert main(["solve", str(tmp_path / "nope.model")]) == 1
    assert main(["check", "model", str(tmp_path / "nope.model")]) == 1


def test_malformed_model_file_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.model"
    bad.write_text("NODES\nnot-a-number 0 0\n")
    assert main(["solve", str(bad)]) == 1


def test_unstable_discretization_is_a_solver_error(tmp_path):
    # this layout/radius pair produces negative lumped masses
    model, config = make_cube_model((4, 4, 4), radius_factor=2.0)
    path = tmp_path / "negmass.model"
    save_model(path, model, config)
    assert main(["solve", str(path), "--out", str(tmp_path / "o")]) == 2


def test_verify_quadrature_passes(capsys):
    assert main(["verify", "quadrature"]) == 0
    out = capsys.readouterr().out
    assert "ok" in out
    assert "FAIL" not in out


def test_verify_cube_reports_and_passes(monkeypatch, capsys):
    import mtled.cli as cli

    # stand in a quick-to-solve layout; the report logic is what's under test
    monkeypatch.setattr(
        cli, "make_cube_model",
        lambda layout, tau=None: make_cube_model((5, 5, 5),
                                                 radius_factor=1.75, tau=tau),
    )
    assert main(["verify", "cube"]) == 0
    out = capsys.readouterr().out
    assert "closed-form lateral stretch" in out
    assert "fixed 4-pt" in out
    assert "FAIL" not in out
