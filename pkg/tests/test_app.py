# tests/test_app.py
import json

import pytest

from src.app import (ERROR, FAILED, OK, _floats, build_parser, config_from_args, main, parse_assignments,
                     resolve_operator)
from src.core.config import Settings
from src.core.errors import ConstructionError

QUIET = ["--no-progress"]


def test_parse_prints_canonical_form(capsys):
    assert main(["parse", "table2_case3", *QUIET]) == OK
    out = capsys.readouterr().out
    assert "equation:" in out
    assert "operator X1:" in out


def test_parse_transform_library_as_json(capsys):
    assert main(["parse", "transforms_2d", "--format", "json", *QUIET]) == OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["bvp"] is None
    assert payload["transforms"]


def test_check_symmetry_exit_codes(capsys):
    assert main(["check-symmetry", "--bvp", "table2_case3", "--operator", "T", "--format", "json", *QUIET]) == OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["overall"] == "invariant"
    assert [item["item"] for item in payload["items"]] == list("abcdef")
    assert main(["check-symmetry", "--bvp", "table2_case3", "--operator", "D", *QUIET]) == FAILED


def test_constrained_operator_needs_flag(capsys):
    argv = ["check-symmetry", "--bvp", "example2", "--operator", "Q", *QUIET]
    assert main(argv) == FAILED
    assert main(argv + ["--allow-constraints"]) == OK


def test_errors_exit_with_two(capsys):
    assert main(["check-symmetry", "--bvp", "no_such_problem", *QUIET]) == ERROR
    assert "error:" in capsys.readouterr().err
    assert main(["check-symmetry", "--bvp", "table2_case7", "--set", "k=-2", *QUIET]) == ERROR
    assert main(["check-symmetry", "--bvp", "table2_case3", "--transform", "no_such_map", *QUIET]) == ERROR


def test_reduce_to_stationary_problem(capsys):
    assert main(["reduce", "--bvp", "power_flux", "--operator", "T", "--format", "json", *QUIET]) == OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["tag"] == "elliptic"
    assert payload["independents"] == ["x1", "x2"]


def test_validate_closed_form_residual(capsys):
    assert main(["validate", "residual", "--format", "json", *QUIET]) == OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["passed"] and payload["max_abs"] < 1e-10


def test_geometry_list(capsys):
    assert main(["geometry", "--list", "--format", "json", *QUIET]) == OK
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 7
    assert rows[0] == {"subalgebra": "X1", "invariant": "x2", "domains": "strip(C1=0.5, C2=2), half-plane(C=1)"}


def test_geometry_single_subalgebra(capsys):
    assert main(["geometry", "--subalgebra", "J12", *QUIET]) == OK
    assert "disc-interior" in capsys.readouterr().out


def test_output_file(tmp_path, capsys):
    target = tmp_path / "problem.bvp"
    assert main(["parse", "example3", "-o", str(target), *QUIET]) == OK
    assert "inverse diffusivity" in target.read_text(encoding="utf-8")
    assert capsys.readouterr().out == ""


def test_flags_override_settings():
    args = build_parser().parse_args(["geometry", "--seed", "5", "--tol", "1e-6", "--no-progress"])
    config = config_from_args(args, Settings())
    assert config.settings.seed == 5 and config.settings.tol == 1e-6
    assert not config.settings.show_progress
    assert config.command == "geometry"
    assert "seed" not in config.options


def test_parse_assignments():
    assert parse_assignments(["k=-2,q0=1", "x1=y"]) == {"k": "-2", "q0": "1", "x1": "y"}
    with pytest.raises(ConstructionError):
        parse_assignments(["k"])


def test_float_ranges():
    assert _floats("0.05:0.15:0.05") == pytest.approx([0.05, 0.1, 0.15])
    assert _floats("1,2.5") == [1.0, 2.5]
    assert _floats(None) is None


def test_operator_combinations(bundled):
    bvp = bundled("power_flux")
    combo = resolve_operator("T + v*X1", bvp)
    assert combo.xi0 == 1
    assert combo.xi == (bvp.ctx.symbol("v"), 0)
    explicit = resolve_operator("d/dx2", bvp)
    assert explicit.xi == (0, 1)
    with pytest.raises(ConstructionError):
        resolve_operator("T + x1", bvp)
