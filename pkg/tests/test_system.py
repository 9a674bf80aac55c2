# tests/test_system.py
import importlib

import pytest

from src.core.config import DEFAULT_DATA_DIR, Settings, load_config

MODULES = [
    "src.app",
    "src.core.classification",
    "src.core.config",
    "src.core.domain_geometry",
    "src.core.errors",
    "src.core.expr_core",
    "src.core.invariance",
    "src.core.numerics",
    "src.core.pde_dsl",
    "src.core.prolongation",
    "src.core.reduction",
    "src.core.report_writer",
    "src.core.transforms",
]


@pytest.mark.parametrize("name", MODULES)
def test_imports(name):
    assert importlib.import_module(name)


MINIMAL_ARGS = {
    "parse": ["x"],
    "check-symmetry": ["--bvp", "x"],
    "classify-verify": ["--table", "1"],
    "reduce": ["--bvp", "x"],
    "validate": ["ode"],
    "geometry": [],
}


def test_parser_knows_every_command():
    from src.app import COMMANDS, build_parser
    parser = build_parser()
    assert set(COMMANDS) == set(MINIMAL_ARGS)
    for command, extra in MINIMAL_ARGS.items():
        assert parser.parse_args([command, *extra]).command == command


def test_bundled_data_is_present():
    names = {p.stem for p in DEFAULT_DATA_DIR.glob("*.bvp")}
    assert {"example1", "example2", "example3", "power_flux", "transforms_1d", "transforms_2d"} <= names


def test_data_path_resolution():
    settings = Settings()
    assert settings.data_path("example2") == DEFAULT_DATA_DIR / "example2.bvp"
    assert settings.data_path("example2.bvp") == DEFAULT_DATA_DIR / "example2.bvp"


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("BVPSYM_SEED", "7")
    monkeypatch.setenv("BVPSYM_TOL", "1e-6")
    monkeypatch.setenv("BVPSYM_PROGRESS", "off")
    monkeypatch.setenv("BVPSYM_LOG_LEVEL", "info")
    settings = load_config(str(tmp_path / "missing.env"))
    assert settings.seed == 7 and settings.tol == 1e-6
    assert not settings.show_progress
    assert settings.log_level == "INFO"


def test_bad_environment_value_falls_back(monkeypatch, tmp_path):
    monkeypatch.setenv("BVPSYM_SEED", "seven")
    settings = load_config(str(tmp_path / "missing.env"))
    assert settings.seed == Settings().seed
