# tests/conftest.py
import pytest

from src.core.config import Settings
from src.core.pde_dsl import load


@pytest.fixture
def settings():
    return Settings(show_progress=False)


@pytest.fixture
def bundled(settings):
    """Load a bundled .bvp file by name"""
    def _load(name):
        return load(settings.data_path(name))
    return _load
