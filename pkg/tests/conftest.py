import os

import pytest

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.fixture
def config_path():
    def get(name):
        return os.path.abspath(os.path.join(CONFIGS, name))
    return get
