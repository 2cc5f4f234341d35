import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stencilmem.kernels import data_path, load_suite
from stencilmem.roofline import load_machine


@pytest.fixture(scope="session")
def suite():
    return load_suite(data_path("cloverleaf_tiny.json"))


@pytest.fixture(scope="session")
def icx():
    return load_machine(data_path("icx_8360y.json"))


@pytest.fixture(scope="session")
def spr():
    return load_machine(data_path("spr_8480p.json"))
