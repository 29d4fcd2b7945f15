import json
from pathlib import Path

import numpy as np
import pytest

from kws_runtime._mem import enable_low_latency_malloc
from kws_runtime.tensors import _get_jit_requant

enable_low_latency_malloc()
_get_jit_requant()  # pay the one-time JIT compile outside timed tests

DATA_DIR = Path(__file__).parent / "data"

FIXTURE_FLOAT = DATA_DIR / "fixture_float.kwsm"
FIXTURE_INT8 = DATA_DIR / "fixture_int8.kwsm"
FIXTURE_INT8_UNFOLDED = DATA_DIR / "fixture_int8_unfolded.kwsm"
FIXTURE_FEATURES = DATA_DIR / "fixture_features.npy"
FIXTURE_GOLDEN = DATA_DIR / "fixture_golden.json"


@pytest.fixture(scope="session")
def fixture_float_graph():
    from kws_runtime.model_io import load_model
    return load_model(FIXTURE_FLOAT)


@pytest.fixture(scope="session")
def fixture_int8_graph():
    from kws_runtime.model_io import load_model
    return load_model(FIXTURE_INT8)


@pytest.fixture(scope="session")
def fixture_features():
    return np.load(FIXTURE_FEATURES)


@pytest.fixture(scope="session")
def fixture_golden():
    return json.loads(FIXTURE_GOLDEN.read_text())
