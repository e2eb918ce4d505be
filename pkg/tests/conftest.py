import numpy as np
import pytest

from attnssm.checks import random_ssm  # noqa: F401  (re-exported for tests)
from attnssm.tensor import RngState


@pytest.fixture
def g():
    return RngState(1234).generator()
