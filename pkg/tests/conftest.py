import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cico.kernels import IMPLEMENTATIONS  # noqa: E402


@pytest.fixture(params=sorted(IMPLEMENTATIONS))
def backend(request):
    """Each available kernel implementation in turn."""
    return IMPLEMENTATIONS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
