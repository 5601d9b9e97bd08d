import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def _backends():
    from soyyield import kernels
    return sorted(kernels.BACKENDS)


BACKEND_NAMES = _backends()


@pytest.fixture(params=BACKEND_NAMES)
def backend(request):
    return request.param
