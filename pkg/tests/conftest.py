import pytest

from olapsim import kernel
from olapsim.config import parse
from olapsim.runner import simulate_config

BACKENDS = ["python"] + (["cython"] if kernel.compiled_simulate is not None else [])

needs_compiled = pytest.mark.skipif(kernel.compiled_simulate is None, reason="compiled kernel not built")


def run_text(text: str, **kw):
    return simulate_config(parse(text), **kw)


@pytest.fixture(scope="session")
def reference_600():
    """Calibrated default scenario over 600 virtual seconds."""
    return run_text("[run]\nend_time = 600\n")
