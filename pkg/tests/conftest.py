import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mdasr import numerics as nx


@pytest.fixture
def debug_checks():
    """Opt-in per-op finiteness assertions (too slow for training-scale tests)."""
    nx.set_debug_checks(True)
    yield
    nx.set_debug_checks(False)
