import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from featstack.store import complementary_pair_spec, generate_synthetic


@pytest.fixture(scope="session")
def small_bundle():
    """Complementary two-network bundle at a size fast enough for unit tests."""
    return generate_synthetic(complementary_pair_spec(samples_per_class=40), seed=0)
