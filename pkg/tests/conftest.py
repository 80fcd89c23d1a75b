import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualopt.instances import Instance, generate_random


@pytest.fixture
def square() -> Instance:
    return Instance("square", np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]))


def rand_instance(n: int, seed: int) -> Instance:
    return generate_random(n, seed)
