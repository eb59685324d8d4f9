import os
import sys
from pathlib import Path

import pytest

# Add the parent directory to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from interfaces.instance_io import parse_instance

TEST_DATA = Path(__file__).parent / "test_data"


@pytest.fixture(scope="session")
def running_example():
    return parse_instance(str(TEST_DATA / "running_example.json"))


@pytest.fixture(scope="session")
def two_sm():
    return parse_instance(str(TEST_DATA / "two_sm.json"))
