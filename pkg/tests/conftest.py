import numpy as np
import pytest
from pathlib import Path

from camrobust import Image, load_image
from camrobust.stub_backend import command as stub_command_line

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def photo() -> Image:
    return load_image(DATA_DIR / "photo.png")


@pytest.fixture(scope="session")
def stub_command() -> str:
    return stub_command_line()


@pytest.fixture
def random_image():
    def make(height=32, width=32, seed=0):
        rng = np.random.default_rng(seed)
        return Image(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))

    return make
