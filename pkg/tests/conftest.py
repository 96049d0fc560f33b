import pytest

from expdate.synth import generate_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(12, "unrealistic", 21, (32, 128), root)
    return root


@pytest.fixture(scope="session")
def tiny(tiny_dir):
    return load_dataset(tiny_dir)
