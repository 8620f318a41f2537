import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixtures import write_fixture_dataset

from sqlsynth.schema import load_corpus, load_schemas


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture_data")
    return write_fixture_dataset(root)


@pytest.fixture(scope="session")
def envs(dataset):
    loaded = load_schemas(dataset["schemas"])
    return {env.db_id: env for env in loaded}


@pytest.fixture(scope="session")
def shop_env(envs):
    return envs["shop"]


@pytest.fixture(scope="session")
def campus_env(envs):
    return envs["campus"]


@pytest.fixture(scope="session")
def social_env(envs):
    return envs["social"]


@pytest.fixture(scope="session")
def islands_env(envs):
    return envs["islands"]


@pytest.fixture(scope="session")
def chain_env(envs):
    return envs["chain"]


@pytest.fixture(scope="session")
def corpus(dataset):
    return load_corpus(dataset["corpus"])
