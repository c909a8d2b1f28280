import functools

import pytest

from levyinv import cli


@functools.lru_cache(maxsize=None)
def _config(name):
    return cli.load_config(name)


@functools.lru_cache(maxsize=None)
def _solution(name, decomposition=None):
    return cli.run_solve(_config(name), decomposition)


@pytest.fixture(scope="session")
def config():
    return _config


@pytest.fixture(scope="session")
def solution():
    """Cached VFIE solutions of the built-in scenarios."""
    return _solution
