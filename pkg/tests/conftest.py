import numpy as np
import pytest

from gprs import Dataset, PoolConfig, start_pool


@pytest.fixture
def make_pool():
    """Factory for worker pools, shut down at teardown if the test didn't."""
    handles = []

    def _make(workers=2, **kw):
        rt = start_pool(PoolConfig(worker_count=workers, **kw))
        handles.append(rt)
        return rt

    yield _make
    for h in handles:
        try:
            h.shutdown()
        except RuntimeError:
            pass


@pytest.fixture
def pool(make_pool):
    return make_pool(2)


def random_dataset(rng, n, d=3):
    return Dataset(rng.standard_normal((n, d)), rng.standard_normal(n))


@pytest.fixture
def dataset():
    return random_dataset(np.random.default_rng(1234), 32)
