import numpy as np
import pytest

from greenwave.netmodel import (
    NetworkGenConfig,
    fresh_trip_process,
    generate_network,
    generate_trips,
)


@pytest.fixture(scope="session")
def small_net():
    return generate_network(NetworkGenConfig(intersection_range=(2, 2), seed=7))


@pytest.fixture(scope="session")
def three_net():
    return generate_network(NetworkGenConfig(intersection_range=(3, 3), seed=11))


@pytest.fixture(scope="session")
def small_trips(small_net):
    rng = np.random.default_rng(3)
    tp = fresh_trip_process(small_net, rng)
    return generate_trips(small_net, tp, 300, rng)


@pytest.fixture(scope="session")
def three_trips(three_net):
    rng = np.random.default_rng(5)
    tp = fresh_trip_process(three_net, rng)
    return generate_trips(three_net, tp, 300, rng)
