import numpy as np
import pytest

from hflsim.topology import ChannelTable, Device, EdgeServer, Topology


def make_topology(devices, edges, gains, cloud_gains, side=1000.0):
    """Hand-built topology; ``gains`` is an (N, M) array."""
    gains = np.asarray(gains, dtype=float).reshape(len(devices), len(edges))
    cloud_gains = np.asarray(cloud_gains, dtype=float).reshape(len(edges))
    channel = ChannelTable(
        device_edge_gain=gains,
        edge_cloud_gain=cloud_gains,
        device_edge_shadow_db=np.zeros_like(gains),
        edge_cloud_shadow_db=np.zeros_like(cloud_gains),
    )
    return Topology(tuple(devices), tuple(edges), (side / 2, side / 2), channel, side)


def device(i, u=2e4, D=500, p=0.1, fmax=2e9, pos=(0.0, 0.0)):
    return Device(id=i, position=pos, u=u, num_samples=D, tx_power=p, f_max=fmax)


def edge(m, bw=1e6, p=0.2, pos=(0.0, 0.0)):
    return EdgeServer(id=m, position=pos, bandwidth=bw, tx_power=p)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
