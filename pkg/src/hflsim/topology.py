"""Physical deployment: devices, edge servers, the cloud, and channel gains.

Positions are in meters, distances handed to the path-loss model in
kilometers.  Shadow fading is drawn once per link and frozen for the
lifetime of a topology.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError

SHADOW_STD_DB = 8.0
# The log-distance model is meaningless at zero range.
MIN_LINK_DISTANCE_M = 1.0


def dbm_to_watts(p_dbm):
    """Convert dBm to watts: ``10 ** ((p_dbm - 30) / 10)``."""
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


def path_loss_db(distance_km):
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise DomainError(f"path loss needs distance > 0 km, got {distance_km!r}")
    return 128.1 + 37.6 * np.log10(d)


def path_loss_gain(distance_km, shadow_draw_db=0.0):
    """Linear power gain of a link at ``distance_km`` with a fixed shadow draw.

    Works elementwise on arrays; returns a float for scalar inputs.
    """
    loss = path_loss_db(distance_km) + np.asarray(shadow_draw_db, dtype=float)
    g = 10.0 ** (-loss / 10.0)
    return float(g) if np.ndim(g) == 0 else g


@dataclass(frozen=True)
class Device:
    id: int
    position: tuple[float, float]
    u: float  # CPU cycles per sample
    num_samples: int
    tx_power: float  # watts
    f_max: float  # Hz
    dataset_id: int = -1

    def __post_init__(self):
        if self.u <= 0 or self.num_samples <= 0 or self.f_max <= 0:
            raise ConfigurationError(f"device {self.id}: u, num_samples and f_max must be > 0")
        if self.tx_power < 0:
            raise ConfigurationError(f"device {self.id}: negative transmit power")


@dataclass(frozen=True)
class EdgeServer:
    id: int
    position: tuple[float, float]
    bandwidth: float  # Hz
    tx_power: float  # watts

    def __post_init__(self):
        if self.bandwidth <= 0 or self.tx_power <= 0:
            raise ConfigurationError(f"edge {self.id}: bandwidth and tx_power must be > 0")


@dataclass(frozen=True)
class ChannelTable:
    """Frozen mean link gains plus the shadow draws that produced them.

    ``device_edge_gain[n, m]`` is the gain between device ``n`` and edge ``m``;
    ``edge_cloud_gain[m]`` the gain between edge ``m`` and the cloud.
    """

    device_edge_gain: np.ndarray
    edge_cloud_gain: np.ndarray
    device_edge_shadow_db: np.ndarray
    edge_cloud_shadow_db: np.ndarray

    def gain(self, device_id: int, edge_id: int) -> float:
        return float(self.device_edge_gain[device_id, edge_id])

    def cloud_gain(self, edge_id: int) -> float:
        return float(self.edge_cloud_gain[edge_id])


@dataclass(frozen=True)
class ParamRanges:
    """Uniform sampling bounds for generated devices and edge servers."""

    u: tuple[float, float] = (1e4, 1e5)
    num_samples: tuple[int, int] = (400, 700)
    tx_power_dbm: tuple[float, float] = (0.0, 23.0)
    f_max: tuple[float, float] = (2e9, 2e9)
    edge_bandwidth: tuple[float, float] = (0.5e6, 3e6)
    edge_tx_power_dbm: tuple[float, float] = (23.0, 23.0)
    shadow_std_db: float = SHADOW_STD_DB

    def validate(self) -> None:
        for name in ("u", "num_samples", "tx_power_dbm", "f_max", "edge_bandwidth", "edge_tx_power_dbm"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"range {name}: min {lo} > max {hi}")
        if self.u[0] <= 0 or self.num_samples[0] <= 0 or self.f_max[0] <= 0 or self.edge_bandwidth[0] <= 0:
            raise ConfigurationError("u, num_samples, f_max and edge_bandwidth ranges must be positive")
        if self.shadow_std_db < 0:
            raise ConfigurationError("shadow_std_db must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRanges":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class Topology:
    devices: tuple[Device, ...]
    edges: tuple[EdgeServer, ...]
    cloud_position: tuple[float, float]
    channel: ChannelTable
    side_length: float
    ranges: ParamRanges = field(default_factory=ParamRanges)

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def device_positions(self) -> np.ndarray:
        return np.array([d.position for d in self.devices], dtype=float).reshape(-1, 2)

    def edge_positions(self) -> np.ndarray:
        return np.array([e.position for e in self.edges], dtype=float).reshape(-1, 2)

    def distances(self) -> np.ndarray:
        """Device-to-edge distance matrix in meters."""
        diff = self.device_positions()[:, None, :] - self.edge_positions()[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "hflsim-topology/1",
            "side_length": self.side_length,
            "cloud_position": list(self.cloud_position),
            "ranges": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.ranges).items()},
            "devices": [
                {**asdict(d), "position": list(d.position)} for d in self.devices
            ],
            "edges": [{**asdict(e), "position": list(e.position)} for e in self.edges],
            "channel": {
                "device_edge_gain": self.channel.device_edge_gain.tolist(),
                "edge_cloud_gain": self.channel.edge_cloud_gain.tolist(),
                "device_edge_shadow_db": self.channel.device_edge_shadow_db.tolist(),
                "edge_cloud_shadow_db": self.channel.edge_cloud_shadow_db.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        devices = tuple(Device(**{**x, "position": tuple(x["position"])}) for x in d["devices"])
        edges = tuple(EdgeServer(**{**x, "position": tuple(x["position"])}) for x in d["edges"])
        ch = d["channel"]
        n, m = len(devices), len(edges)
        channel = ChannelTable(
            device_edge_gain=np.asarray(ch["device_edge_gain"], dtype=float).reshape(n, m),
            edge_cloud_gain=np.asarray(ch["edge_cloud_gain"], dtype=float).reshape(m),
            device_edge_shadow_db=np.asarray(ch["device_edge_shadow_db"], dtype=float).reshape(n, m),
            edge_cloud_shadow_db=np.asarray(ch["edge_cloud_shadow_db"], dtype=float).reshape(m),
        )
        topo = cls(
            devices=devices,
            edges=edges,
            cloud_position=tuple(d["cloud_position"]),
            channel=channel,
            side_length=float(d["side_length"]),
            ranges=ParamRanges.from_dict(d.get("ranges", {})),
        )
        topo.check()
        return topo

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def check(self) -> None:
        if [d.id for d in self.devices] != list(range(len(self.devices))):
            raise ConfigurationError("device ids must be dense from 0")
        if [e.id for e in self.edges] != list(range(len(self.edges))):
            raise ConfigurationError("edge ids must be dense from 0")
        g = self.channel.device_edge_gain
        if g.shape != (self.n_devices, self.n_edges) or np.any(g <= 0):
            raise ConfigurationError("device-edge gains must be positive and cover every link")
        if np.any(self.channel.edge_cloud_gain <= 0):
            raise ConfigurationError("edge-cloud gains must be positive")

    def subset(self, device_ids) -> "Topology":
        """Topology restricted to ``device_ids``, re-indexed densely in the given order."""
        ids = list(device_ids)
        devices = tuple(replace(self.devices[i], id=k) for k, i in enumerate(ids))
        ch = self.channel
        channel = replace(
            ch,
            device_edge_gain=ch.device_edge_gain[ids],
            device_edge_shadow_db=ch.device_edge_shadow_db[ids],
        )
        return replace(self, devices=devices, channel=channel)


def _uniform(rng, bounds, size):
    lo, hi = bounds
    return rng.uniform(lo, hi, size=size)


def _link_gain(dist_m, shadow_db):
    return path_loss_gain(np.maximum(dist_m, MIN_LINK_DISTANCE_M) / 1000.0, shadow_db)


def sample_devices(
    rng: np.random.Generator,
    n_devices: int,
    side: float,
    edges,
    ranges: ParamRanges,
):
    """Draw ``n_devices`` devices plus their gains toward the given edges."""
    ranges.validate()
    pos = rng.uniform(0.0, side, size=(n_devices, 2))
    u = _uniform(rng, ranges.u, n_devices)
    lo, hi = ranges.num_samples
    d = rng.integers(int(lo), int(hi) + 1, size=n_devices)
    p_dbm = _uniform(rng, ranges.tx_power_dbm, n_devices)
    fmax = _uniform(rng, ranges.f_max, n_devices)
    shadow = rng.normal(0.0, ranges.shadow_std_db, size=(n_devices, len(edges)))

    epos = np.array([e.position for e in edges], dtype=float).reshape(-1, 2)
    diff = pos[:, None, :] - epos[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    gain = np.atleast_2d(_link_gain(dist, shadow)).reshape(n_devices, len(edges))

    p_w = dbm_to_watts(p_dbm)
    devices = tuple(
        Device(
            id=i,
            position=(float(pos[i, 0]), float(pos[i, 1])),
            u=float(u[i]),
            num_samples=int(d[i]),
            tx_power=float(p_w[i]),
            f_max=float(fmax[i]),
            dataset_id=i,
        )
        for i in range(n_devices)
    )
    return devices, gain, shadow


def generate_topology(
    n_devices: int,
    n_edges: int,
    side: float = 1000.0,
    seed: int = 0,
    ranges: ParamRanges | None = None,
) -> Topology:
    """Random square deployment with the cloud at the center.

    Edges are drawn first, then devices, from one seeded generator, so the
    result is bit-identical for a fixed seed.
    """
    ranges = ranges or ParamRanges()
    ranges.validate()
    if n_edges < 1 or n_devices < n_edges:
        raise ConfigurationError(f"need n_devices >= n_edges >= 1, got {n_devices}, {n_edges}")
    if side <= 0:
        raise ConfigurationError("side length must be positive")

    rng = np.random.default_rng(seed)
    cloud = (side / 2.0, side / 2.0)
    epos = rng.uniform(0.0, side, size=(n_edges, 2))
    bw = _uniform(rng, ranges.edge_bandwidth, n_edges)
    ep_w = dbm_to_watts(_uniform(rng, ranges.edge_tx_power_dbm, n_edges))
    edges = tuple(
        EdgeServer(id=m, position=(float(epos[m, 0]), float(epos[m, 1])), bandwidth=float(bw[m]), tx_power=float(ep_w[m]))
        for m in range(n_edges)
    )
    cloud_shadow = rng.normal(0.0, ranges.shadow_std_db, size=n_edges)
    cloud_dist = np.hypot(epos[:, 0] - cloud[0], epos[:, 1] - cloud[1])
    cloud_gain = np.atleast_1d(_link_gain(cloud_dist, cloud_shadow))

    devices, gain, shadow = sample_devices(rng, n_devices, side, edges, ranges)
    channel = ChannelTable(
        device_edge_gain=gain,
        edge_cloud_gain=cloud_gain,
        device_edge_shadow_db=shadow,
        edge_cloud_shadow_db=cloud_shadow,
    )
    return Topology(devices=devices, edges=edges, cloud_position=cloud, channel=channel, side_length=float(side), ranges=ranges)


def resample_devices(topology: Topology, n_devices: int, rng: np.random.Generator) -> Topology:
    """Fresh devices over the same edges and edge-cloud links."""
    devices, gain, shadow = sample_devices(rng, n_devices, topology.side_length, topology.edges, topology.ranges)
    channel = replace(topology.channel, device_edge_gain=gain, device_edge_shadow_db=shadow)
    return replace(topology, devices=devices, channel=channel)
