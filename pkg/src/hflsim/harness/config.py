"""Experiment configuration (JSON documents).

Schema, all sections optional except where noted::

    {
      "name": "run",
      "seed": 0,
      "topology": {"n_devices": 40, "n_edges": 3, "side": 1000.0,
                   "seed": null, "ranges": {...}} | {"path": "topo.json"},
      "cost": {"alpha": 2e-28, "lam": 1.0, "noise_psd_dbm_hz": -174,
               "model_size_kb": 448, "local_iters": 5, "edge_iters": 5,
               "cloud_bandwidth": 1e7},
      "scheduler": {"policy": "ikc", "H": 10, "h": 1, "K": 10,
                    "aux_iters": 5, "mini_features": 8, "mini_model_kb": 10},
      "assignment": {"strategy": "geographic" | "hfel" | "hfel-300" |
                     "exhaustive" | "drl", "agent": "agent.npz"},
      "learner": {"hidden": 32, "beta": 0.2},
      "data": {"source": "synthetic", "classes": 10, "dim": 20, "rho": 0.8,
               "separation": 0.6, "noise": 1.0, "test_size": 2000, "seed": 1,
               "images": null, "labels": null,
               "test_images": null, "test_labels": null},
      "target_accuracy": 0.72,
      "max_rounds": 100,
      "output_dir": null
    }

Sizes use 1 KB = 1024 bytes.  ``topology.seed`` defaults to the experiment
seed.  The synthetic class means are drawn from ``data.seed`` (fixed at 1 by
default so repetitions share one mixture; ``null`` ties it to the experiment
seed).  The default workload plateaus near 74% test accuracy.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..cost import CostParams
from ..errors import ConfigurationError
from ..scheduler import POLICIES

DEFAULTS: dict[str, Any] = {
    "name": "run",
    "seed": 0,
    "topology": {"n_devices": 40, "n_edges": 3, "side": 1000.0, "seed": None, "ranges": {}},
    "cost": {},
    "scheduler": {"policy": "ikc", "H": 10, "h": 1, "K": 10, "aux_iters": 5, "mini_features": 8, "mini_model_kb": 10},
    "assignment": {"strategy": "geographic", "agent": None},
    "learner": {"hidden": 32, "beta": 0.2},
    "data": {
        "source": "synthetic",
        "classes": 10,
        "dim": 20,
        "rho": 0.8,
        "separation": 0.6,
        "noise": 1.0,
        "test_size": 2000,
        "seed": 1,
        "images": None,
        "labels": None,
        "test_images": None,
        "test_labels": None,
    },
    "target_accuracy": 0.72,
    "max_rounds": 100,
    "output_dir": None,
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigurationError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "ranges" and isinstance(v, dict) and "path" not in v:
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls(_merge(DEFAULTS, d))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def with_(self, **sections) -> "ExperimentConfig":
        """Copy with top-level keys or dotted section keys replaced, e.g.
        ``with_(seed=3, **{"scheduler.H": 20})``."""
        raw = copy.deepcopy(self.raw)
        for key, v in sections.items():
            parts = key.split(".")
            node = raw
            for p in parts[:-1]:
                node = node[p]
            if parts[-1] not in node:
                raise ConfigurationError(f"unknown config key {key!r}")
            node[parts[-1]] = v
        cfg = ExperimentConfig(raw)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def cost_params(self) -> CostParams:
        return CostParams.from_dict(self.raw["cost"])

    def experiment(self) -> dict:
        """The config without ``output_dir``: where results go is not part
        of the experiment, so it does not enter the hash or the manifest."""
        return {k: v for k, v in self.raw.items() if k != "output_dir"}

    def to_json(self) -> str:
        return json.dumps(self.experiment(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def validate(self) -> None:
        s = self.raw["scheduler"]
        t = self.raw["topology"]
        if s["policy"] not in POLICIES:
            raise ConfigurationError(f"unknown scheduling policy {s['policy']!r}")
        n = t.get("n_devices")
        if s["policy"] in ("vkc", "ikc") and s["H"] != s["K"] * s["h"]:
            raise ConfigurationError(f"H={s['H']} must equal K*h={s['K']}*{s['h']} for {s['policy']}")
        if s["H"] < 1 or (n is not None and s["H"] > n):
            raise ConfigurationError(f"H={s['H']} must lie in [1, n_devices]")
        if not 0.0 <= self.raw["target_accuracy"] < 1.0:
            raise ConfigurationError("target_accuracy must lie in [0, 1)")
        if self.raw["max_rounds"] < 1:
            raise ConfigurationError("max_rounds must be >= 1")
        if self.raw["learner"]["beta"] <= 0:
            raise ConfigurationError("learning rate beta must be > 0")
        if self.raw["data"]["source"] not in ("synthetic", "idx"):
            raise ConfigurationError(f"unknown data source {self.raw['data']['source']!r}")
        self.cost_params()  # raises on bad cost values
