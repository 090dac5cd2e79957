"""Experiment configuration, seed streams, and system checkpoints.

Configs are flat JSON documents validated against a per-task key set;
unknown keys are rejected before any compute.  Semantically identical
configs (same resolved values) hash identically: the hash covers the
canonical JSON of the config with defaults filled in.

All randomness descends from one root seed through named substreams, so
initialisation, data order, collection noise, and perturbation draws are
independently reproducible.
"""

from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np

from . import brains as br
from . import topology as tp
from .training import RATE_TABLE


class ConfigError(ValueError):
    pass


TASKS = (
    "lissajous-single",
    "lissajous-switching",
    "locomotion-forward",
    "locomotion-switching",
    "timeseries",
    "memory",
    "mnist-draw",
    "mnist-readout",
)

_COMMON_KEYS = {"task", "seed", "out", "rates", "env_enabled", "threads"}

_TASK_KEYS = {
    "lissajous-single": {"updates", "segment", "alpha", "beta", "delta",
                         "amplitude_init"},
    "lissajous-switching": {"updates", "segment", "alpha", "beta", "delta",
                            "amplitude_init", "wind_magnitude", "fixed_slot",
                            "alternate", "pre_updates"},
    "locomotion-forward": {"total_steps", "segment", "amplitude_init"},
    "locomotion-switching": {"total_steps", "segment", "amplitude_init",
                             "wind_magnitude", "wind_period", "pre_total_steps"},
    "timeseries": {"kind", "order", "tau", "length", "washout", "updates",
                   "brain", "topology", "n_mov"},
    "memory": {"delay", "tau", "length", "washout", "updates", "brain",
               "topology", "n_mov"},
    "mnist-draw": {"topology", "n_mov", "brain", "epochs", "batch_size",
                   "steps", "train_images", "per_label", "data_root"},
    "mnist-readout": {"topology", "n_mov", "epochs", "batch_size",
                      "train_images", "with_body", "data_root"},
}

_DEFAULTS = {
    "seed": 0,
    "out": "out",
    "threads": 1,
    "lissajous-single": {"updates": 400, "segment": 100, "alpha": 1.0,
                         "beta": 2.0, "delta": 0.0, "amplitude_init": 0.5},
    "lissajous-switching": {"updates": 400, "segment": 100, "alpha": 1.0,
                            "beta": 2.0, "delta": 0.0, "amplitude_init": 0.5,
                            "wind_magnitude": 1.0, "fixed_slot": None,
                            "alternate": None, "pre_updates": 400},
    "locomotion-forward": {"total_steps": 24000, "segment": 200,
                           "amplitude_init": 0.4},
    "locomotion-switching": {"total_steps": 8000, "segment": 200,
                             "amplitude_init": 0.4, "wind_magnitude": -1.0,
                             "wind_period": 5.0, "pre_total_steps": 24000},
    "timeseries": {"kind": "expanded-narma", "order": 2, "tau": 20,
                   "length": 200, "washout": 50, "updates": 60,
                   "brain": "lil", "topology": "double-circle", "n_mov": 17},
    "memory": {"delay": 8, "tau": 20, "length": 200, "washout": 50,
               "updates": 60, "brain": "lil", "topology": "double-circle",
               "n_mov": 17},
    "mnist-draw": {"topology": "multiple-circle", "n_mov": 17, "brain": "mlp",
                   "epochs": 40, "batch_size": 50, "steps": 100,
                   "train_images": 100, "per_label": 10, "data_root": None},
    "mnist-readout": {"topology": "double-circle", "n_mov": 17, "epochs": 20,
                      "batch_size": 50, "train_images": 10000,
                      "with_body": True, "data_root": None},
}


def resolve_config(doc):
    """Validate and fill defaults; returns the canonical config dict."""
    if "task" not in doc:
        raise ConfigError("config requires a 'task'")
    task = doc["task"]
    if task not in TASKS:
        raise ConfigError(f"unknown task '{task}' (known: {', '.join(TASKS)})")
    allowed = _COMMON_KEYS | _TASK_KEYS[task]
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys for {task}: {sorted(unknown)}")
    out = {
        "task": task,
        "seed": int(doc.get("seed", _DEFAULTS["seed"])),
        "out": doc.get("out", _DEFAULTS["out"]),
        "threads": int(doc.get("threads", _DEFAULTS["threads"])),
    }
    for key, default in _DEFAULTS[task].items():
        out[key] = doc.get(key, default)
    if "rates" in doc:
        rates = doc["rates"]
        known_classes = set().union(*(set(v) for v in RATE_TABLE.values()))
        bad = set(rates) - known_classes
        if bad:
            raise ConfigError(f"unknown learning-rate classes: {sorted(bad)}")
        out["rates"] = {k: float(v) for k, v in rates.items()}
    if "env_enabled" in doc:
        out["env_enabled"] = bool(doc["env_enabled"])
    return out


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def seed_stream(root_seed, name):
    """Named, independent substream of the root seed."""
    tag = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence((int(root_seed), tag)))


def stream_seed(root_seed, name):
    return int(seed_stream(root_seed, name).integers(2**63))


# ---------------------------------------------------------------- checkpoints

def system_to_doc(topology, body, brain_docs, meta=None):
    return {
        "meta": meta or {},
        "topology": json.loads(topology.to_json()),
        "body": {k: np.asarray(v).tolist() for k, v in body.items()},
        "brains": brain_docs,
    }


def system_from_doc(doc):
    topology = tp.Topology.from_json(json.dumps(doc["topology"]))
    body = {k: np.array(v, dtype=float) for k, v in doc["body"].items()}
    brains = {name: br.brain_from_doc(bd) for name, bd in doc["brains"].items()}
    return topology, body, brains, doc.get("meta", {})


def save_system(path, topology, body, brains, meta=None):
    docs = {name: br.brain_to_doc(b) for name, b in brains.items()}
    with open(path, "w") as fh:
        json.dump(system_to_doc(topology, body, docs, meta), fh)


def load_system(path):
    with open(path) as fh:
        return system_from_doc(json.load(fh))
