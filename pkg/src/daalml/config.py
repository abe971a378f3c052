"""JSON experiment configuration: defaults, validation and a content hash.

Example::

    {
      "seed": 0,
      "data": {"synthetic": {"num_classes": 8, "modes_per_class": 3}, "test_fraction": 0.25},
      "network": {"hidden_dims": [64, 32], "embedding_dim": 8},
      "train": {"loss": "softmax+daal", "epochs": 30},
      "daal": {"delta": 1.5, "tau": 0.001, "eta": 5},
      "metrics": {"ks": [1, 2, 4, 8, 16, 32]},
      "compare": {"seeds": [1, 2, 3, 4, 5], "arms": ["softmax", "softmax+daal"]},
      "output_dir": "runs/default"
    }

Unknown keys are rejected.  Omitting ``data`` selects the default synthetic
dataset; a synthetic spec without its own ``seed`` inherits the top-level one.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .daal import DaalConfig, TotalLossWeights
from .data import SyntheticSpec
from .losses import MarginSpec
from .model import LOSS_NAMES, NetworkSpec, TrainConfig
from .metrics import DEFAULT_KS


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "data": {"synthetic": {}, "csv": None, "test_fraction": 0.25},
    "network": {"hidden_dims": [64, 32], "embedding_dim": 8, "dropout_rates": None},
    "train": {
        "loss": "softmax+daal",
        "lr": 0.01,
        "momentum": 0.9,
        "batch_size": 64,
        "epochs": 30,
        "lambda_s": 1.0,
        "lambda_daal": 0.01,
        "margin": None,
        "triplet_margin": 1.0,
        "center_margin": 1.0,
        "center_alpha": 0.5,
    },
    "daal": {"delta": 1.5, "tau": 0.001, "eta": 5.0, "lambda_inter": 1.0,
             "init_length": 1.0, "intra_mode": "segment"},
    "metrics": {"ks": list(DEFAULT_KS), "restarts": 8, "max_iter": 100, "normalize": False},
    "compare": {"seeds": [1, 2, 3, 4, 5], "arms": ["softmax", "softmax+daal"]},
    "output_dir": "runs/default",
}

SYNTHETIC_DEFAULTS = SyntheticSpec().to_dict()


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {path}{key}")
        if isinstance(defaults[key], dict) and key != "synthetic":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be an object")
            out[key] = _merge(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve(raw: dict | None = None, seed: int | None = None) -> dict:
    """Inject defaults, apply a seed override and validate. Returns the fully
    resolved config as plain JSON data."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw, "")
    if seed is not None:
        cfg["seed"] = int(seed)
    data = cfg["data"]
    has_csv = data.get("csv") is not None
    has_syn = "synthetic" in raw.get("data", {}) or not has_csv
    if has_csv and "synthetic" in raw.get("data", {}):
        raise ConfigError("data: give exactly one of 'synthetic' or 'csv'")
    if has_csv:
        data["synthetic"] = None
        if not Path(data["csv"]).is_file():
            raise ConfigError(f"data.csv: file not found: {data['csv']}")
    elif has_syn:
        syn = data["synthetic"] or {}
        if not isinstance(syn, dict):
            raise ConfigError("data.synthetic must be an object")
        unknown = set(syn) - set(SYNTHETIC_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown key data.synthetic.{sorted(unknown)[0]}")
        merged = dict(SYNTHETIC_DEFAULTS, seed=cfg["seed"])
        merged.update(syn)
        data["synthetic"] = merged
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Construct every typed object once so their own checks run."""
    try:
        if cfg["data"]["synthetic"] is not None:
            SyntheticSpec(**cfg["data"]["synthetic"])
        if not 0 < float(cfg["data"]["test_fraction"]) < 1:
            raise ConfigError("data.test_fraction must lie in (0, 1)")
        net = cfg["network"]
        NetworkSpec(1, net["hidden_dims"], net["embedding_dim"], 2, net["dropout_rates"])
        train_config(cfg)
        for loss in cfg["compare"]["arms"]:
            if loss not in LOSS_NAMES:
                raise ConfigError(f"compare.arms: unknown loss {loss!r}")
        if not cfg["compare"]["seeds"]:
            raise ConfigError("compare.seeds must be non-empty")
        if any(int(k) < 1 for k in cfg["metrics"]["ks"]):
            raise ConfigError("metrics.ks must be positive")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg: dict, loss: str | None = None, seed: int | None = None) -> TrainConfig:
    t = cfg["train"]
    margin = MarginSpec(**t["margin"]) if t["margin"] else None
    return TrainConfig(
        lr=float(t["lr"]), momentum=float(t["momentum"]), batch_size=int(t["batch_size"]),
        epochs=int(t["epochs"]), seed=int(cfg["seed"] if seed is None else seed),
        loss=loss or t["loss"],
        weights=TotalLossWeights(float(t["lambda_s"]), float(t["lambda_daal"])),
        daal=DaalConfig(**cfg["daal"]), margin=margin,
        triplet_margin=float(t["triplet_margin"]), center_margin=float(t["center_margin"]),
        center_alpha=float(t["center_alpha"]),
    )


def network_spec(cfg: dict, input_dim: int, num_classes: int) -> NetworkSpec:
    net = cfg["network"]
    return NetworkSpec(input_dim, list(net["hidden_dims"]), int(net["embedding_dim"]),
                       num_classes, net["dropout_rates"])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def load(path, seed: int | None = None) -> dict:
    if path is None:
        return resolve({}, seed)
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return resolve(raw, seed)
