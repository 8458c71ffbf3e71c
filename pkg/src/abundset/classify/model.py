"""Trained model container and its versioned JSON serialization."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..aggregate import Aggregator
from ..errors import ConfigError, DataError
from ..numerics import ParamStore
from ..setattn import SetTransformerConfig

FORMAT = "abundset.model"
VERSION = 1


def check_labels(labels: np.ndarray, n_classes: int | None = None) -> int:
    if labels.ndim != 1 or labels.size == 0:
        raise DataError("labels must be a non-empty 1-D sequence")
    if labels.min() < 0:
        raise DataError("labels must be non-negative class indices")
    if len(np.unique(labels)) < 2:
        raise DataError(f"degenerate labels: only class {int(labels[0])} present in training data")
    return max(int(labels.max()) + 1, n_classes or 2)


@dataclass
class TrainedModel:
    kind: str
    aggregator: Aggregator | None
    n_classes: int
    fcnn_config: Any = None
    head: ParamStore | None = None
    history: list[float] = field(default_factory=list)
    forest_config: Any = None
    trees: list[dict] | None = None
    input_dim: int | None = None

    def predict_proba(self, inputs) -> np.ndarray:
        if self.kind == "fcnn":
            from .fcnn import fcnn_predict_proba
            return fcnn_predict_proba(self, inputs)
        from .forest import forest_predict_proba
        return forest_predict_proba(self, inputs)

    def predict(self, inputs) -> np.ndarray:
        return np.argmax(self.predict_proba(inputs), axis=1)

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        agg = self.aggregator
        out = {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "aggregator": None if agg is None else {
                "strategy": agg.strategy,
                "budget": agg.budget,
                "set_transformer": agg.config.to_dict() if agg.config else None,
                "params": _encode_store(agg.params) if agg.params is not None else None,
            },
        }
        if self.kind == "fcnn":
            out["fcnn"] = {"config": self.fcnn_config.to_dict(), "history": self.history,
                           "params": _encode_store(self.head)}
        else:
            out["forest"] = {"config": self.forest_config.to_dict(), "input_dim": self.input_dim,
                             "trees": self.trees}
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        from .fcnn import FcnnConfig
        from .forest import ForestConfig

        if doc.get("format") != FORMAT:
            raise DataError(f"not a model file (format={doc.get('format')!r})")
        if doc.get("version") != VERSION:
            raise DataError(f"unsupported model version {doc.get('version')!r}")
        agg = None
        if doc["aggregator"] is not None:
            a = doc["aggregator"]
            cfg = SetTransformerConfig(**a["set_transformer"]) if a["set_transformer"] else None
            params = _decode_store(a["params"]) if a["params"] else None
            agg = Aggregator(a["strategy"], cfg, params, a["budget"])
        if doc["kind"] == "fcnn":
            f = doc["fcnn"]
            return cls("fcnn", agg, doc["n_classes"], fcnn_config=FcnnConfig(**f["config"]),
                       head=_decode_store(f["params"]), history=list(f["history"]))
        if doc["kind"] == "forest":
            f = doc["forest"]
            return cls("forest", agg, doc["n_classes"], forest_config=ForestConfig(**f["config"]),
                       trees=f["trees"], input_dim=f["input_dim"])
        raise ConfigError("kind", f"unknown model kind {doc['kind']!r}")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read model {path}: {exc}") from exc
        return cls.from_dict(doc)


def _encode_store(store: ParamStore) -> dict:
    return {
        "seed": store.seed,
        "dtype": store.dtype.name,
        "tensors": {
            name: {"shape": list(t.shape),
                   "data": base64.b64encode(np.ascontiguousarray(t.data, dtype="<" + t.dtype.str[1:]).tobytes()).decode()}
            for name, t in store.items()
        },
    }


def _decode_store(doc: dict) -> ParamStore:
    store = ParamStore(doc["seed"], doc["dtype"])
    dt = np.dtype(doc["dtype"]).newbyteorder("<")
    store.load_arrays({
        name: np.frombuffer(base64.b64decode(t["data"]), dtype=dt).reshape(t["shape"])
        for name, t in doc["tensors"].items()
    })
    return store
