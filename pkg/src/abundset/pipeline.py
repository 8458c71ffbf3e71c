"""One experiment cell: aggregate -> train -> evaluate, plus the run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np

from .aggregate import DEFAULT_BUDGET, STRATEGIES, Aggregator, Sample
from .classify import FcnnConfig, ForestConfig, TrainedModel, fcnn_train, forest_train
from .errors import ConfigError
from .metrics import MetricsReport, confusion, format_table, score
from .numerics import ParamStore
from .setattn import SetTransformerConfig

CLASSIFIERS = ("fcnn", "forest")


def _from_dict(cls, d: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    return cls(**d)


@dataclass
class RunConfig:
    strategy: str = "weighted-set-transformer"
    classifier: str = "fcnn"
    seed: int = 0
    out_dir: str = "runs"
    train_fraction: float = 0.8
    budget: int = DEFAULT_BUDGET
    set_transformer: SetTransformerConfig = field(default_factory=SetTransformerConfig)
    fcnn: FcnnConfig = field(default_factory=FcnnConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    label_rule: dict | None = None

    def validate(self) -> "RunConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"{self.strategy!r} is not one of {', '.join(STRATEGIES)}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError("classifier", f"{self.classifier!r} is not one of {', '.join(CLASSIFIERS)}")
        if self.budget < 1:
            raise ConfigError("budget", "must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction", "must be in (0, 1)")
        self.set_transformer.validate()
        self.fcnn.validate()
        self.forest.validate()
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        nested = {
            "set_transformer": (SetTransformerConfig, d.pop("set_transformer", {})),
            "fcnn": (FcnnConfig, d.pop("fcnn", {})),
            "forest": (ForestConfig, d.pop("forest", {})),
        }
        cfg = _from_dict(cls, d, "run")
        for name, (sub, values) in nested.items():
            setattr(cfg, name, _from_dict(sub, values, name))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self) -> "RunConfig":
        """Propagate the run seed to every component."""
        self.fcnn.seed = self.seed
        self.forest.seed = self.seed
        return self


@dataclass
class CellResult:
    strategy: str
    classifier: str
    metrics: MetricsReport
    model: TrainedModel
    predictions: list[dict]
    embeddings: dict[str, np.ndarray]

    def report(self, config: RunConfig, extra: dict | None = None) -> dict:
        truth = [p["truth"] for p in self.predictions]
        pred = [p["predicted"] for p in self.predictions]
        cc = confusion(pred, truth, classes=list(range(self.model.n_classes)))
        doc = {
            "strategy": self.strategy,
            "classifier": self.classifier,
            "metrics": self.metrics.to_dict(),
            "n_test": len(truth),
            "truth_counts": {str(c): int(sum(t == c for t in truth)) for c in cc.classes},
            "predicted_counts": {str(c): int(sum(p == c for p in pred)) for c in cc.classes},
            "confusion": asdict(cc),
            "predictions": self.predictions,
            "config": config.to_dict(),
        }
        if self.model.kind == "fcnn":
            doc["training_loss"] = self.model.history
        if extra:
            doc.update(extra)
        return doc


def build_aggregator(strategy: str, config: RunConfig, input_dim: int) -> Aggregator:
    st = SetTransformerConfig(**{**config.set_transformer.to_dict(), "input_dim": input_dim}).validate()
    params = ParamStore(config.seed, config.fcnn.dtype) if strategy in ("set-transformer", "weighted-set-transformer") else None
    return Aggregator(strategy, st, params, config.budget)


def run_cell(train: list[Sample], test: list[Sample], config: RunConfig) -> CellResult:
    """Train ``config.classifier`` on ``config.strategy`` embeddings and score the test set.

    For the forest with a transformer strategy the aggregator is first trained
    jointly with an FCNN head (when ``fcnn.joint_training``) and then frozen.
    """
    return run_cells(train, test, config, [config.classifier])[0]


def run_cells(train: list[Sample], test: list[Sample], config: RunConfig,
              classifiers=CLASSIFIERS) -> list[CellResult]:
    """Every requested classifier for ``config.strategy``.

    The FCNN (and with it any joint aggregator training) runs once and is
    shared, so each result equals the matching :func:`run_cell` call.
    """
    config.validate()
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ConfigError("classifier", f"{c!r} is not one of {', '.join(CLASSIFIERS)}")
    y_train = np.array([s.label for s in train])
    agg = build_aggregator(config.strategy, config, train[0].dim)
    fcnn_model = None
    if "fcnn" in classifiers or (agg.trainable and config.fcnn.joint_training):
        fcnn_model = fcnn_train(train, y_train, config.fcnn, agg)
    results = []
    for c in classifiers:
        model = fcnn_model if c == "fcnn" else forest_train(train, y_train, config.forest, agg)
        results.append(_evaluate(model, agg, train, test, config.strategy, c))
    return results


def _evaluate(model: TrainedModel, agg: Aggregator, train, test, strategy: str, classifier: str) -> CellResult:
    y_test = np.array([s.label for s in test])
    probs = model.predict_proba(test)
    pred = np.argmax(probs, axis=1)
    metrics = score(pred, y_test)
    predictions = [{"sample_id": s.id, "truth": int(t), "predicted": int(p),
                    "probabilities": [float(v) for v in pr]}
                   for s, t, p, pr in zip(test, y_test, pred, probs)]
    embeddings = {s.id: agg(s) for s in [*train, *test]}
    return CellResult(strategy, classifier, metrics, model, predictions, embeddings)


def write_cell(result: CellResult, config: RunConfig, out_dir, splits: dict[str, str],
               labels: dict[str, int], extra: dict | None = None) -> dict[str, Path]:
    """Write report JSON, table text, model JSON and an embeddings TSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{result.strategy}_{result.classifier}"
    paths = {
        "report": out / f"report_{stem}.json",
        "table": out / f"report_{stem}.txt",
        "model": out / f"model_{stem}.json",
        "embeddings": out / f"embeddings_{stem}.tsv",
    }
    doc = result.report(config, extra)
    paths["report"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths["table"].write_text(format_table([(result.strategy, result.classifier, result.metrics)]))
    result.model.save(paths["model"])
    write_embeddings(paths["embeddings"], result.embeddings, labels, splits)
    return paths


def write_embeddings(path, embeddings: dict[str, np.ndarray], labels: dict[str, int], splits: dict[str, str]):
    dim = len(next(iter(embeddings.values())))
    lines = ["\t".join(["sample_id", "label", "split", *(f"v{i + 1}" for i in range(dim))])]
    for sid, vec in embeddings.items():
        lab = labels.get(sid)
        lines.append("\t".join([sid, "" if lab is None else str(lab), splits.get(sid, ""),
                                *(format(float(v), ".9g") for v in vec)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings(path) -> tuple[list[str], np.ndarray, list[int | None], list[str]]:
    from .dataio import read_table

    rows = read_table(path)
    ids = [r["sample_id"] for r in rows]
    labels = [int(r["label"]) if r["label"] else None for r in rows]
    splits = [r.get("split", "") for r in rows]
    vcols = [k for k in (rows[0] if rows else {}) if k.startswith("v")]
    x = np.array([[float(r[k]) for k in vcols] for r in rows])
    return ids, x, labels, splits


def merge_reports(paths) -> str:
    rows = []
    for p in paths:
        doc = json.loads(Path(p).read_text())
        rows.append((doc["strategy"], doc["classifier"], MetricsReport(**doc["metrics"])))
    order = {s: i for i, s in enumerate(STRATEGIES)}
    rows.sort(key=lambda r: (CLASSIFIERS.index(r[1]) if r[1] in CLASSIFIERS else 9, order.get(r[0], 9)))
    return format_table(rows)
