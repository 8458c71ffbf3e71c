"""Synthetic benchmark where the class is carried only by abundance.

Each sample holds records from ``n_taxa`` prototype embeddings (every taxon
at least once, the rest drawn uniformly). A record's embedding is its
prototype plus ``sigma`` Gaussian noise; its abundance is log-normal. In
class-1 samples the abundances of the signal taxon's records are multiplied
by ``beta``. Embeddings are drawn the same way for both classes, so the
unweighted mean of unique records carries no class information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from .aggregate import Sample
from .errors import ConfigError


@dataclass
class SynthConfig:
    n_samples: int = 200
    min_records: int = 64
    max_records: int = 128
    dim: int = 32
    n_taxa: int = 8
    signal_taxon: int = 0
    beta: float = 8.0
    sigma: float = 0.3
    abundance_sigma: float = 1.0
    positive_fraction: float = 0.5
    seed: int = 0

    def validate(self, allow_null: bool = False) -> "SynthConfig":
        """Check ranges. ``allow_null`` admits beta == 1 (no planted signal)."""
        if self.n_samples < 2:
            raise ConfigError("n_samples", "must be >= 2")
        if self.dim < 1:
            raise ConfigError("dim", "must be >= 1")
        if self.n_taxa < 2:
            raise ConfigError("n_taxa", "must be >= 2")
        if not 0 <= self.signal_taxon < self.n_taxa:
            raise ConfigError("signal_taxon", f"must be in [0, {self.n_taxa})")
        if self.min_records < self.n_taxa:
            raise ConfigError("min_records", "must be >= n_taxa so every taxon is present")
        if self.max_records < self.min_records:
            raise ConfigError("max_records", "must be >= min_records")
        if not (self.beta > 1 or (allow_null and self.beta == 1)):
            raise ConfigError("beta", "abundance boost must be > 1")
        if self.sigma < 0:
            raise ConfigError("sigma", "must be >= 0")
        if self.abundance_sigma < 0:
            raise ConfigError("abundance_sigma", "must be >= 0")
        if not 0 < self.positive_fraction < 1:
            raise ConfigError("positive_fraction", "must be in (0, 1)")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown synth config key")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def make_samples(config: SynthConfig, allow_null: bool = False) -> list[Sample]:
    config.validate(allow_null)
    rng = np.random.default_rng(config.seed)
    prototypes = rng.standard_normal((config.n_taxa, config.dim))
    n_pos = int(round(config.positive_fraction * config.n_samples))
    labels = rng.permutation(np.r_[np.zeros(config.n_samples - n_pos, int), np.ones(n_pos, int)])
    width = len(str(config.n_samples - 1))
    samples = []
    for i, label in enumerate(labels):
        n = int(rng.integers(config.min_records, config.max_records + 1))
        taxa = np.r_[np.arange(config.n_taxa), rng.integers(0, config.n_taxa, n - config.n_taxa)]
        taxa = rng.permutation(taxa)
        emb = prototypes[taxa] + config.sigma * rng.standard_normal((n, config.dim))
        abundance = rng.lognormal(0.0, config.abundance_sigma, n)
        if label == 1:
            abundance = np.where(taxa == config.signal_taxon, abundance * config.beta, abundance)
        samples.append(Sample(f"s{i:0{width}d}", emb, abundance, int(label), {"taxa": taxa}))
    return samples


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_dataset(samples: list[Sample], out_dir, manifest_name: str = "manifest.tsv") -> Path:
    """Write samples in the manifest + per-sample record-file format."""
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    lines = ["sample_id\tlabel\tpath"]
    for s in samples:
        rel = f"records/{s.id}.tsv"
        body = "".join("\t".join([_fmt(a), *map(_fmt, e)]) + "\n" for a, e in zip(s.abundances, s.embeddings))
        (out / rel).write_text(body)
        label = "" if s.label is None else str(s.label)
        lines.append(f"{s.id}\t{label}\t{rel}")
    manifest = out / manifest_name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def generate(config: SynthConfig, out_dir, allow_null: bool = False) -> Path:
    """Generate a labeled dataset on disk; returns the manifest path."""
    samples = make_samples(config, allow_null)
    manifest = write_dataset(samples, out_dir)
    (Path(out_dir) / "synth_config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
