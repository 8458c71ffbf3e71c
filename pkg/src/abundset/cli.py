"""Command-line entry point: ``abundset {synth,run,project,report}``.

Exit codes: 0 success, 1 I/O or data error, 2 configuration error,
3 numeric failure. ``ABUNDSET_SEED`` sets the default ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import dataio, pipeline, project, synth
from .aggregate import STRATEGIES
from .errors import AbundsetError, ConfigError, DataError

log = logging.getLogger("abundset")

SEED_ENV = "ABUNDSET_SEED"


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("seed", f"{SEED_ENV}={raw!r} is not an integer") from None


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", f"{path}: top level must be an object")
    return doc


def _override(target: dict, args, mapping: dict[str, str]):
    """Copy non-None flag values into ``target`` (dotted keys address nested sections)."""
    for attr, key in mapping.items():
        value = getattr(args, attr)
        if value is None:
            continue
        node = target
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_FLAGS = {"n_samples": "n_samples", "dim": "dim", "n_taxa": "n_taxa", "beta": "beta",
               "sigma": "sigma", "min_records": "min_records", "max_records": "max_records",
               "signal_taxon": "signal_taxon", "seed": "seed"}


def cmd_synth(args) -> int:
    values = _load_json(args.config)
    _override(values, args, SYNTH_FLAGS)
    values.setdefault("seed", _default_seed())
    config = synth.SynthConfig.from_dict(values)
    manifest = synth.generate(config, args.out)
    print(manifest)
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

RUN_FLAGS = {
    "seed": "seed", "out": "out_dir", "budget": "budget", "train_fraction": "train_fraction",
    "model_dim": "set_transformer.model_dim", "heads": "set_transformer.heads",
    "inducing_points": "set_transformer.inducing_points", "pma_seeds": "set_transformer.pma_seeds",
    "encoder_blocks": "set_transformer.encoder_blocks",
    "epochs": "fcnn.epochs", "hidden_dim": "fcnn.hidden_dim", "lr": "fcnn.lr",
    "batch_size": "fcnn.batch_size", "dtype": "fcnn.dtype", "n_trees": "forest.n_trees",
}


def _expand(choice: str | None, default: str, universe) -> list[str]:
    value = choice or default
    return list(universe) if value == "all" else [value]


def cmd_run(args) -> int:
    values = _load_json(args.config)
    _override(values, args, RUN_FLAGS)
    if args.no_joint:
        values.setdefault("fcnn", {})["joint_training"] = False
    values.setdefault("seed", _default_seed())
    strategies = _expand(args.strategy, values.pop("strategy", "weighted-set-transformer"), STRATEGIES)
    classifiers = _expand(args.classifier, values.pop("classifier", "fcnn"), pipeline.CLASSIFIERS)
    base = pipeline.RunConfig.from_dict(values)
    rule = dataio.LabelRule.from_dict(base.label_rule) if base.label_rule else None
    for s in strategies:
        for c in classifiers:
            pipeline.RunConfig.from_dict({**base.to_dict(), "strategy": s, "classifier": c}).validate()

    if args.manifest:
        data = dataio.load_dataset(args.manifest, rule)
        labeled = {s.id: s.label for s in data if s.label is not None}
        split = dataio.stratified_split(labeled, base.train_fraction, base.seed)
        by_id = data.by_id()
        train = [by_id[i] for i in split.train]
        test = [by_id[i] for i in split.test]
        sources = {"manifest": str(args.manifest), "excluded": data.excluded, "rejected": data.rejected}
    elif args.train_manifest and args.test_manifest:
        split, tr, te = dataio.cross_study_split(args.train_manifest, args.test_manifest, rule)
        train = [s for s in tr if s.label is not None]
        test = [s for s in te if s.label is not None]
        sources = {"train_manifest": str(args.train_manifest), "test_manifest": str(args.test_manifest),
                   "excluded": tr.excluded + te.excluded, "rejected": tr.rejected + te.rejected}
    else:
        raise ConfigError("manifest", "give --manifest or both --train-manifest and --test-manifest")

    splits = {s.id: "train" for s in train} | {s.id: "test" for s in test}
    labels = {s.id: s.label for s in [*train, *test]}
    extra = {"data": {**sources, "n_train": len(train), "n_test": len(test),
                      "split": {"train": [s.id for s in train], "test": [s.id for s in test]}}}
    out = Path(base.out_dir)
    for s in strategies:
        log.info("running %s with %s", s, ", ".join(classifiers))
        cfg = pipeline.RunConfig.from_dict({**base.to_dict(), "strategy": s, "classifier": classifiers[0]})
        for result in pipeline.run_cells(train, test, cfg.with_seed(), classifiers):
            c = result.classifier
            cell_cfg = pipeline.RunConfig.from_dict({**cfg.to_dict(), "classifier": c})
            paths = pipeline.write_cell(result, cell_cfg, out, splits, labels, extra)
            m = result.metrics
            print(f"{s}\t{c}\taccuracy={m.accuracy:.4f}\tmacro_f1={m.macro_f1:.4f}\t{paths['report']}")
    return 0


# ---------------------------------------------------------------------------
# project / report
# ---------------------------------------------------------------------------


def cmd_project(args) -> int:
    ids, x, labels, splits = pipeline.read_embeddings(args.embeddings)
    if args.split != "all":
        keep = [i for i, s in enumerate(splits) if s == args.split]
        ids, x, labels = [ids[i] for i in keep], x[keep], [labels[i] for i in keep]
    seed = args.seed if args.seed is not None else _default_seed()
    config = project.TsneConfig(perplexity=args.perplexity, iterations=args.iterations, seed=seed)
    result = project.tsne(x, config)
    out = Path(args.out) if args.out else Path(args.embeddings).with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    svg, tsv = project.emit_plot(result.coordinates, labels, out, ids)
    print(f"{svg}\t{tsv}\tkl={result.kl:.6f}")
    return 0


def cmd_report(args) -> int:
    table = pipeline.merge_reports(args.reports)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abundset", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-signal dataset")
    p.add_argument("--config", help="JSON file of SynthConfig fields")
    p.add_argument("--out", default="synth_data")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-taxa", dest="n_taxa", type=int)
    p.add_argument("--signal-taxon", dest="signal_taxon", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--min-records", dest="min_records", type=int)
    p.add_argument("--max-records", dest="max_records", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="aggregate, train and evaluate")
    p.add_argument("--config", help="JSON file of RunConfig fields")
    p.add_argument("--manifest", help="single study, stratified split")
    p.add_argument("--train-manifest", dest="train_manifest")
    p.add_argument("--test-manifest", dest="test_manifest")
    p.add_argument("--strategy", choices=[*STRATEGIES, "all"])
    p.add_argument("--classifier", choices=[*pipeline.CLASSIFIERS, "all"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--budget", type=int, help="repetition budget for set-transformer")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--model-dim", dest="model_dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--inducing-points", dest="inducing_points", type=int)
    p.add_argument("--pma-seeds", dest="pma_seeds", type=int)
    p.add_argument("--encoder-blocks", dest="encoder_blocks", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--no-joint", dest="no_joint", action="store_true",
                   help="keep transformer parameters at initialization")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("project", help="t-SNE of an embeddings TSV to SVG + TSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", help="SVG path (TSV written alongside)")
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--perplexity", type=float, default=5.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("report", help="merge report JSONs into one table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AbundsetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
