"""Command-line entry point.

Subcommands: ingest (align sources into an ensemble container), train
(any combination method), eval (word similarity / analogy), gradcheck
(finite-difference verification), export (checkpoint -> text
embedding) and report (merge evaluation CSVs).

Exit codes: 0 success, 1 usage/config, 2 data/parse, 3 training,
4 evaluation.  All randomness flows from the single run seed: each
trainer derives its init / shuffle / dropout / split streams from it
in that documented order.
"""

import argparse
import csv
import hashlib
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analogy, baselines, kernels, wordsim
from .aeme import train_caeme, train_daeme
from .errors import (ConfigError, DataError, EvaluationError, MetaEmbError,
                     TrainingError)
from .gradcheck import THRESHOLD, gradcheck_passed, run_gradcheck
from .mtl import load_word_pairs, train_mtl
from .net import FeedForwardNet, Layer, load_checkpoint, save_checkpoint
from .runconfig import (RunConfig, load_config_file, parse_config_text,
                        sha256_file, write_manifest)
from .store import (EmbeddingEnsemble, align_vocabulary, export_meta,
                    load_ensemble, load_meta, load_text_embeddings,
                    save_ensemble)
from .tae import mte_meta, tae_meta, train_tae

logger = logging.getLogger(__name__)

CACHE_ENV = "METAEMB_CACHE"


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; route through ConfigError
    # so every usage problem maps to exit code 1.
    def error(self, message):
        raise ConfigError(message)


def _parse_source_spec(spec):
    """NAME=PATH[:FORMAT] -> (name, path, format)."""
    if "=" not in spec:
        raise ConfigError(f"source spec {spec!r} must be NAME=PATH[:FORMAT]")
    name, _, rest = spec.partition("=")
    path, _, fmt = rest.rpartition(":")
    if not path:
        path, fmt = rest, "word2vec"
    return name, path, fmt


def _parse_dataset_spec(spec):
    """NAME=PATH[:MIN:MAX] -> (name, path, (min, max) | None)."""
    if "=" not in spec:
        raise ConfigError(f"dataset spec {spec!r} must be NAME=PATH[:MIN:MAX]")
    name, _, rest = spec.partition("=")
    parts = rest.split(":")
    if len(parts) == 1:
        return name, parts[0], None
    if len(parts) == 3:
        try:
            return name, parts[0], (float(parts[1]), float(parts[2]))
        except ValueError:
            raise ConfigError(f"dataset spec {spec!r}: MIN/MAX must be numbers") from None
    raise ConfigError(f"dataset spec {spec!r} must be NAME=PATH or NAME=PATH:MIN:MAX")


def build_parser():
    parser = _Parser(prog="metaemb",
                     description="meta-embedding training and evaluation toolkit")
    parser.add_argument("--version", action="version", version=f"metaemb {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[], help="align sources into an ensemble container")
    p.add_argument("--source", action="append", default=[], metavar="NAME=PATH[:FORMAT]",
                   help="embedding source (format: word2vec | glove; default word2vec)")
    p.add_argument("--policy", default="intersection",
                   choices=("intersection", "union-zero-fill"))
    p.add_argument("--out", help=f"output .npz (default: content-keyed file under ${CACHE_ENV})")

    p = sub.add_parser("train", help="train/build a meta-embedding")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")
    p.add_argument("--method", help="conc | avg | svd | 1ton | caeme | daeme | tae | mte | mtl")
    p.add_argument("--source", action="append", default=[], metavar="NAME=PATH[:FORMAT]")
    p.add_argument("--ensemble", help="pre-ingested ensemble .npz")
    p.add_argument("--dataset", action="append", default=[], metavar="NAME=PATH[:MIN:MAX]")
    p.add_argument("--held-out", dest="held_out", help="held-out dataset name (mtl)")
    p.add_argument("--seed", type=int, help="run seed (default 13)")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel leave-one-out fits for mte (default 1)")
    p.epilog = ("training defaults: hidden 200, batch 32, epochs 50, "
                "dropout 0.2, seed 13")

    p = sub.add_parser("eval", help="evaluate exported meta-embeddings")
    p.add_argument("--meta", action="append", required=True, metavar="FILE",
                   help="word2vec-text meta-embedding (repeatable)")
    p.add_argument("--task", default="wordsim", choices=("wordsim", "analogy", "both"))
    p.add_argument("--dataset", action="append", default=[], metavar="NAME=PATH[:MIN:MAX]",
                   help="word-pair dataset (wordsim)")
    p.add_argument("--analogy", action="append", default=[], metavar="NAME=PATH[:CANDIDATES]",
                   help="analogy dataset, optional candidate-list file")
    p.add_argument("--measure", default="cosine", choices=wordsim.MEASURES)
    p.add_argument("--out-dir", dest="out_dir", default=".")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--dims", default="6,5,4", help="comma-separated net dims (max 16)")
    p.add_argument("--batch", type=int, default=3, help="batch size (max 8)")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--corrupt", help="test hook: damage this parameter's gradient")

    p = sub.add_parser("export", help="re-export a checkpoint as word2vec text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="merge evaluation CSVs into one table")
    p.add_argument("--csv", action="append", required=True, metavar="FILE")
    p.add_argument("--out", help="write the merged table here as well")

    return parser


# ---------------------------------------------------------------------------
# ensemble construction / caching
# ---------------------------------------------------------------------------

def _load_sources(source_specs):
    sources = []
    for name, path, fmt in source_specs:
        sources.append(load_text_embeddings(path, fmt, name=name))
    return sources


def _assemble(source_specs, policy):
    raw = _load_sources(source_specs)
    if len(raw) == 1:
        return EmbeddingEnsemble(raw)
    return align_vocabulary(raw, policy)


def _cache_key(source_specs, policy):
    digest = hashlib.sha256()
    for name, path, fmt in source_specs:
        digest.update(f"{name}:{fmt}:{sha256_file(path)};".encode())
    digest.update(policy.encode())
    return digest.hexdigest()[:16]


def _ensemble_for(config):
    """Load or build the aligned ensemble, using the cache dir if set."""
    if config.ensemble_path:
        return load_ensemble(config.ensemble_path)
    cache_dir = os.environ.get(CACHE_ENV)
    if cache_dir:
        key = _cache_key(config.sources, config.vocab_policy)
        cached = Path(cache_dir) / f"ensemble-{key}.npz"
        if cached.exists():
            logger.info("using cached ensemble %s", cached)
            return load_ensemble(cached)
        ensemble = _assemble(config.sources, config.vocab_policy)
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_ensemble(cached, ensemble)
        logger.info("cached ensemble at %s", cached)
        return ensemble
    return _assemble(config.sources, config.vocab_policy)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _resolve_target_index(config, ensemble):
    if config.target is None:
        return 0
    names = [src.name for src in ensemble.sources]
    if config.target in names:
        return names.index(config.target)
    try:
        idx = int(config.target)
    except ValueError:
        raise ConfigError(f"target {config.target!r} is neither a source name "
                          f"nor an index (sources: {names})") from None
    if not 0 <= idx < len(names):
        raise ConfigError(f"target index {idx} out of range for {len(names)} sources")
    return idx


def _default_k_out(config, ensemble):
    if config.k_out is not None:
        return config.k_out
    k = min(config.train.hidden_dims[0], len(ensemble.vocab), ensemble.total_dim)
    logger.info("k_out not set; defaulting to %d", k)
    return k


def _load_pair_datasets(config):
    datasets = {}
    for name, path, rng in config.datasets:
        datasets[name] = load_word_pairs(path, name=name, score_range=rng)
        if datasets[name].range_inferred:
            logger.info("dataset %s: score range inferred as %s",
                        name, datasets[name].normalization)
    return datasets


def _run_method(config, ensemble, jobs=1):
    """Dispatch to the requested method; returns (meta, nets, extra, history)."""
    method = config.method
    train = config.train
    if method == "conc":
        return baselines.meta_conc(ensemble), {}, {}, []
    if method == "avg":
        return baselines.meta_avg(ensemble), {}, {}, []
    if method == "svd":
        return baselines.meta_svd(ensemble, _default_k_out(config, ensemble)), {}, {}, []
    if method == "1ton":
        meta, model, history = baselines.meta_1ton(
            ensemble, _default_k_out(config, ensemble), train)
        proj_nets = {
            f"proj{i}": FeedForwardNet([Layer(p, np.zeros(p.shape[1]), "identity")])
            for i, p in enumerate(model.projections)}
        return meta, proj_nets, {"loss": "l2"}, [{"epoch": i, "train": v}
                                                 for i, v in enumerate(history)]
    if method == "caeme":
        meta, model, history = train_caeme(ensemble, config.recon_loss, train)
        return meta, {"ae0": model.nets[0]}, \
            {"architecture": "coupled", "loss": config.recon_loss}, history
    if method == "daeme":
        meta, model, history = train_daeme(ensemble, config.recon_loss, train,
                                           pair_weight=config.pair_weight)
        nets = {f"ae{i}": n for i, n in enumerate(model.nets)}
        return meta, nets, {"architecture": "decoupled", "loss": config.recon_loss,
                            "code_widths": model.code_widths}, history
    if method == "tae":
        idx = _resolve_target_index(config, ensemble)
        model, history = train_tae(ensemble, idx, config.recon_loss, train)
        meta = tae_meta(model, ensemble, config=train)
        return meta, {"tae": model.net}, \
            {"target_index": idx, "loss": config.recon_loss}, history
    if method == "mte":
        meta, models, histories = mte_meta(ensemble, config.recon_loss, train,
                                           jobs=jobs)
        nets = {f"tae{i}": m.net for i, m in enumerate(models)}
        history = [{"target": i, "epochs": h} for i, h in enumerate(histories)]
        return meta, nets, {"loss": config.recon_loss}, history
    if method == "mtl":
        datasets = _load_pair_datasets(config)
        held = datasets.pop(config.held_out)
        model, meta, history = train_mtl(
            list(datasets.values()), held, ensemble, train,
            recon_kind=config.recon_loss, sim_kind=config.sim_loss,
            distance_kind=config.distance)
        nets = {"encoder": model.encoder, "decoder": model.decoder,
                "tower": model.tower}
        extra = {"recon": config.recon_loss, "sim": config.sim_loss,
                 "distance": config.distance, "lambda": train.lambda_,
                 "held_out": config.held_out}
        return meta, nets, extra, history
    raise ConfigError(f"unknown method {method!r}")


def cmd_train(args):
    mapping = {}
    if args.config:
        mapping.update(load_config_file(args.config))
    for item in args.set:
        mapping.update(parse_config_text(item, origin="--set"))
    for spec in args.source:
        name, path, fmt = _parse_source_spec(spec)
        mapping[f"source.{name}.path"] = path
        mapping[f"source.{name}.format"] = fmt
    for spec in args.dataset:
        name, path, rng = _parse_dataset_spec(spec)
        mapping[f"dataset.{name}.path"] = path
        if rng is not None:
            mapping[f"dataset.{name}.min"] = repr(rng[0])
            mapping[f"dataset.{name}.max"] = repr(rng[1])
    if args.method:
        mapping["method"] = args.method
    if args.ensemble:
        mapping["ensemble"] = args.ensemble
    if args.held_out:
        mapping["held_out"] = args.held_out
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if args.out_dir:
        mapping["output.dir"] = args.out_dir
    config = RunConfig.from_mapping(mapping)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.npz"
    emb_path = out_dir / "embedding.txt"
    manifest_path = out_dir / "manifest.json"
    created = []
    try:
        ensemble = _ensemble_for(config)
        meta, nets, extra, history = _run_method(config, ensemble, jobs=args.jobs)
        extra = {"method": config.method, **extra}
        created.append(ckpt_path)
        save_checkpoint(ckpt_path, method=meta.method, tokens=meta.vocab.tokens,
                        matrix=meta.matrix, nets=nets,
                        flagged_rows=meta.flagged_rows, extra=extra)
        created.append(emb_path)
        export_meta(emb_path, meta)
        digests = {}
        for _, path, _fmt in config.sources:
            digests[str(path)] = sha256_file(path)
        for _, path, _rng in config.datasets:
            digests[str(path)] = sha256_file(path)
        if config.ensemble_path:
            digests[str(config.ensemble_path)] = sha256_file(config.ensemble_path)
        created.append(manifest_path)
        write_manifest(manifest_path, config.echo, digests, history,
                       {"checkpoint": str(ckpt_path), "embedding": str(emb_path)},
                       meta.method, config.seed)
    except MetaEmbError:
        for path in created:
            Path(path).unlink(missing_ok=True)
        raise
    print(f"method tag: {meta.method}")
    print(f"embedding:  {emb_path}")
    print(f"checkpoint: {ckpt_path}")
    print(f"manifest:   {manifest_path}")
    return 0


# ---------------------------------------------------------------------------
# other commands
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    specs = [_parse_source_spec(s) for s in args.source]
    if len(specs) < 1:
        raise ConfigError("ingest needs at least one --source")
    ensemble = _assemble(specs, args.policy)
    out = args.out
    if out is None:
        cache_dir = os.environ.get(CACHE_ENV)
        if not cache_dir:
            raise ConfigError(f"give --out or set ${CACHE_ENV}")
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        out = Path(cache_dir) / f"ensemble-{_cache_key(specs, args.policy)}.npz"
    save_ensemble(out, ensemble)
    print(f"ensemble: {out} ({len(ensemble.vocab)} words, "
          f"dims {ensemble.dims}, k={ensemble.total_dim})")
    return 0


def cmd_eval(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metas = []
    for path in args.meta:
        metas.append(load_meta(path, method=Path(path).stem))
    wordsim_reports = []
    analogy_reports = []
    if args.task in ("wordsim", "both"):
        if not args.dataset:
            raise ConfigError("wordsim evaluation needs --dataset entries")
        for meta in metas:
            for spec in args.dataset:
                name, path, rng = _parse_dataset_spec(spec)
                ds = load_word_pairs(path, name=name, score_range=rng)
                wordsim_reports.append(wordsim.eval_wordsim(meta, ds, args.measure))
    if args.task in ("analogy", "both"):
        if not args.analogy:
            raise ConfigError("analogy evaluation needs --analogy entries")
        for meta in metas:
            for spec in args.analogy:
                name, _, rest = spec.partition("=")
                path, _, cands = rest.partition(":")
                ds = analogy.load_analogy_dataset(path, name=name,
                                                  candidates_path=cands or None)
                analogy_reports.append(analogy.eval_analogy(meta, ds))
    if wordsim_reports:
        csv_path = out_dir / "wordsim.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            wordsim.write_reports_csv(wordsim_reports, fh)
        table = wordsim.format_report_table(wordsim_reports)
        (out_dir / "wordsim.txt").write_text(table, encoding="utf-8")
        print(table, end="")
    if analogy_reports:
        csv_path = out_dir / "analogy.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", "method", "accuracy", "scored",
                             "dropped", "flagged"])
            for r in analogy_reports:
                writer.writerow([r.dataset, r.method, repr(r.accuracy), r.scored,
                                 r.dropped, r.flagged])
        lines = ["dataset  method  accuracy  scored  dropped  flagged"]
        for r in analogy_reports:
            lines.append(f"{r.dataset}  {r.method}  {100.0 * r.accuracy:.2f}  "
                         f"{r.scored}  {r.dropped}  {r.flagged}")
            for rel, (good, total) in sorted(r.per_relation.items()):
                if total:
                    lines.append(f"  [{rel}] {good}/{total}")
        text = "\n".join(lines) + "\n"
        (out_dir / "analogy.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return 0


def cmd_gradcheck(args):
    dims = tuple(int(d) for d in args.dims.split(","))
    results = run_gradcheck(dims=dims, batch_size=args.batch, eps=args.eps,
                            seed=args.seed, corrupt=args.corrupt)
    width = max(len(k) for k in results)
    failed = []
    for name in sorted(results):
        err = results[name]
        status = "ok" if err < THRESHOLD else "FAIL"
        print(f"{name.ljust(width)}  max rel err {err:.3e}  {status}")
        if err >= THRESHOLD:
            failed.append(name)
    if failed:
        print(f"FAILED: {', '.join(failed)}"
              + (f" (corrupted: {args.corrupt})" if args.corrupt else ""))
        return 3
    print(f"all gradient checks below {THRESHOLD:g}")
    return 0


def cmd_export(args):
    ckpt = load_checkpoint(args.checkpoint)
    from .store import write_word2vec_text
    write_word2vec_text(args.out, ckpt.tokens, ckpt.matrix)
    print(f"exported {len(ckpt.tokens)} x {ckpt.matrix.shape[1]} "
          f"({ckpt.method}) to {args.out}")
    return 0


def cmd_report(args):
    header = None
    rows = []
    for path in args.csv:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            this_header = next(reader, None)
            if this_header is None:
                raise DataError(f"{path}: empty CSV")
            if header is None:
                header = this_header
            elif this_header != header:
                raise DataError(f"{path}: column set {this_header} does not match "
                                f"{header}")
            rows.extend(reader)
    table_rows = [header] + rows
    widths = [max(len(str(r[i])) for r in table_rows) for i in range(len(header))]
    out = io.StringIO()
    for row in table_rows:
        out.write("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
        out.write("\n")
    text = out.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export": cmd_export,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.debug("kernel backend: %s", kernels.active_backend())
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except EvaluationError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
