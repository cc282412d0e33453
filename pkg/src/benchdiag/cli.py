"""Stage-wise command line: each subcommand reads earlier artifacts and writes its own."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .config import ConfigError, MissingInputError, ProviderError, RunConfig, error_kind, load_config
from .corpus import chunk_document, get_tokenizer, load_corpus, read_chunks, sample_chunks, write_chunks
from .diagnose import load_profile, profile_benchmark, save_profile
from .embed import (FileEmbeddingClient, HashEmbeddingClient, HttpEmbeddingClient, fetch_embeddings,
                    load_embeddings, save_embeddings)
from .evalkit import EvalRun, build_report, evaluate, load_result, save_result
from .io import DataFormatError, read_json, write_json, write_jsonl
from .mine import assemble_triplets, dataset_statistics, write_triplets
from .qagen import (DirectoryTransport, FunctionTransport, HttpGenerationClient, RetryPolicy, generate_pairs,
                    question_type_counts, read_pairs, write_pairs)
from .retrieve import Index, rank_all, read_rankings, write_rankings

logger = logging.getLogger("benchdiag")

# CLI flag dest -> RunConfig field
CONFIG_FLAGS = {
    "corpus": "corpus_dir", "output_dir": "output_dir", "tokenizer": "tokenizer", "max_tokens": "max_tokens",
    "sample_fraction": "sample_fraction", "seed": "seed", "provider": "embedding_provider",
    "generator": "generator", "scoring_mode": "scoring_mode", "n_negatives": "n_negatives", "ks": "ks",
    "k_min": "k_min", "k_max": "k_max", "truncate_at": "truncate_at", "concurrency": "concurrency",
    "max_attempts": "max_attempts",
}


# --------------------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {field: getattr(args, dest, None) for dest, field in CONFIG_FLAGS.items()}
    try:
        return cfg.merged(overrides).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _input(path, what: str) -> Path:
    if path is None:
        raise MissingInputError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"{what} not found: {p}")
    return p


def _output(path, cfg: RunConfig, default_name: str) -> Path:
    if path is not None:
        return Path(path)
    if cfg.output_dir is None:
        raise ConfigError(f"no output path: pass --out or set output_dir (default file {default_name})")
    return Path(cfg.output_dir) / default_name


def _ks(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _embedding_client(spec: str | None):
    if not spec:
        raise ConfigError("no embedding provider: pass --provider or set embedding_provider")
    if spec.startswith("hash:"):
        parts = spec.split(":")[1:]
        try:
            seed = int(parts[0])
            dim = int(parts[1]) if len(parts) > 1 else 64
        except (ValueError, IndexError):
            raise ConfigError(f"bad hash provider {spec!r}; expected hash:SEED[:DIM]") from None
        return HashEmbeddingClient(dim=dim, seed=seed)
    if spec.startswith(("http://", "https://")):
        return HttpEmbeddingClient(spec)
    if spec.startswith("file:"):
        return FileEmbeddingClient(_input(spec[5:], "embedding file"))
    raise ConfigError(f"unknown embedding provider {spec!r}")


def _generation_client(spec: str | None):
    if not spec:
        raise ConfigError("no generator: pass --generator or set generator")
    if spec == "mock-extractive":
        from .desk import extractive_generator

        return HttpGenerationClient("http://mock.invalid/generate", transport=FunctionTransport(extractive_generator))
    if spec.startswith("mock-dir:"):
        d = _input(spec[9:], "canned response directory")
        return HttpGenerationClient("http://mock.invalid/generate", transport=DirectoryTransport(d))
    if spec.startswith(("http://", "https://")):
        return HttpGenerationClient(spec)
    raise ConfigError(f"unknown generator {spec!r}")


def _rel(path: Path, start: Path) -> str:
    return Path(os.path.relpath(path.resolve(), start.resolve())).as_posix()


def _load_index(manifest_path, queries_path=None) -> tuple[Index, dict]:
    mpath = _input(manifest_path, "index manifest")
    manifest = read_json(mpath)
    for key in ("contexts", "mode", "context_ids"):
        if key not in manifest:
            raise DataFormatError(f"{mpath}: index manifest missing {key!r}")
    base = mpath.parent
    contexts = load_embeddings(_input(base / manifest["contexts"], "context embeddings"))
    missing = [k for k in manifest["context_ids"] if k not in contexts]
    if missing:
        raise DataFormatError(f"{mpath}: {len(missing)} indexed ids absent from embeddings, e.g. {missing[0]}")
    contexts = contexts.subset(manifest["context_ids"])
    texts = None
    if manifest.get("chunks"):
        chunks = read_chunks(_input(base / manifest["chunks"], "chunks file"))
        texts = {c.chunk_id: c.text for c in chunks}
    queries = load_embeddings(_input(queries_path, "query embeddings")) if queries_path else None
    return Index(contexts, manifest["mode"], queries=queries, texts=texts), manifest


def _gold_ids(qa_path) -> list[str]:
    seen: dict[str, None] = {}
    for p in read_pairs(_input(qa_path, "QA file")):
        seen.setdefault(p.gold_chunk_id, None)
    return list(seen)


# --------------------------------------------------------------------------- subcommands


def cmd_chunk(args, cfg: RunConfig) -> None:
    corpus = _input(cfg.corpus_dir, "corpus directory")
    tok = get_tokenizer(cfg.tokenizer)
    docs = load_corpus(corpus, filter_final=not args.no_filter)
    chunks = [c for d in docs for c in chunk_document(d, cfg.max_tokens, tok)]
    n = write_chunks(_output(args.out, cfg, "chunks.jsonl"), chunks)
    logger.info("%d documents -> %d chunks", sum(not d.skipped for d in docs), n)


def cmd_sample(args, cfg: RunConfig) -> None:
    seed = cfg.require_seed("sample")
    chunks = read_chunks(_input(args.chunks, "chunks file"))
    picked = sample_chunks(chunks, cfg.sample_fraction, seed)
    write_chunks(_output(args.out, cfg, "sampled_chunks.jsonl"), picked)
    logger.info("sampled %d of %d chunks", len(picked), len(chunks))


def cmd_genqa(args, cfg: RunConfig) -> None:
    chunks = read_chunks(_input(args.chunks, "chunks file"))
    client = _generation_client(cfg.generator)
    policy = RetryPolicy(max_attempts=cfg.max_attempts)
    result = generate_pairs(chunks, client, policy, mode=args.mode, concurrency=cfg.concurrency, dedupe=args.dedupe)
    write_pairs(_output(args.out, cfg, "qa.jsonl"), result.pairs)
    if args.failures:
        write_jsonl(args.failures, (f.to_record() for f in result.failures))
    logger.info("%d pairs from %d chunks (%d failures, %d dropped)",
                len(result.pairs), len(chunks), len(result.failures), result.dropped)
    if chunks and len(result.failures) == len(chunks):
        raise ProviderError(f"generation failed for all {len(chunks)} chunks: {result.failures[0].detail}")


def cmd_embed(args, cfg: RunConfig) -> None:
    if args.chunks:
        items = [(c.chunk_id, c.text) for c in read_chunks(_input(args.chunks, "chunks file"))]
    else:
        items = [(p.qid, p.question) for p in read_pairs(_input(args.qa, "QA file"))]
    client = _embedding_client(cfg.embedding_provider)
    out = _output(args.out, cfg, "embeddings.emb")
    if isinstance(client, FileEmbeddingClient):
        emb, missing = client.lookup([k for k, _ in items])
    else:
        res = fetch_embeddings(client, items, truncate_at=cfg.truncate_at, tokenizer=get_tokenizer(cfg.tokenizer),
                               concurrency=min(cfg.concurrency, 2), max_attempts=cfg.max_attempts)
        emb, missing = res.embeddings, res.missing
    save_embeddings(out, emb)
    logger.info("embedded %d items (%d missing)", len(emb), len(missing))
    if missing:
        raise ProviderError(f"{len(missing)} of {len(items)} items could not be embedded, e.g. {missing[0]}")


def cmd_index(args, cfg: RunConfig) -> None:
    ctx_path = _input(args.contexts, "context embeddings")
    contexts = load_embeddings(ctx_path)
    ids = list(contexts.ids)
    if args.restrict_to:
        want = _gold_ids(args.restrict_to)
        absent = [k for k in want if k not in contexts]
        if absent:
            raise DataFormatError(f"{len(absent)} gold contexts have no embedding, e.g. {absent[0]}")
        ids = want
    chunks_path = _input(args.chunks, "chunks file") if args.chunks else None
    Index(contexts.subset(ids), cfg.scoring_mode)  # validates mode requirements
    out = _output(args.out, cfg, "index.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, {
        "contexts": _rel(ctx_path, out.parent),
        "chunks": _rel(chunks_path, out.parent) if chunks_path else None,
        "mode": cfg.scoring_mode,
        "n_contexts": len(ids),
        "context_ids": ids,
    })


def cmd_mine(args, cfg: RunConfig) -> None:
    index, _ = _load_index(args.index, args.queries)
    pairs = read_pairs(_input(args.qa, "QA file"))
    usable = [p for p in pairs if p.qid in index.queries]
    if len(usable) < len(pairs):
        logger.warning("%d pairs have no query embedding and are skipped", len(pairs) - len(usable))
    report = assemble_triplets(usable, index, cfg.n_negatives)
    write_triplets(_output(args.out, cfg, "triplets.jsonl"), report.triplets)
    if args.stats:
        doc_ids = {cid.rsplit(":", 1)[0] for cid in index.ids}
        agencies = {d.split("/", 1)[0] for d in doc_ids if "/" in d}
        stats = dataset_statistics(len(doc_ids), len(agencies) or None, len(index), len(pairs), report.triplets)
        stats["skipped_pairs"] = len(pairs) - len(report.triplets)
        stats["question_types"] = question_type_counts(pairs)
        write_json(args.stats, stats)
    logger.info("%d triplets", len(report.triplets))


def cmd_rank(args, cfg: RunConfig) -> None:
    index, _ = _load_index(args.index, args.queries)
    qids = None
    if args.qa:
        qids = [p.qid for p in read_pairs(_input(args.qa, "QA file")) if p.qid in index.queries]
    rankings = rank_all(index, args.k, qids)
    write_rankings(_output(args.out, cfg, "rankings.jsonl"), rankings)


def cmd_diagnose(args, cfg: RunConfig) -> None:
    seed = cfg.require_seed("diagnose")
    emb = load_embeddings(_input(args.embeddings, "embeddings file"))
    ids = _gold_ids(args.restrict_to) if args.restrict_to else list(emb.ids)
    absent = [k for k in ids if k not in emb]
    if absent:
        raise DataFormatError(f"{len(absent)} contexts have no embedding, e.g. {absent[0]}")
    vectors = {k: emb[k] for k in ids}
    k_max = min(cfg.k_max, len(ids) - 1)
    profile = profile_benchmark(vectors, seed, cfg.k_min, max(k_max, cfg.k_min), name=args.name or "")
    save_profile(_output(args.out, cfg, "profile.json"), profile)
    if args.projection:
        Path(args.projection).parent.mkdir(parents=True, exist_ok=True)
        Path(args.projection).write_text(profile.projection_csv(), encoding="utf-8")


def cmd_eval(args, cfg: RunConfig) -> None:
    rankings = read_rankings(_input(args.rankings, "rankings file"))
    gold = {p.qid: p.gold_chunk_id for p in read_pairs(_input(args.qa, "QA file"))}
    unranked = sum(1 for q in gold if q not in {r.qid for r in rankings})
    if unranked:
        logger.warning("%d gold queries have no ranking", unranked)
    try:
        run = EvalRun(args.model, args.benchmark, rankings, gold)
        result = evaluate(run, args.cutoff, cfg.ks)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None
    save_result(_output(args.out, cfg, "result.json"), result)
    if args.csv:
        Path(args.csv).write_text(build_report([result], result.model).to_csv(), encoding="utf-8")


def cmd_report(args, cfg: RunConfig) -> None:
    results = [load_result(_input(p, "evaluation result")) for p in args.results]
    profiles = [load_profile(_input(p, "profile")) for p in args.profiles or []]
    try:
        rep = build_report(results, args.baseline, profiles or None, ks=cfg.ks)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out_dir) if args.out_dir else _output(None, cfg, "report")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(rep.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(rep.to_text(), encoding="utf-8")
    (out / "gain_curves.csv").write_text(rep.curves_csv(), encoding="utf-8")
    (out / "improvement_curves.csv").write_text(rep.improvement_curves_csv(), encoding="utf-8")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with run configuration")
    common.add_argument("--output-dir", help="default directory for outputs")
    common.add_argument("--seed", type=int, help="seed for stochastic steps")
    common.add_argument("--concurrency", type=int)
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="benchdiag", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn: Callable, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("chunk", cmd_chunk, "clean, split and chunk a text corpus")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--tokenizer")
    p.add_argument("--no-filter", action="store_true", help="keep non-final documents")

    p = add("sample", cmd_sample, "draw a per-document fraction of chunks")
    p.add_argument("--chunks", required=True)
    p.add_argument("--out")
    p.add_argument("--sample-fraction", type=float)

    p = add("genqa", cmd_genqa, "generate question/answer pairs per chunk")
    p.add_argument("--chunks", required=True)
    p.add_argument("--out")
    p.add_argument("--generator", help="service URL, mock-dir:PATH or mock-extractive")
    p.add_argument("--mode", choices=("training", "benchmark"), default="training")
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--failures", help="write per-chunk failures here")
    p.add_argument("--max-attempts", type=int)

    p = add("embed", cmd_embed, "embed chunk texts or questions")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--chunks")
    src.add_argument("--qa")
    p.add_argument("--out")
    p.add_argument("--provider", help="hash:SEED[:DIM], a service URL, or file:PATH")
    p.add_argument("--truncate-at", type=int)
    p.add_argument("--tokenizer")
    p.add_argument("--max-attempts", type=int)

    p = add("index", cmd_index, "build an index manifest over context embeddings")
    p.add_argument("--contexts", required=True)
    p.add_argument("--chunks", help="chunk texts, needed for duplicate-aware mining")
    p.add_argument("--restrict-to", help="QA file; index only its gold contexts")
    p.add_argument("--scoring-mode", choices=("cosine", "maxsim"))
    p.add_argument("--out")

    p = add("mine", cmd_mine, "mine hard negatives and write training triplets")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out")
    p.add_argument("--stats", help="write dataset statistics JSON here")
    p.add_argument("--n-negatives", type=int)

    p = add("rank", cmd_rank, "rank indexed contexts for every query")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qa", help="rank only these queries, in file order")
    p.add_argument("--k", type=int, help="keep the top k (default: all)")
    p.add_argument("--out")

    p = add("diagnose", cmd_diagnose, "topic-diversity profile of a benchmark")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--restrict-to", help="QA file; profile only its gold contexts")
    p.add_argument("--name")
    p.add_argument("--out")
    p.add_argument("--projection", help="write the 2-D projection CSV here")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)

    p = add("eval", cmd_eval, "NDCG of a ranking run against gold contexts")
    p.add_argument("--rankings", required=True)
    p.add_argument("--qa", required=True, help="QA file providing the gold map")
    p.add_argument("--model", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--cutoff", type=int, help="NDCG cutoff (default: ranking universe size)")
    p.add_argument("--ks", type=_ks)
    p.add_argument("--out")
    p.add_argument("--csv", help="also write a one-run report CSV")

    p = add("report", cmd_report, "compose evaluation results and profiles")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--profiles", nargs="*")
    p.add_argument("--ks", type=_ks)
    p.add_argument("--out-dir")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = getattr(logging, str(args.log_level).upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("httpx").setLevel(max(level, logging.WARNING))  # one line per request otherwise
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except Exception as exc:  # reported as a machine-readable summary
        kind, code = error_kind(exc)
        if isinstance(exc, ValueError) and kind == "internal":
            kind, code = "invalid_input", 6
        if kind == "internal":
            logger.exception("unexpected failure")
        print(json.dumps({"error": kind, "command": args.command, "message": str(exc)}), file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
