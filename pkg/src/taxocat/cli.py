"""Operator-facing command line: taxonomy tooling, batch classification,
evaluation, and retrieval-quality reporting.

Configuration precedence is CLI flag > environment variable > config file >
built-in default; environment variables are reserved for provider
credentials and endpoint overrides (TAXOCAT_API_KEY, TAXOCAT_ENDPOINT,
TAXOCAT_MODEL). Input files are never modified: enrichment always writes a
new file.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from . import evaluation, gateway as gw, postprocess, retrieval, strategies, taxonomy as tax
from .documents import Document, DocumentError, load_documents

logger = logging.getLogger(__name__)

TOP_K_RANGE = (10, 100)
DEFAULT_DEPTHS = tuple(range(10, 101, 10))

STRATEGY_CHOICES = {
    "trav-select": strategies.Method.TRAV_SELECT,
    "one-pass": strategies.Method.SELECT_ONE_PASS,
    "rerank": strategies.Method.RERANK,
    "pointwise": strategies.Method.SELECT_POINTWISE,
}
AGG_CHOICES = {
    "leaf-only": strategies.AggregationFunction.LEAF_ONLY,
    "avg-direct-parent": strategies.AggregationFunction.AVG_DIRECT_PARENT,
    "avg-all-ancestors": strategies.AggregationFunction.AVG_ALL_ANCESTORS,
    "harmonic-all-ancestors": strategies.AggregationFunction.HARMONIC_ALL_ANCESTORS,
}
ABLATION_CHOICES = ("no-decrease", "no-description", "no-context")


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taxocat",
        description="Zero-shot hierarchical multi-label classification over a label taxonomy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_tax = sub.add_parser("taxonomy", help="validate, inspect, and enrich a taxonomy file")
    tax_sub = p_tax.add_subparsers(dest="subcommand", required=True)

    p_validate = tax_sub.add_parser("validate", help="check structural integrity")
    p_validate.add_argument("--taxonomy", required=True)

    p_stats = tax_sub.add_parser("stats", help="print hierarchy statistics")
    p_stats.add_argument("--taxonomy", required=True)
    p_stats.add_argument("--json", action="store_true", dest="as_json")

    p_expand = tax_sub.add_parser("expand", help="apply an acronym map to node names")
    p_expand.add_argument("--taxonomy", required=True)
    p_expand.add_argument("--acronyms", required=True)
    p_expand.add_argument("--output", required=True)
    p_expand.add_argument(
        "--suggest", action="store_true", help="also print unapplied acronym suggestions"
    )

    p_describe = tax_sub.add_parser("describe", help="fill missing node descriptions")
    p_describe.add_argument("--taxonomy", required=True)
    p_describe.add_argument("--output", required=True)
    _add_provider_args(p_describe)

    p_classify = sub.add_parser("classify", help="assign leaf labels to a document batch")
    p_classify.add_argument("--taxonomy", required=True)
    p_classify.add_argument("--documents", required=True)
    p_classify.add_argument("--output", required=True)
    p_classify.add_argument("--strategy", required=True, choices=sorted(STRATEGY_CHOICES))
    p_classify.add_argument("--top-k", type=int, default=None)
    p_classify.add_argument("--agg", choices=sorted(AGG_CHOICES), default=None)
    p_classify.add_argument("--max-labels", type=int, default=None)
    p_classify.add_argument("--min-labels", type=int, default=None)
    p_classify.add_argument("--sibling-cap", type=int, default=None)
    p_classify.add_argument("--no-sibling-cap", action="store_true")
    p_classify.add_argument("--ablation", choices=ABLATION_CHOICES, default=None)
    p_classify.add_argument("--seed", type=int, default=0)
    p_classify.add_argument("--parallelism", type=int, default=None)
    p_classify.add_argument("--embedding-cache", default=None)
    p_classify.add_argument("--config", default=None, help="JSON file with run defaults")
    _add_provider_args(p_classify)

    p_eval = sub.add_parser("evaluate", help="score SME judgments per method")
    p_eval.add_argument("--judgments", required=True)
    p_eval.add_argument("--baseline", default=None,
                        help="JSON file of precomputed method reports to include")
    p_eval.add_argument("--json-output", default=None)

    p_rank = sub.add_parser("rank", help="bi-encoder recall against gold labels")
    p_rank.add_argument("--documents", required=True)
    p_rank.add_argument("--taxonomy", required=True)
    p_rank.add_argument("--gold", required=True)
    p_rank.add_argument("--depths", default=None, help="comma-separated depths (default 10..100)")
    p_rank.add_argument("--embedding-cache", default=None)
    p_rank.add_argument("--json-output", default=None)
    _add_provider_args(p_rank)

    return parser


def _add_provider_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", default=None, help="provider config JSON file")
    parser.add_argument("--mock", action="store_true", help="use the offline deterministic mock")
    parser.add_argument("--audit-log", default=None)


# -- provider / embedder wiring -------------------------------------------------


def _provider_config(args: argparse.Namespace) -> gw.ProviderConfig:
    if args.provider:
        config = gw.load_provider_config(args.provider)
    else:
        config = gw.ProviderConfig()
    endpoint = os.environ.get("TAXOCAT_ENDPOINT")
    model = os.environ.get("TAXOCAT_MODEL")
    if endpoint:
        config = replace(config, endpoint=endpoint)
    if model:
        config = replace(config, model_name=model)
    if config.credentials is None and os.environ.get("TAXOCAT_API_KEY") is not None:
        config = replace(config, credentials="TAXOCAT_API_KEY")
    return config


def _make_gateway(args: argparse.Namespace) -> gw.LlmGateway:
    audit = gw.AuditLog(args.audit_log) if args.audit_log else None
    if args.mock:
        return gw.mock_gateway(audit_log=audit)
    if not args.provider and not os.environ.get("TAXOCAT_ENDPOINT"):
        raise CliError("no provider configured: pass --provider CONFIG.json or --mock")
    config = _provider_config(args)
    return gw.LlmGateway(provider=gw.HttpProvider(config), config=config, audit_log=audit)


def _make_embedder(args: argparse.Namespace) -> retrieval.Embedder | None:
    if args.mock:
        return retrieval.HashBagEmbedder()
    if args.provider:
        data = json.loads(Path(args.provider).read_text(encoding="utf-8"))
        endpoint = data.get("embedding_endpoint")
        if endpoint:
            return retrieval.HttpEmbedder(
                endpoint=endpoint,
                model_name=data.get("embedding_model", "default"),
                credentials=data.get("credentials"),
            )
    return None


def _embedding_store(
    args: argparse.Namespace,
    taxonomy: tax.Taxonomy,
    embedder: retrieval.Embedder | None,
) -> retrieval.EmbeddingStore:
    cache = getattr(args, "embedding_cache", None)
    if cache and Path(cache).exists():
        expected = embedder.model_tag if embedder is not None else None
        return retrieval.EmbeddingStore.load(cache, model_tag=expected)
    if embedder is None:
        raise CliError(
            "no embedding source: pass --embedding-cache pointing at an existing cache, "
            "--mock, or a provider config with embedding_endpoint"
        )
    store = retrieval.embed_taxonomy_leaves(taxonomy, embedder)
    if cache:
        store.save(cache)
    return store


# -- taxonomy subcommands ----------------------------------------------------------


def cmd_taxonomy(args: argparse.Namespace) -> int:
    if args.subcommand == "validate":
        try:
            loaded = tax.load_taxonomy(args.taxonomy)
        except tax.TaxonomyError as exc:
            print(f"INVALID: {exc}", file=sys.stderr)
            return 1
        stats = tax.hierarchy_stats(loaded)
        print(f"OK: {len(loaded)} nodes ({stats.leaf_count} leaves, {stats.parent_count} parents)")
        return 0

    if args.subcommand == "stats":
        loaded = tax.load_taxonomy(args.taxonomy)
        stats = tax.hierarchy_stats(loaded)
        if args.as_json:
            print(
                json.dumps(
                    {
                        "leaves": stats.leaf_count,
                        "parents": stats.parent_count,
                        "max_children": stats.max_children,
                        "avg_children": round(stats.avg_children, 2),
                        "max_leaf_depth": stats.max_leaf_depth,
                        "avg_leaf_depth": round(stats.avg_leaf_depth, 2),
                    }
                )
            )
        else:
            print(f"leaves: {stats.leaf_count}")
            print(f"parents: {stats.parent_count}")
            print(f"max_children: {stats.max_children}")
            print(f"avg_children: {stats.avg_children:.2f}")
            print(f"max_leaf_depth: {stats.max_leaf_depth}")
            print(f"avg_leaf_depth: {stats.avg_leaf_depth:.2f}")
        return 0

    if args.subcommand == "expand":
        _require_new_output(args.taxonomy, args.output)
        loaded = tax.load_taxonomy(args.taxonomy)
        acronyms = tax.load_acronym_map(args.acronyms)
        if args.suggest:
            for token, source in sorted(tax.suggest_acronyms(loaded).items()):
                applied = "applied" if token in acronyms.entries else "not applied"
                print(f"suggestion: {token} -> {source} ({applied})")
        expanded = tax.expand_acronyms(loaded, acronyms)
        tax.save_taxonomy(expanded, args.output)
        changed = sum(1 for node in expanded if node.acronym_expanded)
        print(f"expanded {changed} node names -> {args.output}")
        return 0

    if args.subcommand == "describe":
        _require_new_output(args.taxonomy, args.output)
        loaded = tax.load_taxonomy(args.taxonomy)
        gateway = _make_gateway(args)
        described = [n for n in loaded if n.description]
        missing = sorted(n.id for n in loaded if not n.description)
        if not missing:
            tax.save_taxonomy(loaded, args.output)
            print("all nodes already described; copied unchanged")
            return 0
        if not described:
            print("cannot describe: no node has an existing description to use as exemplar",
                  file=sys.stderr)
            return 1
        updates = []
        for node_id in missing:
            depth = loaded.depth(node_id)
            exemplar = min(described, key=lambda n: (abs(loaded.depth(n.id) - depth), n.id))
            text = tax.generate_description(loaded, node_id, gateway, exemplar.id)
            updates.append(replace(loaded.node(node_id), description=text))
        tax.save_taxonomy(loaded.with_nodes(updates), args.output)
        print(f"described {len(updates)} nodes -> {args.output}")
        return 0

    raise CliError(f"unknown taxonomy subcommand {args.subcommand!r}")


def _require_new_output(input_path: str, output_path: str) -> None:
    if Path(input_path).resolve() == Path(output_path).resolve():
        raise CliError("refusing to overwrite the input file; pick a new --output path")


# -- classify ---------------------------------------------------------------------


def _load_run_defaults(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise CliError("--config must contain a JSON object")
    return data


def _setting(cli_value, config: dict[str, Any], key: str, default):
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _doc_rng(seed: int, doc_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{doc_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one classification batch."""

    taxonomy_path: Path
    documents_path: Path
    output_path: Path
    method: strategies.Method
    top_k: int
    aggregation: strategies.AggregationFunction
    label_range: tuple[int, int]
    postprocess: postprocess.PostProcessConfig
    include_descriptions: bool
    contextualize: bool
    parallelism: int
    seed: int

    def __post_init__(self):
        if not TOP_K_RANGE[0] <= self.top_k <= TOP_K_RANGE[1]:
            raise CliError(f"--top-k must be within {TOP_K_RANGE[0]}..{TOP_K_RANGE[1]}")
        if not 1 <= self.label_range[0] <= self.label_range[1]:
            raise CliError("--min-labels must satisfy 1 <= min <= max")
        if self.parallelism < 1:
            raise CliError("--parallelism must be >= 1")


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge CLI flags over config-file values over defaults."""
    run_cfg = _load_run_defaults(args.config)
    ablation = args.ablation
    apply_decrease = {m: True for m in strategies.Method}
    if isinstance(run_cfg.get("apply_decrease"), dict):
        for name, value in run_cfg["apply_decrease"].items():
            apply_decrease[strategies.Method(name)] = bool(value)
    max_labels = int(_setting(args.max_labels, run_cfg, "max_labels", 5))
    pp_config = postprocess.PostProcessConfig(
        max_labels=max_labels,
        sibling_cap=int(_setting(args.sibling_cap, run_cfg, "sibling_cap", 3)),
        apply_decrease=apply_decrease,
        apply_sibling=not args.no_sibling_cap and bool(run_cfg.get("apply_sibling", True)),
        random_decrease=(ablation == "no-decrease"),
    )
    return RunConfig(
        taxonomy_path=Path(args.taxonomy),
        documents_path=Path(args.documents),
        output_path=Path(args.output),
        method=STRATEGY_CHOICES[args.strategy],
        top_k=int(_setting(args.top_k, run_cfg, "top_k", 40)),
        aggregation=AGG_CHOICES[_setting(args.agg, run_cfg, "aggregation", "leaf-only")],
        label_range=(int(_setting(args.min_labels, run_cfg, "min_labels", 1)), max_labels),
        postprocess=pp_config,
        include_descriptions=ablation != "no-description",
        contextualize=ablation != "no-context",
        parallelism=int(_setting(args.parallelism, run_cfg, "parallelism", 1)),
        seed=args.seed,
    )


def run_classification(
    config: RunConfig,
    gateway: gw.LlmGateway,
    store: retrieval.EmbeddingStore | None,
    embedder: retrieval.Embedder | None,
    taxonomy: tax.Taxonomy | None = None,
) -> int:
    loaded = taxonomy if taxonomy is not None else tax.load_taxonomy(config.taxonomy_path)
    docs = load_documents(config.documents_path)
    method = config.method

    def classify_one(doc: Document) -> dict[str, Any]:
        try:
            pt = None
            if method is strategies.Method.TRAV_SELECT:
                labels = strategies.classify_trav_select(
                    doc, loaded, gateway, include_descriptions=config.include_descriptions
                )
            else:
                ranking = retrieval.rank_leaves(doc, loaded, store, embedder)
                pt = retrieval.build_pruned_taxonomy(loaded, ranking, config.top_k)
                if method is strategies.Method.SELECT_ONE_PASS:
                    labels = strategies.classify_select_one_pass(
                        doc, loaded, pt, gateway,
                        include_descriptions=config.include_descriptions,
                    )
                elif method is strategies.Method.RERANK:
                    labels = strategies.classify_rerank(
                        doc, loaded, pt, gateway,
                        fn=config.aggregation,
                        top_n=config.postprocess.max_labels,
                        include_descriptions=config.include_descriptions,
                    )
                else:
                    labels = strategies.classify_select_pointwise(
                        doc, loaded, pt, gateway,
                        label_range=config.label_range,
                        contextualize=config.contextualize,
                        include_descriptions=config.include_descriptions,
                    )
            labels = postprocess.postprocess_chain(
                doc, labels, loaded, pt, gateway, config.postprocess,
                rng=_doc_rng(config.seed, doc.doc_id),
            )
            flags = list(labels.flags)
            if not labels.leaf_ids and postprocess.FLAG_NEEDS_REVIEW not in flags:
                flags.append(postprocess.FLAG_NEEDS_REVIEW)
            return {
                "doc_id": doc.doc_id,
                "method": labels.method.value,
                "labels": list(labels.leaf_ids),
                "provenance": labels.provenance,
                "flags": flags,
            }
        except Exception as exc:  # per-document isolation: one failure must not kill the batch
            logger.exception("document %s failed", doc.doc_id)
            return {
                "doc_id": doc.doc_id,
                "method": method.value,
                "labels": [],
                "provenance": {"error": f"{type(exc).__name__}: {exc}"},
                "flags": ["hard-failure", postprocess.FLAG_NEEDS_REVIEW],
            }

    if config.parallelism == 1:
        records = [classify_one(doc) for doc in docs]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            records = list(pool.map(classify_one, docs))  # map preserves input order

    with config.output_path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=False) + "\n")

    failures = sum(1 for r in records if "hard-failure" in r["flags"])
    print(f"classified {len(records)} documents ({failures} hard failures) "
          f"-> {config.output_path}")
    return 1 if failures else 0


def cmd_classify(args: argparse.Namespace) -> int:
    config = _resolve_run_config(args)
    gateway = _make_gateway(args)
    loaded = tax.load_taxonomy(config.taxonomy_path)
    store = None
    embedder = None
    if config.method is not strategies.Method.TRAV_SELECT:
        embedder = _make_embedder(args)
        store = _embedding_store(args, loaded, embedder)
        if embedder is None:
            raise CliError("document embedding requires --mock or an embedding provider")
    return run_classification(config, gateway, store, embedder, taxonomy=loaded)


# -- evaluate -----------------------------------------------------------------------


def _load_baseline_reports(path: str) -> list[evaluation.MethodReport]:
    """Precomputed rows (e.g. an earlier system's published numbers) to merge
    into the comparison: [{method, n, accuracy_pct, score_dist_pct: {"5": ...}}].
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise CliError("--baseline must contain a JSON list of method reports")
    reports = []
    for row in data:
        try:
            reports.append(
                evaluation.MethodReport(
                    method=row["method"],
                    n=int(row["n"]),
                    accuracy_pct=float(row["accuracy_pct"]),
                    score_dist_pct={s: float(row["score_dist_pct"][str(s)]) for s in (5, 4, 3, 2, 1)},
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"bad baseline report entry: {exc}") from None
    return reports


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        judgments = evaluation.load_judgments(args.judgments)
        reports = list(evaluation.compute_metrics(judgments).values())
        if args.baseline:
            reports.extend(_load_baseline_reports(args.baseline))
        table = evaluation.compare_methods(reports)
    except evaluation.JudgmentError as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return 1
    print(table.render())
    if args.json_output:
        Path(args.json_output).write_text(table.to_json() + "\n", encoding="utf-8")
    return 0


# -- rank ----------------------------------------------------------------------------


def _parse_depths(text: str | None) -> tuple[int, ...]:
    if not text:
        return DEFAULT_DEPTHS
    try:
        depths = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise CliError(f"bad --depths value: {exc}") from None
    if not depths or any(d < 1 for d in depths):
        raise CliError("--depths needs positive integers")
    return depths


def cmd_rank(args: argparse.Namespace) -> int:
    loaded = tax.load_taxonomy(args.taxonomy)
    docs = load_documents(args.documents)
    gold = retrieval.load_gold_labels(args.gold)
    depths = _parse_depths(args.depths)
    embedder = _make_embedder(args)
    store = _embedding_store(args, loaded, embedder)
    if embedder is None:
        raise CliError("document embedding requires --mock or an embedding provider")
    rankings = [retrieval.rank_leaves(doc, loaded, store, embedder) for doc in docs]
    try:
        rows = retrieval.recall_at_k(rankings, gold, depths)
    except retrieval.RetrievalError as exc:
        print(f"rank failed: {exc}", file=sys.stderr)
        return 1
    print("depth  all-gold  any-gold")
    for row in rows:
        print(f"{row.depth:>5}  {row.all_gold_rate:>8.3f}  {row.any_gold_rate:>8.3f}")
    if args.json_output:
        payload = [
            {"depth": r.depth, "all_gold_rate": r.all_gold_rate, "any_gold_rate": r.any_gold_rate}
            for r in rows
        ]
        Path(args.json_output).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return 0


# -- entry point ------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("TAXOCAT_LOG_LEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "taxonomy":
            return cmd_taxonomy(args)
        if args.command == "classify":
            return cmd_classify(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "rank":
            return cmd_rank(args)
        parser.error(f"unknown command {args.command!r}")
    except (CliError, tax.TaxonomyError, DocumentError, retrieval.RetrievalError,
            gw.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
