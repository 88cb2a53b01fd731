"""The four classification strategies over a taxonomy or pruned taxonomy.

* trav_select      — breadth-first traversal, the LLM picks branches per layer
* select_one_pass  — one prompt carrying the whole pruned taxonomy
* rerank           — relevancy scores per node, aggregated along root paths
* select_pointwise — independent per-leaf verdicts gated by parent verdicts

Every strategy returns a LabelSet whose provenance records the verdicts or
scores that justified each label, and whose flags surface degenerate
outcomes instead of silently emitting empty output.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from statistics import fmean, harmonic_mean
from typing import Any, Mapping, Sequence

from . import gateway as gw
from .documents import Document
from .retrieval import PrunedTaxonomy
from .taxonomy import Taxonomy, TaxonomyNode
from .textproc import truncate_words

logger = logging.getLogger(__name__)

DESCRIPTION_MAX_WORDS = 60  # keeps multi-node prompts inside context limits

FLAG_EMPTY_RESULT = "empty-result"
FLAG_SHORTFALL = "shortfall"
FLAG_ANCESTOR_SCORES_UNAVAILABLE = "ancestor-scores-unavailable"


class StrategyError(Exception):
    pass


class ScoringIncompleteError(StrategyError):
    """The provider returned scores for fewer than half the requested nodes."""


class Method(str, Enum):
    TRAV_SELECT = "trav_select"
    SELECT_ONE_PASS = "select_one_pass"
    RERANK = "rerank"
    SELECT_POINTWISE = "select_pointwise"


class AggregationFunction(str, Enum):
    LEAF_ONLY = "leaf_only"
    AVG_DIRECT_PARENT = "avg_direct_parent"
    AVG_ALL_ANCESTORS = "avg_all_ancestors"
    HARMONIC_ALL_ANCESTORS = "harmonic_all_ancestors"


@dataclass(frozen=True)
class LabelSet:
    doc_id: str
    leaf_ids: tuple[str, ...]
    method: Method
    provenance: Mapping[str, Any] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.leaf_ids)) != len(self.leaf_ids):
            raise StrategyError(f"duplicate labels in LabelSet for {self.doc_id!r}")


@dataclass(frozen=True)
class LeafAssessment:
    node_id: str
    label_fit: bool
    main_focus: str


@dataclass(frozen=True)
class ParentAssessment:
    node_id: str
    label_fit: bool
    relevancy_score: float
    main_focus: str


# -- payload helpers ----------------------------------------------------------


def _node_payload(node: TaxonomyNode, include_description: bool = True) -> dict[str, Any]:
    description = node.description if include_description else None
    if description:
        description = truncate_words(description, DESCRIPTION_MAX_WORDS)
    return {"id": node.id, "name": node.name, "description": description}


def _known_ids(ids: Sequence[str], known: set[str], context: str) -> list[str]:
    """Drop provider-returned ids that are not in the candidate set, keeping order."""
    kept = []
    for node_id in ids:
        if node_id in known and node_id not in kept:
            kept.append(node_id)
        elif node_id not in known:
            logger.warning("%s: dropping unknown label id %r", context, node_id)
    return kept


# -- TravSelect ------------------------------------------------------------------


def classify_trav_select(
    doc: Document,
    taxonomy: Taxonomy,
    gateway: gw.LlmGateway,
    include_descriptions: bool = True,
    per_round_cap: int | None = None,
) -> LabelSet:
    """Layer-by-layer traversal: present each frontier, descend into chosen parents.

    Starts from the top-level nodes; selected leaves accumulate into the
    result and selected parents' children form the next frontier, so the
    loop runs at most max-depth rounds and shows each node once.
    """
    frontier = list(taxonomy.roots)
    selected: list[str] = []
    rounds: list[dict[str, Any]] = []
    flags: list[str] = []
    while frontier:
        nodes = [_node_payload(taxonomy.node(nid), include_descriptions) for nid in frontier]
        parsed = gateway.call_with_retry(gw.build_trav_select_spec(doc, nodes))
        chosen = _known_ids(parsed.ids, set(frontier), f"trav_select[{doc.doc_id}]")
        if per_round_cap is not None:
            chosen = chosen[:per_round_cap]
        rounds.append({"frontier": list(frontier), "selected": list(chosen)})
        if len(rounds) == 1 and not chosen:
            flags.append(FLAG_EMPTY_RESULT)
        next_frontier: list[str] = []
        for node_id in chosen:
            if taxonomy.is_leaf(node_id):
                if node_id not in selected:
                    selected.append(node_id)
            else:
                next_frontier.extend(taxonomy.children(node_id))
        frontier = next_frontier
    if not selected and FLAG_EMPTY_RESULT not in flags:
        flags.append(FLAG_EMPTY_RESULT)
    return LabelSet(
        doc_id=doc.doc_id,
        leaf_ids=tuple(selected),
        method=Method.TRAV_SELECT,
        provenance={"rounds": rounds},
        flags=tuple(flags),
    )


# -- SelectO (one pass) -------------------------------------------------------------


def render_pruned_tree(
    taxonomy: Taxonomy, pt: PrunedTaxonomy, include_descriptions: bool = True
) -> tuple[str, list[dict[str, Any]]]:
    """Depth-indented 'id | name | description' rendering of the pruned taxonomy.

    Returns the rendered text plus the node payloads in render order, each
    flagged with is_leaf (leaf within the full taxonomy).
    """
    lines: list[str] = []
    payloads: list[dict[str, Any]] = []

    def visit(node_id: str, indent: int) -> None:
        node = taxonomy.node(node_id)
        payload = _node_payload(node, include_descriptions)
        payload["is_leaf"] = taxonomy.is_leaf(node_id)
        payloads.append(payload)
        description = payload["description"] or ""
        line = f"{'  ' * indent}{node.id} | {node.name}"
        if description:
            line += f" | {description}"
        lines.append(line)
        for child in taxonomy.children(node_id):
            if child in pt.node_ids:
                visit(child, indent + 1)

    pt_roots = sorted(
        nid
        for nid in pt.node_ids
        if taxonomy.node(nid).parent_id is None or taxonomy.node(nid).parent_id not in pt.node_ids
    )
    for root in pt_roots:
        visit(root, 0)
    return "\n".join(lines), payloads


def classify_select_one_pass(
    doc: Document,
    taxonomy: Taxonomy,
    pt: PrunedTaxonomy,
    gateway: gw.LlmGateway,
    include_descriptions: bool = True,
) -> LabelSet:
    """Single prompt over the whole pruned taxonomy; keep returned leaf ids."""
    tree, payloads = render_pruned_tree(taxonomy, pt, include_descriptions)
    parsed = gateway.call_with_retry(gw.build_select_one_pass_spec(doc, tree, payloads))
    kept = _known_ids(parsed.ids, set(pt.leaf_ids), f"select_one_pass[{doc.doc_id}]")
    flags = (FLAG_EMPTY_RESULT,) if not kept else ()
    return LabelSet(
        doc_id=doc.doc_id,
        leaf_ids=tuple(kept),
        method=Method.SELECT_ONE_PASS,
        provenance={"raw_ids": list(parsed.ids)},
        flags=flags,
    )


# -- Rerank -----------------------------------------------------------------------


def aggregate_score(
    leaf_score: float,
    ancestor_scores: Sequence[float],
    fn: AggregationFunction,
) -> float:
    """Combine a leaf's score with its ancestors' (direct parent first, upward)."""
    if fn is AggregationFunction.LEAF_ONLY:
        return leaf_score
    if fn is AggregationFunction.AVG_DIRECT_PARENT:
        if not ancestor_scores:
            return leaf_score
        return (leaf_score + ancestor_scores[0]) / 2.0
    if fn is AggregationFunction.AVG_ALL_ANCESTORS:
        return fmean([leaf_score, *ancestor_scores])
    if fn is AggregationFunction.HARMONIC_ALL_ANCESTORS:
        values = [leaf_score, *ancestor_scores]
        if any(v <= 0 for v in values):
            raise ValueError("harmonic mean requires strictly positive scores")
        return harmonic_mean(values)
    raise ValueError(f"unknown aggregation function {fn!r}")


def _request_scores(
    doc: Document,
    taxonomy: Taxonomy,
    node_ids: Sequence[str],
    gateway: gw.LlmGateway,
    include_descriptions: bool,
) -> dict[str, float]:
    """One scoring call; unknown ids dropped, missing ids default to 0.01."""
    payloads = [_node_payload(taxonomy.node(nid), include_descriptions) for nid in node_ids]
    parsed = gateway.call_with_retry(gw.build_rerank_spec(doc, payloads))
    wanted = set(node_ids)
    scores: dict[str, float] = {}
    for node_id, score in parsed.pairs:
        if node_id in wanted:
            scores[node_id] = score
        else:
            logger.warning("rerank[%s]: dropping unknown scored id %r", doc.doc_id, node_id)
    if len(scores) * 2 < len(node_ids):
        raise ScoringIncompleteError(
            f"got scores for {len(scores)} of {len(node_ids)} requested nodes"
        )
    for node_id in node_ids:
        scores.setdefault(node_id, 0.01)
    return scores


def classify_rerank(
    doc: Document,
    taxonomy: Taxonomy,
    pt: PrunedTaxonomy,
    gateway: gw.LlmGateway,
    fn: AggregationFunction = AggregationFunction.LEAF_ONLY,
    top_n: int = 5,
    include_descriptions: bool = True,
) -> LabelSet:
    """Score every pruned-taxonomy leaf and its direct parent, then rank.

    The scoring prompt covers leaves and direct parents. When the chosen
    aggregation needs ancestors beyond the direct parent, those are scored
    in a follow-up call; if that call cannot be completed, each leaf's
    direct-parent score stands in for its deeper ancestors and the result
    is flagged.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    leaves = list(pt.leaf_ids)
    parents: list[str] = []
    for leaf_id in leaves:
        parent_id = taxonomy.node(leaf_id).parent_id
        if parent_id is not None and parent_id not in parents:
            parents.append(parent_id)
    scores = _request_scores(doc, taxonomy, leaves + parents, gateway, include_descriptions)

    flags: list[str] = []
    deeper_scores: dict[str, float] = {}
    needs_ancestors = fn in (
        AggregationFunction.AVG_ALL_ANCESTORS,
        AggregationFunction.HARMONIC_ALL_ANCESTORS,
    )
    if needs_ancestors:
        deeper: list[str] = []
        for leaf_id in leaves:
            for ancestor_id in taxonomy.path_to_root(leaf_id)[2:]:
                if ancestor_id not in scores and ancestor_id not in deeper:
                    deeper.append(ancestor_id)
        if deeper:
            try:
                deeper_scores = _request_scores(
                    doc, taxonomy, deeper, gateway, include_descriptions
                )
            except (gw.RetryExhaustedError, gw.ProviderError, ScoringIncompleteError):
                logger.warning("rerank[%s]: ancestor scoring unavailable", doc.doc_id)
                flags.append(FLAG_ANCESTOR_SCORES_UNAVAILABLE)
                deeper_scores = {}

    final: dict[str, float] = {}
    for leaf_id in leaves:
        chain = taxonomy.path_to_root(leaf_id)[1:]
        ancestor_scores: list[float] = []
        if chain:
            parent_score = scores[chain[0]]
            ancestor_scores.append(parent_score)
            if needs_ancestors:
                for ancestor_id in chain[1:]:
                    ancestor_scores.append(deeper_scores.get(ancestor_id, parent_score))
        final[leaf_id] = aggregate_score(scores[leaf_id], ancestor_scores, fn)

    ranked = sorted(leaves, key=lambda nid: (-final[nid], nid))[:top_n]
    return LabelSet(
        doc_id=doc.doc_id,
        leaf_ids=tuple(ranked),
        method=Method.RERANK,
        provenance={
            "aggregation": fn.value,
            "raw_scores": {nid: scores[nid] for nid in sorted(scores)},
            "ancestor_scores": {nid: deeper_scores[nid] for nid in sorted(deeper_scores)},
            "final_scores": {nid: final[nid] for nid in sorted(final)},
        },
        flags=tuple(flags),
    )


# -- SelectP (pointwise) ---------------------------------------------------------------


def assess_leaf(
    doc: Document,
    node: TaxonomyNode,
    gateway: gw.LlmGateway,
    include_description: bool = True,
) -> LeafAssessment:
    parsed = gateway.call_with_retry(
        gw.build_selectp_leaf_spec(doc, _node_payload(node, include_description))
    )
    return LeafAssessment(node_id=node.id, label_fit=parsed.label_fit, main_focus=parsed.main_focus)


def assess_parent(
    doc: Document,
    node: TaxonomyNode,
    gateway: gw.LlmGateway,
    include_description: bool = True,
) -> ParentAssessment:
    parsed = gateway.call_with_retry(
        gw.build_selectp_parent_spec(doc, _node_payload(node, include_description))
    )
    return ParentAssessment(
        node_id=node.id,
        label_fit=parsed.label_fit,
        relevancy_score=parsed.relevancy_score,
        main_focus=parsed.main_focus,
    )


@dataclass(frozen=True)
class PointwiseTrace:
    """Everything the pointwise pass learned, in pruned-taxonomy leaf order."""

    leaf_order: tuple[str, ...]
    parent_of: Mapping[str, str | None]
    leaf_verdicts: Mapping[str, LeafAssessment]
    parent_verdicts: Mapping[str, ParentAssessment]

    def survivors(self) -> list[str]:
        """Leaves that fit and whose direct parent (if any, if assessed) also fits."""
        out = []
        for leaf_id in self.leaf_order:
            if not self.leaf_verdicts[leaf_id].label_fit:
                continue
            parent_id = self.parent_of[leaf_id]
            if parent_id is not None and parent_id in self.parent_verdicts:
                if not self.parent_verdicts[parent_id].label_fit:
                    continue
            out.append(leaf_id)
        return out


def adjust_label_count(
    trace: PointwiseTrace, label_range: tuple[int, int]
) -> tuple[tuple[str, ...], list[str], bool]:
    """Backfill below-minimum results; oversized results defer to post-processing.

    Returns (leaf ids, backfilled ids, shortfall). Backfill order: leaves
    rejected only at the parent stage, by descending parent relevancy (ties
    by leaf order), then remaining leaves in pruned-taxonomy ranking order.
    """
    min_labels, max_labels = label_range
    if not 1 <= min_labels <= max_labels:
        raise ValueError(f"invalid label range {label_range}")
    chosen = trace.survivors()
    if len(chosen) >= min_labels:
        return tuple(chosen), [], False

    order_index = {leaf_id: i for i, leaf_id in enumerate(trace.leaf_order)}
    parent_rejected = [
        leaf_id
        for leaf_id in trace.leaf_order
        if leaf_id not in chosen
        and trace.leaf_verdicts[leaf_id].label_fit
        and trace.parent_of[leaf_id] is not None
        and trace.parent_of[leaf_id] in trace.parent_verdicts
    ]
    parent_rejected.sort(
        key=lambda lid: (
            -trace.parent_verdicts[trace.parent_of[lid]].relevancy_score,
            order_index[lid],
        )
    )
    backfilled: list[str] = []
    for leaf_id in parent_rejected:
        if len(chosen) + len(backfilled) >= min_labels:
            break
        backfilled.append(leaf_id)
    if len(chosen) + len(backfilled) < min_labels:
        taken = set(chosen) | set(backfilled)
        for leaf_id in trace.leaf_order:
            if len(chosen) + len(backfilled) >= min_labels:
                break
            if leaf_id not in taken:
                backfilled.append(leaf_id)
    result = tuple(chosen) + tuple(backfilled)
    shortfall = len(result) < min_labels
    return result, backfilled, shortfall


def classify_select_pointwise(
    doc: Document,
    taxonomy: Taxonomy,
    pt: PrunedTaxonomy,
    gateway: gw.LlmGateway,
    label_range: tuple[int, int] = (1, 5),
    contextualize: bool = True,
    include_descriptions: bool = True,
) -> LabelSet:
    """Independent binary verdict per leaf, then per direct parent, then adjust.

    A leaf survives only when its own verdict and its parent's verdict are
    both positive (contextualization); each parent is assessed once per
    document. With contextualize off, leaf verdicts alone decide.
    """
    leaf_verdicts: dict[str, LeafAssessment] = {}
    parent_of: dict[str, str | None] = {}
    for leaf_id in pt.leaf_ids:
        node = taxonomy.node(leaf_id)
        parent_of[leaf_id] = node.parent_id
        leaf_verdicts[leaf_id] = assess_leaf(doc, node, gateway, include_descriptions)

    parent_verdicts: dict[str, ParentAssessment] = {}
    if contextualize:
        for leaf_id in pt.leaf_ids:
            parent_id = parent_of[leaf_id]
            if (
                leaf_verdicts[leaf_id].label_fit
                and parent_id is not None
                and parent_id not in parent_verdicts
            ):
                parent_verdicts[parent_id] = assess_parent(
                    doc, taxonomy.node(parent_id), gateway, include_descriptions
                )

    trace = PointwiseTrace(
        leaf_order=tuple(pt.leaf_ids),
        parent_of=parent_of,
        leaf_verdicts=leaf_verdicts,
        parent_verdicts=parent_verdicts,
    )
    leaf_ids, backfilled, shortfall = adjust_label_count(trace, label_range)
    flags: list[str] = []
    if shortfall:
        flags.append(FLAG_SHORTFALL)
    if not leaf_ids:
        flags.append(FLAG_EMPTY_RESULT)
    provenance = {
        "leaf_verdicts": {
            lid: {"label_fit": v.label_fit, "main_focus": v.main_focus}
            for lid, v in sorted(leaf_verdicts.items())
        },
        "parent_verdicts": {
            pid: {
                "label_fit": v.label_fit,
                "relevancy_score": v.relevancy_score,
                "main_focus": v.main_focus,
            }
            for pid, v in sorted(parent_verdicts.items())
        },
        "backfilled": list(backfilled),
    }
    return LabelSet(
        doc_id=doc.doc_id,
        leaf_ids=leaf_ids,
        method=Method.SELECT_POINTWISE,
        provenance=provenance,
        flags=tuple(flags),
    )


def with_flags(labels: LabelSet, *new_flags: str) -> LabelSet:
    merged = list(labels.flags)
    for flag in new_flags:
        if flag not in merged:
            merged.append(flag)
    return replace(labels, flags=tuple(merged))
