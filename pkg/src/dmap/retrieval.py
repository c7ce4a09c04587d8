"""Tri-path retrieval: structured (locate agent), textual, and visual.

The three paths run independently and fuse by union with provenance:
structured hits lead in relevance order, then remaining textual hits by
score, then remaining visual hits by score.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from . import gateway
from .builder import SummaryTree
from .index import TEXT, VISUAL, Index
from .model import (
    DMap,
    LocationRef,
    NOT_MENTIONED,
    NOT_MENTIONED_REF,
    figure_ref,
    page_ref,
    resolve_location,
    table_ref,
)

logger = logging.getLogger(__name__)

STRUCTURED = "structured"
TEXTUAL = "textual"
VISUAL_PATH = "visual"
ALL_PATHS = (STRUCTURED, TEXTUAL, VISUAL_PATH)


@dataclass(frozen=True)
class RetrievalConfig:
    k_text: int = 4
    k_visual: int = 4
    k_structured: int = 4

    def __post_init__(self):
        if min(self.k_text, self.k_visual, self.k_structured) < 1:
            raise ValueError("all retrieval caps must be >= 1")


@dataclass(frozen=True)
class PathResult:
    path: str
    hits: tuple[tuple[str, Optional[float]], ...]  # (element_id, score)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(eid for eid, _ in self.hits)


@dataclass(frozen=True)
class EvidenceItem:
    element_id: str
    provenance: frozenset[str]


@dataclass(frozen=True)
class EvidenceSet:
    items: tuple[EvidenceItem, ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(i.element_id for i in self.items)

    def provenance(self, element_id: str) -> frozenset[str]:
        for i in self.items:
            if i.element_id == element_id:
                return i.provenance
        return frozenset()


# Location parsing ---------------------------------------------------------

_ROMAN_VALUES = {"i": 1, "v": 5, "x": 10, "l": 50, "c": 100, "d": 500, "m": 1000}
_LOC_RE = re.compile(
    r"^(page|table|figure)\s+([0-9]+|[ivxlcdm]+)[.,;:!?]*$", re.IGNORECASE
)


def _roman_to_int(s: str) -> Optional[int]:
    total = 0
    prev = 0
    for ch in reversed(s.lower()):
        v = _ROMAN_VALUES[ch]
        if v < prev:
            total -= v
        else:
            total += v
            prev = v
    return total if total > 0 else None


def normalize_location(raw: str) -> LocationRef:
    """Total function: any unrecognized form becomes not-mentioned."""
    cleaned = " ".join(raw.strip().split())
    m = _LOC_RE.match(cleaned)
    if not m:
        return NOT_MENTIONED_REF
    kind = m.group(1).lower()
    token = m.group(2)
    if token.isdigit():
        number = int(token)
    else:
        number = _roman_to_int(token)
    if not number or number < 1:
        return NOT_MENTIONED_REF
    ctor = {"page": page_ref, "table": table_ref, "figure": figure_ref}[kind]
    return ctor(number)


@dataclass(frozen=True)
class ParsedLocations:
    refs: tuple[LocationRef, ...]
    warning: bool = False


def parse_locations(llm_output: str) -> ParsedLocations:
    """Read the locate agent's ``{"location": [...]}`` object.

    Order is preserved (the agent ranks by relevance); unrecognized
    entries are dropped.  Missing/invalid JSON yields an empty result with
    the warning flag set.
    """
    obj = None
    for block in gateway.iter_json_blocks(llm_output):
        try:
            obj = json.loads(block)
        except json.JSONDecodeError:
            continue
        break
    if not isinstance(obj, dict) or not isinstance(obj.get("location"), list):
        return ParsedLocations((), warning=True)
    refs = [normalize_location(str(entry)) for entry in obj["location"]]
    return ParsedLocations(
        tuple(r for r in refs if r.kind != NOT_MENTIONED)
    )


# The three paths ----------------------------------------------------------

def structured_retrieve(
    llm, q: str, tree: SummaryTree, m: DMap, cfg: RetrievalConfig
) -> PathResult:
    try:
        response = gateway.complete(
            llm,
            "locate_agent",
            {"summary": tree.summary_text, "outline": tree.outline_text,
             "question": q},
        )
    except gateway.BackendError as exc:
        logger.warning("structured path failed, continuing without it: %s", exc)
        return PathResult(STRUCTURED, ())
    parsed = parse_locations(response)
    if parsed.warning:
        logger.warning("locate agent output unparseable, structured path empty")
    hits: list[tuple[str, Optional[float]]] = []
    seen: set[str] = set()
    for ref in parsed.refs:
        res = resolve_location(m, ref)
        if res.warning:
            logger.warning("locate agent: %s", res.warning)
        for eid in res.element_ids:
            if eid not in seen:
                seen.add(eid)
                hits.append((eid, None))
    return PathResult(STRUCTURED, tuple(hits[: cfg.k_structured]))


def textual_retrieve(index: Index, query_matrix, cfg: RetrievalConfig) -> PathResult:
    return PathResult(
        TEXTUAL, tuple(index.topk(query_matrix, TEXT, cfg.k_text))
    )


def visual_retrieve(index: Index, query_matrix, cfg: RetrievalConfig) -> PathResult:
    return PathResult(
        VISUAL_PATH, tuple(index.topk(query_matrix, VISUAL, cfg.k_visual))
    )


def fuse(results: list[PathResult]) -> EvidenceSet:
    """Union with provenance.  Structured first, then textual, then visual."""
    order = {STRUCTURED: 0, TEXTUAL: 1, VISUAL_PATH: 2}
    provenance: dict[str, set[str]] = {}
    sequence: list[str] = []
    for result in sorted(results, key=lambda r: order[r.path]):
        for eid in result.ids:
            if eid not in provenance:
                provenance[eid] = set()
                sequence.append(eid)
            provenance[eid].add(result.path)
    return EvidenceSet(
        items=tuple(
            EvidenceItem(eid, frozenset(provenance[eid])) for eid in sequence
        )
    )


def retrieve(
    q: str,
    m: DMap,
    index: Index,
    llm,
    cfg: RetrievalConfig,
    tree: Optional[SummaryTree] = None,
    text_backend=None,
    vis_backend=None,
    paths=ALL_PATHS,
) -> EvidenceSet:
    """Run the enabled paths for one query and fuse the results."""
    from .builder import render_summary_tree

    results: list[PathResult] = []
    if STRUCTURED in paths:
        results.append(
            structured_retrieve(llm, q, tree or render_summary_tree(m), m, cfg)
        )
    else:
        results.append(PathResult(STRUCTURED, ()))
    if TEXTUAL in paths and text_backend is not None:
        results.append(textual_retrieve(index, text_backend.embed_query(q), cfg))
    else:
        results.append(PathResult(TEXTUAL, ()))
    if VISUAL_PATH in paths and vis_backend is not None:
        results.append(visual_retrieve(index, vis_backend.embed_query(q), cfg))
    else:
        results.append(PathResult(VISUAL_PATH, ()))
    return fuse(results)
