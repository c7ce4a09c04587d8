"""Reflective answering loop: gather evidence, generate, reflect, expand.

Generation follows the three-agent pattern: a text agent over the textual
evidence, an image agent over the visual evidence, and a summarizer that
filters declining agents and emits the final answer as JSON.  A yes/no
reflection verdict decides whether to expand evidence via the document
hierarchy and try again.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import gateway
from .builder import SummaryTree
from .index import Index
from .model import DMap, ExpansionPolicy, neighborhood
from .retrieval import EvidenceSet, RetrievalConfig, retrieve

logger = logging.getLogger(__name__)

NOT_ANSWERABLE = "not answerable"


def is_not_answerable(text: str) -> bool:
    return text.strip().lower() == NOT_ANSWERABLE


@dataclass(frozen=True)
class EvidenceFeatures:
    text_blocks: tuple[tuple[str, str], ...]   # (element_id, text)
    image_refs: tuple[tuple[str, str], ...]    # (element_id, image path)


@dataclass(frozen=True)
class CandidateAnswer:
    text: str
    agent_transcripts: dict[str, str]
    round: int


@dataclass(frozen=True)
class ReflectVerdict:
    done: bool
    raw: str


@dataclass(frozen=True)
class QAConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    max_rounds: int = 2
    paths: tuple[str, ...] = ("structured", "textual", "visual")

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass(frozen=True)
class RoundTrace:
    round: int
    evidence_ids: tuple[str, ...]
    answer: str
    verdict: ReflectVerdict


@dataclass(frozen=True)
class FinalAnswer:
    answer: str
    unanswerable: bool
    rounds: tuple[RoundTrace, ...]

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "unanswerable": self.unanswerable,
            "rounds": [
                {
                    "round": r.round,
                    "evidence_ids": list(r.evidence_ids),
                    "answer": r.answer,
                    "verdict": {"done": r.verdict.done, "raw": r.verdict.raw},
                }
                for r in self.rounds
            ],
        }


def gather_features(m: DMap, ids) -> EvidenceFeatures:
    """Project evidence ids onto their text blocks and image references."""
    text_blocks: list[tuple[str, str]] = []
    image_refs: list[tuple[str, str]] = []
    seen_text: set[str] = set()
    seen_images: set[str] = set()
    for eid in ids:
        if eid not in m.elements:
            raise KeyError(f"unknown element id {eid!r}")
        e = m.elements[eid]
        if e.kind.value == "page_content":
            page = m.page(e.page_no)
            text = page.text if page is not None else e.text_desc
        else:
            text = e.text_desc
        if text.strip() and eid not in seen_text:
            seen_text.add(eid)
            text_blocks.append((eid, text))
        if e.image_ref and e.image_ref not in seen_images:
            seen_images.add(e.image_ref)
            image_refs.append((eid, e.image_ref))
    return EvidenceFeatures(tuple(text_blocks), tuple(image_refs))


def generate(llm, q: str, feats: EvidenceFeatures, round_no: int = 0,
             image_root=None) -> CandidateAnswer:
    """Text agent + image agent, then the summarizer over both answers."""
    contexts = "\n\n".join(text for _, text in feats.text_blocks)
    text_answer = gateway.complete(
        llm, "text_agent", {"question": q, "contexts": contexts}
    ).strip()
    attachments = tuple(
        str(Path(image_root) / ref) if image_root is not None else ref
        for _, ref in feats.image_refs
    )
    image_answer = gateway.complete(
        llm, "image_agent", {"question": q}, attachments=attachments
    ).strip()

    transcripts = {"text_agent": text_answer, "image_agent": image_answer}
    surviving = [a for a in (text_answer, image_answer) if not is_not_answerable(a)]
    if not surviving:
        return CandidateAnswer(NOT_ANSWERABLE, transcripts, round_no)

    answers = "\n".join(
        f"{name}: {answer}" for name, answer in transcripts.items()
    )
    final = None
    for attempt in range(2):
        raw = gateway.complete(
            llm, "gen_summarize_agent", {"question": q, "answers": answers}
        )
        transcripts["gen_summarize_agent"] = raw
        block = gateway.extract_json_block(raw)
        if block is not None:
            try:
                obj = json.loads(block)
            except json.JSONDecodeError:
                obj = None
            if isinstance(obj, dict) and isinstance(obj.get("Answer"), str):
                final = obj["Answer"].strip()
                break
    if final is None:
        logger.warning("summarizer output unparseable, using text agent answer")
        final = text_answer if not is_not_answerable(text_answer) else surviving[0]
    if not final:
        final = NOT_ANSWERABLE
    return CandidateAnswer(final, transcripts, round_no)


def _normalize_verdict(raw: str) -> Optional[bool]:
    token = raw.strip().lower().rstrip(".,!?;: \t\n\"'")
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


def reflect(llm, q: str, a: str) -> ReflectVerdict:
    """Yes/no completeness check; unparseable responses count as no."""
    raw = ""
    for attempt in range(2):
        raw = gateway.complete(llm, "reflect_agent", {"question": q, "answer": a})
        verdict = _normalize_verdict(raw)
        if verdict is not None:
            return ReflectVerdict(done=verdict, raw=raw)
    logger.warning("reflect verdict unparseable after retry: %r", raw)
    return ReflectVerdict(done=False, raw=raw)


def expand_evidence(m: DMap, current: tuple[str, ...], cap: int) -> tuple[str, ...]:
    """Union of hierarchy neighborhoods over current evidence, capped."""
    seen = set(current)
    added: list[str] = []
    for seed in current:
        for eid in neighborhood(m, seed, ExpansionPolicy(seen=frozenset(seen))):
            if eid not in seen:
                seen.add(eid)
                added.append(eid)
    return tuple(added[:cap])


def answer_query(
    q: str,
    m: DMap,
    index: Index,
    llm,
    cfg: QAConfig,
    tree: Optional[SummaryTree] = None,
    text_backend=None,
    vis_backend=None,
    image_root=None,
) -> FinalAnswer:
    """The full retrieve / generate / reflect / expand loop for one query."""
    evidence = retrieve(
        q, m, index, llm, cfg.retrieval,
        tree=tree, text_backend=text_backend, vis_backend=vis_backend,
        paths=cfg.paths,
    )
    ids: tuple[str, ...] = evidence.ids
    traces: list[RoundTrace] = []
    answer = None
    verdict = ReflectVerdict(done=False, raw="")
    cap = cfg.retrieval.k_text + cfg.retrieval.k_visual
    for round_no in range(cfg.max_rounds + 1):
        feats = gather_features(m, ids)
        answer = generate(llm, q, feats, round_no=round_no, image_root=image_root)
        verdict = reflect(llm, q, answer.text)
        traces.append(RoundTrace(round_no, ids, answer.text, verdict))
        if verdict.done or round_no == cfg.max_rounds:
            break
        added = expand_evidence(m, ids, cap)
        ids = ids + added
    unanswerable = not verdict.done and is_not_answerable(answer.text)
    return FinalAnswer(
        answer=answer.text, unanswerable=unanswerable, rounds=tuple(traces)
    )
