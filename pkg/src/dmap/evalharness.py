"""Dataset loading, boolean-judge scoring, and the evaluation report.

Questions live in a neutral JSONL file.  Each system answer is judged by
an LLM backend demanding a yes/no token; questions marked unanswerable
score correct, without a judge call, exactly when the system flags its
answer unanswerable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import gateway
from .qa import FinalAnswer, _normalize_verdict

logger = logging.getLogger(__name__)

EVIDENCE_SOURCES = ("pure_text", "layout", "table", "chart", "figure")


@dataclass(frozen=True)
class QARecord:
    question_id: str
    doc_id: str
    question: str
    reference: str
    sources: tuple[str, ...] = ()
    answerable: bool = True

    def __post_init__(self):
        if self.answerable and not (self.question and self.reference):
            raise ValueError(
                f"{self.question_id}: answerable questions need question and reference"
            )


@dataclass(frozen=True)
class Verdict:
    question_id: str
    correct: bool
    judged_by: str
    answer: str
    reflection_fired: bool


@dataclass(frozen=True)
class AblationConfig:
    enable_text: bool = True
    enable_visual: bool = True
    enable_structured: bool = True

    def __post_init__(self):
        if not (self.enable_text or self.enable_visual or self.enable_structured):
            raise ValueError("at least one retrieval path must stay enabled")

    def paths(self) -> tuple[str, ...]:
        out = []
        if self.enable_structured:
            out.append("structured")
        if self.enable_text:
            out.append("textual")
        if self.enable_visual:
            out.append("visual")
        return tuple(out)


def load_dataset(path) -> list[QARecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(QARecord(
                question_id=str(d.get("question_id", lineno)),
                doc_id=d["doc_id"],
                question=d.get("question", ""),
                reference=d.get("reference", ""),
                sources=tuple(d.get("sources", ())),
                answerable=bool(d.get("answerable", True)),
            ))
    return records


def judge(llm, question: str, reference: str, candidate: str,
          judged_by: str = "judge") -> bool:
    """Boolean judgment of candidate vs reference; unparseable counts wrong."""
    raw = ""
    for attempt in range(2):
        raw = gateway.complete(
            llm, "judge_agent",
            {"question": question, "reference": reference, "candidate": candidate},
        )
        verdict = _normalize_verdict(raw)
        if verdict is not None:
            return verdict
    logger.warning("judge output unparseable after retry: %r", raw)
    return False


def accuracy(verdicts: list[Verdict]) -> float:
    if not verdicts:
        raise ValueError("accuracy of an empty verdict list is undefined")
    return sum(1 for v in verdicts if v.correct) / len(verdicts)


def score_record(llm, record: QARecord, result: FinalAnswer,
                 judged_by: str = "judge") -> Verdict:
    reflection_fired = len(result.rounds) > 1
    if not record.answerable:
        correct = result.unanswerable
        judged = "rule:negative-rejection"
    else:
        correct = judge(llm, record.question, record.reference, result.answer,
                        judged_by=judged_by)
        judged = judged_by
    return Verdict(
        question_id=record.question_id,
        correct=correct,
        judged_by=judged,
        answer=result.answer,
        reflection_fired=reflection_fired,
    )


def evaluate(dataset: list[QARecord], run_question, cfg: AblationConfig,
             judge_llm, judged_by: str = "judge") -> dict:
    """Run every question through ``run_question`` and aggregate the report.

    ``run_question(record, paths)`` must return a FinalAnswer (or None when
    the document is unavailable, which skips the question with a warning).
    """
    verdicts: list[Verdict] = []
    by_source: dict[str, list[Verdict]] = {}
    traces = []
    skipped = []
    for record in dataset:
        result = run_question(record, cfg.paths())
        if result is None:
            logger.warning("question %s skipped: document unavailable",
                           record.question_id)
            skipped.append(record.question_id)
            continue
        verdict = score_record(judge_llm, record, result, judged_by=judged_by)
        verdicts.append(verdict)
        for source in record.sources:
            by_source.setdefault(source, []).append(verdict)
        traces.append({
            "question_id": record.question_id,
            "answer": result.answer,
            "unanswerable": result.unanswerable,
            "correct": verdict.correct,
            "rounds": len(result.rounds),
            "reflection_fired": verdict.reflection_fired,
        })
    fired = [v for v in verdicts if v.reflection_fired]
    report = {
        "config": {
            "enable_text": cfg.enable_text,
            "enable_visual": cfg.enable_visual,
            "enable_structured": cfg.enable_structured,
        },
        "total": len(verdicts),
        "correct": sum(1 for v in verdicts if v.correct),
        "accuracy": accuracy(verdicts) if verdicts else None,
        "per_source": {
            source: {
                "count": len(vs),
                "correct": sum(1 for v in vs if v.correct),
                "accuracy": accuracy(vs),
            }
            for source, vs in sorted(by_source.items())
        },
        "reflection": {
            "fired": len(fired),
            "fired_correct": sum(1 for v in fired if v.correct),
            "fired_accuracy": accuracy(fired) if fired else None,
        },
        "skipped": skipped,
        "questions": traces,
    }
    return report


def write_report(report: dict, path) -> None:
    Path(path).write_text(
        json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        "utf-8",
    )
