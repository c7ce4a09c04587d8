"""Incremental map construction: per-page summarization + outline growth.

The document is folded page by page through the summarize agent, which
returns an updated outline and a one-line page summary.  The final outline
is nested into the section tree by dotted numbering, element descriptions
are filled in, and the whole map is validated.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

from . import gateway
from .bundle import DocBundle, to_pages
from .model import DMap, ElementKind, Page, SectionNode, validate_map

logger = logging.getLogger(__name__)

OutlineEntry = tuple[str, str, tuple[int, ...]]  # (number_path, title, pages)


class OutlineParseError(ValueError):
    pass


class BuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutlineState:
    entries: tuple[OutlineEntry, ...] = ()
    step: int = 0

    def page_union(self) -> set[int]:
        return {n for _, _, pages in self.entries for n in pages}


@dataclass(frozen=True)
class PageSummary:
    page_no: int
    sentence: str
    element_notes: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class SummaryTree:
    text: str
    outline_text: str
    summary_text: str


# Outline text <-> entries -------------------------------------------------

_SEP_RE = re.compile(r"\s*(?:< >|<\|>)\s*")


def render_outline(state: OutlineState) -> str:
    return "\n".join(
        "%s:%s < > %s" % (num, title, ",".join(str(p) for p in pages))
        for num, title, pages in state.entries
    )


def parse_outline_lines(text: str) -> list[OutlineEntry]:
    """Parse bare outline lines (no ``Outline:`` header required)."""
    entries: list[OutlineEntry] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        number, colon, rest = line.partition(":")
        if not colon:
            logger.warning("outline line without ':' skipped: %r", line)
            continue
        parts = _SEP_RE.split(rest, maxsplit=1)
        if len(parts) != 2:
            logger.warning("outline line without page separator skipped: %r", line)
            continue
        title, pages_csv = parts
        pages = []
        for tok in pages_csv.split(","):
            tok = tok.strip()
            if tok.isdigit():
                pages.append(int(tok))
        entries.append((number.strip(), title.strip(), tuple(sorted(set(pages)))))
    return entries


def parse_outline(text: str) -> OutlineState:
    """Extract and parse the ``Outline:`` block of an agent response."""
    lines = text.splitlines()
    start = None
    for i, line in enumerate(lines):
        if line.strip() == "Outline:":
            start = i + 1
            break
    if start is None:
        raise OutlineParseError("no Outline block in response")
    block = []
    for line in lines[start:]:
        stripped = line.strip()
        if stripped.startswith("Current page summary") or stripped.startswith(
            "Page summaries"
        ):
            break
        block.append(line)
    return OutlineState(entries=tuple(parse_outline_lines("\n".join(block))))


_PAGE_SUMMARY_RE = re.compile(r"^Page\s+(\d+)\s*:\s*(.*)$")
_NOTE_RE = re.compile(r"^\s*([^:]{1,120}?)\s*:\s*(.+)$")


def parse_page_summary(text: str, page_no: int) -> PageSummary:
    lines = text.splitlines()
    sentence = ""
    notes: list[tuple[str, str]] = []
    in_block = False
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("Current page summary"):
            in_block = True
            continue
        if not in_block or not stripped:
            continue
        m = _PAGE_SUMMARY_RE.match(stripped)
        if m and not sentence:
            sentence = m.group(2).strip().strip("[]") or "no content"
            continue
        if sentence:
            if stripped.lower() == "no figure or table":
                continue
            n = _NOTE_RE.match(stripped)
            if n:
                notes.append((n.group(1).strip(), n.group(2).strip().strip("[]")))
    return PageSummary(
        page_no=page_no, sentence=sentence or "no content", element_notes=tuple(notes)
    )


# The fold -----------------------------------------------------------------

def _fallback_state(s_prev: OutlineState, page_no: int) -> OutlineState:
    entries = list(s_prev.entries)
    if entries:
        num, title, pages = entries[-1]
        entries[-1] = (num, title, tuple(sorted(set(pages) | {page_no})))
    else:
        # front matter before any detected heading
        entries.append(("0", "Document", (page_no,)))
    return OutlineState(entries=tuple(entries), step=s_prev.step + 1)


def _state_acceptable(s_prev: OutlineState, s_new: OutlineState, page_no: int) -> bool:
    prev_paths = {num for num, _, _ in s_prev.entries}
    new_paths = {num for num, _, _ in s_new.entries}
    return prev_paths <= new_paths and page_no in s_new.page_union()


def summarize_step(
    backend,
    s_prev: OutlineState,
    p_prev: Optional[Page],
    p_cur: Page,
) -> tuple[OutlineState, PageSummary]:
    """One step of the outline fold: integrate page ``p_cur``.

    A non-compliant response (shrinking outline, current page missing,
    unparseable block) gets one repair retry; after that the page is
    appended to the last outline entry as a fallback.
    """
    variables = {
        "outline": render_outline(s_prev),
        "previous_page": p_prev.text if p_prev is not None else "",
        "current_page": p_cur.text,
        "page_number": p_cur.number,
    }
    response = None
    for attempt in range(2):
        try:
            response = gateway.complete(backend, "summarize_agent", variables)
        except gateway.BackendError as exc:
            if attempt:
                raise BuildError(f"page {p_cur.number}: backend failed: {exc}") from exc
            continue
        try:
            state = parse_outline(response)
        except OutlineParseError:
            continue
        state = replace(state, step=s_prev.step + 1)
        if _state_acceptable(s_prev, state, p_cur.number):
            return state, parse_page_summary(response, p_cur.number)
    logger.warning("page %d: outline response non-compliant, fallback applied",
                   p_cur.number)
    summary = (
        parse_page_summary(response, p_cur.number)
        if response is not None
        else PageSummary(page_no=p_cur.number, sentence="no content")
    )
    return _fallback_state(s_prev, p_cur.number), summary


def outline_to_sections(entries) -> tuple[SectionNode, ...]:
    """Nest flat numbered entries into a tree by dotted-path parenthood.

    An entry whose exact parent path is absent becomes a root.  Pages
    propagate upward so every ancestor covers its descendants.
    """
    children: dict[str, list] = {}
    nodes: dict[str, dict] = {}
    roots: list[str] = []
    for num, title, pages in entries:
        if num in nodes:
            nodes[num]["pages"].update(pages)
            continue
        nodes[num] = {"title": title, "pages": set(pages)}
        parent, _, tail = num.rpartition(".")
        if parent and parent in nodes:
            children.setdefault(parent, []).append(num)
        else:
            roots.append(num)

    def build(num: str) -> SectionNode:
        kids = tuple(build(c) for c in children.get(num, []))
        pages = set(nodes[num]["pages"])
        for k in kids:
            pages.update(k.pages)
        return SectionNode(
            number_path=num,
            title=nodes[num]["title"],
            pages=tuple(sorted(pages)),
            children=kids,
        )

    return tuple(build(num) for num in roots)


def _describe_element(backend, element) -> str:
    if element.caption:
        return element.caption
    try:
        return gateway.complete(
            backend,
            "element_describe",
            {"label": element.label or "", "caption": element.caption or ""},
        ).strip()
    except gateway.BackendError as exc:
        logger.warning("describe failed for %s: %s", element.id, exc)
        return element.label or ""


def build_map(bundle: DocBundle, backend, describe_workers: int = 4) -> DMap:
    """Run the full construction fold over a bundle."""
    pages, elements = to_pages(bundle)
    state = OutlineState()
    summaries: dict[int, PageSummary] = {}
    prev: Optional[Page] = None
    for page in pages:
        state, summary = summarize_step(backend, state, prev, page)
        summaries[page.number] = summary
        prev = page

    # safety net: every page must appear in the final outline
    covered = state.page_union()
    for page in pages:
        if page.number not in covered:
            state = _fallback_state(state, page.number)

    todo = [e for e in elements.values() if e.kind != ElementKind.PAGE_CONTENT]
    if todo:
        with ThreadPoolExecutor(max_workers=max(1, describe_workers)) as pool:
            descs = list(pool.map(lambda e: _describe_element(backend, e), todo))
        for element, desc in zip(todo, descs):
            elements[element.id] = replace(element, text_desc=desc)

    final_pages = tuple(
        replace(p, summary=summaries[p.number].sentence) for p in pages
    )
    m = DMap(
        doc_id=bundle.doc_id,
        sections=outline_to_sections(state.entries),
        pages=final_pages,
        elements=elements,
    )
    violations = validate_map(m)
    if violations:
        raise BuildError(f"constructed map is invalid: {violations[:3]}")
    return m


# Summary tree rendering ---------------------------------------------------

def _outline_from_map(m: DMap) -> str:
    lines = []
    for node in m.walk_sections():
        lines.append(
            "%s:%s < > %s"
            % (node.number_path, node.title, ",".join(str(p) for p in node.pages))
        )
    return "\n".join(lines)


def render_summary_tree(m: DMap) -> SummaryTree:
    """Deterministic text fed to the locate agent: outline + page summaries."""
    outline = _outline_from_map(m)
    lines = []
    for p in m.pages:
        lines.append("Page %d: %s" % (p.number, p.summary or "no content"))
        for eid in p.element_ids:
            e = m.elements[eid]
            if e.kind == ElementKind.PAGE_CONTENT:
                continue
            name = e.label or e.kind.value
            desc = e.text_desc or e.caption or ""
            lines.append("  %s: %s" % (name, desc))
    summary = "\n".join(lines)
    text = "Outline:\n%s\n\nPage summaries:\n%s\n" % (outline, summary)
    return SummaryTree(text=text, outline_text=outline, summary_text=summary)
