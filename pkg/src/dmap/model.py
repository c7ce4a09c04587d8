"""Hierarchical document map: types, invariants, serialization, queries.

The map is a section tree over pages, where each page holds an ordered set
of elements (figures, tables, charts, and one full-page ``page_content``
element).  Maps are immutable after construction; everything here is a
read-only query or a pure validation pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional


class ElementKind(str, Enum):
    FIGURE = "figure"
    TABLE = "table"
    CHART = "chart"
    PAGE_CONTENT = "page_content"


@dataclass(frozen=True)
class Element:
    id: str
    kind: ElementKind
    page_no: int
    label: Optional[str] = None
    caption: Optional[str] = None
    text_desc: str = ""
    image_ref: Optional[str] = None
    bbox: Optional[tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class Page:
    number: int
    text: str
    screenshot_ref: str
    element_ids: tuple[str, ...]
    summary: str = ""


@dataclass(frozen=True)
class SectionNode:
    number_path: str
    title: str
    pages: tuple[int, ...]
    children: tuple["SectionNode", ...] = ()

    def walk(self) -> Iterator["SectionNode"]:
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class DMap:
    doc_id: str
    sections: tuple[SectionNode, ...]
    pages: tuple[Page, ...]
    elements: dict[str, Element]

    def page(self, number: int) -> Optional[Page]:
        for p in self.pages:
            if p.number == number:
                return p
        return None

    def walk_sections(self) -> Iterator[SectionNode]:
        for root in self.sections:
            yield from root.walk()


# Location references ------------------------------------------------------

PAGE = "page"
TABLE = "table"
FIGURE = "figure"
NOT_MENTIONED = "not_mentioned"


@dataclass(frozen=True)
class LocationRef:
    kind: str  # PAGE | TABLE | FIGURE | NOT_MENTIONED
    number: Optional[int] = None

    def __post_init__(self):
        if self.kind == NOT_MENTIONED:
            if self.number is not None:
                raise ValueError("not-mentioned carries no number")
        elif self.kind in (PAGE, TABLE, FIGURE):
            if not isinstance(self.number, int) or self.number < 1:
                raise ValueError(f"{self.kind} reference needs a positive number")
        else:
            raise ValueError(f"unknown location kind {self.kind!r}")

    def display(self) -> str:
        if self.kind == NOT_MENTIONED:
            return "not mentioned"
        return f"{self.kind.capitalize()} {self.number}"


def page_ref(n: int) -> LocationRef:
    return LocationRef(PAGE, n)


def table_ref(n: int) -> LocationRef:
    return LocationRef(TABLE, n)


def figure_ref(n: int) -> LocationRef:
    return LocationRef(FIGURE, n)


NOT_MENTIONED_REF = LocationRef(NOT_MENTIONED)


# Validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


ValidationReport = list


def validate_map(m: DMap) -> list[Violation]:
    """Check every structural invariant; returns [] for a valid map."""
    out: list[Violation] = []
    page_numbers = [p.number for p in m.pages]
    n = len(page_numbers)
    if page_numbers != list(range(1, n + 1)):
        out.append(Violation("pages.contiguous", m.doc_id,
                             f"page numbers {page_numbers} are not 1..{n}"))
    page_set = set(page_numbers)

    seen_ids: set[str] = set()
    for eid, e in m.elements.items():
        if eid != e.id:
            out.append(Violation("element.key", eid, "map key differs from element id"))
        if e.id in seen_ids:
            out.append(Violation("element.duplicate", e.id, "duplicate element id"))
        seen_ids.add(e.id)
        if e.page_no < 1 or e.page_no not in page_set:
            out.append(Violation("element.page", e.id,
                                 f"page_no {e.page_no} does not exist"))
        if e.kind == ElementKind.PAGE_CONTENT:
            if not e.image_ref:
                out.append(Violation("element.screenshot", e.id,
                                     "page_content requires an image_ref"))
            if e.bbox is not None:
                out.append(Violation("element.bbox", e.id,
                                     "page_content carries no bbox"))
        elif e.bbox is not None:
            x0, y0, x1, y1 = e.bbox
            if not (x0 < x1 and y0 < y1):
                out.append(Violation("element.bbox", e.id,
                                     f"degenerate bbox {e.bbox}"))

    referenced: set[str] = set()
    for p in m.pages:
        content = [eid for eid in p.element_ids
                   if eid in m.elements
                   and m.elements[eid].kind == ElementKind.PAGE_CONTENT]
        if len(content) != 1:
            out.append(Violation("page.page_content", str(p.number),
                                 f"expected exactly one page_content, found {len(content)}"))
        for eid in p.element_ids:
            referenced.add(eid)
            if eid not in m.elements:
                out.append(Violation("page.dangling", str(p.number),
                                     f"references unknown element {eid!r}"))
            elif m.elements[eid].page_no != p.number:
                out.append(Violation("element.page_mismatch", eid,
                                     f"listed on page {p.number} but records "
                                     f"page_no {m.elements[eid].page_no}"))
    for eid in m.elements:
        if eid not in referenced:
            out.append(Violation("element.orphan", eid,
                                 "element not referenced by any page"))

    covered: set[int] = set()
    for root in m.sections:
        covered.update(root.pages)
        for node in root.walk():
            if sorted(set(node.pages)) != list(node.pages):
                out.append(Violation("section.pages_sorted", node.number_path,
                                     f"pages {list(node.pages)} not sorted/deduplicated"))
            for child in node.children:
                prefix, _, tail = child.number_path.rpartition(".")
                if node.number_path != prefix or not tail or "." in tail:
                    out.append(Violation("section.numbering", child.number_path,
                                         f"does not extend parent {node.number_path!r} "
                                         "by one component"))
                if not set(child.pages) <= set(node.pages):
                    out.append(Violation("section.child_pages", child.number_path,
                                         "child pages not a subset of parent pages"))
    missing = page_set - covered
    if missing:
        out.append(Violation("section.coverage", m.doc_id,
                             f"pages {sorted(missing)} not covered by any section"))
    return out


# Serialization ------------------------------------------------------------

class MapFormatError(ValueError):
    """Raised when map bytes cannot be decoded."""

    def __init__(self, message, offset=None, fieldname=None):
        super().__init__(message)
        self.offset = offset
        self.fieldname = fieldname


def _section_to_dict(s: SectionNode) -> dict:
    return {
        "number_path": s.number_path,
        "title": s.title,
        "pages": list(s.pages),
        "children": [_section_to_dict(c) for c in s.children],
    }


def _section_from_dict(d: dict) -> SectionNode:
    return SectionNode(
        number_path=_req(d, "number_path", str),
        title=_req(d, "title", str),
        pages=tuple(_req(d, "pages", list)),
        children=tuple(_section_from_dict(c) for c in d.get("children", [])),
    )


def _req(d: dict, key: str, typ):
    if key not in d:
        raise MapFormatError(f"missing field {key!r}", fieldname=key)
    v = d[key]
    if not isinstance(v, typ):
        raise MapFormatError(f"field {key!r} has wrong type", fieldname=key)
    return v


def map_to_dict(m: DMap) -> dict:
    return {
        "doc_id": m.doc_id,
        "sections": [_section_to_dict(s) for s in m.sections],
        "pages": [
            {
                "number": p.number,
                "text": p.text,
                "screenshot_ref": p.screenshot_ref,
                "element_ids": list(p.element_ids),
                "summary": p.summary,
            }
            for p in m.pages
        ],
        "elements": {
            eid: {
                "id": e.id,
                "kind": e.kind.value,
                "page_no": e.page_no,
                "label": e.label,
                "caption": e.caption,
                "text_desc": e.text_desc,
                "image_ref": e.image_ref,
                "bbox": list(e.bbox) if e.bbox is not None else None,
            }
            for eid, e in m.elements.items()
        },
    }


def map_from_dict(d: dict) -> DMap:
    pages = tuple(
        Page(
            number=_req(p, "number", int),
            text=_req(p, "text", str),
            screenshot_ref=_req(p, "screenshot_ref", str),
            element_ids=tuple(_req(p, "element_ids", list)),
            summary=p.get("summary", ""),
        )
        for p in _req(d, "pages", list)
    )
    elements = {}
    for eid, e in _req(d, "elements", dict).items():
        bbox = e.get("bbox")
        elements[eid] = Element(
            id=_req(e, "id", str),
            kind=ElementKind(_req(e, "kind", str)),
            page_no=_req(e, "page_no", int),
            label=e.get("label"),
            caption=e.get("caption"),
            text_desc=e.get("text_desc", ""),
            image_ref=e.get("image_ref"),
            bbox=tuple(bbox) if bbox is not None else None,
        )
    return DMap(
        doc_id=_req(d, "doc_id", str),
        sections=tuple(_section_from_dict(s) for s in _req(d, "sections", list)),
        pages=pages,
        elements=elements,
    )


def serialize_map(m: DMap) -> bytes:
    """Canonical JSON bytes: sorted keys, no float drift, stable order."""
    return json.dumps(
        map_to_dict(m), sort_keys=True, ensure_ascii=False, separators=(",", ":")
    ).encode("utf-8")


def deserialize_map(data: bytes) -> DMap:
    try:
        d = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        offset = getattr(exc, "pos", getattr(exc, "start", None))
        raise MapFormatError(f"malformed map bytes: {exc}", offset=offset) from exc
    if not isinstance(d, dict):
        raise MapFormatError("top-level value is not an object")
    return map_from_dict(d)


# Queries ------------------------------------------------------------------

def _norm_label(label: str) -> str:
    return " ".join(label.lower().split())


@dataclass(frozen=True)
class Resolution:
    element_ids: tuple[str, ...]
    warning: Optional[str] = None


def resolve_location(m: DMap, loc: LocationRef) -> Resolution:
    """Map a location reference to concrete element ids.

    ``Page n`` yields the page's elements (page_content first); ``Table n``
    and ``Figure n`` match element labels case-insensitively with collapsed
    whitespace.  Out-of-range pages resolve empty with a warning (the
    locate agent may hallucinate pages).
    """
    if loc.kind == NOT_MENTIONED:
        return Resolution(())
    if loc.kind == PAGE:
        page = m.page(loc.number)
        if page is None:
            return Resolution((), warning=f"page {loc.number} out of range")
        ordered = sorted(
            page.element_ids,
            key=lambda eid: (m.elements[eid].kind != ElementKind.PAGE_CONTENT,),
        )
        return Resolution(tuple(ordered))
    wanted = _norm_label(f"{loc.kind} {loc.number}")
    hits = [
        e.id
        for p in m.pages
        for e in (m.elements[eid] for eid in p.element_ids)
        if e.label is not None and _norm_label(e.label).startswith(wanted)
        and _label_number_matches(e.label, loc.number)
    ]
    return Resolution(tuple(hits))


def _label_number_matches(label: str, number: int) -> bool:
    # "Table 1" must not match "Table 10": the token after the kind word
    # has to be exactly the requested number (punctuation allowed after).
    parts = _norm_label(label).split()
    if len(parts) < 2:
        return False
    digits = ""
    for ch in parts[1]:
        if ch.isdigit():
            digits += ch
        else:
            break
    return digits == str(number)


@dataclass(frozen=True)
class ExpansionPolicy:
    seen: frozenset[str] = frozenset()
    max_added: Optional[int] = None


def neighborhood(m: DMap, seed: str, policy: ExpansionPolicy) -> list[str]:
    """Expansion candidates around ``seed``, finest context first.

    Tier 1: sibling elements on the seed's page.
    Tier 2: page_content of pages adjacent (±1) to the seed's page.
    Tier 3: page_content of the other pages in the deepest section
            containing the seed's page.
    Never returns the seed, duplicates, or ids in ``policy.seen``.
    """
    if seed not in m.elements:
        raise KeyError(f"unknown element id {seed!r}")
    seed_el = m.elements[seed]
    page = m.page(seed_el.page_no)
    excluded = set(policy.seen) | {seed}
    out: list[str] = []

    def emit(eid):
        if eid is not None and eid not in excluded:
            excluded.add(eid)
            out.append(eid)

    for eid in page.element_ids:
        emit(eid)
    for num in (seed_el.page_no - 1, seed_el.page_no + 1):
        adj = m.page(num)
        if adj is not None:
            emit(_page_content_id(m, adj))
    deepest = _deepest_section(m, seed_el.page_no)
    if deepest is not None:
        for num in deepest.pages:
            p = m.page(num)
            if p is not None and num != seed_el.page_no:
                emit(_page_content_id(m, p))
    if policy.max_added is not None:
        out = out[: policy.max_added]
    return out


def _page_content_id(m: DMap, page: Page) -> Optional[str]:
    for eid in page.element_ids:
        if m.elements[eid].kind == ElementKind.PAGE_CONTENT:
            return eid
    return None


def _deepest_section(m: DMap, page_no: int) -> Optional[SectionNode]:
    best = None
    best_depth = -1
    for node in m.walk_sections():
        if page_no in node.pages:
            depth = node.number_path.count(".")
            if depth > best_depth:
                best = node
                best_depth = depth
    return best
