"""Neutral on-disk input format for parsed documents.

A bundle directory holds ``bundle.json`` plus the page screenshots and
element crop images it references.  This format decouples the engine from
any PDF tooling: any converter that emits a valid bundle can feed the
pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .model import Element, ElementKind, Page

ELEMENT_KINDS = ("figure", "table", "chart")


class BundleError(ValueError):
    """Bundle manifest or referenced files are invalid."""


@dataclass(frozen=True)
class RawElement:
    kind: str
    image: str
    label: Optional[str] = None
    caption: Optional[str] = None
    bbox: Optional[tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class RawPage:
    number: int
    text: str
    screenshot: str
    extracted: tuple[RawElement, ...] = ()


@dataclass(frozen=True)
class DocBundle:
    doc_id: str
    pages: tuple[RawPage, ...]
    root_dir: Path


def load_bundle(path) -> DocBundle:
    """Load and fully validate a bundle directory."""
    root = Path(path)
    manifest = root / "bundle.json"
    if not manifest.is_file():
        raise BundleError(f"missing manifest {manifest}")
    try:
        data = json.loads(manifest.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"unreadable manifest: {exc}") from exc
    if not isinstance(data, dict) or "doc_id" not in data or "pages" not in data:
        raise BundleError("manifest must contain doc_id and pages")

    pages = []
    for p in data["pages"]:
        extracted = []
        for i, e in enumerate(p.get("extracted", [])):
            if e.get("kind") not in ELEMENT_KINDS:
                raise BundleError(
                    f"page {p.get('number')}: element {i + 1} has invalid kind "
                    f"{e.get('kind')!r}"
                )
            bbox = e.get("bbox")
            extracted.append(
                RawElement(
                    kind=e["kind"],
                    image=e["image"],
                    label=e.get("label"),
                    caption=e.get("caption"),
                    bbox=tuple(bbox) if bbox is not None else None,
                )
            )
        pages.append(
            RawPage(
                number=p["number"],
                text=p.get("text", ""),
                screenshot=p["screenshot"],
                extracted=tuple(extracted),
            )
        )
    bundle = DocBundle(doc_id=data["doc_id"], pages=tuple(pages), root_dir=root)
    validate_bundle(bundle)
    return bundle


def validate_bundle(b: DocBundle) -> None:
    if not b.pages:
        raise BundleError("bundle has no pages")
    numbers = [p.number for p in b.pages]
    expected = list(range(1, len(numbers) + 1))
    if numbers != expected:
        missing = sorted(set(expected) - set(numbers))
        culprit = missing[0] if missing else numbers[0]
        raise BundleError(
            f"page numbers {numbers} are not contiguous from 1 (page {culprit})"
        )
    for p in b.pages:
        if not (b.root_dir / p.screenshot).is_file():
            raise BundleError(f"page {p.number}: missing screenshot {p.screenshot!r}")
        for i, e in enumerate(p.extracted):
            if not (b.root_dir / e.image).is_file():
                raise BundleError(
                    f"page {p.number}: element {i + 1} missing image {e.image!r}"
                )
            if e.bbox is not None:
                x0, y0, x1, y1 = e.bbox
                if not (0 <= x0 < x1 and 0 <= y0 < y1):
                    raise BundleError(
                        f"page {p.number}: element {i + 1} has invalid bbox {e.bbox}"
                    )


def bundle_to_manifest(b: DocBundle) -> dict:
    return {
        "doc_id": b.doc_id,
        "pages": [
            {
                "number": p.number,
                "text": p.text,
                "screenshot": p.screenshot,
                "extracted": [
                    _raw_element_dict(e) for e in p.extracted
                ],
            }
            for p in b.pages
        ],
    }


def _raw_element_dict(e: RawElement) -> dict:
    d = {"kind": e.kind, "image": e.image}
    if e.label is not None:
        d["label"] = e.label
    if e.caption is not None:
        d["caption"] = e.caption
    if e.bbox is not None:
        d["bbox"] = list(e.bbox)
    return d


def write_bundle(b: DocBundle, path=None) -> Path:
    """Write the manifest back to disk (images are already in place)."""
    root = Path(path) if path is not None else b.root_dir
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "bundle.json"
    manifest.write_text(
        json.dumps(bundle_to_manifest(b), indent=2, ensure_ascii=False) + "\n",
        "utf-8",
    )
    return manifest


def page_content_id(page_no: int) -> str:
    return f"p{page_no}-content"


def element_id(page_no: int, index: int) -> str:
    return f"p{page_no}-e{index}"


def to_pages(b: DocBundle) -> tuple[list[Page], dict[str, Element]]:
    """Materialize model pages and elements with deterministic ids.

    One synthetic ``page_content`` element per page is created from the
    page's text and screenshot; extracted elements follow in manifest
    order as ``p{page}-e{index}`` (1-based).
    """
    pages: list[Page] = []
    elements: dict[str, Element] = {}
    for p in b.pages:
        ids = [page_content_id(p.number)]
        elements[ids[0]] = Element(
            id=ids[0],
            kind=ElementKind.PAGE_CONTENT,
            page_no=p.number,
            text_desc=p.text,
            image_ref=p.screenshot,
        )
        for i, raw in enumerate(p.extracted, start=1):
            eid = element_id(p.number, i)
            ids.append(eid)
            elements[eid] = Element(
                id=eid,
                kind=ElementKind(raw.kind),
                page_no=p.number,
                label=raw.label,
                caption=raw.caption,
                text_desc=raw.caption or "",
                image_ref=raw.image,
                bbox=raw.bbox,
            )
        pages.append(
            Page(
                number=p.number,
                text=p.text,
                screenshot_ref=p.screenshot,
                element_ids=tuple(ids),
            )
        )
    return pages, elements
