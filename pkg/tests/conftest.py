import json
import random
from pathlib import Path

import pytest

from dmap import bundle as bundle_mod
from dmap.bundle import DocBundle, RawElement, RawPage
from dmap.model import DMap, Element, ElementKind, Page, SectionNode


def write_bundle_dir(root: Path, manifest: dict) -> Path:
    """Materialize a manifest plus dummy image files on disk."""
    root.mkdir(parents=True, exist_ok=True)
    for page in manifest["pages"]:
        (root / page["screenshot"]).write_bytes(
            b"PNG:" + page["screenshot"].encode()
        )
        for e in page.get("extracted", []):
            (root / e["image"]).write_bytes(b"IMG:" + e["image"].encode())
    (root / "bundle.json").write_text(json.dumps(manifest), "utf-8")
    return root


def simple_manifest(doc_id="doc", n_pages=3, texts=None, extracted=None) -> dict:
    pages = []
    for i in range(1, n_pages + 1):
        pages.append({
            "number": i,
            "text": (texts or {}).get(i, f"Body text of page {i}."),
            "screenshot": f"page{i}.png",
            "extracted": (extracted or {}).get(i, []),
        })
    return {"doc_id": doc_id, "pages": pages}


def random_manifest(rng: random.Random, doc_id: str, max_pages=12,
                    max_elements=5) -> dict:
    n_pages = rng.randint(1, max_pages)
    kinds = ["figure", "table", "chart"]
    texts = {}
    extracted = {}
    section_no = 0
    fig_no = 0
    for i in range(1, n_pages + 1):
        parts = []
        if rng.random() < 0.6:
            section_no += 1
            parts.append(f"{section_no}. Section Title {section_no}")
        if rng.random() < 0.9:
            parts.append(f"Some body text for page {i} seeded {rng.randint(0, 999)}.")
        texts[i] = "\n".join(parts)
        els = []
        for j in range(rng.randint(0, max_elements)):
            kind = rng.choice(kinds)
            fig_no += 1
            el = {"kind": kind, "image": f"el{i}_{j}.png"}
            if rng.random() < 0.7:
                word = "Table" if kind == "table" else "Figure"
                el["label"] = f"{word} {fig_no}"
            if rng.random() < 0.7:
                el["caption"] = f"Caption for element {fig_no} on page {i}"
            if rng.random() < 0.5:
                el["bbox"] = [10.0, 10.0, 110.0, 80.0]
            els.append(el)
        extracted[i] = els
    return simple_manifest(doc_id, n_pages, texts, extracted)


def make_bundle(tmp_path: Path, manifest: dict, name="bundle") -> DocBundle:
    root = write_bundle_dir(tmp_path / name, manifest)
    return bundle_mod.load_bundle(root)


def random_valid_map(rng: random.Random, doc_id="doc") -> DMap:
    """Generate a structurally valid map directly (no agent involved)."""
    n_pages = rng.randint(1, 8)
    pages = []
    elements = {}
    for i in range(1, n_pages + 1):
        ids = [f"p{i}-content"]
        elements[ids[0]] = Element(
            id=ids[0], kind=ElementKind.PAGE_CONTENT, page_no=i,
            text_desc=f"text {i}", image_ref=f"page{i}.png",
        )
        for j in range(1, rng.randint(0, 3) + 1):
            eid = f"p{i}-e{j}"
            ids.append(eid)
            kind = rng.choice([ElementKind.FIGURE, ElementKind.TABLE,
                               ElementKind.CHART])
            elements[eid] = Element(
                id=eid, kind=kind, page_no=i,
                label=f"{'Table' if kind == ElementKind.TABLE else 'Figure'} "
                      f"{rng.randint(1, 9)}",
                caption=f"caption {i}.{j}",
                text_desc=f"desc {i}.{j}",
                image_ref=f"el{i}_{j}.png",
            )
        pages.append(Page(number=i, text=f"text {i}",
                          screenshot_ref=f"page{i}.png",
                          element_ids=tuple(ids), summary=f"summary {i}"))
    # split page range into 1..3 root sections, optionally with one child each
    cuts = sorted(rng.sample(range(1, n_pages + 1),
                             k=min(rng.randint(1, 3), n_pages)))
    if cuts[0] != 1:
        cuts = [1] + cuts
    sections = []
    for s, start in enumerate(cuts, start=1):
        end = cuts[s] - 1 if s < len(cuts) else n_pages
        span = tuple(range(start, end + 1))
        children = ()
        if len(span) > 1 and rng.random() < 0.5:
            children = (SectionNode(number_path=f"{s}.1", title=f"Sub {s}.1",
                                    pages=span[1:]),)
        sections.append(SectionNode(number_path=str(s), title=f"Section {s}",
                                    pages=span, children=children))
    return DMap(doc_id=doc_id, sections=tuple(sections), pages=tuple(pages),
                elements=elements)


@pytest.fixture
def sample_bundle(tmp_path):
    manifest = simple_manifest(
        doc_id="sample",
        n_pages=3,
        texts={
            1: "1. Introduction\nThis document covers structured retrieval.",
            2: "2. Methods\nThe approach is described with a figure.",
            3: "Further results and discussion continue here.",
        },
        extracted={2: [{
            "kind": "figure", "label": "Figure 1",
            "caption": "Overview of the system", "bbox": [10, 10, 120, 90],
            "image": "fig1.png",
        }]},
    )
    return make_bundle(tmp_path, manifest)
