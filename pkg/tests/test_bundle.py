import json
import random

import pytest

from conftest import make_bundle, random_manifest, simple_manifest, write_bundle_dir
from dmap import bundle as bundle_mod
from dmap.bundle import BundleError, load_bundle, to_pages, write_bundle
from dmap.model import ElementKind


def test_minimal_bundle(tmp_path):
    b = make_bundle(tmp_path, simple_manifest(n_pages=1))
    assert b.doc_id == "doc"
    assert len(b.pages) == 1
    assert b.pages[0].extracted == ()


def test_missing_manifest(tmp_path):
    with pytest.raises(BundleError, match="manifest"):
        load_bundle(tmp_path)


def test_noncontiguous_pages_names_missing_page(tmp_path):
    manifest = simple_manifest(n_pages=3)
    manifest["pages"] = [p for p in manifest["pages"] if p["number"] != 2]
    root = write_bundle_dir(tmp_path / "b", manifest)
    with pytest.raises(BundleError, match="page 2"):
        load_bundle(root)


def test_missing_screenshot_names_page(tmp_path):
    manifest = simple_manifest(n_pages=2)
    root = write_bundle_dir(tmp_path / "b", manifest)
    (root / "page2.png").unlink()
    with pytest.raises(BundleError, match="page 2"):
        load_bundle(root)


def test_missing_crop_image(tmp_path):
    manifest = simple_manifest(
        n_pages=1,
        extracted={1: [{"kind": "figure", "image": "crop.png"}]},
    )
    root = write_bundle_dir(tmp_path / "b", manifest)
    (root / "crop.png").unlink()
    with pytest.raises(BundleError, match="crop.png"):
        load_bundle(root)


def test_invalid_bbox(tmp_path):
    manifest = simple_manifest(
        n_pages=1,
        extracted={1: [{"kind": "figure", "image": "crop.png",
                        "bbox": [100, 10, 20, 80]}]},
    )
    root = write_bundle_dir(tmp_path / "b", manifest)
    with pytest.raises(BundleError, match="bbox"):
        load_bundle(root)


def test_invalid_kind(tmp_path):
    manifest = simple_manifest(
        n_pages=1, extracted={1: [{"kind": "photo", "image": "crop.png"}]}
    )
    root = write_bundle_dir(tmp_path / "b", manifest)
    with pytest.raises(BundleError, match="kind"):
        load_bundle(root)


def test_page_text_preserved_byte_for_byte(tmp_path):
    text = "weird é text\twith\nnewlines  and   spaces"
    b = make_bundle(tmp_path, simple_manifest(n_pages=1, texts={1: text}))
    assert b.pages[0].text == text


def test_write_load_roundtrip_random(tmp_path):
    rng = random.Random(13)
    for i in range(20):
        manifest = random_manifest(rng, f"doc{i}")
        b = make_bundle(tmp_path, manifest, name=f"b{i}")
        write_bundle(b, tmp_path / f"b{i}")
        again = load_bundle(tmp_path / f"b{i}")
        assert again.doc_id == b.doc_id
        assert again.pages == b.pages


class TestToPages:
    def test_page_content_first(self, tmp_path):
        manifest = simple_manifest(
            n_pages=1,
            extracted={1: [
                {"kind": "figure", "image": "f1.png"},
                {"kind": "figure", "image": "f2.png"},
            ]},
        )
        b = make_bundle(tmp_path, manifest)
        pages, elements = to_pages(b)
        assert len(elements) == 3
        assert pages[0].element_ids == ("p1-content", "p1-e1", "p1-e2")
        assert elements["p1-content"].kind == ElementKind.PAGE_CONTENT

    def test_empty_text_page_still_has_page_content(self, tmp_path):
        b = make_bundle(tmp_path, simple_manifest(n_pages=1, texts={1: ""}))
        pages, elements = to_pages(b)
        assert elements["p1-content"].text_desc == ""
        assert pages[0].element_ids == ("p1-content",)

    def test_element_count_oracle(self, tmp_path):
        rng = random.Random(99)
        for i in range(20):
            manifest = random_manifest(rng, f"doc{i}")
            b = make_bundle(tmp_path, manifest, name=f"c{i}")
            _, elements = to_pages(b)
            expected = sum(len(p.extracted) for p in b.pages) + len(b.pages)
            assert len(elements) == expected

    def test_no_information_loss(self, tmp_path):
        manifest = simple_manifest(
            n_pages=1,
            extracted={1: [{"kind": "table", "label": "Table 1",
                            "caption": "numbers", "bbox": [1, 2, 3, 4],
                            "image": "t.png"}]},
        )
        b = make_bundle(tmp_path, manifest)
        _, elements = to_pages(b)
        e = elements["p1-e1"]
        assert (e.kind.value, e.label, e.caption, e.bbox, e.image_ref) == (
            "table", "Table 1", "numbers", (1, 2, 3, 4), "t.png"
        )

    def test_ids_deterministic(self, tmp_path):
        b = make_bundle(tmp_path, simple_manifest(n_pages=2))
        assert to_pages(b) == to_pages(b)
