import random
from dataclasses import replace

import pytest

from conftest import random_valid_map
from dmap.model import (
    DMap,
    Element,
    ElementKind,
    ExpansionPolicy,
    MapFormatError,
    Page,
    SectionNode,
    deserialize_map,
    figure_ref,
    neighborhood,
    page_ref,
    resolve_location,
    serialize_map,
    table_ref,
    validate_map,
    NOT_MENTIONED_REF,
)


def minimal_map() -> DMap:
    el = Element(id="p1-content", kind=ElementKind.PAGE_CONTENT, page_no=1,
                 text_desc="hello", image_ref="p1.png")
    page = Page(number=1, text="hello", screenshot_ref="p1.png",
                element_ids=("p1-content",))
    section = SectionNode(number_path="1", title="All", pages=(1,))
    return DMap(doc_id="d", sections=(section,), pages=(page,),
                elements={"p1-content": el})


class TestValidateMap:
    def test_minimal_map_is_valid(self):
        assert validate_map(minimal_map()) == []

    def test_random_maps_are_valid(self):
        rng = random.Random(1)
        for _ in range(30):
            assert validate_map(random_valid_map(rng)) == []

    def test_child_pages_not_subset_of_parent(self):
        child = SectionNode(number_path="1.1", title="Sub", pages=(5,))
        parent = SectionNode(number_path="1", title="Top", pages=(1, 2),
                             children=(child,))
        m = replace(minimal_map(), sections=(parent,))
        codes = {v.code for v in validate_map(m)}
        assert "section.child_pages" in codes

    def test_dangling_reference_matches_reference_scan(self):
        rng = random.Random(7)
        for _ in range(20):
            m = random_valid_map(rng)
            victims = [eid for eid in m.elements
                       if m.elements[eid].kind != ElementKind.PAGE_CONTENT]
            if not victims:
                continue
            victim = rng.choice(victims)
            elements = dict(m.elements)
            del elements[victim]
            broken = replace(m, elements=elements)
            # oracle: exhaustive walk over every page's references
            expected = {(p.number, eid) for p in broken.pages
                        for eid in p.element_ids if eid not in elements}
            got = {v for v in validate_map(broken) if v.code == "page.dangling"}
            assert {int(v.subject) for v in got} == {n for n, _ in expected}
            assert all(victim in v.message for v in got)

    def test_missing_page_content(self):
        m = minimal_map()
        el = Element(id="p1-content", kind=ElementKind.FIGURE, page_no=1,
                     image_ref="p1.png")
        broken = replace(m, elements={"p1-content": el})
        codes = {v.code for v in validate_map(broken)}
        assert "page.page_content" in codes

    def test_noncontiguous_pages(self):
        m = minimal_map()
        broken = replace(m, pages=(replace(m.pages[0], number=2),))
        codes = {v.code for v in validate_map(broken)}
        assert "pages.contiguous" in codes


class TestSerialization:
    def test_minimal_roundtrip(self):
        m = minimal_map()
        assert deserialize_map(serialize_map(m)) == m

    def test_canonical_bytes_ignore_insertion_order(self):
        m = minimal_map()
        extra = Element(id="p1-e1", kind=ElementKind.FIGURE, page_no=1,
                        caption="c", image_ref="f.png")
        page = replace(m.pages[0], element_ids=("p1-content", "p1-e1"))
        a = replace(m, pages=(page,),
                    elements={"p1-content": m.elements["p1-content"],
                              "p1-e1": extra})
        b = replace(m, pages=(page,),
                    elements={"p1-e1": extra,
                              "p1-content": m.elements["p1-content"]})
        assert serialize_map(a) == serialize_map(b)

    def test_random_maps_roundtrip(self):
        rng = random.Random(42)
        for _ in range(50):
            m = random_valid_map(rng)
            data = serialize_map(m)
            again = deserialize_map(data)
            assert again == m
            assert serialize_map(again) == data

    def test_malformed_bytes(self):
        with pytest.raises(MapFormatError):
            deserialize_map(b"{not json")
        with pytest.raises(MapFormatError) as exc:
            deserialize_map(b'{"doc_id": "d", "sections": [], "pages": []}')
        assert exc.value.fieldname == "elements"


class TestResolveLocation:
    def test_page_returns_elements_content_first(self):
        rng = random.Random(3)
        m = random_valid_map(rng)
        page = m.pages[-1]
        res = resolve_location(m, page_ref(page.number))
        assert res.element_ids[0].endswith("-content")
        assert set(res.element_ids) == set(page.element_ids)

    def test_page_out_of_range_warns(self):
        m = minimal_map()
        res = resolve_location(m, page_ref(99))
        assert res.element_ids == ()
        assert res.warning

    def test_unmatched_table_label(self):
        m = minimal_map()
        assert resolve_location(m, table_ref(1)).element_ids == ()

    def test_not_mentioned_resolves_empty(self):
        m = minimal_map()
        assert resolve_location(m, NOT_MENTIONED_REF).element_ids == ()

    def test_label_matching_equals_linear_scan(self):
        rng = random.Random(11)
        for _ in range(20):
            m = random_valid_map(rng)
            for number in range(1, 10):
                for ref, word in ((table_ref(number), "table"),
                                  (figure_ref(number), "figure")):
                    got = resolve_location(m, ref).element_ids
                    expected = tuple(
                        e.id for p in m.pages
                        for e in (m.elements[eid] for eid in p.element_ids)
                        if e.label
                        and " ".join(e.label.lower().split()).split()[:2]
                        == [word, str(number)]
                    )
                    assert got == expected

    def test_label_match_is_whitespace_and_case_insensitive(self):
        m = minimal_map()
        el = Element(id="p1-e1", kind=ElementKind.TABLE, page_no=1,
                     label="  TABLE   3 ", image_ref="t.png")
        page = replace(m.pages[0], element_ids=("p1-content", "p1-e1"))
        m2 = replace(m, pages=(page,),
                     elements={**m.elements, "p1-e1": el})
        assert resolve_location(m2, table_ref(3)).element_ids == ("p1-e1",)
        assert resolve_location(m2, table_ref(30)).element_ids == ()


def three_page_single_section_map() -> DMap:
    pages = []
    elements = {}
    for i in (1, 2, 3):
        ids = [f"p{i}-content"]
        elements[ids[0]] = Element(id=ids[0], kind=ElementKind.PAGE_CONTENT,
                                   page_no=i, image_ref=f"p{i}.png")
        if i == 2:
            elements["p2-e1"] = Element(id="p2-e1", kind=ElementKind.FIGURE,
                                        page_no=2, image_ref="f.png")
            ids.append("p2-e1")
        pages.append(Page(number=i, text=f"t{i}", screenshot_ref=f"p{i}.png",
                          element_ids=tuple(ids)))
    section = SectionNode(number_path="1", title="All", pages=(1, 2, 3))
    return DMap(doc_id="d", sections=(section,), pages=tuple(pages),
                elements=elements)


class TestNeighborhood:
    def test_tier_order_for_lone_figure(self):
        m = three_page_single_section_map()
        got = neighborhood(m, "p2-e1", ExpansionPolicy())
        assert got == ["p2-content", "p1-content", "p3-content"]

    def test_first_page_has_single_adjacent(self):
        m = three_page_single_section_map()
        got = neighborhood(m, "p1-content", ExpansionPolicy())
        assert got[0] == "p2-content"
        assert "p0-content" not in got

    def test_never_returns_seed_or_duplicates(self):
        rng = random.Random(5)
        for _ in range(30):
            m = random_valid_map(rng)
            for seed in m.elements:
                got = neighborhood(m, seed, ExpansionPolicy())
                assert seed not in got
                assert len(got) == len(set(got))

    def test_unknown_seed_raises(self):
        with pytest.raises(KeyError):
            neighborhood(minimal_map(), "nope", ExpansionPolicy())

    def test_matches_tier_enumeration_oracle(self):
        rng = random.Random(9)
        for _ in range(30):
            m = random_valid_map(rng)
            seeds = sorted(m.elements)
            seed = rng.choice(seeds)
            seen = frozenset(rng.sample(seeds, k=min(2, len(seeds))))
            got = neighborhood(m, seed, ExpansionPolicy(seen=seen))
            assert got == _oracle_neighborhood(m, seed, seen)


def _oracle_neighborhood(m, seed, seen):
    el = m.elements[seed]
    page = next(p for p in m.pages if p.number == el.page_no)

    def content_of(n):
        for p in m.pages:
            if p.number == n:
                for eid in p.element_ids:
                    if m.elements[eid].kind == ElementKind.PAGE_CONTENT:
                        return eid
        return None

    deepest, best_depth = None, -1
    for root in m.sections:
        stack = [root]
        while stack:
            node = stack.pop(0)
            if el.page_no in node.pages:
                depth = node.number_path.count(".")
                if depth > best_depth:
                    deepest, best_depth = node, depth
            stack = list(node.children) + stack
    tiers = list(page.element_ids)
    tiers += [content_of(el.page_no - 1), content_of(el.page_no + 1)]
    if deepest:
        tiers += [content_of(n) for n in deepest.pages if n != el.page_no]
    out, excluded = [], set(seen) | {seed}
    for eid in tiers:
        if eid is not None and eid not in excluded:
            excluded.add(eid)
            out.append(eid)
    return out
