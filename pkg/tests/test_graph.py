from __future__ import annotations

import math
import re
from collections import Counter

import pytest

from f2devito.errors import EmptyQuery
from f2devito.graph import (
    Community,
    DEVITO_TERMS,
    Entity,
    GraphStore,
    Relationship,
    export_cypher,
    extract_entities,
    extract_relationships,
    fulltext_query,
    merge_entities,
    parse_cypher_rows,
    tokenize,
)
from f2devito.ingest import SourceDocument, build_chunks, make_chunk, parse_document


def chunk_of(content: str, title: str = "T", path: str = "doc.md", ordinal: int = 0,
             parent_id=None):
    c = make_chunk(content, title, path, "doc_section", ordinal, parent_id=parent_id)
    return c


# ---------------------------------------------------------------------------
# extract_entities
# ---------------------------------------------------------------------------

def test_class_declaration_entities_merge():
    c = chunk_of("class TimeFunction(Function):\n    pass")
    ents = extract_entities(c)
    named = {(e.name, e.kind) for e in ents}
    assert named == {
        ("TimeFunction", "code_class"),
        ("TimeFunction", "domain_concept"),
        ("Function", "domain_concept"),
    }


def test_prose_without_symbols_yields_nothing():
    c = chunk_of("just prose with no symbols.")
    assert extract_entities(c) == []


def test_heat_2d_fixture_entity_set(fixtures_dir):
    # oracle: the three extraction rules applied by hand to the fixture body
    doc = SourceDocument.load(fixtures_dir / "docs" / "heat_2d.md")
    chunks = build_chunks(parse_document(doc))
    assert len(chunks) == 1
    ents = extract_entities(chunks[0])
    named = {(e.name, e.kind) for e in ents}
    assert named == {
        ("HeatSolver", "code_class"),
        ("step", "code_function"),
        ("apply_edges", "code_function"),
        ("eq", "code_variable"),
        ("TimeFunction", "domain_concept"),
        ("Grid", "domain_concept"),
        ("Eq", "domain_concept"),
        ("stencil", "domain_concept"),
        ("boundary condition", "domain_concept"),
        ("Dirichlet", "domain_concept"),
        ("laplace", "domain_concept"),
        ("diffusion", "domain_concept"),
        ("Finite Difference Method", "general_term"),
    }


def test_entity_ids_deterministic():
    a = Entity.make("Grid", "domain_concept")
    b = Entity.make("Grid", "domain_concept")
    assert a.entity_id == b.entity_id
    assert a.entity_id != Entity.make("Grid", "code_class").entity_id


def test_dictionary_match_is_case_sensitive_whole_token():
    c = chunk_of("the grid is not Grid; subgrid and Gridded do not count")
    names = {e.name for e in extract_entities(c) if e.kind == "domain_concept"}
    assert names == {"Grid"}


# ---------------------------------------------------------------------------
# extract_relationships
# ---------------------------------------------------------------------------

def test_calls_between_function_entities():
    c1 = chunk_of("def a():\n    b()\n" + "pad sentence. " * 40, title="A", ordinal=0)
    c2 = chunk_of("def b():\n    pass\n" + "other words here. " * 40, title="B", ordinal=1)
    ents = merge_entities([extract_entities(c) for c in (c1, c2)])
    rels = extract_relationships([c1, c2], ents)
    by_name = {e.entity_id: e.name for e in ents}
    calls = [(by_name[r.src], by_name[r.dst]) for r in rels if r.rel_type == "CALLS"]
    assert calls == [("a", "b")]


def test_inherits_creates_missing_base():
    c = chunk_of("class Derivative(Differentiable):\n    pass")
    ents = extract_entities(c)
    rels = extract_relationships([c], ents)
    by_id = {e.entity_id: e for e in ents}
    inherits = [(by_id[r.src].name, by_id[r.dst].name) for r in rels if r.rel_type == "INHERITS"]
    assert inherits == [("Derivative", "Differentiable")]
    assert ("Differentiable", "code_class") in {(e.name, e.kind) for e in ents}


def test_part_of_from_split_parent():
    child = chunk_of("child content", parent_id="parent123")
    rels = extract_relationships([child], [])
    assert Relationship("PART_OF", child.chunk_id, "parent123") in rels


def test_related_to_needs_three_shared_entities():
    base = "Grid and TimeFunction and Operator appear here. "
    c1 = chunk_of(base + "unique one", ordinal=0)
    c2 = chunk_of(base + "unique two", ordinal=1)
    c3 = chunk_of("nothing shared at all", ordinal=2)
    ents = merge_entities([extract_entities(c) for c in (c1, c2, c3)])
    rels = extract_relationships([c1, c2, c3], ents)
    related = {(r.src, r.dst): r.weight for r in rels if r.rel_type == "RELATED_TO"}
    key = tuple(sorted([c1.chunk_id, c2.chunk_id]))
    assert set(related) == {key}
    assert related[key] == pytest.approx(min(1.0, 3 / 10))


def test_mentions_names_occur_verbatim():
    c1 = chunk_of("TimeFunction drives the stencil loop here.")
    ents = extract_entities(c1)
    rels = extract_relationships([c1], ents)
    by_id = {e.entity_id: e for e in ents}
    for rel in rels:
        if rel.rel_type == "MENTIONS":
            assert by_id[rel.dst].name in c1.content


# ---------------------------------------------------------------------------
# full-text index
# ---------------------------------------------------------------------------

def _hand_tfidf_scores(docs, query):
    """Independent TF-IDF oracle: log tf, smoothed idf, cosine."""
    n = len(docs)
    tfs = [Counter(tokenize(t + " " + c)) for t, c in docs]
    df = Counter()
    for tf in tfs:
        for term in tf:
            df[term] += 1

    def idf(term):
        return math.log((1 + n) / (1 + df.get(term, 0))) + 1.0

    def weights(tf):
        w = {t: (1 + math.log(c)) * idf(t) for t, c in tf.items()}
        norm = math.sqrt(sum(v * v for v in w.values())) or 1.0
        return {t: v / norm for t, v in w.items()}

    qw = weights(Counter(tokenize(query)))
    out = []
    for i, tf in enumerate(tfs):
        dw = weights(tf)
        out.append(sum(v * dw[t] for t, v in qw.items() if t in dw))
    return out


def _store_with_docs(docs):
    store = GraphStore()
    for i, (title, content) in enumerate(docs):
        store.add_chunk(chunk_of(content, title=title, path=f"d{i}.md", ordinal=i))
    store.build_index()
    return store


THREE_DOCS = [
    ("stencils", "finite difference stencils use finite difference approximations "
                 "for every finite difference derivative"),
    ("grids", "structured grids hold field values on points"),
    ("waves", "wave propagation with difference of arrival times"),
]


def test_tfidf_ranking_matches_hand_oracle():
    store = _store_with_docs(THREE_DOCS)
    results = fulltext_query(store, "finite difference", k=3)
    hand = _hand_tfidf_scores(THREE_DOCS, "finite difference")
    ordered_ids = [cid for cid, _ in results]
    chunks = sorted(store.chunks.values(), key=lambda c: c.source_path)
    expect_order = [
        chunks[i].chunk_id
        for i in sorted(range(3), key=lambda i: -hand[i])
        if hand[i] > 0
    ]
    assert ordered_ids == expect_order
    assert ordered_ids[0] == chunks[0].chunk_id  # the both-terms doc wins
    for (cid, score) in results:
        i = next(j for j, c in enumerate(chunks) if c.chunk_id == cid)
        assert score == pytest.approx(hand[i], abs=1e-12)


def test_fulltext_edge_cases():
    store = _store_with_docs(THREE_DOCS)
    assert fulltext_query(store, "zzzmissing", k=5) == []
    assert fulltext_query(store, "finite", k=0) == []
    with pytest.raises(EmptyQuery):
        fulltext_query(store, "  !! ", k=5)


def test_fulltext_deterministic_repeat():
    store = _store_with_docs(THREE_DOCS)
    a = fulltext_query(store, "difference grids", k=3)
    b = fulltext_query(store, "difference grids", k=3)
    assert a == b


# ---------------------------------------------------------------------------
# graph store closure + export
# ---------------------------------------------------------------------------

def test_dangling_edges_rejected():
    store = GraphStore()
    store.add_chunk(chunk_of("content one"))
    with pytest.raises(ValueError):
        store.add_relationship(Relationship("MENTIONS", "nope", "alsonope"))


def _small_store():
    store = GraphStore()
    chunks = [chunk_of(f"doc {i} mentions Grid and stencil terms", title=f"t{i}",
                       path=f"d{i}.md", ordinal=i) for i in range(4)]
    for c in chunks:
        store.add_chunk(c)
    ents = merge_entities([extract_entities(c) for c in chunks])
    for e in ents:
        store.add_entity(e)
    rels = extract_relationships(chunks, ents)
    for e in ents:
        store.add_entity(e)
    store.add_relationships(rels)
    com = Community(community_id=0, theme="grid/stencil", members={c.chunk_id for c in chunks},
                    resolution=1.0)
    store.add_community(com)
    for c in chunks:
        store.add_relationship(Relationship("BELONGS_TO", c.chunk_id, com.node_id))
    return store


def test_export_batching_500():
    store = GraphStore()
    for i in range(1001):
        store.add_chunk(chunk_of(f"chunk number {i}", title=f"c{i}", path=f"{i}.md", ordinal=i))
    text = export_cypher(store)
    node_batches = [l for l in text.splitlines() if l.startswith(":param") and '"kind": ' not in l]
    chunk_stmts = [l for l in text.splitlines() if l.startswith("UNWIND") and ":Chunk" in l]
    assert len(chunk_stmts) == 3  # 500 + 500 + 1
    sizes = []
    for line in text.splitlines():
        if line.startswith(":param rows => "):
            rows = parse_cypher_rows(line[len(":param rows => "):-1])
            sizes.append(len(rows))
    assert sizes[:3] == [500, 500, 1]


def test_export_empty_store_constraints_only():
    text = export_cypher(GraphStore())
    assert "CREATE CONSTRAINT" in text
    assert "CREATE INDEX" in text
    assert "UNWIND" not in text
    assert ":param" not in text


def test_export_round_trip_multisets():
    store = _small_store()
    text = export_cypher(store)
    lines = text.splitlines()
    node_rows = []
    edge_rows = []
    for i, line in enumerate(lines):
        if not line.startswith(":param rows => "):
            continue
        rows = parse_cypher_rows(line[len(":param rows => "):-1])
        stmt = lines[i + 1]
        if "MATCH" in stmt:
            m = re.search(r"\[:(\w+)", stmt)
            edge_rows.extend((m.group(1), r["src"], r["dst"]) for r in rows)
        else:
            label = re.search(r"CREATE \(\w+:(\w+)", stmt).group(1)
            node_rows.extend((label, r["id"]) for r in rows)

    expect_nodes = (
        [("Chunk", c) for c in store.chunks]
        + [("Entity", e) for e in store.entities]
        + [("Community", c) for c in store.communities]
    )
    assert Counter(node_rows) == Counter(expect_nodes)
    expect_edges = [
        (t, r.src, r.dst) for t in store.edges for r in store.edges[t]
    ]
    assert Counter(edge_rows) == Counter(expect_edges)


def test_export_deterministic():
    assert export_cypher(_small_store()) == export_cypher(_small_store())


def test_stats_report_shape():
    report = _small_store().stats_report()
    assert report["node_counts"]["Chunk"] == 4
    assert report["top_communities"][0]["theme"] == "grid/stencil"
    assert report["membership_distribution"][0]["member_count"] == 4
