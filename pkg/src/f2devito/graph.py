"""Entity/relationship extraction over knowledge chunks, the in-process
graph store with its TF-IDF full-text index, and the batched Cypher export."""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from hashlib import sha1
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import EmptyQuery
from .ingest import KnowledgeChunk

REL_TYPES = (
    "MENTIONS",
    "CALLS",
    "INHERITS",
    "RELATED_TO",
    "PART_OF",
    "SEMANTIC_SIMILAR",
    "BELONGS_TO",
)

ENTITY_KINDS = ("code_class", "code_function", "code_variable", "domain_concept", "general_term")

# curated Devito concept dictionary; extend via config, not by editing tests
DEVITO_TERMS = (
    "Grid",
    "TimeFunction",
    "Function",
    "SparseFunction",
    "SparseTimeFunction",
    "Operator",
    "Eq",
    "solve",
    "SubDomain",
    "Constant",
    "Dimension",
    "SpaceDimension",
    "TimeDimension",
    "Derivative",
    "first_derivative",
    "second_derivative",
    "laplace",
    "space_order",
    "time_order",
    "boundary condition",
    "stencil",
    "finite difference",
    "time stepping",
    "Dirichlet",
    "Neumann",
    "periodic boundary",
    "absorbing boundary",
    "CFL condition",
    "upwind scheme",
    "central difference",
    "Crank-Nicolson",
    "Jacobi iteration",
    "wave equation",
    "heat equation",
    "advection equation",
    "diffusion",
    "Poisson equation",
    "Laplace equation",
    "grid spacing",
)

RELATED_TO_MIN_SHARED = 3

_CLASS_RE = re.compile(r"^\s*class\s+([A-Za-z_]\w*)\s*(?:\(([^)]*)\))?\s*:", re.MULTILINE)
_DEF_RE = re.compile(r"^\s*(?:async\s+)?def\s+([A-Za-z_]\w*)\s*\(", re.MULTILINE)
_ASSIGN_RE = re.compile(r"^\s*([a-z_]\w*)\s*=\s*[^=]", re.MULTILINE)
_CAP_PHRASE_RE = re.compile(r"\b([A-Z][a-zA-Z]+(?:\s+[A-Z][a-zA-Z]+){1,2})\b")
_PHRASE_STOPWORDS = {
    "The", "This", "That", "These", "Those", "A", "An", "In", "On", "At",
    "For", "With", "From", "To", "It", "We", "If", "When", "Note", "See",
}
_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def entity_id(name: str, kind: str) -> str:
    return "ent_" + sha1(f"{kind}\x00{name}".encode("utf-8")).hexdigest()[:16]


@dataclass
class Entity:
    entity_id: str
    name: str
    kind: str
    source_chunks: Set[str] = field(default_factory=set)

    @classmethod
    def make(cls, name: str, kind: str) -> "Entity":
        return cls(entity_id=entity_id(name, kind), name=name, kind=kind)


@dataclass(frozen=True)
class Relationship:
    rel_type: str
    src: str
    dst: str
    weight: float = 1.0


# ---------------------------------------------------------------------------
# Entity extraction: declaration patterns + curated dictionary + capitalized
# technical phrases (rule-based substitute for model NER)
# ---------------------------------------------------------------------------

def _dictionary_pattern(term: str) -> re.Pattern:
    return re.compile(r"(?<!\w)" + re.escape(term).replace(r"\ ", r"\s+") + r"(?!\w)")


def extract_entities(
    chunk: KnowledgeChunk, dictionary: Sequence[str] = DEVITO_TERMS
) -> List[Entity]:
    text = chunk.content
    found: Dict[Tuple[str, str], Entity] = {}

    def add(name: str, kind: str) -> None:
        key = (name, kind)
        if key not in found:
            ent = Entity.make(name, kind)
            ent.source_chunks.add(chunk.chunk_id)
            found[key] = ent

    for m in _CLASS_RE.finditer(text):
        add(m.group(1), "code_class")
    for m in _DEF_RE.finditer(text):
        add(m.group(1), "code_function")
    for m in _ASSIGN_RE.finditer(text):
        add(m.group(1), "code_variable")

    for term in dictionary:
        if _dictionary_pattern(term).search(text):
            add(term, "domain_concept")

    for m in _CAP_PHRASE_RE.finditer(text):
        phrase = m.group(1)
        if phrase.split()[0] in _PHRASE_STOPWORDS:
            continue
        add(phrase, "general_term")

    return list(found.values())


def merge_entities(per_chunk: Iterable[List[Entity]]) -> List[Entity]:
    """Merge per-chunk extractions by (name, kind), unioning source chunks."""
    merged: Dict[str, Entity] = {}
    for entities in per_chunk:
        for ent in entities:
            if ent.entity_id in merged:
                merged[ent.entity_id].source_chunks.update(ent.source_chunks)
            else:
                merged[ent.entity_id] = ent
    return list(merged.values())


# ---------------------------------------------------------------------------
# Relationship extraction
# ---------------------------------------------------------------------------

def extract_relationships(
    chunks: Sequence[KnowledgeChunk], entities: List[Entity]
) -> List[Relationship]:
    """Derive the typed edges. `entities` may be extended in place with base
    classes referenced by INHERITS but not otherwise extracted."""
    by_id = {c.chunk_id: c for c in chunks}
    rels: List[Relationship] = []
    seen: Set[Tuple[str, str, str]] = set()

    def emit(rel_type: str, src: str, dst: str, weight: float = 1.0) -> None:
        key = (rel_type, src, dst)
        if key not in seen:
            seen.add(key)
            rels.append(Relationship(rel_type, src, dst, weight))

    for ent in entities:
        for cid in sorted(ent.source_chunks):
            emit("MENTIONS", cid, ent.entity_id)

    by_name_kind = {(e.name, e.kind): e for e in entities}
    functions = [e for e in entities if e.kind == "code_function"]
    fn_names = {e.name: e for e in functions}
    for fn in functions:
        def_re = re.compile(r"^\s*(?:async\s+)?def\s+" + re.escape(fn.name) + r"\s*\(", re.MULTILINE)
        for cid in sorted(fn.source_chunks):
            content = by_id[cid].content if cid in by_id else ""
            if not def_re.search(content):
                continue
            for other_name, other in fn_names.items():
                if other_name == fn.name:
                    continue
                call_re = re.compile(r"(?<!def )\b" + re.escape(other_name) + r"\s*\(")
                if call_re.search(content):
                    emit("CALLS", fn.entity_id, other.entity_id)

    for chunk in chunks:
        for m in _CLASS_RE.finditer(chunk.content):
            cls_name, bases = m.group(1), m.group(2)
            if not bases:
                continue
            src_ent = by_name_kind.get((cls_name, "code_class"))
            if src_ent is None:
                continue
            for base in (b.strip() for b in bases.split(",")):
                if not re.fullmatch(r"[A-Za-z_]\w*", base) or base == "object":
                    continue
                dst_ent = by_name_kind.get((base, "code_class")) or by_name_kind.get(
                    (base, "domain_concept")
                )
                if dst_ent is None:
                    dst_ent = Entity.make(base, "code_class")
                    dst_ent.source_chunks.add(chunk.chunk_id)
                    entities.append(dst_ent)
                    by_name_kind[(base, "code_class")] = dst_ent
                emit("INHERITS", src_ent.entity_id, dst_ent.entity_id)

    for chunk in chunks:
        if chunk.parent_id:
            emit("PART_OF", chunk.chunk_id, chunk.parent_id)

    # RELATED_TO between chunks sharing enough distinct entities
    chunk_entities: Dict[str, Set[str]] = defaultdict(set)
    for ent in entities:
        for cid in ent.source_chunks:
            chunk_entities[cid].add(ent.entity_id)
    cids = sorted(chunk_entities)
    for i, a in enumerate(cids):
        for b in cids[i + 1 :]:
            shared = len(chunk_entities[a] & chunk_entities[b])
            if shared >= RELATED_TO_MIN_SHARED:
                emit("RELATED_TO", a, b, weight=min(1.0, shared / 10.0))

    return rels


# ---------------------------------------------------------------------------
# Graph store
# ---------------------------------------------------------------------------

@dataclass
class Community:
    community_id: int
    theme: str
    members: Set[str]
    resolution: float

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def node_id(self) -> str:
        return f"com_{self.community_id}"


class GraphStore:
    """Single-writer build, immutable afterwards; unlimited concurrent reads."""

    def __init__(self) -> None:
        self.chunks: Dict[str, KnowledgeChunk] = {}
        self.entities: Dict[str, Entity] = {}
        self.communities: Dict[str, Community] = {}
        self.edges: Dict[str, List[Relationship]] = {t: [] for t in REL_TYPES}
        self._adj: Dict[str, Dict[str, List[Tuple[str, float]]]] = {
            t: defaultdict(list) for t in REL_TYPES
        }
        self._radj: Dict[str, Dict[str, List[Tuple[str, float]]]] = {
            t: defaultdict(list) for t in REL_TYPES
        }
        self.vectors: Dict[str, "object"] = {}  # node id -> embedding (set by the semantic layer)
        self.working_resolution: Optional[float] = None
        self._index: Optional["_FulltextIndex"] = None

    # -- construction -------------------------------------------------------

    def add_chunk(self, chunk: KnowledgeChunk) -> None:
        self.chunks[chunk.chunk_id] = chunk

    def add_entity(self, ent: Entity) -> None:
        if ent.entity_id in self.entities:
            self.entities[ent.entity_id].source_chunks.update(ent.source_chunks)
        else:
            self.entities[ent.entity_id] = ent

    def add_community(self, com: Community) -> None:
        self.communities[com.node_id] = com

    def has_node(self, node_id: str) -> bool:
        return node_id in self.chunks or node_id in self.entities or node_id in self.communities

    def add_relationship(self, rel: Relationship) -> None:
        if rel.rel_type not in REL_TYPES:
            raise ValueError(f"unknown relationship type {rel.rel_type!r}")
        if not self.has_node(rel.src) or not self.has_node(rel.dst):
            raise ValueError(f"dangling edge endpoint: {rel.src} -> {rel.dst}")
        self.edges[rel.rel_type].append(rel)
        self._adj[rel.rel_type][rel.src].append((rel.dst, rel.weight))
        self._radj[rel.rel_type][rel.dst].append((rel.src, rel.weight))

    def add_relationships(self, rels: Iterable[Relationship]) -> None:
        for rel in rels:
            self.add_relationship(rel)

    # -- reads ---------------------------------------------------------------

    def leaf_chunks(self) -> List[KnowledgeChunk]:
        return [c for c in self.chunks.values() if not c.split_parent]

    def neighbors(self, node_id: str, rel_type: str, direction: str = "out") -> List[Tuple[str, float]]:
        if direction == "out":
            return list(self._adj[rel_type].get(node_id, []))
        if direction == "in":
            return list(self._radj[rel_type].get(node_id, []))
        return list(self._adj[rel_type].get(node_id, [])) + list(
            self._radj[rel_type].get(node_id, [])
        )

    def chunk_community(self, chunk_id: str) -> Optional[Community]:
        out = self._adj["BELONGS_TO"].get(chunk_id, [])
        if not out:
            return None
        return self.communities.get(out[0][0])

    def node_counts(self) -> Dict[str, int]:
        return {
            "Chunk": len(self.chunks),
            "Entity": len(self.entities),
            "Community": len(self.communities),
        }

    def stats_report(self) -> Dict:
        """The three graph summary queries: counts by node type, largest
        communities, and chunk membership distribution by theme."""
        top = sorted(
            self.communities.values(), key=lambda c: (-c.size, c.community_id)
        )[:10]
        membership: Counter = Counter()
        for rel in self.edges["BELONGS_TO"]:
            com = self.communities.get(rel.dst)
            if com:
                membership[com.theme] += 1
        return {
            "node_counts": dict(
                sorted(self.node_counts().items(), key=lambda kv: -kv[1])
            ),
            "top_communities": [
                {"id": c.community_id, "theme": c.theme, "size": c.size} for c in top
            ],
            "membership_distribution": [
                {"theme": theme, "member_count": n}
                for theme, n in membership.most_common(10)
            ],
            "edge_counts": {t: len(self.edges[t]) for t in REL_TYPES},
        }

    # -- full-text -----------------------------------------------------------

    def build_index(self) -> None:
        self._index = _FulltextIndex(self.leaf_chunks())

    @property
    def index(self) -> "_FulltextIndex":
        if self._index is None:
            self.build_index()
        return self._index  # type: ignore[return-value]


class _FulltextIndex:
    """Inverted index with log-scaled tf, smoothed idf, cosine normalization."""

    def __init__(self, chunks: Sequence[KnowledgeChunk]) -> None:
        self.doc_ids = [c.chunk_id for c in chunks]
        self.df: Counter = Counter()
        self.doc_weights: Dict[str, Dict[str, float]] = {}
        raw_tfs: Dict[str, Counter] = {}
        for c in chunks:
            tf = Counter(tokenize(c.title + " " + c.content))
            raw_tfs[c.chunk_id] = tf
            for term in tf:
                self.df[term] += 1
        self.n_docs = len(chunks)
        for cid, tf in raw_tfs.items():
            weights = {t: (1.0 + math.log(n)) * self.idf(t) for t, n in tf.items()}
            norm = math.sqrt(sum(w * w for w in weights.values())) or 1.0
            self.doc_weights[cid] = {t: w / norm for t, w in weights.items()}

    def idf(self, term: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(term, 0))) + 1.0

    def score(self, query_terms: Sequence[str]) -> List[Tuple[str, float]]:
        tf = Counter(query_terms)
        q = {t: (1.0 + math.log(n)) * self.idf(t) for t, n in tf.items()}
        norm = math.sqrt(sum(w * w for w in q.values())) or 1.0
        q = {t: w / norm for t, w in q.items()}
        scores: List[Tuple[str, float]] = []
        for cid in self.doc_ids:
            weights = self.doc_weights[cid]
            s = sum(w * weights[t] for t, w in q.items() if t in weights)
            if s > 0:
                scores.append((cid, s))
        scores.sort(key=lambda kv: (-kv[1], kv[0]))
        return scores


def fulltext_query(store: GraphStore, query: str, k: int) -> List[Tuple[str, float]]:
    terms = tokenize(query)
    if not terms:
        raise EmptyQuery("query has no searchable terms")
    if k <= 0:
        return []
    return store.index.score(terms)[:k]


# ---------------------------------------------------------------------------
# Cypher export
# ---------------------------------------------------------------------------

_CONSTRAINTS = [
    "CREATE CONSTRAINT chunk_id IF NOT EXISTS FOR (c:Chunk) REQUIRE c.id IS UNIQUE;",
    "CREATE CONSTRAINT entity_id IF NOT EXISTS FOR (e:Entity) REQUIRE e.id IS UNIQUE;",
    "CREATE CONSTRAINT community_id IF NOT EXISTS FOR (com:Community) REQUIRE com.id IS UNIQUE;",
]

_INDEXES = [
    "CREATE INDEX chunk_community IF NOT EXISTS FOR (c:Chunk) ON (c.community_id);",
    "CREATE INDEX chunk_kind IF NOT EXISTS FOR (c:Chunk) ON (c.kind);",
    "CREATE INDEX community_theme IF NOT EXISTS FOR (com:Community) ON (com.theme);",
    "CREATE FULLTEXT INDEX chunk_content_index IF NOT EXISTS"
    " FOR (c:Chunk) ON EACH [c.title, c.content];",
]


def _cypher_map(record: Dict) -> str:
    """Cypher map literal: bare keys, JSON-encoded values."""
    parts = [f"{k}: {json.dumps(v, ensure_ascii=False)}" for k, v in record.items()]
    return "{" + ", ".join(parts) + "}"


def _cypher_rows(records: Sequence[Dict]) -> str:
    return "[" + ", ".join(_cypher_map(r) for r in records) + "]"


def parse_cypher_rows(payload: str) -> List[Dict]:
    """Inverse of `_cypher_rows`: quote bare keys (outside string literals)
    and hand the result to the JSON parser."""
    out: List[str] = []
    in_string = False
    last_structural = ""
    i = 0
    while i < len(payload):
        ch = payload[i]
        if in_string:
            out.append(ch)
            if ch == "\\":
                out.append(payload[i + 1])
                i += 2
                continue
            if ch == '"':
                in_string = False
            i += 1
            continue
        if ch == '"':
            in_string = True
            out.append(ch)
            i += 1
            continue
        m = re.match(r"([A-Za-z_]\w*)\s*:", payload[i:])
        if m and last_structural in ("{", ","):
            out.append(f'"{m.group(1)}":')
            i += m.end()
            last_structural = ":"
            continue
        out.append(ch)
        if not ch.isspace():
            last_structural = ch
        i += 1
    return json.loads("".join(out))


def _chunk_record(chunk: KnowledgeChunk, store: GraphStore) -> Dict:
    com = store.chunk_community(chunk.chunk_id)
    return {
        "id": chunk.chunk_id,
        "title": chunk.title,
        "content": chunk.content,
        "kind": chunk.kind,
        "source_path": chunk.source_path,
        "char_length": chunk.char_length,
        "word_count": chunk.word_count,
        "summary": chunk.summary,
        "directory_category": chunk.directory_category,
        "community_id": com.community_id if com else None,
    }


def export_cypher(store: GraphStore, batch_size: int = 500) -> str:
    """Deterministic Cypher script: constraints, indexes, then batched
    parameterized UNWIND creation of nodes and edges (<= batch_size rows)."""
    lines: List[str] = []
    lines.extend(_CONSTRAINTS)
    lines.extend(_INDEXES)

    def batch(records: List[Dict], statement: str) -> None:
        for i in range(0, len(records), batch_size):
            rows = records[i : i + batch_size]
            lines.append(f":param rows => {_cypher_rows(rows)};")
            lines.append(statement)

    chunk_records = [
        _chunk_record(c, store) for c in sorted(store.chunks.values(), key=lambda c: c.chunk_id)
    ]
    batch(
        chunk_records,
        "UNWIND $rows AS row CREATE (c:Chunk {id: row.id, title: row.title,"
        " content: row.content, kind: row.kind, source_path: row.source_path,"
        " char_length: row.char_length, word_count: row.word_count,"
        " summary: row.summary, directory_category: row.directory_category,"
        " community_id: row.community_id});",
    )

    entity_records = [
        {"id": e.entity_id, "name": e.name, "kind": e.kind}
        for e in sorted(store.entities.values(), key=lambda e: e.entity_id)
    ]
    batch(
        entity_records,
        "UNWIND $rows AS row CREATE (e:Entity {id: row.id, name: row.name, kind: row.kind});",
    )

    community_records = [
        {
            "id": c.node_id,
            "community_id": c.community_id,
            "theme": c.theme,
            "size": c.size,
            "resolution": c.resolution,
        }
        for c in sorted(store.communities.values(), key=lambda c: c.community_id)
    ]
    batch(
        community_records,
        "UNWIND $rows AS row CREATE (com:Community {id: row.id,"
        " community_id: row.community_id, theme: row.theme,"
        " size: row.size, resolution: row.resolution});",
    )

    for rel_type in REL_TYPES:
        rels = sorted(store.edges[rel_type], key=lambda r: (r.src, r.dst))
        records = [{"src": r.src, "dst": r.dst, "weight": r.weight} for r in rels]
        batch(
            records,
            "UNWIND $rows AS row MATCH (a {id: row.src}) MATCH (b {id: row.dst})"
            f" CREATE (a)-[:{rel_type} {{weight: row.weight}}]->(b);",
        )

    return "\n".join(lines) + "\n"
