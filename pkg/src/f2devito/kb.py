"""Knowledge-base build driver: ingest a corpus, extract the graph, attach
the semantic layer, and persist/reload the finished store as JSON."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .graph import (
    Community,
    DEVITO_TERMS,
    Entity,
    GraphStore,
    Relationship,
    extract_entities,
    extract_relationships,
    merge_entities,
)
from .ingest import KnowledgeChunk, ingest_corpus
from .semantic import (
    DEFAULT_SEED,
    HashedEmbedder,
    RESOLUTIONS,
    attach_semantic_layer,
    community_report,
)

log = logging.getLogger(__name__)

STORE_FORMAT_VERSION = 1


def build_knowledge_base(
    corpus_root: str | Path,
    dictionary: Sequence[str] = DEVITO_TERMS,
    embedder=None,
    seed: int = DEFAULT_SEED,
    resolutions: Sequence[float] = RESOLUTIONS,
) -> tuple[GraphStore, Dict]:
    """Full pipeline: parse + chunk -> entities + relationships -> embeddings,
    similarity edges, communities. Returns the finished store and a build
    report (timings, counts, community summary)."""
    t0 = time.perf_counter()
    chunks = ingest_corpus(corpus_root)
    store = GraphStore()
    for chunk in chunks:
        store.add_chunk(chunk)

    leaf = store.leaf_chunks()
    per_chunk = [extract_entities(c, dictionary) for c in leaf]
    entities = merge_entities(per_chunk)
    rels = extract_relationships(leaf, entities)
    for ent in entities:
        store.add_entity(ent)
    store.add_relationships(rels)
    store.build_index()

    reports = attach_semantic_layer(store, embedder=embedder, resolutions=resolutions, seed=seed)
    elapsed = time.perf_counter() - t0

    report = {
        "corpus_root": str(corpus_root),
        "chunks": len(store.chunks),
        "leaf_chunks": len(leaf),
        "entities": len(store.entities),
        "edges": {t: len(es) for t, es in store.edges.items()},
        "build_seconds": round(elapsed, 3),
        "communities": community_report(reports, store.working_resolution),
    }
    return store, report


# ---------------------------------------------------------------------------
# Persistence (single JSON file; embeddings stay local, never exported)
# ---------------------------------------------------------------------------

def save_store(store: GraphStore, path: str | Path) -> None:
    payload = {
        "version": STORE_FORMAT_VERSION,
        "working_resolution": store.working_resolution,
        "chunks": [vars(c) for c in store.chunks.values()],
        "entities": [
            {"entity_id": e.entity_id, "name": e.name, "kind": e.kind,
             "source_chunks": sorted(e.source_chunks)}
            for e in store.entities.values()
        ],
        "communities": [
            {"community_id": c.community_id, "theme": c.theme,
             "members": sorted(c.members), "resolution": c.resolution}
            for c in store.communities.values()
        ],
        "edges": [
            {"rel_type": r.rel_type, "src": r.src, "dst": r.dst, "weight": r.weight}
            for rels in store.edges.values()
            for r in rels
        ],
        "vectors": {k: np.asarray(v).tolist() for k, v in store.vectors.items()},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_store(path: str | Path) -> GraphStore:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != STORE_FORMAT_VERSION:
        raise ValueError(f"unsupported store format version {payload.get('version')!r}")
    store = GraphStore()
    for c in payload["chunks"]:
        store.add_chunk(KnowledgeChunk(**c))
    for e in payload["entities"]:
        store.add_entity(
            Entity(entity_id=e["entity_id"], name=e["name"], kind=e["kind"],
                   source_chunks=set(e["source_chunks"]))
        )
    for c in payload["communities"]:
        store.add_community(
            Community(community_id=c["community_id"], theme=c["theme"],
                      members=set(c["members"]), resolution=c["resolution"])
        )
    for r in payload["edges"]:
        store.add_relationship(Relationship(r["rel_type"], r["src"], r["dst"], r["weight"]))
    store.vectors = {k: np.asarray(v) for k, v in payload["vectors"].items()}
    store.working_resolution = payload["working_resolution"]
    store.build_index()
    return store
