"""Semantic layer: node embeddings, the thresholded Top-K similarity graph,
multi-resolution community detection, and theme labeling."""

from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import BackendUnavailable, EmptyGraph, EmptyText
from .graph import Community, GraphStore, Relationship, tokenize
from .leiden import leiden_partition

DEFAULT_DIM = 1024
SIMILARITY_THRESHOLD = 0.6
TOP_K_NEIGHBORS = 8
RESOLUTIONS = (0.3, 0.5, 0.8, 1.0, 1.2)
DEFAULT_SEED = 42

_THEME_STOPWORDS = {
    "the", "a", "an", "of", "in", "on", "for", "and", "with", "to", "is",
    "how", "what", "notes", "part",
}


_EMBED_STOPWORDS = frozenset(
    """a an the of in on for and with to is are was were be been being this
    that these those it its as at by from or not no into over under within
    without between per each every such same own so than then when while
    where which who whom whose what why how all any both few more most other
    some only very can will just should now you your we our they their""".split()
)


class HashedEmbedder:
    """Deterministic local embedder: feature-hashed token counts projected to
    a fixed dimension and unit-normalized. Stopwords are dropped so the mass
    sits on content-bearing tokens. Identical text gives bitwise-equal
    vectors on any machine."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self._cache: Dict[str, Tuple[int, float]] = {}

    def _slot(self, token: str) -> Tuple[int, float]:
        hit = self._cache.get(token)
        if hit is None:
            h = int.from_bytes(hashlib.md5(token.encode("utf-8")).digest()[:8], "big")
            hit = (h % self.dim, 1.0 if (h >> 63) & 1 else -1.0)
            self._cache[token] = hit
        return hit

    def embed(self, text: str) -> np.ndarray:
        all_tokens = tokenize(text)
        if not all_tokens:
            raise EmptyText("cannot embed empty text")
        tokens = [t for t in all_tokens if t not in _EMBED_STOPWORDS] or all_tokens
        vec = np.zeros(self.dim, dtype=np.float64)
        for token, count in Counter(tokens).items():
            idx, sign = self._slot(token)
            vec[idx] += sign * count
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[self._slot(tokens[0])[0]] = 1.0
            norm = 1.0
        return vec / norm


class RemoteEmbedder:
    """HTTP embedding backend sharing the local embedder's contract."""

    def __init__(self, endpoint: str, model: str, api_key: str = "", dim: int = DEFAULT_DIM,
                 timeout_s: float = 30.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.dim = dim
        self.timeout_s = timeout_s

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except Exception as exc:  # connection, HTTP and shape errors alike
            raise BackendUnavailable(f"embedding service failed: {exc}") from exc
        vec = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(vec)) or 1.0
        return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


# ---------------------------------------------------------------------------
# Similarity graph
# ---------------------------------------------------------------------------

def topk_neighbors(
    vectors: Dict[str, np.ndarray],
    threshold: float = SIMILARITY_THRESHOLD,
    top_k: int = TOP_K_NEIGHBORS,
) -> Dict[str, List[Tuple[str, float]]]:
    """Per-node directed candidate lists: cosine >= threshold, at most the
    top_k strongest, deterministic tie-break by node id."""
    ids = sorted(vectors)
    if len(ids) < 2:
        return {i: [] for i in ids}
    matrix = np.stack([vectors[i] for i in ids])
    sims = matrix @ matrix.T
    out: Dict[str, List[Tuple[str, float]]] = {}
    for row, node in enumerate(ids):
        cands = [
            (ids[col], float(sims[row, col]))
            for col in range(len(ids))
            if col != row and sims[row, col] >= threshold
        ]
        cands.sort(key=lambda kv: (-kv[1], kv[0]))
        out[node] = cands[:top_k]
    return out


def build_similarity_graph(
    vectors: Dict[str, np.ndarray],
    threshold: float = SIMILARITY_THRESHOLD,
    top_k: int = TOP_K_NEIGHBORS,
) -> List[Relationship]:
    """SEMANTIC_SIMILAR edges: per-node Top-K above the cosine threshold,
    symmetrized by union; one edge per unordered pair, weight = cosine."""
    directed = topk_neighbors(vectors, threshold, top_k)
    pairs: Dict[Tuple[str, str], float] = {}
    for src, cands in directed.items():
        for dst, sim in cands:
            key = (src, dst) if src < dst else (dst, src)
            pairs[key] = sim
    return [
        Relationship("SEMANTIC_SIMILAR", a, b, weight=w)
        for (a, b), w in sorted(pairs.items())
    ]


# ---------------------------------------------------------------------------
# Communities
# ---------------------------------------------------------------------------

@dataclass
class ResolutionReport:
    resolution: float
    communities: List[Community]
    mean_intra_fraction: float


def detect_communities(
    nodes: Sequence[str],
    edges: Sequence[Relationship],
    resolutions: Sequence[float] = RESOLUTIONS,
    seed: int = DEFAULT_SEED,
) -> Dict[float, List[Community]]:
    """Leiden partition per resolution. Isolated nodes come back as
    singleton communities; community ids are dense per resolution."""
    if not nodes:
        raise EmptyGraph("no nodes to cluster")
    triples = [(r.src, r.dst, r.weight) for r in edges]
    result: Dict[float, List[Community]] = {}
    for resolution in resolutions:
        partition = leiden_partition(list(nodes), triples, resolution=resolution, seed=seed)
        ordered = sorted(partition, key=lambda ms: (-len(ms), min(ms)))
        result[resolution] = [
            Community(community_id=i, theme="", members=set(ms), resolution=resolution)
            for i, ms in enumerate(ordered)
        ]
    return result


def mean_intra_fraction(communities: Sequence[Community], edges: Sequence[Relationship]) -> float:
    """Mean, over communities with >= 2 members, of the fraction of incident
    edge weight that stays inside the community."""
    member_of: Dict[str, int] = {}
    for i, com in enumerate(communities):
        for node in com.members:
            member_of[node] = i
    intra = defaultdict(float)
    cut = defaultdict(float)
    for rel in edges:
        a, b = member_of.get(rel.src), member_of.get(rel.dst)
        if a is None or b is None:
            continue
        if a == b:
            intra[a] += rel.weight
        else:
            cut[a] += rel.weight
            cut[b] += rel.weight
    fractions = []
    for i, com in enumerate(communities):
        if com.size < 2:
            continue
        total = intra[i] + cut[i]
        fractions.append(intra[i] / total if total > 0 else 0.0)
    if not fractions:
        return -1.0
    return sum(fractions) / len(fractions)


def label_theme(community: Community, store: GraphStore) -> str:
    """Top-3 TF-IDF terms of the member chunk titles, joined by '/'."""
    titles_by_chunk = {
        cid: store.chunks[cid].title for cid in community.members if cid in store.chunks
    }
    member_tokens = [
        t for title in titles_by_chunk.values() for t in tokenize(title)
        if t not in _THEME_STOPWORDS
    ]
    if not member_tokens:
        return "untitled"
    df: Counter = Counter()
    all_titles = [c.title for c in store.chunks.values()]
    for title in all_titles:
        for term in set(tokenize(title)):
            df[term] += 1
    n_docs = max(1, len(all_titles))
    tf = Counter(member_tokens)
    scored = [
        (term, (1 + math.log(count)) * (math.log((1 + n_docs) / (1 + df.get(term, 0))) + 1))
        for term, count in tf.items()
    ]
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return "/".join(term for term, _ in scored[:3])


# ---------------------------------------------------------------------------
# Store-level driver
# ---------------------------------------------------------------------------

TITLE_EMPHASIS = 4  # title tokens repeated in the node text: the topic label
# should dominate similarity more than any single body sentence


def embed_store_nodes(store: GraphStore, embedder) -> Dict[str, np.ndarray]:
    """Embed leaf chunks (emphasized title + content) and entities (name)."""
    vectors: Dict[str, np.ndarray] = {}
    for chunk in store.leaf_chunks():
        node_text = ((chunk.title + " ") * TITLE_EMPHASIS) + chunk.content
        vectors[chunk.chunk_id] = embedder.embed(node_text)
    for ent in store.entities.values():
        vectors[ent.entity_id] = embedder.embed(ent.name)
    store.vectors = vectors
    return vectors


def attach_semantic_layer(
    store: GraphStore,
    embedder=None,
    resolutions: Sequence[float] = RESOLUTIONS,
    seed: int = DEFAULT_SEED,
    threshold: float = SIMILARITY_THRESHOLD,
    top_k: int = TOP_K_NEIGHBORS,
) -> List[ResolutionReport]:
    """Embed nodes, wire SEMANTIC_SIMILAR edges, detect communities at every
    resolution, pick the working resolution (max mean intra-community weight
    fraction, first resolution wins ties), and attach themed communities
    with BELONGS_TO edges for chunk members."""
    embedder = embedder or HashedEmbedder()
    vectors = embed_store_nodes(store, embedder)
    if not vectors:
        raise EmptyGraph("store has no embeddable nodes")

    edges = build_similarity_graph(vectors, threshold=threshold, top_k=top_k)
    store.add_relationships(edges)

    by_resolution = detect_communities(sorted(vectors), edges, resolutions, seed=seed)
    reports = [
        ResolutionReport(res, coms, mean_intra_fraction(coms, edges))
        for res, coms in by_resolution.items()
    ]
    working = max(reports, key=lambda r: r.mean_intra_fraction)
    store.working_resolution = working.resolution

    for com in working.communities:
        if com.size < 2:
            continue  # singletons stay outside the community layer
        com.theme = label_theme(com, store)
        store.add_community(com)
        for member in sorted(com.members):
            if member in store.chunks:
                store.add_relationship(Relationship("BELONGS_TO", member, com.node_id))
    for report in reports:
        for com in report.communities:
            if com.size >= 2 and not com.theme:
                com.theme = label_theme(com, store)
    return reports


def community_report(reports: Sequence[ResolutionReport], working_resolution: float) -> Dict:
    return {
        "working_resolution": working_resolution,
        "resolutions": [
            {
                "resolution": r.resolution,
                "community_count": sum(1 for c in r.communities if c.size >= 2),
                "singleton_count": sum(1 for c in r.communities if c.size == 1),
                "mean_intra_fraction": r.mean_intra_fraction,
                "communities": [
                    {"id": c.community_id, "size": c.size, "theme": c.theme}
                    for c in r.communities
                    if c.size >= 2
                ],
            }
            for r in reports
        ],
    }
