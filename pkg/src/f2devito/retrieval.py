"""Strategy-driven retrieval (community pre-selection plus four parallel
modes), multi-factor fusion and re-ranking, and conversion prompt assembly."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .errors import UnknownStrategy
from .fortran import FortranAnalysis, QuerySpec
from .gateway import OUTPUT_SCHEMA_TEXT
from .graph import GraphStore, fulltext_query, tokenize

MODE_WEIGHTS = {
    "fulltext": 1.0,
    "community": 0.9,
    "concept_expansion": 0.8,
    "semantic_similar": 0.7,
}
TIER_WEIGHTS = {"primary": 1.0, "secondary": 0.7, "concept": 0.5}
STRATEGIES = ("fast", "comprehensive", "deep", "hybrid")

TOP_CANDIDATES = 15
MODE_BUDGET = 20
SEMANTIC_SEEDS = 5
HYBRID_ESCALATION_SCORE = 0.5
FULL_LENGTH_CHARS = 1000
COMMUNITY_DAMP = 0.1
# community scoping exists to cut the search space on large stores; below
# this many in-scope chunks the restriction only costs recall, so full-text
# falls back to the whole corpus
SCOPE_FLOOR = 2 * MODE_BUDGET

_PDE_TERMS = {
    "parabolic": ("parabolic", "heat", "diffusion"),
    "hyperbolic": ("hyperbolic", "wave", "advection"),
    "elliptic": ("elliptic", "laplace", "poisson"),
}
_SCHEME_TERMS = {
    "central": ("central",),
    "upwind": ("upwind",),
    "crank_nicolson": ("crank-nicolson", "crank nicolson", "crank_nicolson"),
    "jacobi": ("jacobi",),
    "ftcs": ("ftcs", "forward time", "explicit"),
}
_BC_TERMS = {
    "dirichlet": ("dirichlet",),
    "neumann": ("neumann",),
    "periodic": ("periodic",),
    "absorbing": ("absorbing", "damping", "sponge"),
}
_DIM_TERMS = {1: ("1d", "one-dimensional"), 2: ("2d", "two-dimensional"),
              3: ("3d", "three-dimensional")}


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: str
    mode: str
    raw_score: float
    via_community: Optional[str] = None


@dataclass
class FusedCandidate:
    chunk_id: str
    composite: float
    factors: Dict[str, float]
    mode: str
    tier: str
    title: str = ""
    content: str = ""


@dataclass
class RagContext:
    candidates: List[FusedCandidate]
    analysis: Optional[FortranAnalysis] = None
    assembled: str = ""


# ---------------------------------------------------------------------------
# Community pre-selection
# ---------------------------------------------------------------------------

def select_communities(query: QuerySpec, store: GraphStore) -> List[str]:
    """Top 3 communities always (up to 5 while the overlap score stays
    positive), scored by idf-weighted overlap between query keywords and
    community theme terms."""
    communities = sorted(store.communities.values(), key=lambda c: c.community_id)
    if not communities:
        return []
    query_terms = {t for kw in query.keywords for t in tokenize(kw)} | set(tokenize(query.text))
    index = store.index

    scored: List[Tuple[float, int, str]] = []
    for com in communities:
        theme_terms = set(tokenize(com.theme))
        overlap = theme_terms & query_terms
        score = sum(index.idf(t) for t in overlap)
        scored.append((score, com.community_id, com.node_id))
    scored.sort(key=lambda t: (-t[0], t[1]))

    selected = [node_id for _, _, node_id in scored[:3]]
    for score, _, node_id in scored[3:5]:
        if score > 0:
            selected.append(node_id)
    return selected


# ---------------------------------------------------------------------------
# Retrieval modes
# ---------------------------------------------------------------------------

def _community_scope(store: GraphStore, community_ids: Sequence[str]) -> Set[str]:
    scope: Set[str] = set()
    for com_id in community_ids:
        com = store.communities.get(com_id)
        if com:
            scope.update(m for m in com.members if m in store.chunks)
    return scope


def _fulltext_mode(store: GraphStore, query: QuerySpec, scope: Optional[Set[str]],
                   via: Optional[Dict[str, str]] = None) -> List[RetrievalResult]:
    try:
        hits = fulltext_query(store, query.text, k=len(store.chunks) or 1)
    except Exception:
        return []
    if scope is not None:
        hits = [(cid, s) for cid, s in hits if cid in scope]
    hits = hits[:MODE_BUDGET]
    if not hits:
        return []
    top = hits[0][1] or 1.0
    return [
        RetrievalResult(cid, "fulltext", score / top,
                        via_community=(via or {}).get(cid))
        for cid, score in hits
    ]


def _community_mode(store: GraphStore, query: QuerySpec, community_ids: Sequence[str],
                    membership: Dict[str, str]) -> List[RetrievalResult]:
    keywords = sorted({kw.lower() for kw in query.keywords} | {query.text.lower()})
    if not keywords:
        return []
    results = []
    for cid in sorted(_community_scope(store, community_ids)):
        chunk = store.chunks[cid]
        title, content = chunk.title.lower(), chunk.content.lower()
        title_hits = sum(1 for kw in keywords if kw in title)
        content_hits = sum(1 for kw in keywords if kw in content)
        if title_hits + content_hits == 0:
            continue
        raw = min(1.0, (2 * title_hits + content_hits) / (3 * len(keywords)))
        results.append(RetrievalResult(cid, "community", raw, via_community=membership.get(cid)))
    results.sort(key=lambda r: (-r.raw_score, r.chunk_id))
    return results[:MODE_BUDGET]


def _concept_mode(store: GraphStore, query: QuerySpec) -> List[RetrievalResult]:
    """Dictionary-entity seeds expand through MENTIONS edges; candidates are
    ranked by TF-IDF of the seed names so a chunk that merely name-drops a
    common concept scores far below one actually about it."""
    query_text = (query.text + " " + " ".join(query.keywords)).lower()
    seeds = []
    for ent in store.entities.values():
        if ent.kind != "domain_concept":
            continue
        pattern = re.compile(
            r"(?<!\w)" + re.escape(ent.name.lower()).replace(r"\ ", r"\s+") + r"(?!\w)"
        )
        if pattern.search(query_text):
            seeds.append(ent)
    if not seeds:
        return []
    reachable: Set[str] = set()
    for ent in seeds:
        for cid, _ in store.neighbors(ent.entity_id, "MENTIONS", direction="in"):
            if cid in store.chunks:
                reachable.add(cid)
    if not reachable:
        return []
    seed_terms = [t for ent in seeds for t in tokenize(ent.name)]
    scored = [(cid, s) for cid, s in store.index.score(seed_terms) if cid in reachable]
    scored = scored[:MODE_BUDGET]
    if not scored:
        return []
    top = scored[0][1] or 1.0
    results = [RetrievalResult(cid, "concept_expansion", s / top) for cid, s in scored]
    return results


def _semantic_mode(store: GraphStore, seeds: Sequence[RetrievalResult],
                   hops: int = 1) -> List[RetrievalResult]:
    best: Dict[str, float] = {}
    frontier = {r.chunk_id: r.raw_score for r in seeds[:SEMANTIC_SEEDS]}
    seen = set(frontier)
    for _ in range(hops):
        next_frontier: Dict[str, float] = {}
        for node, score in sorted(frontier.items()):
            for nbr, weight in store.neighbors(node, "SEMANTIC_SIMILAR", direction="both"):
                if nbr not in store.chunks:
                    continue
                propagated = score * weight
                if nbr not in seen or propagated > next_frontier.get(nbr, 0.0):
                    next_frontier[nbr] = max(next_frontier.get(nbr, 0.0), propagated)
        for node, score in next_frontier.items():
            if score > best.get(node, 0.0):
                best[node] = score
        seen |= set(next_frontier)
        frontier = next_frontier
    results = [RetrievalResult(cid, "semantic_similar", s) for cid, s in best.items()]
    results.sort(key=lambda r: (-r.raw_score, r.chunk_id))
    return results[:MODE_BUDGET]


def _membership_map(store: GraphStore) -> Dict[str, str]:
    return {
        rel.src: rel.dst for rel in store.edges["BELONGS_TO"]
    }


def retrieve(query: QuerySpec, store: GraphStore,
             strategy: Optional[str] = None) -> List[RetrievalResult]:
    """Run one query under a strategy. Fast is whole-corpus full text only;
    comprehensive adds the three graph modes inside selected communities
    (plus community-less chunks for full text, so nothing goes dark); deep
    extends semantic expansion to two hops; hybrid escalates fast to
    comprehensive when the top full-text cosine is weak."""
    strategy = strategy or query.strategy
    if strategy not in STRATEGIES:
        raise UnknownStrategy(strategy)

    if strategy == "fast":
        return _fulltext_mode(store, query, scope=None)

    if strategy == "hybrid":
        fast = _fulltext_mode(store, query, scope=None)
        try:
            raw_hits = fulltext_query(store, query.text, k=1)
        except Exception:
            raw_hits = []
        top_cosine = raw_hits[0][1] if raw_hits else 0.0
        if top_cosine >= HYBRID_ESCALATION_SCORE:
            return fast
        return retrieve(query, store, strategy="comprehensive")

    membership = _membership_map(store)
    selected = select_communities(query, store)
    scope = _community_scope(store, selected)
    scope |= {c.chunk_id for c in store.leaf_chunks() if c.chunk_id not in membership}
    if len(scope) < SCOPE_FLOOR:
        scope = {c.chunk_id for c in store.leaf_chunks()}

    hops = 2 if strategy == "deep" else 1
    with ThreadPoolExecutor(max_workers=4) as pool:
        fulltext_f = pool.submit(_fulltext_mode, store, query, scope, membership)
        community_f = pool.submit(_community_mode, store, query, selected, membership)
        concept_f = pool.submit(_concept_mode, store, query)
        fulltext = fulltext_f.result()
        semantic_f = pool.submit(_semantic_mode, store, fulltext, hops)
        results = fulltext + community_f.result() + concept_f.result() + semantic_f.result()
    return results


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

def _relevance_factor(analysis: Optional[FortranAnalysis], content: str) -> float:
    if analysis is None:
        return 1.0
    text = content.lower()
    slots = [
        _PDE_TERMS.get(analysis.pde_class, ()),
        _SCHEME_TERMS.get(analysis.scheme, ()),
        tuple(t for bc in analysis.boundary_conditions for t in _BC_TERMS.get(bc, ())),
        _DIM_TERMS.get(analysis.dimensions, ()),
    ]
    matched = sum(1 for terms in slots if any(t in text for t in terms))
    return 1.0 + matched / 4.0


def fuse(
    per_query: Sequence[Tuple[QuerySpec, Sequence[RetrievalResult]]],
    analysis: Optional[FortranAnalysis],
    store: GraphStore,
    top_n: int = TOP_CANDIDATES,
) -> RagContext:
    """Dedup by chunk id (max pre-weight raw score wins, recording its
    mode/tier), apply the multi-factor weights, sort by the exact product,
    cut to the top candidates."""
    best: Dict[str, Tuple[float, float, float, str, str]] = {}
    for query, results in per_query:
        tier_w = TIER_WEIGHTS[query.tier]
        for r in results:
            key = (r.raw_score, MODE_WEIGHTS[r.mode], tier_w)
            cur = best.get(r.chunk_id)
            if cur is None or key > (cur[0], cur[1], cur[2]):
                best[r.chunk_id] = (r.raw_score, MODE_WEIGHTS[r.mode], tier_w, r.mode, query.tier)

    max_size = max((c.size for c in store.communities.values()), default=0)
    candidates: List[FusedCandidate] = []
    for chunk_id, (raw, type_w, tier_w, mode, tier) in best.items():
        chunk = store.chunks.get(chunk_id)
        if chunk is None:
            continue
        com = store.chunk_community(chunk_id)
        community_w = 1.0 - COMMUNITY_DAMP * (com.size / max_size) if com and max_size else 1.0
        length_w = min(chunk.char_length, FULL_LENGTH_CHARS) / FULL_LENGTH_CHARS
        relevance = _relevance_factor(analysis, chunk.content)
        composite = raw * type_w * community_w * length_w * tier_w * relevance
        candidates.append(
            FusedCandidate(
                chunk_id=chunk_id,
                composite=composite,
                factors={
                    "raw_score": raw,
                    "type_weight": type_w,
                    "community_weight": community_w,
                    "length_weight": length_w,
                    "tier_weight": tier_w,
                    "relevance_factor": relevance,
                },
                mode=mode,
                tier=tier,
                title=chunk.title,
                content=chunk.content,
            )
        )
    candidates.sort(key=lambda c: (-c.composite, c.chunk_id))
    return RagContext(candidates=candidates[:top_n], analysis=analysis)


def retrieve_for_analysis(
    queries: Sequence[QuerySpec], store: GraphStore, analysis: Optional[FortranAnalysis],
    strategy_override: Optional[str] = None,
) -> RagContext:
    per_query = [
        (q, retrieve(q, store, strategy=strategy_override or q.strategy)) for q in queries
    ]
    return fuse(per_query, analysis, store)


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

_ROLE_SECTION = """\
You are a Fortran-to-Devito conversion expert. Convert the legacy Fortran
finite-difference program below into an equivalent, runnable Devito program.

Conversion requirements:
- Preserve the mathematical model: equation type, differential operators,
  coefficients, boundary conditions and grid geometry.
- Use symbolic Devito constructs (Grid, TimeFunction/Function, Eq, Operator);
  never re-implement the stencil with plain array loops.
- Carry every numeric parameter over with its exact value.
- The generated code must run as a standalone script."""

_WORKFLOW_SECTION = """\
Standard Devito workflow pattern:
1. Build a Grid matching the Fortran array extents and physical size.
2. Declare TimeFunction/Function fields with appropriate space/time orders.
3. Set initial data through the .data view.
4. State the PDE as Eq(...) and rearrange with solve(...) for the update.
5. Express boundary conditions as explicit equations on the boundary indices.
6. Construct Operator([...]) with all equations and call op.apply(...)."""

_GUIDELINES_SECTION = """\
Implementation guidelines:
- Derivatives come from Devito operators (u.dt, u.dt2, u.laplace, u.dx, or
  first_derivative(u, dim=x, side=...) for one-sided differences).
- Do not invent API attributes; chain forms like u.dx.backward do not exist.
- Operator takes a list of equations only; boundary handling is expressed
  as equations, not keyword arguments.
- Keep 0-based indexing semantics when porting loop bounds."""


def build_prompt(fortran: str, ctx: RagContext) -> str:
    """Assemble the conversion prompt in fixed section order; the examples
    and analysis sections appear only when present."""
    parts: List[str] = [_ROLE_SECTION, _WORKFLOW_SECTION]

    if ctx.analysis is not None:
        a = ctx.analysis
        parts.append(
            "Source analysis:\n"
            f"- problem type: {a.pde_class}\n"
            f"- dimensions: {a.dimensions}\n"
            f"- scheme: {a.scheme}\n"
            f"- time stepping: {a.time_stepping}\n"
            f"- boundary conditions: {', '.join(sorted(a.boundary_conditions)) or 'none detected'}\n"
            f"- complexity: {a.complexity:.3f}"
        )

    if ctx.candidates:
        example_parts = ["Reference examples (most relevant first):"]
        for i, cand in enumerate(ctx.candidates, 1):
            example_parts.append(f"[Example {i}] {cand.title}\n{cand.content}")
        parts.append("\n\n".join(example_parts))

    parts.append("Fortran source:\n```fortran\n" + fortran.rstrip("\n") + "\n```")
    parts.append(_GUIDELINES_SECTION)
    parts.append("Required output format:\n" + OUTPUT_SCHEMA_TEXT)

    ctx.assembled = "\n\n".join(parts)
    return ctx.assembled
