"""Leiden community detection for weighted undirected graphs.

Implements the three-phase cycle (local moving, refinement, aggregation)
against the modularity objective with a resolution parameter. Seeded RNG
drives all tie-breaking order; multiple restarts keep the best-modularity
partition, so results are reproducible for a fixed seed.
"""

from __future__ import annotations

import random
from collections import defaultdict, deque
from typing import Dict, Hashable, List, Sequence, Set, Tuple

Edge = Tuple[Hashable, Hashable, float]

_EPS = 1e-12


def modularity(
    nodes: Sequence[Hashable],
    edges: Sequence[Edge],
    partition: Sequence[Set[Hashable]],
    resolution: float = 1.0,
) -> float:
    """Q = sum_c [ L_c/m - gamma * (d_c / 2m)^2 ] over communities."""
    comm_of: Dict[Hashable, int] = {}
    for ci, members in enumerate(partition):
        for v in members:
            comm_of[v] = ci
    strength: Dict[Hashable, float] = {v: 0.0 for v in nodes}
    m = 0.0
    intra = [0.0] * len(partition)
    for u, v, w in edges:
        strength[u] += w
        strength[v] += w
        m += w
        if comm_of[u] == comm_of[v]:
            intra[comm_of[u]] += w
    if m == 0:
        return 0.0
    q = 0.0
    for ci, members in enumerate(partition):
        d_c = sum(strength[v] for v in members)
        q += intra[ci] / m - resolution * (d_c / (2 * m)) ** 2
    return q


class _Level:
    """One aggregation level: index-based adjacency with self-loop weights."""

    def __init__(self, n: int, adj: List[Dict[int, float]], self_w: List[float]):
        self.n = n
        self.adj = adj
        self.self_w = self_w
        self.strength = [sum(a.values()) + 2 * s for a, s in zip(adj, self_w)]
        self.m = sum(self.strength) / 2.0

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[Tuple[int, int, float]]) -> "_Level":
        adj: List[Dict[int, float]] = [defaultdict(float) for _ in range(n)]
        self_w = [0.0] * n
        for u, v, w in edges:
            if u == v:
                self_w[u] += w
            else:
                adj[u][v] += w
                adj[v][u] += w
        return cls(n, [dict(a) for a in adj], self_w)


def _local_move(level: _Level, comm: List[int], resolution: float, rng: random.Random) -> bool:
    """Greedy node moves to the best-gain neighboring community. Returns
    whether any node moved."""
    if level.m == 0:
        return False
    n = level.n
    comm_strength: Dict[int, float] = defaultdict(float)
    for v in range(n):
        comm_strength[comm[v]] += level.strength[v]

    order = list(range(n))
    rng.shuffle(order)
    queue = deque(order)
    queued = [True] * n
    moved_any = False
    two_m = 2.0 * level.m

    while queue:
        v = queue.popleft()
        queued[v] = False
        a = comm[v]
        comm_strength[a] -= level.strength[v]

        w_to: Dict[int, float] = defaultdict(float)
        for u, w in level.adj[v].items():
            w_to[comm[u]] += w

        def gain(c: int) -> float:
            return w_to.get(c, 0.0) - resolution * level.strength[v] * comm_strength[c] / two_m

        best_c, best_g = a, gain(a)
        for c in sorted(w_to):
            g = gain(c)
            if g > best_g + _EPS or (abs(g - best_g) <= _EPS and c < best_c):
                best_c, best_g = c, g
        if best_g < -_EPS:  # isolating the node beats every candidate
            fresh = next(i for i in range(n + 1) if comm_strength.get(i, 0.0) == 0.0 and i != a)
            best_c = fresh

        comm[v] = best_c
        comm_strength[best_c] += level.strength[v]
        if best_c != a:
            moved_any = True
            for u in level.adj[v]:
                if comm[u] != best_c and not queued[u]:
                    queue.append(u)
                    queued[u] = True
    return moved_any


def _refine(
    level: _Level,
    comm: List[int],
    resolution: float,
    rng: random.Random,
    theta: float = 0.01,
) -> List[int]:
    """Split each community into well-merged sub-communities: singleton
    start, merges only inside the parent community and only for positive
    modularity gain, selected randomly with probability ~ exp(gain/theta)
    so repeated runs explore different aggregations."""
    n = level.n
    sub = list(range(n))
    sub_strength: Dict[int, float] = {v: level.strength[v] for v in range(n)}
    sub_size: Dict[int, int] = {v: 1 for v in range(n)}
    two_m = 2.0 * level.m if level.m else 1.0

    order = list(range(n))
    rng.shuffle(order)
    for v in order:
        if sub_size[sub[v]] > 1:
            continue  # only singleton nodes may merge (keeps refinement stable)
        sub_strength[sub[v]] -= level.strength[v]
        w_to: Dict[int, float] = defaultdict(float)
        for u, w in level.adj[v].items():
            if comm[u] == comm[v]:
                w_to[sub[u]] += w
        candidates: List[Tuple[int, float]] = []
        for s in sorted(w_to):
            g = w_to[s] - resolution * level.strength[v] * sub_strength[s] / two_m
            if g > _EPS:
                candidates.append((s, g))
        choice = sub[v]
        if candidates:
            max_g = max(g for _, g in candidates)
            weights = [pow(2.718281828459045, (g - max_g) / theta) for _, g in candidates]
            total = sum(weights)
            pick = rng.random() * total
            acc = 0.0
            for (s, _), w in zip(candidates, weights):
                acc += w
                if pick <= acc:
                    choice = s
                    break
        old = sub[v]
        sub_size[old] -= 1
        sub[v] = choice
        sub_size[choice] = sub_size.get(choice, 0) + 1
        sub_strength[choice] = sub_strength.get(choice, 0.0) + level.strength[v]
    return sub


def _aggregate(
    level: _Level, sub: List[int], comm: List[int]
) -> Tuple[_Level, List[int], List[List[int]]]:
    """Collapse refined sub-communities into single nodes; the coarse
    partition induces the aggregated initial communities."""
    labels = sorted(set(sub))
    remap = {lbl: i for i, lbl in enumerate(labels)}
    groups: List[List[int]] = [[] for _ in labels]
    for v, s in enumerate(sub):
        groups[remap[s]].append(v)

    n_new = len(labels)
    adj: List[Dict[int, float]] = [defaultdict(float) for _ in range(n_new)]
    self_w = [0.0] * n_new
    for u in range(level.n):
        su = remap[sub[u]]
        self_w[su] += level.self_w[u]
        for v, w in level.adj[u].items():
            if u < v:
                sv = remap[sub[v]]
                if su == sv:
                    self_w[su] += w
                else:
                    adj[su][sv] += w
                    adj[sv][su] += w
    new_comm = [comm[group[0]] for group in groups]
    return _Level(n_new, [dict(a) for a in adj], self_w), new_comm, groups


def _leiden_cycle(
    n: int,
    edges: Sequence[Tuple[int, int, float]],
    resolution: float,
    rng: random.Random,
    init_comm: List[int],
) -> List[int]:
    """One full pass of local moving / refinement / aggregation, starting
    from an existing community assignment."""
    level = _Level.from_edges(n, edges)
    comm = list(init_comm)
    membership: List[List[int]] = [[v] for v in range(n)]  # level node -> original nodes

    for _ in range(32):  # aggregation levels; tiny graphs converge in 2-3
        moved = _local_move(level, comm, resolution, rng)
        labels = sorted(set(comm))
        if not moved and len(labels) == level.n:
            break
        sub = _refine(level, comm, resolution, rng)
        level, comm, groups = _aggregate(level, sub, comm)
        membership = [
            [orig for member in group for orig in membership[member]] for group in groups
        ]
        if level.n == n:
            break
        n = level.n

    result = [0] * sum(len(ms) for ms in membership)
    final: Dict[int, int] = {}
    for v in range(level.n):
        final[v] = comm[v]
    for v, members in enumerate(membership):
        for orig in members:
            result[orig] = final[v]
    # normalize labels to 0..k-1 in first-appearance order
    seen: Dict[int, int] = {}
    for i, c in enumerate(result):
        if c not in seen:
            seen[c] = len(seen)
        result[i] = seen[c]
    return result


def leiden_partition(
    nodes: Sequence[Hashable],
    edges: Sequence[Edge],
    resolution: float = 1.0,
    seed: int = 42,
    restarts: int = 8,
) -> List[Set[Hashable]]:
    """Best-of-`restarts` Leiden partition of the given weighted graph.

    Isolated nodes come back as singleton communities. Deterministic for a
    fixed seed.
    """
    index = {v: i for i, v in enumerate(nodes)}
    int_edges = [(index[u], index[v], float(w)) for u, v, w in edges]

    best: List[int] | None = None
    best_q = float("-inf")
    for r in range(max(1, restarts)):
        rng = random.Random(seed + r)
        labels = list(range(len(nodes)))
        q = float("-inf")
        for _ in range(16):  # iterate full cycles until modularity stalls
            labels = _leiden_cycle(len(nodes), int_edges, resolution, rng, labels)
            q_new = modularity(nodes, edges, _labels_to_partition(nodes, labels), resolution)
            if q_new <= q + _EPS:
                q = max(q, q_new)
                break
            q = q_new
        if q > best_q + _EPS:
            best_q, best = q, labels
    assert best is not None
    return _labels_to_partition(nodes, best)


def _labels_to_partition(nodes: Sequence[Hashable], labels: List[int]) -> List[Set[Hashable]]:
    groups: Dict[int, Set[Hashable]] = defaultdict(set)
    for v, c in zip(nodes, labels):
        groups[c].add(v)
    return [groups[c] for c in sorted(groups)]


def brute_force_max_modularity(
    nodes: Sequence[Hashable], edges: Sequence[Edge], resolution: float = 1.0
) -> Tuple[float, List[Set[Hashable]]]:
    """Exhaustive search over all set partitions (only viable for <= ~10
    nodes); the independent oracle for Leiden results."""
    nodes = list(nodes)
    n = len(nodes)
    best_q = float("-inf")
    best_part: List[Set[Hashable]] = [set(nodes)]

    def parts(assignment: List[int], k: int, i: int):
        nonlocal best_q, best_part
        if i == n:
            part = _labels_to_partition(nodes, assignment)
            q = modularity(nodes, edges, part, resolution)
            if q > best_q:
                best_q, best_part = q, part
            return
        for c in range(k + 1):  # restricted growth: at most one new label
            assignment.append(c)
            parts(assignment, max(k, c + 1), i + 1)
            assignment.pop()

    parts([], 0, 0)
    return best_q, best_part
