"""Sequential recourse over a nearest-neighbor graph of the data.

The graph is built once under plain Euclidean geometry; cost matrices only
reweight its edges.  Paths run from the subject through negatively classified
nodes and stop at the first positive node.  Two search modes: Dijkstra over
fixed or worst-case edge weights, and an exhaustive min-max oracle that
couples the worst case across a whole path.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

import numpy as np

from .core import ConfidenceSet, CostMatrix, as_vector
from .sdp import WorstCaseOracle

DEFAULT_K = 10
PATH_LENGTH_CAP = 8
ENUMERATION_BUDGET = 10_000_000


class Unreachable(RuntimeError):
    """No admissible path from the subject to a positive node."""


class EnumerationBudget(RuntimeError):
    """The exhaustive oracle would enumerate too many candidate paths."""


@dataclass
class RecourseGraph:
    points: np.ndarray  # (M, d); the subject is one of the rows
    classes: np.ndarray  # (M,) 0/1 predicted classes
    k: int
    src: np.ndarray  # (E,) edge sources
    dst: np.ndarray  # (E,) edge targets
    x0_index: int
    weights: np.ndarray | None = None  # (E,) once assigned

    @property
    def num_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per-node list of (edge position, target)."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.num_nodes)]
        for e, (i, j) in enumerate(zip(self.src, self.dst)):
            out[int(i)].append((e, int(j)))
        return out

    def to_node_link(self) -> dict:
        nodes = [
            {"id": int(i), "class": int(c), "features": [float(v) for v in p]}
            for i, (c, p) in enumerate(zip(self.classes, self.points))
        ]
        edges = []
        for e in range(self.num_edges):
            entry = {"src": int(self.src[e]), "dst": int(self.dst[e])}
            if self.weights is not None:
                entry["weight"] = float(self.weights[e])
            edges.append(entry)
        return {"nodes": nodes, "edges": edges, "x0": int(self.x0_index)}


@dataclass
class SequentialPlan:
    path: list[int]
    path_cost: float
    edge_costs: list[float]
    terminal_class: int = 1
    truth_cost: float | None = None

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.path[:-1], self.path[1:]))


def build_graph(
    points: np.ndarray,
    classes: np.ndarray,
    x0,
    k: int = DEFAULT_K,
    symmetrize: bool = False,
) -> RecourseGraph:
    """Directed kNN graph over the data with the subject appended as a node.

    Neighbors are ranked by Euclidean distance, ties by node index, so the
    edge set is deterministic.  `symmetrize` adds every reverse edge.
    """
    points = np.asarray(points, dtype=float)
    x0 = as_vector(x0, dim=points.shape[1])
    classes = np.asarray(classes, dtype=int)
    if classes.shape[0] != points.shape[0]:
        raise ValueError("one class per data point required")
    all_pts = np.vstack([points, x0[None, :]])
    all_cls = np.append(classes, 0)
    m = all_pts.shape[0]
    if not 1 <= k <= m - 1:
        raise ValueError(f"K must be in [1, {m - 1}] for {m} nodes")
    d2 = np.sum((all_pts[:, None, :] - all_pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    idx = np.arange(m)
    src_list, dst_list = [], []
    for i in range(m):
        order = np.lexsort((idx, d2[i]))[:k]
        src_list.extend([i] * k)
        dst_list.extend(int(j) for j in order)
    pairs = set(zip(src_list, dst_list))
    if symmetrize:
        pairs |= {(j, i) for i, j in pairs}
    ordered = sorted(pairs)
    src = np.array([i for i, _ in ordered], dtype=int)
    dst = np.array([j for _, j in ordered], dtype=int)
    return RecourseGraph(all_pts, all_cls, k, src, dst, x0_index=m - 1)


def edge_diffs(graph: RecourseGraph) -> np.ndarray:
    return graph.points[graph.src] - graph.points[graph.dst]


def assign_weights(graph: RecourseGraph, a) -> RecourseGraph:
    """w_ij = (x_i - x_j)^T A (x_i - x_j) on every edge."""
    mat = a.mat if isinstance(a, CostMatrix) else np.asarray(a, dtype=float)
    if np.linalg.eigvalsh((mat + mat.T) / 2.0)[0] < -1e-9:
        raise ValueError("weight matrix must be PSD")
    u = edge_diffs(graph)
    w = np.einsum("ej,jk,ek->e", u, mat, u)
    return replace(graph, weights=np.maximum(w, 0.0))


def assign_worst_case_weights(
    graph: RecourseGraph, spec: ConfidenceSet
) -> RecourseGraph:
    """Edgewise maximum cost over the confidence set (one SDP per edge)."""
    oracle = WorstCaseOracle(spec)
    u = edge_diffs(graph)
    w = np.empty(graph.num_edges)
    for e in range(graph.num_edges):
        w[e], _ = oracle.solve(np.outer(u[e], u[e]))
    return replace(graph, weights=np.maximum(w, 0.0))


def _check_weighted(graph: RecourseGraph):
    if graph.weights is None:
        raise ValueError("graph has no weights assigned yet")


def shortest_sequential_recourse(
    graph: RecourseGraph, source: int | None = None
) -> SequentialPlan:
    """Cheapest path from the subject to the positive class.

    Positive nodes are terminal: they are never expanded, so every returned
    path crosses only negative interior nodes and stops at its first positive
    node.  Cost ties between positive endpoints resolve to the lowest index.
    """
    _check_weighted(graph)
    start = graph.x0_index if source is None else source
    n = graph.num_nodes
    adj = graph.adjacency()
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=int)
    dist[start] = 0.0
    heap = [(0.0, start)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, node = heapq.heappop(heap)
        if done[node] or d > dist[node]:
            continue
        done[node] = True
        if graph.classes[node] == 1 and node != start:
            continue  # terminal: flow halts at the first positive node
        for e, j in adj[node]:
            nd = d + float(graph.weights[e])
            if nd < dist[j]:
                dist[j] = nd
                pred[j] = node
                heapq.heappush(heap, (nd, j))
    targets = np.flatnonzero((graph.classes == 1) & np.isfinite(dist))
    if targets.size == 0:
        raise Unreachable("no positive node is reachable from the subject")
    best = targets[int(np.argmin(dist[targets]))]  # ties: lowest node index
    path = [int(best)]
    while path[-1] != start:
        path.append(int(pred[path[-1]]))
    path.reverse()
    lookup = {(int(i), int(j)): w for i, j, w in zip(graph.src, graph.dst, graph.weights)}
    costs = [lookup[(i, j)] for i, j in zip(path[:-1], path[1:])]
    return SequentialPlan(path, float(sum(costs)), [float(c) for c in costs])


def _simple_paths(
    graph: RecourseGraph, cap: int, budget: int
) -> list[list[int]]:
    """All simple paths start -> first positive node, length <= cap edges."""
    adj = graph.adjacency()
    start = graph.x0_index
    out: list[list[int]] = []
    stack: list[tuple[list[int], set[int]]] = [([start], {start})]
    while stack:
        path, seen = stack.pop()
        node = path[-1]
        if len(path) - 1 >= cap:
            continue
        for _, j in adj[node]:
            if j in seen:
                continue
            nxt = path + [j]
            if graph.classes[j] == 1:
                out.append(nxt)
                if len(out) > budget:
                    raise EnumerationBudget(
                        f"more than {budget} candidate paths"
                    )
            else:
                stack.append((nxt, seen | {j}))
    return out


def minmax_flow_exhaustive(
    graph: RecourseGraph,
    spec: ConfidenceSet,
    path_length_cap: int = PATH_LENGTH_CAP,
    budget: int = ENUMERATION_BUDGET,
) -> SequentialPlan:
    """Exact min over paths of the coupled worst-case path cost.

    Every admissible path is scored by one maximization of <A, S> with S the
    sum of its edge outer products; the single adversarial A is shared along
    the path, unlike the edgewise relaxation.
    """
    paths = _simple_paths(graph, path_length_cap, budget)
    if not paths:
        raise Unreachable("no admissible path within the length cap")
    oracle = WorstCaseOracle(spec)
    best_val = np.inf
    best_path: list[int] | None = None
    best_argmax: np.ndarray | None = None
    for path in paths:
        diffs = graph.points[path[:-1]] - graph.points[path[1:]]
        s = diffs.T @ diffs
        val, arg = oracle.solve(s)
        if val < best_val:
            best_val, best_path, best_argmax = val, path, arg
    diffs = graph.points[best_path[:-1]] - graph.points[best_path[1:]]
    costs = [float(u @ best_argmax @ u) for u in diffs]
    return SequentialPlan(best_path, float(best_val), costs)


def jaccard_edges(p1: SequentialPlan, p2: SequentialPlan) -> float:
    """1 - |shared edges| / |all edges| between two plans."""
    e1, e2 = set(p1.edges), set(p2.edges)
    union = e1 | e2
    if not union:
        return 0.0
    return 1.0 - len(e1 & e2) / len(union)


def path_truth_cost(plan: SequentialPlan, graph: RecourseGraph, truth) -> float:
    """Path cost re-evaluated under a ground-truth matrix."""
    mat = truth.mat if isinstance(truth, CostMatrix) else np.asarray(truth, float)
    total = 0.0
    for i, j in plan.edges:
        u = graph.points[i] - graph.points[j]
        total += float(u @ mat @ u)
    plan.truth_cost = total
    return total
