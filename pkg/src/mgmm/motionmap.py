"""Motion maps: planar roadmaps of collision-free points with goal-pair paths.

Two builders share one graph representation: the memory-guided builder samples
around predicted trajectories; the uniform builder samples the whole workspace
(the unguided roadmap baseline).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .dynamics import polyline_length
from .world import Scene, point_free, points_free, segments_free

R_VICINITY = 1.0
R_CONNECT = 2.5
VICINITY_RETRIES = 5
REPAIR_BATCH = 100
MERGE_SPACING = 0.5
REPAIR_BUDGET = 1000
START = -1


def sample_in_disc(rng, center, radius):
    r = radius * math.sqrt(rng.random())
    a = 2.0 * math.pi * rng.random()
    return (center[0] + r * math.cos(a), center[1] + r * math.sin(a))


@dataclass
class PathEntry:
    """Path between two map anchors: a node sequence, or predicted coordinates when disconnected."""

    coords: np.ndarray
    cost: float
    nodes: tuple | None = None

    @property
    def fallback(self) -> bool:
        return self.nodes is None


@dataclass
class MotionMap:
    nodes: np.ndarray
    edges: list
    anchors: dict
    clearance: float
    paths: dict = field(default_factory=dict)
    dist: dict = field(default_factory=dict, repr=False)
    pred: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self._tree = cKDTree(self.nodes) if len(self.nodes) else None

    @property
    def size(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> csr_matrix:
        n = len(self.nodes)
        if not self.edges:
            return csr_matrix((n, n))
        e = np.asarray(self.edges, dtype=np.int64)
        # coincident nodes still need a stored (non-zero) edge weight
        w = np.maximum(np.hypot(*(self.nodes[e[:, 0]] - self.nodes[e[:, 1]]).T), 1e-12)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))

    def nearest(self, x: float, y: float):
        d, i = self._tree.query((x, y))
        return int(i), float(d)

    def path_to(self, node: int, anchor_key) -> tuple | None:
        """Node sequence from `node` to the anchor along the shortest-path tree, or None."""
        dist = self.dist[anchor_key]
        if not math.isfinite(dist[node]):
            return None
        pred = self.pred[anchor_key]
        seq = [node]
        while pred[seq[-1]] >= 0:
            seq.append(int(pred[seq[-1]]))
        return tuple(seq)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": [list(map(int, e)) for e in self.edges],
            "anchors": {str(k): int(v) for k, v in self.anchors.items()},
        }


def connect(scene: Scene, nodes: np.ndarray, clearance: float, radius: float = R_CONNECT) -> list:
    if len(nodes) < 2:
        return []
    pairs = cKDTree(nodes).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return []
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    ok = segments_free(scene, nodes[pairs[:, 0]], nodes[pairs[:, 1]], clearance)
    return [tuple(map(int, p)) for p in pairs[ok]]


def shortest_paths(mmap: MotionMap, keys) -> dict:
    """Dijkstra from every anchor; returns {(i, j): PathEntry or None} for ordered pairs.

    A None entry signals a disconnected pair to the caller.
    """
    keys = list(keys)
    adj = mmap.adjacency()
    srcs = [mmap.anchors[k] for k in keys]
    dist, pred = dijkstra(adj, directed=False, indices=srcs, return_predecessors=True)
    dist = np.atleast_2d(dist)
    pred = np.atleast_2d(pred)
    for row, k in enumerate(keys):
        mmap.dist[k] = dist[row]
        mmap.pred[k] = pred[row]
    table = {}
    for i in keys:
        for j in keys:
            if i == j:
                continue
            seq = mmap.path_to(mmap.anchors[i], j)
            if seq is None:
                table[(i, j)] = None
            else:
                table[(i, j)] = PathEntry(mmap.nodes[list(seq)], float(mmap.dist[j][mmap.anchors[i]]), seq)
    return table


def _anchor_nodes(scene: Scene, s_init_xy, goals):
    keys = [START] + list(goals)
    pts = [tuple(s_init_xy)] + [(scene.goals[g].cx, scene.goals[g].cy) for g in goals]
    return keys, pts


def _path_table(scene, mmap, keys, Lambda=None):
    table = shortest_paths(mmap, keys)
    nodes, anchors = mmap.nodes, mmap.anchors
    mmap.paths = {}
    for (i, j), entry in table.items():
        if j == START:
            continue
        if entry is None:
            if Lambda is not None and (i, j) in Lambda:
                coords = np.asarray(Lambda[(i, j)], dtype=float).reshape(-1, 2)
                entry = PathEntry(coords, polyline_length(coords))
            else:
                a, b = nodes[anchors[i]], nodes[anchors[j]]
                coords = np.array([a, b])
                entry = PathEntry(coords, float(np.hypot(*(b - a))))
        mmap.paths[(i, j)] = entry
    return mmap


def _finish(scene, nodes, keys, clearance, Lambda=None):
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
    anchors = {k: i for i, k in enumerate(keys)}
    mmap = MotionMap(nodes, connect(scene, nodes, clearance), anchors, clearance)
    return _path_table(scene, mmap, keys, Lambda)


def _grow(scene, mmap: MotionMap, new_nodes, radius: float = R_CONNECT) -> MotionMap:
    """Append nodes and connect each new node to every node within `radius`."""
    old = len(mmap.nodes)
    nodes = np.vstack([mmap.nodes, np.asarray(new_nodes, dtype=float).reshape(-1, 2)])
    tree = cKDTree(nodes)
    pairs = []
    for k, nbrs in enumerate(tree.query_ball_point(nodes[old:], radius)):
        a = old + k
        pairs.extend((b, a) for b in sorted(nbrs) if b < a)
    edges = list(mmap.edges)
    if pairs:
        P = np.asarray(pairs, dtype=np.int64)
        ok = segments_free(scene, nodes[P[:, 0]], nodes[P[:, 1]], mmap.clearance)
        edges.extend(tuple(map(int, e)) for e in P[ok])
    return MotionMap(nodes, edges, dict(mmap.anchors), mmap.clearance)


def _disconnected(mmap: MotionMap):
    return sorted(k for k, e in mmap.paths.items() if e.fallback)


def generate_motion_map(scene: Scene, s_init_xy, goals, Lambda: dict, rng, clearance: float,
                        r_vic: float = R_VICINITY, retries: int = VICINITY_RETRIES,
                        repair_budget: int = REPAIR_BUDGET, repair_batch: int = REPAIR_BATCH,
                        merge: float = MERGE_SPACING) -> MotionMap:
    """Sample around every predicted coordinate, connect neighbours, run Dijkstra.

    Samples are kept only when collision-free; coordinates falling in an already
    sampled `merge` cell are skipped. While some pair has no graph path, repair
    rounds add `repair_batch` samples around random coordinates of the
    disconnected pairs' predicted paths, doubling the vicinity radius every
    round; once the radius reaches half the workspace diagonal, repair samples
    are drawn uniformly over the workspace. Repair stops after `repair_budget`
    samples. Pairs that remain disconnected keep their predicted coordinates.
    """
    goals = list(goals)
    keys, nodes = _anchor_nodes(scene, s_init_xy, goals)
    order = [(START, g) for g in goals] + [(i, j) for i in goals for j in goals if i != j]
    seen = set()
    for pair in order:
        for p in Lambda.get(pair, ()):
            if merge > 0:
                cell = (math.floor(p[0] / merge), math.floor(p[1] / merge))
                if cell in seen:
                    continue
                seen.add(cell)
            q = _vicinity_sample(scene, rng, p, r_vic, clearance, retries)
            if q is not None:
                nodes.append(q)
    mmap = _finish(scene, nodes, keys, clearance, Lambda)
    xmin, ymin, xmax, ymax = scene.bounds
    max_radius = 0.5 * math.hypot(xmax - xmin, ymax - ymin)
    spent, radius = 0, r_vic
    while spent < repair_budget:
        broken = [pair for pair in _disconnected(mmap) if pair in Lambda]
        if not broken:
            break
        pool = np.concatenate([np.asarray(Lambda[pair], dtype=float).reshape(-1, 2) for pair in broken])
        radius = 2.0 * radius
        batch = min(repair_batch, repair_budget - spent)
        extra = []
        for _ in range(batch):
            if radius < max_radius:
                q = _vicinity_sample(scene, rng, pool[int(rng.integers(len(pool)))], radius, clearance, retries)
            else:
                q = _uniform_sample(scene, rng, clearance, retries)
            if q is not None:
                extra.append(q)
        spent += batch
        if extra:
            mmap = _path_table(scene, _grow(scene, mmap, extra), keys, Lambda)
    return mmap


def _vicinity_sample(scene, rng, p, radius, clearance, retries):
    for _ in range(retries):
        q = sample_in_disc(rng, p, radius)
        if point_free(scene, q[0], q[1], clearance):
            return q
    return None


def _uniform_sample(scene, rng, clearance, retries):
    xmin, ymin, xmax, ymax = scene.bounds
    for _ in range(retries):
        q = (float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)))
        if point_free(scene, q[0], q[1], clearance):
            return q
    return None


def generate_uniform_map(scene: Scene, s_init_xy, goals, rng, clearance: float, samples: int) -> MotionMap:
    """Roadmap from uniform collision-free samples over the whole workspace."""
    goals = list(goals)
    keys, nodes = _anchor_nodes(scene, s_init_xy, goals)
    xmin, ymin, xmax, ymax = scene.bounds
    got = 0
    while got < samples:
        batch = np.column_stack([
            rng.uniform(xmin, xmax, size=samples),
            rng.uniform(ymin, ymax, size=samples),
        ])
        free = batch[points_free(scene, batch, clearance)][: samples - got]
        nodes.extend(map(tuple, free))
        got += len(free)
    return _finish(scene, nodes, keys, clearance)
