"""Per-goal-pair experience memory: triplet-trained encoders, centroids and plan retrieval."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Trajectory, polyline_length
from .motionmap import START
from .world import OccupancyGrid, Scene, rasterize

STORE_VERSION = 1
GRID_RESOLUTION = 32
HIDDEN = (128, 64)
EMBED_DIM = 16
MARGIN = 0.5
LAMBDA_SPACING = 1.0


class MemoryStoreError(RuntimeError):
    """Raised for unusable memory stores or training data."""


class TrainingError(MemoryStoreError):
    pass


class MissingPairError(MemoryStoreError, KeyError):
    pass


# ---------------------------------------------------------------------------
# triplet loss


def triplet_loss(e_a, e_s, e_d, margin: float = MARGIN):
    """max(|a - s| - |a - d| + margin, 0) and its gradients w.r.t. (a, s, d).

    Works on single vectors or on row-stacked batches (loss per row).
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    a = np.asarray(e_a, dtype=float)
    s = np.asarray(e_s, dtype=float)
    d = np.asarray(e_d, dtype=float)
    if not (a.shape == s.shape == d.shape):
        raise ValueError("embeddings must share a shape")
    u, w = a - s, a - d
    du = np.linalg.norm(u, axis=-1, keepdims=True)
    dw = np.linalg.norm(w, axis=-1, keepdims=True)
    raw = du - dw + margin
    loss = np.maximum(raw, 0.0)
    active = (raw > 0).astype(float)
    # subgradient 0 where a distance vanishes
    nu = np.divide(u, du, out=np.zeros_like(u), where=du > 0)
    nw = np.divide(w, dw, out=np.zeros_like(w), where=dw > 0)
    ga = active * (nu - nw)
    gs = -active * nu
    gd = active * nw
    return loss[..., 0] if loss.ndim > 1 else float(loss[0]), (ga, gs, gd)


# ---------------------------------------------------------------------------
# encoder


@dataclass
class Encoder:
    """Dense ReLU network from a flattened grid to a unit-norm embedding."""

    weights: list
    biases: list

    @classmethod
    def init(cls, in_dim: int, hidden=HIDDEN, dim: int = EMBED_DIM, seed: int = 0) -> "Encoder":
        rng = np.random.default_rng(seed)
        sizes = [in_dim, *hidden, dim]
        W = [rng.normal(0.0, math.sqrt(2.0 / m), size=(m, n)) for m, n in zip(sizes[:-1], sizes[1:])]
        b = [np.zeros(n) for n in sizes[1:]]
        return cls(W, b)

    @property
    def dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    def _forward(self, X):
        acts = [np.asarray(X, dtype=float)]
        h = acts[0]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        norm = np.linalg.norm(h, axis=1, keepdims=True)
        norm = np.maximum(norm, 1e-12)
        return h / norm, (acts, norm)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._forward(X)[0]

    def backward(self, cache, E, dE):
        acts, norm = cache
        # through the unit normalization
        g = (dE - E * np.sum(E * dE, axis=1, keepdims=True)) / norm
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        for k in reversed(range(len(self.weights))):
            if k < len(self.weights) - 1:
                g = g * (acts[k + 1] > 0)
            gW[k] = acts[k].T @ g
            gb[k] = g.sum(axis=0)
            if k:
                g = g @ self.weights[k].T
        return gW, gb

    def params(self) -> list:
        return [*self.weights, *self.biases]


@dataclass
class TrainConfig:
    dim: int = EMBED_DIM
    margin: float = MARGIN
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 32
    seed: int = 0
    hidden: tuple = HIDDEN


def _sample_triplets(labels, rng, embeddings=None):
    """One triplet per anchor, anchors in random order.

    The similar member is drawn at random from the anchor's cluster. The
    dissimilar member is random too, unless `embeddings` are given: then it is
    the other-cluster sample nearest to the anchor (hardest negative).
    """
    labels = np.asarray(labels)
    by = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    anchors = rng.permutation(len(labels))
    classes = np.array(sorted(by))
    if embeddings is not None:
        E = np.asarray(embeddings)
        sq = np.sum(E * E, axis=1)
        D = sq[:, None] + sq[None, :] - 2.0 * E @ E.T
        D[labels[:, None] == labels[None, :]] = np.inf
    pos, neg = [], []
    for a in anchors:
        c = labels[a]
        same = by[c]
        p = same[rng.integers(len(same))]
        while p == a:
            p = same[rng.integers(len(same))]
        pos.append(p)
        if embeddings is not None:
            neg.append(int(np.argmin(D[a])))
        else:
            others = classes[classes != c]
            o = others[rng.integers(len(others))]
            neg.append(by[o][rng.integers(len(by[o]))])
    return anchors, np.array(pos), np.array(neg)


def train_encoder(X, labels, config: TrainConfig | None = None):
    """Adam over (anchor, similar, dissimilar) triplets with hardest-negative mining.

    Returns ``(encoder, losses)``. `losses` is the mean triplet loss on one fixed
    random triplet sample, before training and after each epoch.
    """
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    counts = {c: int(np.sum(labels == c)) for c in np.unique(labels)}
    if len(counts) < 2:
        raise TrainingError("need at least two clusters to train a triplet encoder")
    if min(counts.values()) < 2:
        raise TrainingError("every cluster needs at least two members")
    rng = np.random.default_rng(cfg.seed)
    enc = Encoder.init(X.shape[1], cfg.hidden, cfg.dim, seed=int(rng.integers(2**31)))
    params = enc.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    ea, ep, en = _sample_triplets(labels, np.random.default_rng(cfg.seed + 1))

    def mean_loss(E):
        return float(np.mean(triplet_loss(E[ea], E[ep], E[en], cfg.margin)[0]))

    E = enc(X)
    losses = [mean_loss(E)]
    for _ in range(cfg.epochs):
        a_idx, p_idx, n_idx = _sample_triplets(labels, rng, E)
        for start in range(0, len(a_idx), cfg.batch):
            sl = slice(start, start + cfg.batch)
            rows = np.concatenate([a_idx[sl], p_idx[sl], n_idx[sl]])
            k = len(a_idx[sl])
            Eb, cache = enc._forward(X[rows])
            _, (ga, gs, gd) = triplet_loss(Eb[:k], Eb[k:2 * k], Eb[2 * k:], cfg.margin)
            dE = np.concatenate([ga, gs, gd]) / k
            gW, gb = enc.backward(cache, Eb, dE)
            step += 1
            for i, g in enumerate([*gW, *gb]):
                m1[i] = b1 * m1[i] + (1 - b1) * g
                m2[i] = b2 * m2[i] + (1 - b2) * g * g
                mh = m1[i] / (1 - b1 ** step)
                vh = m2[i] / (1 - b2 ** step)
                params[i] -= cfg.lr * mh / (np.sqrt(vh) + eps)
        E = enc(X)
        losses.append(mean_loss(E))
    return enc, losses


def centroids_of(embeddings, labels, n_clusters: int) -> np.ndarray:
    E = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    return np.stack([E[labels == i].mean(axis=0) for i in range(n_clusters)])


def nearest_centroid(embedding, centroids) -> int:
    d = np.linalg.norm(np.asarray(centroids) - np.asarray(embedding)[None, :], axis=1)
    return int(np.argmin(d))  # argmin returns the first (lowest) index on ties


# ---------------------------------------------------------------------------
# store


@dataclass
class PairMemory:
    encoder: Encoder
    centroids: np.ndarray
    plans: list
    embeddings: np.ndarray
    labels: np.ndarray
    losses: list = field(default_factory=list)
    _positions: dict = field(default_factory=dict, repr=False, compare=False)

    def positions(self, i: int) -> np.ndarray:
        """Planar positions of plan i, computed once per store."""
        if i not in self._positions:
            self._positions[i] = self.plans[i].positions()
        return self._positions[i]


@dataclass
class MemoryStore:
    meta: dict
    pairs: dict

    @property
    def resolution(self) -> int:
        return int(self.meta["resolution"])

    def pair(self, i: int, j: int) -> PairMemory:
        try:
            return self.pairs[(i, j)]
        except KeyError:
            raise MissingPairError(f"memory store has no entry for goal pair ({i}, {j})") from None

    def save(self, path) -> None:
        arrays = {}
        for (i, j), pm in sorted(self.pairs.items()):
            pre = f"p{i}_{j}__"
            for k, W in enumerate(pm.encoder.weights):
                arrays[f"{pre}W{k}"] = W
            for k, b in enumerate(pm.encoder.biases):
                arrays[f"{pre}b{k}"] = b
            arrays[pre + "centroids"] = pm.centroids
            arrays[pre + "embeddings"] = pm.embeddings
            arrays[pre + "labels"] = np.asarray(pm.labels, dtype=np.int64)
            arrays[pre + "losses"] = np.asarray(pm.losses, dtype=float)
            arrays[pre + "states"] = np.concatenate([np.asarray(p.states, dtype=float) for p in pm.plans])
            arrays[pre + "actions"] = np.concatenate(
                [np.asarray(p.actions, dtype=float).reshape(-1, 2) for p in pm.plans])
            arrays[pre + "lengths"] = np.array([len(p.states) for p in pm.plans], dtype=np.int64)
        meta = dict(self.meta, version=STORE_VERSION, pairs=[list(k) for k in sorted(self.pairs)],
                    layers=len(next(iter(self.pairs.values())).encoder.weights) if self.pairs else 0)
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "MemoryStore":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("version") != STORE_VERSION:
                raise MemoryStoreError(f"unsupported store version {meta.get('version')}")
            layers = meta["layers"]
            dt = float(meta["dt"])
            pairs = {}
            for i, j in meta["pairs"]:
                pre = f"p{i}_{j}__"
                enc = Encoder([z[f"{pre}W{k}"] for k in range(layers)], [z[f"{pre}b{k}"] for k in range(layers)])
                states, actions, lengths = z[pre + "states"], z[pre + "actions"], z[pre + "lengths"]
                plans, s0, a0 = [], 0, 0
                for n in lengths:
                    st = [tuple(map(float, r)) for r in states[s0:s0 + n]]
                    ac = [tuple(map(float, r)) for r in actions[a0:a0 + n - 1]]
                    plans.append(Trajectory(st, ac, dt))
                    s0 += n
                    a0 += n - 1
                pairs[(i, j)] = PairMemory(enc, z[pre + "centroids"], plans, z[pre + "embeddings"],
                                           z[pre + "labels"], z[pre + "losses"].tolist())
        return cls(meta, pairs)


def retrieve(store: MemoryStore, pair, grid: OccupancyGrid):
    """Plan of the nearest centroid for this pair, and its arc length."""
    if grid.resolution != store.resolution:
        raise ValueError(f"grid resolution {grid.resolution} does not match store ({store.resolution})")
    pm = store.pair(*pair)
    e = pm.encoder(grid.flat()[None, :])[0]
    i = nearest_centroid(e, pm.centroids)
    return pm.plans[i], polyline_length(pm.positions(i))


def resample_polyline(points, spacing: float = LAMBDA_SPACING) -> np.ndarray:
    """Points every `spacing` metres of arc length, keeping both ends."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(P) < 2:
        return P.copy()
    seg = np.hypot(*np.diff(P, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0.0:
        return P[:1].copy()
    marks = np.arange(0.0, total, spacing)
    out = np.column_stack([np.interp(marks, s, P[:, 0]), np.interp(marks, s, P[:, 1])])
    return np.vstack([out, P[-1]])


def predicted_coordinates(plan, goal_xy, spacing: float = LAMBDA_SPACING) -> np.ndarray:
    """Plan positions resampled at `spacing`, ending at the goal center; `plan` may be a Trajectory or positions."""
    pts = plan.positions() if isinstance(plan, Trajectory) else plan
    coords = resample_polyline(pts, spacing)
    goal_xy = np.asarray(goal_xy, dtype=float)
    if not np.allclose(coords[-1], goal_xy):
        coords = np.vstack([coords, goal_xy])
    return coords


def call_memory(store: MemoryStore, scene: Scene, s_init, goals=None):
    """Retrieve a path for every start leg and goal pair.

    Returns ``(Lambda, Delta)``: Lambda maps (i, j) to an (m, 2) coordinate array
    with i = START (-1) for start legs; Delta is the (n+1) x (n+1) cost matrix with
    row/column 0 for the start and g + 1 for goal g.
    """
    goals = list(range(len(scene.goals))) if goals is None else list(goals)
    start_goal = scene.goal_containing(s_init[0], s_init[1])
    if start_goal is None:
        raise MemoryStoreError("memory-guided planning needs the start inside a goal region")
    grid = rasterize(scene, store.resolution)
    n = len(scene.goals)
    Lambda = {}
    Delta = np.zeros((n + 1, n + 1))
    for i in goals:
        for j in goals:
            if i == j:
                continue
            pm = store.pair(i, j)
            k = nearest_centroid(pm.encoder(grid.flat()[None, :])[0], pm.centroids)
            coords = predicted_coordinates(pm.positions(k), (scene.goals[j].cx, scene.goals[j].cy))
            Lambda[(i, j)] = coords
            Delta[i + 1, j + 1] = polyline_length(coords)
    for j in goals:
        if j == start_goal:
            Lambda[(START, j)] = np.array([[s_init[0], s_init[1]]])
        else:
            Lambda[(START, j)] = Lambda[(start_goal, j)]
        Delta[0, j + 1] = polyline_length(Lambda[(START, j)])
    return Lambda, Delta
