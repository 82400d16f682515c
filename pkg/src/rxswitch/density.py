"""Density-based clustering: core distances, mutual reachability, an exact
Euclidean minimum spanning tree (Prim), single-linkage condensation and
excess-of-mass cluster extraction. Noise points get label -1; the number of
clusters is chosen by the hierarchy itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MIN_DIST = 1e-12  # duplicate points: clamp distance so lambda stays finite


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def core_distances(dist: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbor, counting the point itself."""
    return np.sort(dist, axis=1)[:, k - 1]


def mutual_reachability(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    mr = np.maximum(dist, core[:, None])
    np.maximum(mr, core[None, :], out=mr)
    np.fill_diagonal(mr, 0.0)
    return mr


def prim_mst(weights: np.ndarray) -> list[tuple[int, int, float]]:
    """Exact MST edges (u, v, w); ties resolved by smallest vertex index."""
    n = weights.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    best = weights[0].copy()
    best_from = np.zeros(n, dtype=int)
    best[0] = np.inf
    edges = []
    for _ in range(n - 1):
        v = int(np.argmin(best))  # first minimum = smallest index
        edges.append((int(best_from[v]), v, float(best[v])))
        visited[v] = True
        best[v] = np.inf
        closer = weights[v] < best
        closer &= ~visited
        best[closer] = weights[v][closer]
        best_from[closer] = v
    return edges


@dataclass
class _Linkage:
    """Single-linkage tree: leaves 0..n-1, internal nodes n..2n-2."""

    left: np.ndarray
    right: np.ndarray
    dist: np.ndarray
    size: np.ndarray
    n: int

    @property
    def root(self) -> int:
        return self.n * 2 - 2


def single_linkage(edges: list[tuple[int, int, float]], n: int) -> _Linkage:
    order = sorted(range(len(edges)),
                   key=lambda i: (edges[i][2], min(edges[i][:2]), max(edges[i][:2])))
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    left = np.zeros(n - 1, dtype=int)
    right = np.zeros(n - 1, dtype=int)
    dist = np.zeros(n - 1)
    size = np.zeros(2 * n - 1, dtype=int)
    size[:n] = 1
    nxt = n
    for i in order:
        u, v, w = edges[i]
        ru, rv = find(u), find(v)
        left[nxt - n], right[nxt - n], dist[nxt - n] = ru, rv, w
        size[nxt] = size[ru] + size[rv]
        parent[ru] = parent[rv] = nxt
        nxt += 1
    return _Linkage(left=left, right=right, dist=dist, size=size[n:], n=n)


def _subtree_points(tree: _Linkage, node: int) -> list[int]:
    stack, points = [node], []
    while stack:
        cur = stack.pop()
        if cur < tree.n:
            points.append(cur)
        else:
            stack.append(int(tree.left[cur - tree.n]))
            stack.append(int(tree.right[cur - tree.n]))
    return points


@dataclass
class CondensedTree:
    """Rows (parent_cluster, child, lambda, size); child < 0 encodes a child
    cluster id as -(id+1), otherwise a point index."""

    rows: list[tuple[int, int, float, int]]
    parent_of: dict[int, int]
    n_points: int


def condense_tree(tree: _Linkage, min_cluster_size: int) -> CondensedTree:
    n = tree.n
    rows: list[tuple[int, int, float, int]] = []
    parent_of: dict[int, int] = {}
    next_cluster = 0
    # stack of (linkage node, condensed cluster the walk is inside)
    stack = [(tree.root, next_cluster)]
    next_cluster += 1
    while stack:
        node, cluster = stack.pop()
        if node < n:
            # a bare leaf can only be reached when the sibling was also small;
            # handled by the fallout branches below, so never lands here
            continue
        idx = node - n
        lam = 1.0 / max(tree.dist[idx], _MIN_DIST)
        children = (int(tree.left[idx]), int(tree.right[idx]))
        sizes = [tree.size[c - n] if c >= n else 1 for c in children]
        if all(s >= min_cluster_size for s in sizes):
            for child in children:
                cid = next_cluster
                next_cluster += 1
                parent_of[cid] = cluster
                rows.append((cluster, -(cid + 1), lam,
                             tree.size[child - n] if child >= n else 1))
                stack.append((child, cid))
        else:
            for child, s in zip(children, sizes):
                if s >= min_cluster_size:
                    stack.append((child, cluster))  # walk continues in place
                else:
                    for p in _subtree_points(tree, child):
                        rows.append((cluster, p, lam, 1))
    return CondensedTree(rows=rows, parent_of=parent_of, n_points=n)


def cluster_stabilities(ct: CondensedTree) -> dict[int, float]:
    births: dict[int, float] = {0: 0.0}
    for parent, child, lam, _size in ct.rows:
        if child < 0:
            births[-(child + 1)] = lam
    stab: dict[int, float] = {c: 0.0 for c in births}
    for parent, child, lam, size in ct.rows:
        stab[parent] += (lam - births[parent]) * size
    return stab


def extract_eom(ct: CondensedTree,
                stabilities: dict[int, float]) -> list[int]:
    """Excess-of-mass flat clusters; the root is never selectable."""
    children: dict[int, list[int]] = {}
    for cid, parent in ct.parent_of.items():
        children.setdefault(parent, []).append(cid)

    score: dict[int, float] = {}
    chosen: dict[int, bool] = {}
    for cid in sorted(stabilities, reverse=True):  # children first
        kids = children.get(cid, [])
        child_sum = sum(score[k] for k in kids)
        if cid == 0:
            chosen[cid] = False
            score[cid] = child_sum
            continue
        if kids and child_sum > stabilities[cid]:
            chosen[cid] = False
            score[cid] = child_sum
        else:
            chosen[cid] = True
            score[cid] = stabilities[cid]

    selected: list[int] = []
    stack = children.get(0, [])[:]
    while stack:
        cid = stack.pop()
        if chosen[cid]:
            selected.append(cid)
        else:
            stack.extend(children.get(cid, []))
    return sorted(selected)


def cluster_hdbscan(points: np.ndarray, min_cluster_size: int = 5
                    ) -> tuple[np.ndarray, dict[int, float]]:
    """Labels (-1 = noise) and per-flat-cluster stabilities.

    Deterministic: ties resolve toward the smallest point index and final
    labels are numbered by each cluster's smallest member.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("points must be a nonempty 2-D array")
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n < min_cluster_size or min_cluster_size < 2:
        return labels, {}

    dist = pairwise_distances(points)
    core = core_distances(dist, min_cluster_size)
    mr = mutual_reachability(dist, core)
    edges = prim_mst(mr)
    tree = single_linkage(edges, n)
    ct = condense_tree(tree, min_cluster_size)
    stab = cluster_stabilities(ct)
    selected = extract_eom(ct, stab)
    if not selected:
        return labels, {}

    # membership: every point that fell out anywhere inside the subtree
    direct_points: dict[int, list[int]] = {}
    children: dict[int, list[int]] = {}
    for parent, child, _lam, _size in ct.rows:
        if child >= 0:
            direct_points.setdefault(parent, []).append(child)
        else:
            children.setdefault(parent, []).append(-(child + 1))

    members: dict[int, list[int]] = {}
    for cid in selected:
        pts: list[int] = []
        stack = [cid]
        while stack:
            cur = stack.pop()
            pts.extend(direct_points.get(cur, []))
            stack.extend(children.get(cur, []))
        members[cid] = pts

    ordered = sorted(selected, key=lambda c: min(members[c]))
    stabilities_out: dict[int, float] = {}
    for label, cid in enumerate(ordered):
        labels[members[cid]] = label
        stabilities_out[label] = stab[cid]
    return labels, stabilities_out
