"""Viewing graph, triplet covers and collinearity scoring.

The dual graph has one node per selected 3-clique and an edge wherever two
cliques share two cameras; a connected dual graph is the rigidity-like
condition that makes triplet-wise consistency determine all cameras.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import NoTriangles, TooFewCameras, Unconnectable
from .geometry import BifocalTensor, epipole


@dataclass
class ViewingGraph:
    """Cameras as vertices, measured pairs as weighted edges (i < j)."""

    n: int
    edges: dict  # (i, j) -> weight

    @staticmethod
    def from_edges(n: int, edges) -> "ViewingGraph":
        out = {}
        for e in edges:
            if len(e) == 3:
                i, j, w = e
            else:
                (i, j), w = e, 1.0
            i, j = int(i), int(j)
            if i == j:
                raise ValueError("self loops not allowed")
            a, b = (i, j) if i < j else (j, i)
            out[(a, b)] = float(w)
        return ViewingGraph(n, out)

    @staticmethod
    def complete(n: int) -> "ViewingGraph":
        return ViewingGraph(n, {(i, j): 1.0 for i in range(n) for j in range(i + 1, n)})

    def has_edge(self, i: int, j: int) -> bool:
        a, b = (i, j) if i < j else (j, i)
        return (a, b) in self.edges

    def triangles(self) -> list:
        out = []
        for a, b, c in combinations(range(self.n), 3):
            if self.has_edge(a, b) and self.has_edge(a, c) and self.has_edge(b, c):
                out.append((a, b, c))
        return out


def _share_two(t1, t2) -> bool:
    return len(set(t1) & set(t2)) == 2


def build_dual_edges(triplets) -> list:
    out = []
    for a, b in combinations(sorted(triplets), 2):
        if _share_two(a, b):
            out.append((a, b))
    return out


def _components(triplets, dual_edges) -> list:
    adj = {t: set() for t in triplets}
    for a, b in dual_edges:
        if a in adj and b in adj:
            adj[a].add(b)
            adj[b].add(a)
    seen = set()
    comps = []
    for t in sorted(adj):
        if t in seen:
            continue
        comp = []
        queue = [t]
        seen.add(t)
        while queue:
            cur = queue.pop(0)
            comp.append(cur)
            for nxt in sorted(adj[cur]):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        comps.append(comp)
    return comps


@dataclass
class TripletCover:
    """Selected 3-cliques plus their shared-two-camera adjacency."""

    triplets: list = field(default_factory=list)
    dual_edges: list = field(default_factory=list)
    virtual_nodes: dict = field(default_factory=dict)  # original triplet -> camera id

    @staticmethod
    def from_triplets(triplets, virtual_nodes=None) -> "TripletCover":
        ts = sorted(tuple(sorted(t)) for t in set(map(tuple, triplets)))
        return TripletCover(ts, build_dual_edges(ts), dict(virtual_nodes or {}))

    def is_connected(self) -> bool:
        if not self.triplets:
            return False
        return len(_components(self.triplets, self.dual_edges)) == 1

    def components(self) -> list:
        return _components(self.triplets, self.dual_edges)

    def covered_edges(self) -> set:
        out = set()
        for t in self.triplets:
            a, b, c = sorted(t)
            out.update({(a, b), (a, c), (b, c)})
        return out

    def cameras(self) -> set:
        out = set()
        for t in self.triplets:
            out.update(t)
        return out

    def to_json(self) -> str:
        doc = {
            "triplets": [list(t) for t in self.triplets],
            "dual_edges": [[list(a), list(b)] for a, b in self.dual_edges],
            "virtual_nodes": [
                {"triplet": list(t), "camera": int(v)} for t, v in sorted(self.virtual_nodes.items())
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TripletCover":
        doc = json.loads(text)
        cover = TripletCover(
            [tuple(t) for t in doc["triplets"]],
            [(tuple(a), tuple(b)) for a, b in doc["dual_edges"]],
            {tuple(e["triplet"]): int(e["camera"]) for e in doc.get("virtual_nodes", [])},
        )
        return cover


def sequential_cover(n: int) -> TripletCover:
    """Consecutive camera triplets (i-1, i, i+1); the chain dual graph."""
    if n < 3:
        raise TooFewCameras("a triplet cover needs at least 3 cameras")
    return TripletCover.from_triplets([(i, i + 1, i + 2) for i in range(n - 2)])


def heuristic_cover(g: ViewingGraph) -> TripletCover:
    """Greedy cover: 3-cliques sorted by minimum edge weight (descending),
    added when they cover a new edge or join dual components.  May return a
    disconnected cover; see enrich_connectivity."""
    tris = g.triangles()
    if not tris:
        raise NoTriangles("viewing graph has no 3-clique")

    def min_weight(t):
        a, b, c = t
        return min(g.edges[(a, b)], g.edges[(a, c)], g.edges[(b, c)])

    ranked = sorted(tris, key=lambda t: (-min_weight(t), t))
    chosen = []
    covered = set()
    for t in ranked:
        a, b, c = t
        edges = {(a, b), (a, c), (b, c)}
        new_edge = not edges <= covered
        joins = False
        if not new_edge and chosen:
            comps = _components(chosen, build_dual_edges(chosen))
            touched = {id(comp) for comp in comps for u in comp if _share_two(t, u)}
            joins = len(touched) >= 2
        if new_edge or joins:
            chosen.append(t)
            covered |= edges
    return TripletCover.from_triplets(chosen)


def enrich_connectivity(cover: TripletCover, full_cover: TripletCover) -> TripletCover:
    """Connect the cover by splicing in shortest dual paths from the full
    clique cover, largest two components first."""
    triplets = list(cover.triplets)
    while True:
        comps = _components(triplets, build_dual_edges(triplets))
        if len(comps) <= 1:
            break
        comps = sorted(comps, key=len, reverse=True)
        src, dst = set(comps[0]), set(comps[1])
        path = _shortest_dual_path(full_cover, src, dst)
        if path is None:
            raise Unconnectable("no dual path joins the two largest components")
        triplets.extend(t for t in path if t not in triplets)
    return TripletCover.from_triplets(triplets, cover.virtual_nodes)


def _shortest_dual_path(full_cover: TripletCover, src: set, dst: set):
    nodes = set(full_cover.triplets) | src | dst
    adj = {t: [] for t in nodes}
    for a, b in build_dual_edges(sorted(nodes)):
        adj[a].append(b)
        adj[b].append(a)
    prev = {}
    seen = set(src)
    queue = sorted(src)
    while queue:
        cur = queue.pop(0)
        if cur in dst:
            path = [cur]
            while path[-1] in prev:
                path.append(prev[path[-1]])
            return path[::-1]
        for nxt in sorted(adj[cur]):
            if nxt not in seen:
                seen.add(nxt)
                prev[nxt] = cur
                queue.append(nxt)
    return None


def collinearity_score(cams_or_tensors) -> float:
    """0 = perfectly collinear triplet, 1 = maximally spread.

    With camera centers: sigma_2 / sigma_1 of the centered center matrix.
    With the three pairwise tensors: the smallest epipole-coincidence angle
    across the views (sine of the angle between the two epipoles seen in one
    image), which vanishes exactly when the centers are aligned.
    """
    if isinstance(cams_or_tensors, dict):
        tensors = {tuple(sorted(k)): v for k, v in cams_or_tensors.items()}
        best = np.inf
        for v in range(3):
            others = [p for p in ((0, 1), (0, 2), (1, 2)) if v in p]
            es = []
            for (i, j) in others:
                t = tensors[(i, j)]
                M = t.matrix if isinstance(t, BifocalTensor) else np.asarray(t, dtype=float)
                side = "left" if v == i else "right"
                es.append(epipole(M, side))
            c = abs(float(np.dot(es[0], es[1])))
            angle = np.arccos(np.clip(c, 0.0, 1.0))
            best = min(best, float(np.sin(angle)))
        return best
    centers = np.vstack([
        c.center if hasattr(c, "center") else np.asarray(c, dtype=float) for c in cams_or_tensors
    ])
    C = centers - centers.mean(axis=0)
    s = np.linalg.svd(C, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[1] / s[0])


def insert_virtual_and_prune(
    cover: TripletCover,
    threshold: float,
    score_fn,
    virtual_builder,
) -> TripletCover:
    """Replace collinear triplets (score below threshold) with the three
    sub-triplets against a fresh virtual camera, then greedily prune.

    virtual_builder(triplet) -> virtual camera id (and is expected to make
    the virtual tensors available to the caller).  Pruning removes a triplet
    when the dual graph stays connected, every camera stays covered, at least
    two sub-triplets of each virtual insertion remain, and every real edge
    outside the replaced triplets stays covered.
    """
    triplets = list(cover.triplets)
    virtual_nodes = dict(cover.virtual_nodes)
    replaced = {}
    for t in list(triplets):
        if score_fn(t) < threshold:
            vid = virtual_builder(t)
            virtual_nodes[t] = vid
            triplets.remove(t)
            a, b, c = t
            subs = [tuple(sorted(x)) for x in ((a, b, vid), (a, c, vid), (b, c, vid))]
            triplets.extend(subs)
            replaced[t] = subs

    required_edges = set()
    for t in triplets:
        if not any(t in subs for subs in replaced.values()):
            a, b, c = sorted(t)
            required_edges.update({(a, b), (a, c), (b, c)})
    required_cameras = set()
    for t in triplets:
        required_cameras.update(t)

    def valid(remaining) -> bool:
        cams = set()
        for t in remaining:
            cams.update(t)
        if cams != required_cameras:
            return False
        covered = set()
        for t in remaining:
            a, b, c = sorted(t)
            covered.update({(a, b), (a, c), (b, c)})
        if not required_edges <= covered:
            return False
        for orig, subs in replaced.items():
            if sum(1 for s in subs if s in remaining) < 2:
                return False
        comps = _components(remaining, build_dual_edges(remaining))
        return len(comps) == 1

    pruned = sorted(set(triplets))
    if valid(pruned):
        for t in sorted(pruned, reverse=True):
            trial = [x for x in pruned if x != t]
            if trial and valid(trial):
                pruned = trial
    return TripletCover.from_triplets(pruned, virtual_nodes)
