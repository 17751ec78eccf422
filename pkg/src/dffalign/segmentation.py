"""Surface patch segmentation: centroidal Voronoi tessellation on the
triangle dual graph.

Triangles are graph nodes; two triangles are adjacent when they share an
edge, with edge weight equal to the Euclidean distance between their
centroids.  Lloyd iterations alternate multi-source Dijkstra assignment
(ties broken toward the lower generator index, so patches are connected by
construction) with recentering each patch on the member triangle nearest the
patch's area-weighted centroid.  Iteration stops on convergence, after
max_iters rounds, or early if the energy (sum of squared assigned graph
distances) would increase.
"""

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAX_ITERS = 50


@dataclass
class Segmentation:
    """Partition of a mesh's triangles into K connected patches."""

    patch_of: np.ndarray          # (t,) int32 patch id per triangle
    n_patches: int
    seed: int = None
    energy_trace: list = field(default_factory=list)  # energy per Lloyd iteration
    repairs: int = 0              # connectivity repairs applied after Lloyd

    def __post_init__(self):
        self.patch_of = np.asarray(self.patch_of, dtype=np.int32).reshape(-1)
        if self.n_patches < 1:
            raise ValueError("need at least one patch")
        counts = np.bincount(self.patch_of, minlength=self.n_patches)
        if self.patch_of.min(initial=0) < 0 or self.patch_of.max(initial=0) >= self.n_patches:
            raise ValueError("patch id out of range")
        if (counts == 0).any():
            raise ValueError("empty patch")


def _dual_graph(mesh):
    """Adjacency lists of the triangle dual graph with centroid distances."""
    tris = mesh.triangles
    t = tris.shape[0]
    cent = mesh.vertices[:, tris].mean(axis=2).T  # (t, 3)

    edge_owner = {}
    adj = [[] for _ in range(t)]
    for ti in range(t):
        a, b, c = tris[ti]
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            other = edge_owner.get(key)
            if other is None:
                edge_owner[key] = ti
            else:
                w = float(np.linalg.norm(cent[ti] - cent[other]))
                adj[ti].append((other, w))
                adj[other].append((ti, w))
    return adj, cent


def _triangle_areas(mesh):
    tris = mesh.triangles
    p0 = mesh.vertices[:, tris[:, 0]].T
    p1 = mesh.vertices[:, tris[:, 1]].T
    p2 = mesh.vertices[:, tris[:, 2]].T
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def _assign(adj, generators):
    """Multi-source Dijkstra.  Returns (owner, dist); ties in distance go to
    the lower generator rank, and each node inherits its owner from the
    settled neighbor that relaxed it, so every patch is connected."""
    t = len(adj)
    dist = np.full(t, np.inf)
    owner = np.full(t, -1, dtype=np.int64)
    heap = []
    for k, g in enumerate(generators):
        dist[g] = 0.0
        heap.append((0.0, k, int(g)))
    heapq.heapify(heap)
    done = np.zeros(t, dtype=bool)
    while heap:
        d, k, node = heapq.heappop(heap)
        if done[node]:
            continue
        done[node] = True
        owner[node] = k
        for nb, w in adj[node]:
            nd = d + w
            if nd < dist[nb] and not done[nb]:
                dist[nb] = nd
                heapq.heappush(heap, (nd, k, nb))
    if not done.all():
        raise ValueError("triangle dual graph is disconnected")
    return owner, dist


def _recenter(owner, k_patches, cent, areas):
    """New generator per patch: member triangle nearest the area-weighted
    centroid of the patch's member centroids (ties: lowest triangle id)."""
    gens = np.empty(k_patches, dtype=np.int64)
    for k in range(k_patches):
        members = np.nonzero(owner == k)[0]
        wsum = areas[members].sum()
        if wsum <= 0:
            target = cent[members].mean(axis=0)
        else:
            target = (areas[members, None] * cent[members]).sum(axis=0) / wsum
        d2 = np.sum((cent[members] - target) ** 2, axis=1)
        gens[k] = members[int(np.argmin(d2))]
    return gens


def _connected_components(adj, owner, patch):
    members = np.nonzero(owner == patch)[0]
    member_set = set(int(m) for m in members)
    seen = set()
    comps = []
    for m in members:
        m = int(m)
        if m in seen:
            continue
        comp = [m]
        seen.add(m)
        stack = [m]
        while stack:
            cur = stack.pop()
            for nb, _ in adj[cur]:
                if nb in member_set and nb not in seen:
                    seen.add(nb)
                    comp.append(nb)
                    stack.append(nb)
        comps.append(sorted(comp))
    return comps


def _repair_connectivity(adj, owner, generators):
    """Reattach stray components (those not containing their patch's
    generator) to the neighboring patch with the most shared boundary edges.
    Returns the number of components moved."""
    k_patches = generators.shape[0]
    moved = 0
    for _ in range(k_patches + 1):
        dirty = False
        for k in range(k_patches):
            comps = _connected_components(adj, owner, k)
            if len(comps) <= 1:
                continue
            keep = None
            for comp in comps:
                if generators[k] in comp:
                    keep = comp
                    break
            if keep is None:
                keep = max(comps, key=len)
            for comp in comps:
                if comp is keep:
                    continue
                votes = {}
                for node in comp:
                    for nb, _ in adj[node]:
                        other = int(owner[nb])
                        if other != k:
                            votes[other] = votes.get(other, 0) + 1
                if not votes:
                    continue  # isolated island; leave it (cannot happen on connected graphs)
                best = min(votes, key=lambda p: (-votes[p], p))
                owner[np.asarray(comp)] = best
                moved += 1
                dirty = True
        if not dirty:
            break
    return moved


def cvt_lloyd(mesh, k_patches, initial_generators, max_iters=MAX_ITERS):
    """Lloyd iterations from the given generator triangles.  Returns
    (patch_of, energy_trace, repairs)."""
    adj, cent = _dual_graph(mesh)
    areas = _triangle_areas(mesh)
    gens = np.asarray(initial_generators, dtype=np.int64).copy()
    if gens.shape[0] != k_patches or np.unique(gens).shape[0] != k_patches:
        raise ValueError("need k_patches distinct initial generators")

    owner, dist = _assign(adj, gens)
    energy = float(np.sum(dist**2))
    trace = [energy]
    for _ in range(max_iters):
        new_gens = _recenter(owner, k_patches, cent, areas)
        if np.array_equal(new_gens, gens):
            break
        new_owner, new_dist = _assign(adj, new_gens)
        new_energy = float(np.sum(new_dist**2))
        if new_energy > energy * (1.0 + 1e-12):
            # centroid-proxy recentering is not guaranteed monotone; keep the
            # previous partition rather than record an energy increase
            log.debug("energy would rise (%g -> %g); stopping", energy, new_energy)
            break
        gens, owner, dist, energy = new_gens, new_owner, new_dist, new_energy
        trace.append(energy)

    repairs = _repair_connectivity(adj, owner, gens)
    if repairs:
        log.info("reattached %d stray patch components", repairs)
    return owner.astype(np.int32), trace, repairs


def cvt_segment(mesh, k_patches, seed):
    """Segment the mesh into k_patches patches, deterministically in seed."""
    t = mesh.triangles.shape[0]
    if k_patches < 1:
        raise ValueError("need at least one patch")
    if k_patches > t:
        raise ValueError(f"cannot cut {t} triangles into {k_patches} patches")
    rng = np.random.default_rng(seed)
    gens = rng.choice(t, size=k_patches, replace=False)
    owner, trace, repairs = cvt_lloyd(mesh, k_patches, gens)
    return Segmentation(
        patch_of=owner,
        n_patches=k_patches,
        seed=seed if isinstance(seed, int) else None,
        energy_trace=trace,
        repairs=repairs,
    )


def generate_segmentation_bank(mesh, count, k_patches, seed):
    """`count` independent segmentations of the same mesh; child seeds are
    derived from the base seed, so the bank is reproducible as a whole."""
    if count < 1:
        raise ValueError("need at least one segmentation")
    child_seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    return [cvt_segment(mesh, k_patches, int(s)) for s in child_seeds]
