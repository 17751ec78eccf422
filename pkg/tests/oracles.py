"""Slow reference implementations used only by the tests.

Each function here recomputes a quantity with a structure deliberately
different from the package code (per-pixel loops, dense enumeration,
scipy graph routines) so the fast implementations have something
independent to agree with.
"""

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from dffalign.render import visibility_epsilon


# ---------------------------------------------------------------- raster


def _edge(ax, ay, bx, by, px, py):
    # same arithmetic expression as the renderer, evaluated per pixel
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _accepts_zero(ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    return dy < 0 or (dy == 0 and dx > 0)


def raster_oracle(xy, depth, triangles, width, height):
    """Exhaustive per-pixel rasterization: for every pixel loop over every
    triangle, keep the nearest covering one (ties -> lowest triangle id).
    Returns (tri_id int32 map, depth float map)."""
    tri_map = np.full((height, width), -1, dtype=np.int32)
    depth_map = np.full((height, width), np.inf)
    for py in range(height):
        for px in range(width):
            for t in range(len(triangles)):
                i0, i1, i2 = triangles[t]
                x0, y0 = xy[0, i0], xy[1, i0]
                x1, y1 = xy[0, i1], xy[1, i1]
                x2, y2 = xy[0, i2], xy[1, i2]
                area = _edge(x0, y0, x1, y1, x2, y2)
                if area == 0.0:
                    continue
                if area < 0.0:
                    # reorder to positive orientation exactly like the renderer
                    x1, y1, x2, y2 = x2, y2, x1, y1
                    i1, i2 = i2, i1
                    area = -area
                w0 = _edge(x1, y1, x2, y2, px, py)
                w1 = _edge(x2, y2, x0, y0, px, py)
                w2 = _edge(x0, y0, x1, y1, px, py)
                ok = True
                for w, (ax, ay, bx, by) in (
                    (w0, (x1, y1, x2, y2)),
                    (w1, (x2, y2, x0, y0)),
                    (w2, (x0, y0, x1, y1)),
                ):
                    if w < 0.0 or (w == 0.0 and not _accepts_zero(ax, ay, bx, by)):
                        ok = False
                        break
                if not ok:
                    continue
                d = (w0 * depth[i0] + w1 * depth[i1] + w2 * depth[i2]) / area
                if d < depth_map[py, px]:
                    depth_map[py, px] = d
                    tri_map[py, px] = t
    return tri_map, depth_map


def visibility_oracle(xy, depth, triangles, width, height):
    """Ray-cast visibility: for each vertex cast a ray through the center of
    its rounded pixel and check nothing sits in front of it (up to the
    depth-slack epsilon). Loops triangles per vertex, no z-buffer."""
    n = xy.shape[1]
    eps = visibility_epsilon(depth)
    visible = np.zeros(n, dtype=bool)
    for v in range(n):
        px = int(np.rint(xy[0, v]))
        py = int(np.rint(xy[1, v]))
        if px < 0 or px >= width or py < 0 or py >= height:
            continue
        nearest = np.inf
        for t in range(len(triangles)):
            i0, i1, i2 = triangles[t]
            x0, y0 = xy[0, i0], xy[1, i0]
            x1, y1 = xy[0, i1], xy[1, i1]
            x2, y2 = xy[0, i2], xy[1, i2]
            area = _edge(x0, y0, x1, y1, x2, y2)
            if area == 0.0:
                continue
            if area < 0.0:
                x1, y1, x2, y2 = x2, y2, x1, y1
                i1, i2 = i2, i1
                area = -area
            w0 = _edge(x1, y1, x2, y2, px, py)
            w1 = _edge(x2, y2, x0, y0, px, py)
            w2 = _edge(x0, y0, x1, y1, px, py)
            ok = True
            for w, (ax, ay, bx, by) in (
                (w0, (x1, y1, x2, y2)),
                (w1, (x2, y2, x0, y0)),
                (w2, (x0, y0, x1, y1)),
            ):
                if w < 0.0 or (w == 0.0 and not _accepts_zero(ax, ay, bx, by)):
                    ok = False
                    break
            if not ok:
                continue
            d = (w0 * depth[i0] + w1 * depth[i1] + w2 * depth[i2]) / area
            nearest = min(nearest, d)
        visible[v] = depth[v] <= nearest + eps
    return visible


# ---------------------------------------------------------------- geometry


def rotation_oracle(pitch, yaw, roll):
    """Rz @ Ry @ Rx written out as three explicit matrices."""
    cx, sx = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cz, sz = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=float)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=float)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=float)
    return rz @ ry @ rx


def synthesize_oracle(mean_vec, basis, coeffs):
    """Triple-loop matvec for mean + basis @ coeffs."""
    out = np.array(mean_vec, dtype=float, copy=True)
    for i in range(basis.shape[0]):
        acc = 0.0
        for j in range(basis.shape[1]):
            acc += basis[i, j] * coeffs[j]
        out[i] += acc
    return out


# ---------------------------------------------------------------- cvt


def dual_distances(mesh, generators):
    """Geodesic distances from each generator triangle over the triangle
    dual graph (centroid-distance edge weights), via scipy's dijkstra."""
    tris = mesh.triangles
    nt = len(tris)
    cent = mesh.vertices[:, tris].mean(axis=2).T  # (nt, 3)
    edge_map = {}
    rows, cols, vals = [], [], []
    for t, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            if key in edge_map:
                o = edge_map[key]
                w = float(np.linalg.norm(cent[t] - cent[o]))
                rows += [t, o]
                cols += [o, t]
                vals += [w, w]
            else:
                edge_map[key] = t
    graph = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(nt, nt))
    return scipy.sparse.csgraph.dijkstra(graph, indices=list(generators))


def patch_components(mesh, patch_of, patch):
    """Number of connected components of one patch in the dual graph."""
    tris = mesh.triangles
    members = np.flatnonzero(patch_of == patch)
    member_set = set(int(m) for m in members)
    edge_map = {}
    adj = {int(m): [] for m in members}
    for t, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            if key in edge_map:
                o = edge_map[key]
                if t in member_set and o in member_set:
                    adj[t].append(o)
                    adj[o].append(t)
            else:
                edge_map[key] = t
    seen = set()
    comps = 0
    for m in members:
        m = int(m)
        if m in seen:
            continue
        comps += 1
        stack = [m]
        seen.add(m)
        while stack:
            cur = stack.pop()
            for nb in adj[cur]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
    return comps


# ---------------------------------------------------------------- loss


def loss_oracle(features, labels, class_vectors):
    """Per-pixel python-loop angular softmax loss (mean over labeled pixels)."""
    h, w, d = features.shape
    total = 0.0
    count = 0
    for y in range(h):
        for x in range(w):
            j = labels[y, x]
            if j < 0:
                continue
            logits = np.array([class_vectors[k] @ features[y, x]
                               for k in range(len(class_vectors))])
            m = logits.max()
            lse = m + np.log(np.exp(logits - m).sum())
            total += lse - logits[j]
            count += 1
    if count == 0:
        return 0.0
    return total / count


# ---------------------------------------------------------------- matching


def match_oracle(source_vectors, target_vectors):
    """Double-loop nearest-angle matcher; first minimum wins.
    Returns (index, angle_deg) per source vector."""
    out_idx = np.zeros(len(source_vectors), dtype=np.int64)
    out_ang = np.zeros(len(source_vectors))
    for i, f in enumerate(source_vectors):
        best = np.inf
        best_j = 0
        for j, g in enumerate(target_vectors):
            ang = np.degrees(np.arccos(np.clip(f @ g, -1.0, 1.0)))
            if ang < best:
                best = ang
                best_j = j
        out_idx[i] = best_j
        out_ang[i] = best
    return out_idx, out_ang


# ---------------------------------------------------------------- ridge


def ridge_oracle(phi, targets, lam):
    """Ridge as a stacked least-squares problem solved by lstsq:
    minimize ||[phi 1] w - t||^2 + lam ||w||^2."""
    n = phi.shape[0]
    aug = np.hstack([phi, np.ones((n, 1))])
    f = aug.shape[1]
    top = aug
    bottom = np.sqrt(lam) * np.eye(f)
    stacked = np.vstack([top, bottom])
    if targets.ndim == 1:
        pad = np.zeros(f)
    else:
        pad = np.zeros((f, targets.shape[1]))
    rhs = np.concatenate([targets, pad], axis=0)
    sol, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
    return sol[:-1], sol[-1]
