"""Slow, obviously-correct reference implementations used only by the tests."""
import math
from collections import deque

import numpy as np


def box_corners_2d(center, dims, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    l, w = dims[0] / 2, dims[1] / 2
    out = []
    for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        out.append((center[0] + c * sx * l - s * sy * w, center[1] + s * sx * l + c * sy * w))
    return np.array(out)


def in_box_by_corners(p, center, dims, yaw, tol=1e-12):
    """Point-in-box via projections onto the box edges built from explicit corners."""
    q = box_corners_2d(center, dims, yaw)
    origin = q[2]
    e1, e2 = q[3] - origin, q[1] - origin  # length edge, width edge
    d = np.asarray(p[:2], dtype=float) - origin
    a, b = d @ e1, d @ e2
    zc = center[2]
    return (-tol <= a <= e1 @ e1 + tol and -tol <= b <= e2 @ e2 + tol
            and abs(p[2] - zc) <= dims[2] / 2 + tol)


def mc_iou(a, b, n=1_000_000, seed=0):
    """Monte-Carlo BEV IoU of two (center, dims, yaw) boxes."""
    rng = np.random.default_rng(seed)
    qa, qb = box_corners_2d(*a), box_corners_2d(*b)
    allc = np.vstack([qa, qb])
    lo, hi = allc.min(axis=0), allc.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box):
        (cx, cy, _), (l, w, _), yaw = box
        c, s = math.cos(yaw), math.sin(yaw)
        dx, dy = pts[:, 0] - cx, pts[:, 1] - cy
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (np.abs(u) <= l / 2) & (np.abs(v) <= w / 2)

    ia, ib = inside(a), inside(b)
    both = np.count_nonzero(ia & ib)
    union = np.count_nonzero(ia | ib)
    return both / union if union else 0.0


def brute_dbscan(items, eps, min_pts, metric):
    """Textbook sequential DBSCAN with O(n^2) neighbourhoods.

    Returns (labels, core) with clusters renumbered by the smallest
    (coordinate tuple, index) among their members.
    """
    pts = np.asarray(items, dtype=float)
    if metric == "euclidean_2d":
        pts = pts[:, :2]
    elif metric == "euclidean_3d":
        pts = pts[:, :3]
    n = len(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    if metric == "chebyshev_grid":
        dist = np.abs(diff).max(axis=2)
        within = dist <= eps
    else:
        within = (diff ** 2).sum(axis=2) <= eps * eps
    nbrs = [np.flatnonzero(within[i]).tolist() for i in range(n)]
    core = [len(nb) >= min_pts for nb in nbrs]
    labels = [None] * n
    k = 0
    for i in range(n):
        if labels[i] is not None or not core[i]:
            continue
        labels[i] = k
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in nbrs[p]:
                if labels[q] is None:
                    labels[q] = k
                    queue.append(q)
        k += 1
    labels = [-1 if lab is None else lab for lab in labels]
    keys = {}
    for i, lab in enumerate(labels):
        if lab >= 0:
            key = (tuple(pts[i]), i)
            if lab not in keys or key < keys[lab]:
                keys[lab] = key
    order = sorted(keys, key=keys.get)
    remap = {old: new for new, old in enumerate(order)}
    return np.array([remap.get(lab, -1) for lab in labels]), np.array(core, dtype=bool)


def as_families(labels):
    return {frozenset(np.flatnonzero(labels == k).tolist()) for k in set(labels.tolist()) if k >= 0}


def shadow_end_range(box_far_range, box_height, ground_z, sensor_z):
    """Similar triangles: where a ray grazing the top far edge meets the ground."""
    top = ground_z + box_height
    return box_far_range * (sensor_z - ground_z) / (sensor_z - top)
