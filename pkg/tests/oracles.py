"""Independent brute-force oracles shared across test modules."""

import numpy as np

from gazemesh.analysis import polygon_area


def brute_force_hull_area(points: np.ndarray) -> float:
    """O(n^3) hull oracle: an ordered pair (i, j) is a hull edge iff every
    other point lies strictly on one side; shoelace over the edge cycle."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    n = len(pts)
    if n < 3:
        return 0.0
    edges = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = pts[j] - pts[i]
            rel = pts - pts[i]
            side = d[0] * rel[:, 1] - d[1] * rel[:, 0]
            others = np.delete(side, [i, j])
            if np.all(others > 0):
                edges[i] = j
    if not edges:
        return 0.0
    start = next(iter(edges))
    cycle = [start]
    cur = edges[start]
    while cur != start:
        cycle.append(cur)
        cur = edges[cur]
    return polygon_area(pts[cycle])
