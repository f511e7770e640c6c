"""Exact binary labeling of grid MRFs by s-t min-cut.

Solves, for each window in a batch, the maximization over visibility labels
v of  sum_i [v_i * s_i + (1 - v_i) * u]  -  alpha * (# 4-neighbor label
disagreements), with some labels clamped to 0. The equivalent energy
minimization is submodular for alpha >= 0 and reduces to max-flow on the
window lattice with unary capacities reparameterized to be non-negative.

This module holds the plain-Python source; the numba backend jit-compiles
the same function (see mincut_jit). Keep the body nopython-compatible:
scalar loops, preallocated scratch arrays, no Python objects.

Max-flow is Edmonds-Karp (shortest augmenting paths via BFS), which is
exact for real capacities and fast at window scale (r <= a few hundred
nodes). Labels: a node ends visible (1) unless it can still reach the sink
in the residual graph, so ties are resolved toward visibility with a fixed
node ordering.
"""

import numpy as np

# residual capacities below this are treated as exhausted
_EPS = 1e-12


def solve_grid_batch(scores, fixed, unary_bias, alpha, labels):
    """Label a batch of windows in place.

    scores: (n, H, W) f64 per-block classifier terms (w.B)
    fixed:  (n, H, W) bool, True where the label is clamped to 0
    labels: (n, H, W) uint8 output buffer
    """
    n = scores.shape[0]
    grid_h = scores.shape[1]
    grid_w = scores.shape[2]
    size = grid_h * grid_w

    cap_src = np.zeros(size, dtype=np.float64)
    cap_snk = np.zeros(size, dtype=np.float64)
    # residual arc capacities toward the 4 neighbors: 0 up, 1 down,
    # 2 left, 3 right; the reverse of direction d is d ^ 1
    res = np.zeros((size, 4), dtype=np.float64)
    parent = np.empty(size, dtype=np.int32)
    pdir = np.empty(size, dtype=np.int8)
    queue = np.empty(size, dtype=np.int32)
    mark = np.empty(size, dtype=np.uint8)

    for b in range(n):
        # unary capacities; clamped nodes are excluded from the graph but
        # charge alpha to any free neighbor that takes label 1
        for r in range(grid_h):
            for c in range(grid_w):
                i = r * grid_w + c
                res[i, 0] = 0.0
                res[i, 1] = 0.0
                res[i, 2] = 0.0
                res[i, 3] = 0.0
                if fixed[b, r, c]:
                    cap_src[i] = 0.0
                    cap_snk[i] = 0.0
                    continue
                pen = 0.0
                if r > 0 and fixed[b, r - 1, c]:
                    pen += alpha
                if r < grid_h - 1 and fixed[b, r + 1, c]:
                    pen += alpha
                if c > 0 and fixed[b, r, c - 1]:
                    pen += alpha
                if c < grid_w - 1 and fixed[b, r, c + 1]:
                    pen += alpha
                cost1 = -(scores[b, r, c] - pen)
                cost0 = -unary_bias
                base = cost0 if cost0 < cost1 else cost1
                cap_src[i] = cost0 - base
                cap_snk[i] = cost1 - base
        if alpha > 0.0:
            for r in range(grid_h):
                for c in range(grid_w):
                    if fixed[b, r, c]:
                        continue
                    i = r * grid_w + c
                    if r < grid_h - 1 and not fixed[b, r + 1, c]:
                        res[i, 1] = alpha
                        res[i + grid_w, 0] = alpha
                    if c < grid_w - 1 and not fixed[b, r, c + 1]:
                        res[i, 3] = alpha
                        res[i + 1, 2] = alpha

        # Edmonds-Karp augmentation
        while True:
            for i in range(size):
                mark[i] = 0
            head = 0
            tail = 0
            for i in range(size):
                if cap_src[i] > _EPS:
                    queue[tail] = i
                    tail += 1
                    mark[i] = 1
                    parent[i] = -1
            sink_node = -1
            while head < tail:
                i = queue[head]
                head += 1
                if cap_snk[i] > _EPS:
                    sink_node = i
                    break
                r = i // grid_w
                c = i - r * grid_w
                for d in range(4):
                    if d == 0:
                        ok = r > 0
                        j = i - grid_w
                    elif d == 1:
                        ok = r < grid_h - 1
                        j = i + grid_w
                    elif d == 2:
                        ok = c > 0
                        j = i - 1
                    else:
                        ok = c < grid_w - 1
                        j = i + 1
                    if ok and res[i, d] > _EPS and mark[j] == 0:
                        mark[j] = 1
                        parent[j] = i
                        pdir[j] = d
                        queue[tail] = j
                        tail += 1
            if sink_node < 0:
                break
            flow = cap_snk[sink_node]
            i = sink_node
            while parent[i] >= 0:
                p = parent[i]
                d = pdir[i]
                if res[p, d] < flow:
                    flow = res[p, d]
                i = p
            if cap_src[i] < flow:
                flow = cap_src[i]
            cap_snk[sink_node] -= flow
            i = sink_node
            while parent[i] >= 0:
                p = parent[i]
                d = pdir[i]
                res[p, d] -= flow
                res[i, d ^ 1] += flow
                i = p
            cap_src[i] -= flow

        # nodes with a residual path to the sink take label 0; everything
        # else, including nodes undetermined at equal energy, stays visible
        for i in range(size):
            mark[i] = 0
        head = 0
        tail = 0
        for i in range(size):
            if cap_snk[i] > _EPS:
                mark[i] = 1
                queue[tail] = i
                tail += 1
        while head < tail:
            k = queue[head]
            head += 1
            r = k // grid_w
            c = k - r * grid_w
            for d in range(4):
                # predecessor j whose arc in direction d lands on k
                if d == 0:
                    ok = r < grid_h - 1
                    j = k + grid_w
                elif d == 1:
                    ok = r > 0
                    j = k - grid_w
                elif d == 2:
                    ok = c < grid_w - 1
                    j = k + 1
                else:
                    ok = c > 0
                    j = k - 1
                if ok and mark[j] == 0 and res[j, d] > _EPS:
                    mark[j] = 1
                    queue[tail] = j
                    tail += 1
        for r in range(grid_h):
            for c in range(grid_w):
                i = r * grid_w + c
                if fixed[b, r, c] or mark[i] == 1:
                    labels[b, r, c] = 0
                else:
                    labels[b, r, c] = 1
    return labels
