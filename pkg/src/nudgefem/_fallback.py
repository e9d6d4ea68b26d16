"""Pure numpy implementations of the element-loop kernels."""
import numpy as np


def advection_local(test_phi, trial_grads, wvals, weights):
    """X[e, i, j] = sum_q W[e, q] * test_phi[q, i] * (w[e, q] . grad trial_j[e, q])."""
    a = trial_grads[..., 0] * wvals[..., 0, None] + trial_grads[..., 1] * wvals[..., 1, None]
    wphi = weights[:, :, None] * test_phi[None]  # (E, Q, a)
    return np.matmul(wphi.transpose(0, 2, 1), a)


def scatter_add(positions, values, size):
    return np.bincount(positions, weights=values, minlength=size)


def locate_points(pts, vertices, triangles, bins, offsets, bin_tris, tol=1e-12):
    n = len(pts)
    tri = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    counts = offsets[bins + 1] - offsets[bins]
    for k in range(int(counts.max(initial=0))):
        todo = np.flatnonzero((tri < 0) & (counts > k))
        if len(todo) == 0:
            break
        cand = bin_tris[offsets[bins[todo]] + k]
        p = vertices[triangles[cand]]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        r = pts[todo] - p[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        lam = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
        hit = np.all(lam >= -tol, axis=1)
        idx = todo[hit]
        tri[idx] = cand[hit]
        lam = np.clip(lam[hit], 0.0, 1.0)
        bary[idx] = lam / lam.sum(axis=1, keepdims=True)
    return tri, bary
