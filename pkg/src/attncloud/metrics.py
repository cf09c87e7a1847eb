"""Point-set distances, scores, sampling, and distribution-level metrics.

All functions take [n, 3] float arrays (or anything np.asarray can coerce).
Nearest-neighbor queries come in two interchangeable flavors: a vectorized
full scan and a uniform-grid index; both are exact, never approximate, and
agree bitwise up to tie-breaks on equal distances (lowest index wins).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

_BLOCK = 2**18  # elements per pairwise-distance block


def _points(x, name="cloud") -> np.ndarray:
    p = np.asarray(getattr(x, "points", x), dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ContractError(f"{name} must be [n, 3], got {p.shape}")
    if len(p) == 0:
        raise ContractError(f"{name} is empty")
    return p


class NNIndex:
    """Uniform spatial grid over a cloud's bounding box for exact NN queries.

    Cell edge is sized for a mean occupancy of ~2 points per cell. Queries
    expand Chebyshev rings of cells until no unexplored ring can contain a
    closer point, so results equal a brute-force scan exactly.
    """

    def __init__(self, points):
        self.points = _points(points)
        lo = self.points.min(axis=0)
        ext = self.points.max(axis=0) - lo
        # flat extents would collapse the cell edge; floor them for sizing
        ext = np.maximum(ext, max(float(ext.max()), 1e-12) * 0.05)
        target_cells = max(1, len(self.points) // 2)
        self.edge = float(np.cbrt(ext.prod() / target_cells))
        self.lo = lo
        self.dims = np.maximum(1, np.ceil(ext / self.edge).astype(np.intp))
        coords = np.clip(((self.points - lo) / self.edge).astype(np.intp), 0, self.dims - 1)
        self.cells: dict[tuple, list[int]] = {}
        for i, key in enumerate(map(tuple, coords)):
            self.cells.setdefault(key, []).append(i)

    def _ring(self, c, r):
        """Cells at exactly Chebyshev distance r from c, clipped to the grid."""
        def span(center, lo_off, hi_off, n):
            return range(max(center + lo_off, 0), min(center + hi_off, n - 1) + 1)

        nx, ny, nz = (int(d) for d in self.dims)
        if r == 0:
            yield (c[0], c[1], c[2])
            return
        for dx in (-r, r):  # two full x-faces
            x = c[0] + dx
            if 0 <= x < nx:
                for y in span(c[1], -r, r, ny):
                    for z in span(c[2], -r, r, nz):
                        yield (x, y, z)
        for x in span(c[0], -r + 1, r - 1, nx):
            for dy in (-r, r):  # y-faces without the x-face rows
                y = c[1] + dy
                if 0 <= y < ny:
                    for z in span(c[2], -r, r, nz):
                        yield (x, y, z)
            for y in span(c[1], -r + 1, r - 1, ny):
                for dz in (-r, r):  # remaining z-face cells
                    z = c[2] + dz
                    if 0 <= z < nz:
                        yield (x, y, z)

    def query(self, q) -> tuple[int, float]:
        """Index and squared distance of the exact nearest point to q."""
        q = np.asarray(q, dtype=np.float64)
        c = np.clip(((q - self.lo) / self.edge).astype(np.intp), 0, self.dims - 1)
        best_i, best_d2 = -1, np.inf
        max_ring = int(self.dims.max())
        for r in range(max_ring + 1):
            for key in self._ring(c, r):
                for i in self.cells.get(key, ()):
                    d2 = float(((self.points[i] - q) ** 2).sum())
                    if d2 < best_d2 or (d2 == best_d2 and i < best_i):
                        best_i, best_d2 = i, d2
            # cells beyond ring r are at least r*edge away
            if best_i >= 0 and best_d2 <= (r * self.edge) ** 2:
                break
        return best_i, best_d2

    def query_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        queries = np.asarray(queries, dtype=np.float64)
        idx = np.empty(len(queries), dtype=np.intp)
        d2 = np.empty(len(queries), dtype=np.float64)
        for k, q in enumerate(queries):
            idx[k], d2[k] = self.query(q)
        return idx, d2


def _nn_scan(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized exact NN of every a-point in b: (indices, squared dists)."""
    b2 = (b * b).sum(axis=1)
    idx = np.empty(len(a), dtype=np.intp)
    rows = max(1, _BLOCK // max(1, len(b)))
    for s in range(0, len(a), rows):
        blk = a[s : s + rows]
        d2 = ((blk * blk).sum(axis=1)[:, None] + b2[None, :]) - 2.0 * (blk @ b.T)
        idx[s : s + rows] = np.argmin(d2, axis=1)
    exact = ((a - b[idx]) ** 2).sum(axis=1)
    return idx, exact


def nearest_neighbors(a, b, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """For each point of a, its exact nearest point in b.

    method: "scan" (vectorized full scan), "grid" (NNIndex), or "auto".
    """
    a, b = _points(a, "a"), _points(b, "b")
    if method == "auto":
        method = "scan" if len(b) <= 8192 else "grid"
    if method == "scan":
        return _nn_scan(a, b)
    if method == "grid":
        return NNIndex(b).query_many(a)
    raise ContractError(f"unknown nearest-neighbor method {method!r}")


def chamfer_l2(a, b, method: str = "auto") -> float:
    """Sum of both directed mean squared nearest-neighbor distances."""
    _, d2_ab = nearest_neighbors(a, b, method)
    _, d2_ba = nearest_neighbors(b, a, method)
    return float(d2_ab.mean() + d2_ba.mean())


def chamfer_l1(a, b, method: str = "auto") -> float:
    """Half the sum of both directed mean nearest-neighbor distances."""
    _, d2_ab = nearest_neighbors(a, b, method)
    _, d2_ba = nearest_neighbors(b, a, method)
    return 0.5 * float(np.sqrt(d2_ab).mean() + np.sqrt(d2_ba).mean())


def fscore(pred, gt, threshold: float = 0.01) -> float:
    """Harmonic mean of precision/recall at a Euclidean distance threshold."""
    if threshold <= 0:
        raise ContractError(f"threshold must be positive, got {threshold}")
    _, d2_pg = nearest_neighbors(pred, gt)
    _, d2_gp = nearest_neighbors(gt, pred)
    precision = float((np.sqrt(d2_pg) <= threshold).mean())
    recall = float((np.sqrt(d2_gp) <= threshold).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def fps_indices(points, k: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest-point subset: indices, deterministic, ties to lowest index."""
    pts = _points(points)
    n = len(pts)
    if not 1 <= k <= n:
        raise ContractError(f"fps: k={k} out of range [1, {n}]")
    if not 0 <= seed_index < n:
        raise ContractError(f"fps: seed_index={seed_index} out of range [0, {n})")
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = seed_index
    min_d2 = ((pts - pts[seed_index]) ** 2).sum(axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        np.minimum(min_d2, ((pts - pts[nxt]) ** 2).sum(axis=1), out=min_d2)
    return chosen


def fps(points, k: int, seed_index: int = 0) -> np.ndarray:
    """The farthest-point-sampled subset itself, in selection order."""
    pts = _points(points)
    return pts[fps_indices(pts, k, seed_index)]


def _occupancy(clouds, resolution: int) -> np.ndarray:
    counts = np.zeros(resolution**3, dtype=np.float64)
    for cloud in clouds:
        p = _points(cloud)
        if p.min() < -0.5 - 1e-9 or p.max() > 0.5 + 1e-9:
            raise ContractError("jsd: points must lie within [-0.5, 0.5]^3")
        cell = np.clip(((p + 0.5) * resolution).astype(np.intp), 0, resolution - 1)
        flat = (cell[:, 0] * resolution + cell[:, 1]) * resolution + cell[:, 2]
        counts += np.bincount(flat, minlength=resolution**3)
    return counts / counts.sum()


def jsd(set_a, set_b, resolution: int = 28) -> float:
    """Jensen-Shannon divergence (natural log) between pooled occupancy grids."""
    if not set_a or not set_b:
        raise ContractError("jsd: both sets must be nonempty")
    p = _occupancy(set_a, resolution)
    q = _occupancy(set_b, resolution)
    m = 0.5 * (p + q)

    def kl(x, y):
        mask = x > 0
        return float((x[mask] * np.log(x[mask] / y[mask])).sum())

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def chamfer_matrix(set_a, set_b) -> np.ndarray:
    """Pairwise L2 Chamfer distances between two lists of clouds."""
    A = [_points(c) for c in set_a]
    B = [_points(c) for c in set_b]
    out = np.empty((len(A), len(B)), dtype=np.float64)
    same_shape = len({p.shape for p in A + B}) == 1
    if same_shape:
        bs = np.stack(B)  # [nb, m, 3]
        b2 = (bs * bs).sum(axis=2)  # [nb, m]
        for i, a in enumerate(A):
            a2 = (a * a).sum(axis=1)  # [n]
            dots = np.einsum("pd,jqd->jpq", a, bs)  # [nb, n, m]
            d2 = a2[None, :, None] + b2[:, None, :] - 2.0 * dots
            # recompute the matched distances exactly (the expansion above
            # only locates the argmins; its values carry rounding residue)
            near_b = np.take_along_axis(bs, d2.argmin(axis=2)[:, :, None], axis=1)
            near_a = a[d2.argmin(axis=1)]  # [nb, m, 3]
            d2_ab = ((a[None] - near_b) ** 2).sum(axis=2)  # [nb, n]
            d2_ba = ((near_a - bs) ** 2).sum(axis=2)  # [nb, m]
            out[i] = d2_ab.mean(axis=1) + d2_ba.mean(axis=1)
    else:
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                out[i, j] = chamfer_l2(a, b)
    return out


class GenerationMetrics(NamedTuple):
    mmd_cd: float
    cov: float
    nna: float


def mmd_cov_1nna(gen, ref) -> GenerationMetrics:
    """Distribution-level generation metrics with L2 Chamfer as the distance.

    mmd_cd: mean over ref clouds of the distance to the closest gen cloud.
    cov: fraction of ref clouds that are the nearest ref of some gen cloud.
    nna: leave-one-out 1-NN two-sample classification accuracy on the union
         (ties count as "same set").
    """
    if not gen or not ref:
        raise ContractError("mmd_cov_1nna: both sets must be nonempty")
    cross = chamfer_matrix(gen, ref)  # [g, r]
    mmd = float(cross.min(axis=0).mean())
    cov = len(np.unique(np.argmin(cross, axis=1))) / len(ref)

    gg = chamfer_matrix(gen, gen)
    rr = chamfer_matrix(ref, ref)
    np.fill_diagonal(gg, np.inf)
    np.fill_diagonal(rr, np.inf)
    correct = int((gg.min(axis=1) <= cross.min(axis=1)).sum())  # gen side
    correct += int((rr.min(axis=1) <= cross.min(axis=0)).sum())  # ref side
    nna = correct / (len(gen) + len(ref))
    return GenerationMetrics(mmd, cov, nna)


def partial_replacement_check(gt, complete, lam: float) -> tuple[float, float]:
    """Directed complete->gt mean distance before/after snapping a lam
    fraction of the complete cloud (its leading block) onto its nearest
    ground-truth points.

    When the replaced points previously contributed equal per-point distance,
    the directed term scales by exactly (1 - lam).
    """
    gt = _points(gt, "gt")
    comp = _points(complete, "complete")
    if not 0.0 < lam < 1.0:
        raise ContractError(f"lam must be in (0, 1), got {lam}")
    k = int(round(lam * len(comp)))
    idx, d2 = nearest_neighbors(comp, gt)
    before = float(np.sqrt(d2).mean())
    replaced = comp.copy()
    replaced[:k] = gt[idx[:k]]
    _, d2_after = nearest_neighbors(replaced, gt)
    after = float(np.sqrt(d2_after).mean())
    return before, after


# --- differentiable Chamfer losses (batched) -------------------------------

def _pairwise_argmins(p: np.ndarray, t: np.ndarray):
    """Per batch item: NN index of each pred point in target and vice versa."""
    dots = np.matmul(p, t.swapaxes(1, 2))  # [b, m, n]
    p2 = (p * p).sum(axis=2)
    t2 = (t * t).sum(axis=2)
    d2 = p2[:, :, None] + t2[:, None, :] - 2.0 * dots
    return np.argmin(d2, axis=2), np.argmin(d2, axis=1)  # [b, m], [b, n]


def _gather(batch: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(batch, idx[:, :, None], axis=1)


def _chamfer_loss(pred, target, squared: bool) -> Tensor:
    pred = T.as_tensor(pred)
    target = T.as_tensor(target)
    if pred.data.ndim != 3 or target.data.ndim != 3 or pred.shape[0] != target.shape[0]:
        raise ContractError(
            f"chamfer loss needs [batch, n, 3] clouds, got {pred.shape} and {target.shape}"
        )
    if pred.shape[1] == 0 or target.shape[1] == 0:
        raise ContractError("chamfer loss: empty cloud")
    p, t = pred.data, target.data
    b, m, n = p.shape[0], p.shape[1], t.shape[1]
    idx_pt, idx_tp = _pairwise_argmins(p, t)
    diff_pt = p - _gather(t, idx_pt)  # pred point minus its match
    diff_tp = _gather(p, idx_tp) - t  # matched pred minus target point
    d2_pt = (diff_pt**2).sum(axis=2)
    d2_tp = (diff_tp**2).sum(axis=2)

    if squared:
        value = (d2_pt.mean(axis=1) + d2_tp.mean(axis=1)).mean()

        def vjp(g):
            s = float(g) / b
            gp = gt_ = None
            if pred._needs:
                gp = diff_pt * (2.0 * s / m)
                for i in range(b):
                    np.add.at(gp[i], idx_tp[i], diff_tp[i] * (2.0 * s / n))
            if target._needs:
                gt_ = diff_tp * (-2.0 * s / n)
                for i in range(b):
                    np.add.at(gt_[i], idx_pt[i], diff_pt[i] * (-2.0 * s / m))
            return gp, gt_

    else:
        d_pt = np.sqrt(d2_pt)
        d_tp = np.sqrt(d2_tp)
        value = 0.5 * (d_pt.mean(axis=1) + d_tp.mean(axis=1)).mean()
        # unit vectors toward the match; zero where the pair coincides
        u_pt = diff_pt / np.maximum(d_pt, 1e-300)[:, :, None]
        u_tp = diff_tp / np.maximum(d_tp, 1e-300)[:, :, None]

        def vjp(g):
            s = 0.5 * float(g) / b
            gp = gt_ = None
            if pred._needs:
                gp = u_pt * (s / m)
                for i in range(b):
                    np.add.at(gp[i], idx_tp[i], u_tp[i] * (s / n))
            if target._needs:
                gt_ = u_tp * (-s / n)
                for i in range(b):
                    np.add.at(gt_[i], idx_pt[i], u_pt[i] * (-s / m))
            return gp, gt_

    return T.record_op(np.asarray(value), (pred, target), vjp)


def chamfer_l2_loss(pred, target) -> Tensor:
    """Differentiable batch-mean L2 Chamfer distance (scalar tensor).

    Gradient flows through each point's matched pair; nearest-neighbor ties
    resolve to the lowest index.
    """
    return _chamfer_loss(pred, target, squared=True)


def chamfer_l1_loss(pred, target) -> Tensor:
    """Differentiable batch-mean L1 Chamfer distance (scalar tensor)."""
    return _chamfer_loss(pred, target, squared=False)
