"""Pathology path: patch clustering, anchor alignment, and encoding.

A patient's patch-embedding set is reduced to k cluster centers; a global
anchor keeps cluster positions phenotype-consistent across patients via an
optimal matching, and the aligned centers are encoded to a single 1x256
representation.  Clustering and matching run outside the autodiff graph; the
centers enter the network as constants.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, selu
from .errors import ContractViolation, ShapeError
from .nn import Linear, SnnLayer, flatten_rows

KMEANS_TOL = 1e-4
KMEANS_MAX_ITER = 50


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _kpp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: iteratively sample proportional to squared distance."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i] = points[rng.integers(n)]
            continue
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(patches: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Lloyd iterations from a k-means++ seeding; deterministic given the seed.

    Fewer than k patches are duplicated cyclically before clustering; a
    cluster that empties is re-seeded to the point farthest from its center.
    """
    pts = np.asarray(patches, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ShapeError(f"patches must be a non-empty 2-D array; got shape {pts.shape}")
    if pts.shape[0] < k:
        reps = -(-k // pts.shape[0])
        pts = np.tile(pts, (reps, 1))[:k]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4B4D]))
    centers = _kpp_seed(pts, k, rng)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centers[j] = pts[mask].mean(axis=0)
            else:
                farthest = d2[np.arange(len(pts)), labels].argmax()
                new_centers[j] = pts[farthest]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < KMEANS_TOL:
            break
    return centers


def kmeans_objective(points: np.ndarray, centers: np.ndarray) -> float:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


# ---------------------------------------------------------------------------
# optimal assignment (maximize total similarity)
# ---------------------------------------------------------------------------

def max_assignment(score: np.ndarray) -> np.ndarray:
    """Column choice per row maximizing the total score of a square matrix.

    Potentials-based shortest augmenting path, O(k^3); equivalent to
    exhaustive search over all k! permutations.  Runs on plain lists: the
    matrices here are tiny and element access dominates.
    """
    s = np.asarray(score, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"assignment needs a square matrix; got {s.shape}")
    n = s.shape[0]
    cost = (-s).tolist()  # minimize negated score
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[j] = row assigned to column j (1-based)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            row = cost[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.sqrt((a * a).sum(axis=1, keepdims=True))
    nb = np.sqrt((b * b).sum(axis=1, keepdims=True))
    return (a @ b.T) / (na * nb.T + 1e-8)


class Anchor:
    """Global reference centers; matched against and refreshed during training."""

    def __init__(self, k: int, dim: int, tau: float):
        if not (0.0 < tau <= 1.0):
            raise ValueError(f"anchor update ratio must be in (0, 1]; got {tau}")
        self.reference = np.zeros((k, dim))
        self.tau = float(tau)
        self.initialized = False
        self.frozen = False

    def update(self, aligned: np.ndarray):
        if self.frozen:
            raise ContractViolation("anchor update attempted in evaluation mode")
        self.reference = (1.0 - self.tau) * self.reference + self.tau * aligned


def align_centers(centers: np.ndarray, anchor: Anchor):
    """Reorder centers so position i best matches anchor row i (cosine score).

    The first call seeds the anchor with the centers as-is and returns the
    identity permutation.
    """
    centers = np.asarray(centers, dtype=float)
    if not anchor.initialized:
        if anchor.frozen:
            raise ContractViolation("anchor was never initialized during training")
        anchor.reference = centers.copy()
        anchor.initialized = True
        return centers, np.arange(centers.shape[0])
    score = _cosine_matrix(anchor.reference, centers)  # score[i, j] = cos(anchor_i, center_j)
    perm = max_assignment(score)
    return centers[perm], perm


def alignment_score(centers: np.ndarray, anchor_ref: np.ndarray, perm: np.ndarray) -> float:
    score = _cosine_matrix(anchor_ref, centers)
    return float(score[np.arange(len(perm)), perm].sum())


def mean_same_position_distance(center_sets) -> float:
    """Mean pairwise L2 distance between same-position centers across patients."""
    sets = [np.asarray(c, dtype=float) for c in center_sets]
    k = sets[0].shape[0]
    dists = []
    for pos in range(k):
        for a in range(len(sets)):
            for b in range(a + 1, len(sets)):
                dists.append(np.linalg.norm(sets[a][pos] - sets[b][pos]))
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

class PathologyEncoder:
    """Per-center SNN layer then a fully-connected aggregator to 1x256."""

    def __init__(self, rng: np.random.Generator, k: int, patch_dim: int = 1024,
                 width: int = 256, dtype=np.float64):
        self.k = k
        self.width = width
        self.dtype = dtype
        self.snn = SnnLayer(rng, patch_dim, width, "pathology.snn", dtype)
        self.agg = Linear(rng, k * width, width, "pathology.agg", dtype)

    def __call__(self, aligned_centers: np.ndarray) -> Tensor:
        arr = np.asarray(aligned_centers, dtype=self.dtype)
        if arr.shape[0] != self.k:
            raise ShapeError(f"expected {self.k} centers, got {arr.shape[0]}")
        per_center = self.snn(Tensor(arr))        # (k, width)
        return self.agg(flatten_rows(per_center))  # (1, width)

    def parameters(self):
        return self.snn.parameters() + self.agg.parameters()
