"""Cohort guidance: similarity constraints and the bank-backed contrastive loss.

The knowledge-level loss pulls each component toward the modality it should
represent and pushes it orthogonal to the one it should not, with the source
representations entering as constants so only the component encoders receive
gradients.  The patient-level loss contrasts each component against recent
detached components of other patients held in a FIFO bank keyed by risk group.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .autodiff import Tensor, absolute, add, concat, cosine_rows, exp, log, matmul, mul
from .decomposition import COMPONENT_KEYS, KnowledgeComponents
from .nn import mask_column

# l_k sign conventions per component: (pathology side, genomics side);
# "abs" constrains orthogonality, -1 rewards similarity
_LK_TERMS = {
    "gen_specific": ("abs", -1.0),
    "path_specific": (-1.0, "abs"),
    "common": (-1.0, -1.0),
    "synergy": ("abs", "abs"),
}


def knowledge_loss(f_gen: Tensor, f_path: Tensor, components: KnowledgeComponents,
                   constraints=frozenset(COMPONENT_KEYS)) -> Tensor:
    """Similarity-constraint loss over the present components.

    Gradients flow into the components only; the modality representations are
    detached.  ``constraints`` selects which components' terms participate.
    """
    present = components.present()
    keys = [k for k in COMPONENT_KEYS if k in present]
    stacked = concat([present[k] for k in keys], axis=0)
    cos_path = cosine_rows(f_path.detach(), stacked)   # (1, m)
    cos_gen = cosine_rows(f_gen.detach(), stacked)
    dtype = stacked.data.dtype
    m = len(keys)
    masks = {"path_abs": np.zeros((m, 1)), "path_plain": np.zeros((m, 1)),
             "gen_abs": np.zeros((m, 1)), "gen_plain": np.zeros((m, 1))}
    for i, key in enumerate(keys):
        if key not in constraints:
            continue
        path_side, gen_side = _LK_TERMS[key]
        if path_side == "abs":
            masks["path_abs"][i, 0] = 1.0
        else:
            masks["path_plain"][i, 0] = path_side
        if gen_side == "abs":
            masks["gen_abs"][i, 0] = 1.0
        else:
            masks["gen_plain"][i, 0] = gen_side
    total = matmul(absolute(cos_path), Tensor(masks["path_abs"].astype(dtype)))
    total = add(total, matmul(cos_path, Tensor(masks["path_plain"].astype(dtype))))
    total = add(total, matmul(absolute(cos_gen), Tensor(masks["gen_abs"].astype(dtype))))
    total = add(total, matmul(cos_gen, Tensor(masks["gen_plain"].astype(dtype))))
    return total


class CohortBank:
    """FIFO store of detached component vectors tagged by risk group.

    Capacity is measured in iterations: right after a push at iteration t the
    bank holds iterations t-b+1 .. t, so nothing is discarded while t < b+1.
    """

    def __init__(self, capacity: int, keys=COMPONENT_KEYS):
        if capacity < 1:
            raise ValueError(f"bank capacity must be >= 1; got {capacity}")
        self.capacity = int(capacity)
        self.entries = {k: deque() for k in keys}

    def push(self, vectors: dict, group: int, iteration: int):
        """Store detached copies; evict everything at or before iteration - capacity."""
        horizon = iteration - self.capacity
        for key, vec in vectors.items():
            dq = self.entries[key]
            arr = vec.data if isinstance(vec, Tensor) else np.asarray(vec)
            dq.append((iteration, int(group), np.array(arr, dtype=float).reshape(1, -1)))
            while dq and dq[0][0] <= horizon:
                dq.popleft()

    def size(self, key: str) -> int:
        return len(self.entries[key])

    def partition(self, key: str, group: int, censor: int):
        """Positive/negative banks for a query patient.

        Uncensored queries match only their own group; censored queries also
        accept lower-risk groups (larger index).  Returns two (n, d) arrays,
        either possibly empty.
        """
        pos, neg = [], []
        for _, g, vec in self.entries[key]:
            if (g >= group) if censor else (g == group):
                pos.append(vec)
            else:
                neg.append(vec)
        d = self.entries[key][0][2].shape[1] if self.entries[key] else 0
        pos_mat = np.vstack(pos) if pos else np.empty((0, d))
        neg_mat = np.vstack(neg) if neg else np.empty((0, d))
        return pos_mat, neg_mat


def patient_loss(component: Tensor, positives: np.ndarray, negatives: np.ndarray,
                 temperature: float) -> Tensor:
    """Contrastive pull toward positives: -log(sum_d+ / (sum_d+ + sum_d-)).

    Similarity is exp(cos/temperature), so every term is positive.  With no
    positives there is no signal and with no negatives the ratio is one; both
    cases contribute exactly zero.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive; got {temperature}")
    n_pos, n_neg = positives.shape[0], negatives.shape[0]
    dtype = component.data.dtype
    if n_pos == 0 or n_neg == 0:
        return Tensor(np.zeros((1, 1), dtype=dtype))
    bank = Tensor(np.vstack([positives, negatives]).astype(dtype))
    sims = exp(mul(cosine_rows(component, bank), Tensor(np.asarray(1.0 / temperature, dtype=dtype))))
    total_rows = n_pos + n_neg
    sum_pos = matmul(sims, mask_column(total_rows, range(n_pos), dtype))
    sum_all = matmul(sims, mask_column(total_rows, range(total_rows), dtype))
    return add(log(sum_all), mul(log(sum_pos), Tensor(np.asarray(-1.0, dtype=dtype))))


def cohort_loss(f_gen: Tensor, f_path: Tensor, components: KnowledgeComponents,
                bank: CohortBank, group: int, censor: int, temperature: float,
                constraints=frozenset(COMPONENT_KEYS)) -> Tensor:
    """Knowledge loss plus the mean patient loss over the present components."""
    total = knowledge_loss(f_gen, f_path, components, constraints)
    present = components.present()
    terms = []
    for key, comp in present.items():
        pos, neg = bank.partition(key, group, censor)
        terms.append(patient_loss(comp, pos, neg, temperature))
    if terms:
        scale = Tensor(np.asarray(1.0 / len(terms), dtype=total.data.dtype))
        lp = terms[0]
        for t in terms[1:]:
            lp = add(lp, t)
        total = add(total, mul(lp, scale))
    return total
