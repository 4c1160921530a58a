"""Genomics path: six sub-sequence SNN stacks aggregated to one representation."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat
from .errors import ShapeError
from .nn import Linear, SnnLayer

NUM_SUBSEQS = 6


class GenomicsEncoder:
    """Two cascaded SNN layers per sub-sequence, concatenated through an aggregator."""

    def __init__(self, rng: np.random.Generator, subseq_lens, width: int = 256,
                 dtype=np.float64):
        if len(subseq_lens) != NUM_SUBSEQS:
            raise ShapeError(f"expected {NUM_SUBSEQS} sub-sequence lengths, got {len(subseq_lens)}")
        self.subseq_lens = tuple(int(x) for x in subseq_lens)
        self.width = width
        self.dtype = dtype
        self.stacks = []
        for i, length in enumerate(self.subseq_lens):
            l1 = SnnLayer(rng, length, width, f"genomics.sub{i}.l1", dtype)
            l2 = SnnLayer(rng, width, width, f"genomics.sub{i}.l2", dtype)
            self.stacks.append((l1, l2))
        self.agg = Linear(rng, NUM_SUBSEQS * width, width, "genomics.agg", dtype)

    def __call__(self, subseqs) -> Tensor:
        if len(subseqs) != NUM_SUBSEQS:
            raise ShapeError(f"expected {NUM_SUBSEQS} sub-sequences, got {len(subseqs)}")
        feats = []
        for i, ((l1, l2), seq) in enumerate(zip(self.stacks, subseqs)):
            arr = np.asarray(seq, dtype=self.dtype).reshape(1, -1)
            if arr.shape[1] != self.subseq_lens[i]:
                raise ShapeError(
                    f"sub-sequence {i} has length {arr.shape[1]}, "
                    f"encoder expects {self.subseq_lens[i]}")
            feats.append(l2(l1(Tensor(arr))))
        return self.agg(concat(feats, axis=1))

    def parameters(self):
        params = []
        for l1, l2 in self.stacks:
            params.extend(l1.parameters())
            params.extend(l2.parameters())
        params.extend(self.agg.parameters())
        return params
