"""Assembly of the full survival network under the configured ablation switches."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .decomposition import KnowledgeDecomposer
from .errors import ConfigError
from .fusion import FusionModel
from .genomics import GenomicsEncoder
from .nn import collect_parameters
from .pathology import PathologyEncoder

MODALITIES = ("multimodal", "genomics", "pathology")


class SurvivalModel:
    """Encoders, optional decomposition, and transformer fusion behind one forward.

    Construction order is fixed so one seeded generator reproduces identical
    weights for identical configurations.
    """

    def __init__(self, rng: np.random.Generator, subseq_lens, n_bins: int, k: int,
                 modality: str = "multimodal", use_decomposition: bool = True,
                 encoders: str = "2", width: int = 256, dtype=np.float64):
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality {modality!r}; options: {MODALITIES}")
        self.modality = modality
        self.use_decomposition = use_decomposition and modality == "multimodal"
        self.width = width
        self.genomics = None
        self.pathology = None
        self.decomposer = None
        if modality in ("multimodal", "genomics"):
            self.genomics = GenomicsEncoder(rng, subseq_lens, width, dtype)
        if modality in ("multimodal", "pathology"):
            self.pathology = PathologyEncoder(rng, k, width=width, dtype=dtype)
        if self.use_decomposition:
            self.decomposer = KnowledgeDecomposer(rng, width, encoders, dtype)
        self.fusion = FusionModel(rng, n_bins, width, dtype=dtype)
        modules = [m for m in (self.genomics, self.pathology, self.decomposer, self.fusion)
                   if m is not None]
        self.params = collect_parameters(*modules)

    def parameters(self):
        return self.params

    def forward(self, genomics_seqs=None, aligned_centers=None):
        """Hazards plus the intermediate pieces the guidance losses need.

        Returns (hazards, components-or-None, f_gen-or-None, f_path-or-None).
        """
        f_gen = f_path = comps = None
        if self.genomics is not None:
            f_gen = self.genomics(genomics_seqs)
        if self.pathology is not None:
            f_path = self.pathology(aligned_centers)
        if self.use_decomposition:
            comps = self.decomposer(f_gen, f_path)
            tokens = comps.fusion_tokens()
        elif self.modality == "multimodal":
            tokens = [f_gen, f_path]
        else:
            tokens = [f_gen if f_gen is not None else f_path]
        hazards = self.fusion(tokens)
        return hazards, comps, f_gen, f_path
