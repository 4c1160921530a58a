"""Decomposition of the two modality representations into knowledge components.

Two MLP encoders produce modality-specific components from single inputs; two
co-attention encoders (same structure, independent parameters) produce the
shared and the synergistic components from both inputs.  An encoder-count
switch reproduces the ablation variants with fewer or extra co-attention
encoders; extra encoders receive no similarity supervision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor, add, matmul, mul, transpose
from .errors import ShapeError
from .nn import Linear, SnnLayer

COMPONENT_KEYS = ("gen_specific", "path_specific", "common", "synergy")

ENCODER_VARIANTS = {
    "1_common": ("common",),
    "1_synergistic": ("synergy",),
    "2": ("common", "synergy"),
    "3": ("common", "synergy", "extra0"),
    "5": ("common", "synergy", "extra0", "extra1", "extra2"),
}


@dataclass
class KnowledgeComponents:
    """The decomposed 1x256 vectors plus their source representations."""
    gen_specific: Tensor
    path_specific: Tensor
    common: Tensor | None
    synergy: Tensor | None
    extras: list = field(default_factory=list)
    source_genomic: Tensor | None = None
    source_pathology: Tensor | None = None

    def present(self) -> dict:
        """Canonical components that exist under the configured encoder count."""
        out = {"gen_specific": self.gen_specific, "path_specific": self.path_specific}
        if self.common is not None:
            out["common"] = self.common
        if self.synergy is not None:
            out["synergy"] = self.synergy
        return out

    def fusion_tokens(self) -> list:
        """Component tokens in fusion order (specific, synergy, common, extras)."""
        tokens = [self.gen_specific, self.path_specific]
        if self.synergy is not None:
            tokens.append(self.synergy)
        if self.common is not None:
            tokens.append(self.common)
        tokens.extend(self.extras)
        return tokens


class SpecificEncoder:
    """Two-layer MLP for a single-modality component."""

    def __init__(self, rng, width, name, dtype=np.float64):
        self.l1 = SnnLayer(rng, width, width, f"{name}.l1", dtype)
        self.l2 = Linear(rng, width, width, f"{name}.l2", dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(self.l1(x))

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters()


class CoAttentionEncoder:
    """Outer-product co-attention reduced to per-modality gating vectors.

    One fully-connected map (shared between the two inputs within the
    encoder) produces the interaction matrix; a column-wise 256->1 reduction
    turns it into one gating vector per modality.
    """

    def __init__(self, rng, width, name, dtype=np.float64):
        self.width = width
        self.fc = Linear(rng, width, width, f"{name}.fc", dtype)
        self.reduce_w = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(width), size=(1, width)).astype(dtype),
            name=f"{name}.reduce.w")
        self.reduce_b = Parameter(np.zeros((1, 1), dtype=dtype), name=f"{name}.reduce.b")

    def __call__(self, f_path: Tensor, f_gen: Tensor) -> Tensor:
        if f_path.data.shape != f_gen.data.shape or f_path.data.shape[0] != 1:
            raise ShapeError(
                f"co-attention expects two equal row vectors; got {f_path.data.shape} "
                f"and {f_gen.data.shape}")
        interaction = matmul(transpose(self.fc(f_path)), self.fc(f_gen))  # (w, w), rank 1
        gate_gen = add(matmul(self.reduce_w, interaction), self.reduce_b)            # (1, w)
        gate_path = add(matmul(self.reduce_w, transpose(interaction)), self.reduce_b)
        return add(mul(gate_path, f_path), mul(gate_gen, f_gen))

    def parameters(self):
        return self.fc.parameters() + [self.reduce_w, self.reduce_b]


class KnowledgeDecomposer:
    """Bundle of the four encoders (plus optional extras) behind one call."""

    def __init__(self, rng, width: int = 256, encoders: str = "2", dtype=np.float64):
        if encoders not in ENCODER_VARIANTS:
            raise ShapeError(f"unknown encoder variant {encoders!r}; "
                             f"options: {sorted(ENCODER_VARIANTS)}")
        self.encoders = encoders
        self.gen_specific = SpecificEncoder(rng, width, "decompose.gen_specific", dtype)
        self.path_specific = SpecificEncoder(rng, width, "decompose.path_specific", dtype)
        self.coattn = {}
        for key in ENCODER_VARIANTS[encoders]:
            self.coattn[key] = CoAttentionEncoder(rng, width, f"decompose.{key}", dtype)

    def __call__(self, f_gen: Tensor, f_path: Tensor) -> KnowledgeComponents:
        comps = KnowledgeComponents(
            gen_specific=self.gen_specific(f_gen),
            path_specific=self.path_specific(f_path),
            common=None,
            synergy=None,
            source_genomic=f_gen,
            source_pathology=f_path,
        )
        for key, enc in self.coattn.items():
            out = enc(f_path, f_gen)
            if key == "common":
                comps.common = out
            elif key == "synergy":
                comps.synergy = out
            else:
                comps.extras.append(out)
        return comps

    def parameters(self):
        params = self.gen_specific.parameters() + self.path_specific.parameters()
        for enc in self.coattn.values():
            params.extend(enc.parameters())
        return params
