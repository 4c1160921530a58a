"""Transformer fusion of a class token with the knowledge components, and the
discrete hazard machinery: survival function, censored NLL, risk score.

The token sequence carries no positional encoding (components form a set), so
the class-token output is invariant to the order of the component tokens.
Hazards are clamped away from {0, 1} to keep every log in the loss finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Parameter, Tensor, add, clamp, concat, layer_norm, log, matmul, mul, selu,
    sigmoid, softmax_rows, transpose,
)
from .errors import ContractViolation, ShapeError
from .nn import Linear, mask_column, take_cols, take_row

HAZARD_CLAMP = 1e-7


class MultiHeadAttention:
    def __init__(self, rng, width, heads, name, dtype=np.float64):
        if width % heads:
            raise ShapeError(f"width {width} not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.q = Linear(rng, width, width, f"{name}.q", dtype)
        self.k = Linear(rng, width, width, f"{name}.k", dtype)
        self.v = Linear(rng, width, width, f"{name}.v", dtype)
        self.out = Linear(rng, width, width, f"{name}.out", dtype)

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = self.q(x), self.k(x), self.v(x)
        dtype = x.data.dtype
        scale = Tensor(np.asarray(self.scale, dtype=dtype))
        mixed = []
        for h in range(self.heads):
            start = h * self.head_dim
            qh = take_cols(q, start, self.head_dim)
            kh = take_cols(k, start, self.head_dim)
            vh = take_cols(v, start, self.head_dim)
            weights = softmax_rows(mul(matmul(qh, transpose(kh)), scale))
            mixed.append(matmul(weights, vh))
        return self.out(concat(mixed, axis=1))

    def parameters(self):
        return (self.q.parameters() + self.k.parameters()
                + self.v.parameters() + self.out.parameters())


class EncoderLayer:
    """Pre-norm transformer block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, rng, width, heads, ff_width, name, dtype=np.float64):
        self.attn = MultiHeadAttention(rng, width, heads, f"{name}.attn", dtype)
        self.ff1 = Linear(rng, width, ff_width, f"{name}.ff1", dtype)
        self.ff2 = Linear(rng, ff_width, width, f"{name}.ff2", dtype)
        self.ln1_g = Parameter(np.ones((1, width), dtype=dtype), name=f"{name}.ln1.g")
        self.ln1_b = Parameter(np.zeros((1, width), dtype=dtype), name=f"{name}.ln1.b")
        self.ln2_g = Parameter(np.ones((1, width), dtype=dtype), name=f"{name}.ln2.g")
        self.ln2_b = Parameter(np.zeros((1, width), dtype=dtype), name=f"{name}.ln2.b")

    def __call__(self, x: Tensor) -> Tensor:
        x = add(x, self.attn(layer_norm(x, self.ln1_g, self.ln1_b)))
        h = layer_norm(x, self.ln2_g, self.ln2_b)
        return add(x, self.ff2(selu(self.ff1(h))))

    def parameters(self):
        return (self.attn.parameters() + self.ff1.parameters() + self.ff2.parameters()
                + [self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b])


@dataclass
class HazardPrediction:
    """Per-bin hazards with the derived survival values and scalar risk."""
    hazards: np.ndarray          # (n,), each in (0, 1)
    survival: np.ndarray         # (n+1,), survival[k] = prod_{j<=k} (1 - h_j)
    risk: float

    @classmethod
    def from_hazards(cls, hazards: np.ndarray) -> "HazardPrediction":
        h = np.asarray(hazards, dtype=float).reshape(-1)
        surv = np.concatenate([[1.0], np.cumprod(1.0 - h)])
        return cls(hazards=h, survival=surv, risk=-float(surv[1:].sum()))


def survival_function(hazards, kappa: int) -> float:
    """Probability of surviving past interval kappa: prod_{j<=kappa} (1 - h_j)."""
    h = np.asarray(hazards, dtype=float).reshape(-1)
    if not 0 <= kappa <= h.size:
        raise ContractViolation(
            f"survival interval must be in 0..{h.size}; got {kappa}")
    return float(np.prod(1.0 - h[:kappa])) if kappa else 1.0


def risk_score(hazards) -> float:
    """Negative cumulative survival; strictly increasing in every hazard."""
    h = np.asarray(hazards, dtype=float).reshape(-1)
    return -float(np.cumprod(1.0 - h).sum())


class FusionModel:
    """Class token + component tokens -> transformer -> per-bin hazards."""

    def __init__(self, rng, n_bins: int, width: int = 256, heads: int = 4,
                 layers: int = 2, ff_width: int = 512, dtype=np.float64):
        self.n_bins = n_bins
        self.width = width
        self.dtype = dtype
        self.token = Parameter(
            rng.normal(0.0, 1.0 / math.sqrt(width), size=(1, width)).astype(dtype),
            name="fusion.token")
        self.layers = [EncoderLayer(rng, width, heads, ff_width, f"fusion.layer{i}", dtype)
                       for i in range(layers)]
        self.final_g = Parameter(np.ones((1, width), dtype=dtype), name="fusion.final_ln.g")
        self.final_b = Parameter(np.zeros((1, width), dtype=dtype), name="fusion.final_ln.b")
        self.head = Linear(rng, width, n_bins, "fusion.head", dtype)

    def __call__(self, component_tokens) -> Tensor:
        for t in component_tokens:
            if t.data.shape != (1, self.width):
                raise ShapeError(
                    f"fusion tokens must be (1, {self.width}); got {t.data.shape}")
        x = concat([self.token] + list(component_tokens), axis=0)
        for layer in self.layers:
            x = layer(x)
        x = layer_norm(x, self.final_g, self.final_b)
        logits = self.head(take_row(x, 0))
        return clamp(sigmoid(logits), HAZARD_CLAMP, 1.0 - HAZARD_CLAMP)

    def parameters(self):
        params = [self.token]
        for layer in self.layers:
            params.extend(layer.parameters())
        params.extend([self.final_g, self.final_b])
        params.extend(self.head.parameters())
        return params


def nll_loss(hazards: Tensor, censor: int, time_bin: int) -> Tensor:
    """Censorship-aware negative log-likelihood of a discrete hazard vector.

    Censored patients (censor=1) contribute only the survival term through
    their bin; uncensored patients contribute survival through the previous
    bin times the hazard of the event bin.
    """
    n = hazards.data.shape[1]
    if censor not in (0, 1):
        raise ContractViolation(f"censor flag must be 0 or 1; got {censor}")
    if not 1 <= time_bin <= n:
        raise ContractViolation(f"time bin must be in 1..{n}; got {time_bin}")
    dtype = hazards.data.dtype
    neg = Tensor(np.asarray(-1.0, dtype=dtype))
    log_one_minus = log(add(mul(hazards, neg), Tensor(np.asarray(1.0, dtype=dtype))))
    if censor == 1:
        log_surv = matmul(log_one_minus, mask_column(n, range(time_bin), dtype))
        return mul(log_surv, neg)
    log_surv_prev = matmul(log_one_minus, mask_column(n, range(time_bin - 1), dtype))
    log_hazard = log(matmul(hazards, mask_column(n, [time_bin - 1], dtype)))
    return mul(add(log_surv_prev, log_hazard), neg)


def total_loss(nll: Tensor, cohort: Tensor, alpha: float) -> Tensor:
    """Survival loss plus alpha-weighted cohort guidance."""
    if alpha == 0.0:
        return nll
    return add(nll, mul(cohort, Tensor(np.asarray(alpha, dtype=nll.data.dtype))))
