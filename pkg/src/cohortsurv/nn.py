"""Small neural-network building blocks on top of the autodiff engine."""
from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, add, concat, matmul, selu

_SELECTORS: dict = {}


def lecun_normal(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    """Weight init matched to self-normalizing activations (std 1/sqrt(fan_in))."""
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)).astype(dtype)


class Linear:
    """Affine map x @ W + b with zero-initialized bias."""

    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int,
                 name: str, dtype=np.float64):
        self.W = Parameter(lecun_normal(rng, fan_in, fan_out, dtype), name=f"{name}.W", fuse_ok=True)
        self.W.data = np.asfortranarray(self.W.data)
        self.b = Parameter(np.zeros((1, fan_out), dtype=dtype), name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.W), self.b)

    def parameters(self):
        return [self.W, self.b]


class SnnLayer:
    """Linear layer followed by the scaled-exponential activation."""

    def __init__(self, rng, fan_in, fan_out, name, dtype=np.float64):
        self.fc = Linear(rng, fan_in, fan_out, name, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return selu(self.fc(x))

    def parameters(self):
        return self.fc.parameters()


def row_selector(rows: int, index: int, dtype=np.float64) -> Tensor:
    """Constant (1, rows) one-hot used to extract a row via matmul."""
    key = ("row", rows, index, np.dtype(dtype))
    t = _SELECTORS.get(key)
    if t is None:
        e = np.zeros((1, rows), dtype=dtype)
        e[0, index] = 1.0
        t = Tensor(e)
        _SELECTORS[key] = t
    return t


def col_selector(cols: int, start: int, width: int, dtype=np.float64) -> Tensor:
    """Constant (cols, width) slab of identity used to slice columns via matmul."""
    key = ("col", cols, start, width, np.dtype(dtype))
    t = _SELECTORS.get(key)
    if t is None:
        s = np.zeros((cols, width), dtype=dtype)
        s[start:start + width] = np.eye(width, dtype=dtype)
        t = Tensor(s)
        _SELECTORS[key] = t
    return t


def mask_column(n: int, hot, dtype=np.float64) -> Tensor:
    """Constant (n, 1) indicator column for a set of indices."""
    m = np.zeros((n, 1), dtype=dtype)
    m[list(hot), 0] = 1.0
    return Tensor(m)


def take_row(x: Tensor, index: int) -> Tensor:
    return matmul(row_selector(x.data.shape[0], index, x.data.dtype), x)


def take_cols(x: Tensor, start: int, width: int) -> Tensor:
    return matmul(x, col_selector(x.data.shape[1], start, width, x.data.dtype))


def flatten_rows(x: Tensor) -> Tensor:
    """Row-major flatten of a (k, n) tensor into (1, k*n)."""
    k = x.data.shape[0]
    if k == 1:
        return x
    return concat([take_row(x, i) for i in range(k)], axis=1)


def collect_parameters(*modules) -> list:
    """Flatten parameter lists and enforce unique names."""
    params = []
    for m in modules:
        params.extend(m.parameters())
    seen = {}
    for p in params:
        if p.name in seen and seen[p.name] is not p:
            raise ValueError(f"duplicate parameter name: {p.name!r}")
        seen[p.name] = p
    if len(seen) != len(params):
        # the same object listed twice would double-apply updates
        raise ValueError("a parameter appears more than once in the enumeration")
    return params
