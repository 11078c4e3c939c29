"""Trainable arrays, their shapes, and initialization.

Gate blocks along the 4H axis are ordered [input, forget, candidate, output].
The serialization order of parameter blocks is fixed by PARAM_ORDER; the
checkpoint format depends on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError

GATE_ORDER = ("input", "forget", "candidate", "output")

PARAM_ORDER = (
    "embedding",
    "wx_fwd", "wh_fwd", "bias_fwd",
    "wx_bwd", "wh_bwd", "bias_bwd",
    "head_w", "head_b",
)


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int = 22000
    embed_dim: int = 100
    hidden_units: int = 256
    max_len: int = 32

    def __post_init__(self) -> None:
        for name in ("vocab_size", "embed_dim", "hidden_units", "max_len"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")

    @property
    def feature_width(self) -> int:
        return 2 * self.hidden_units

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden_units": self.hidden_units,
            "max_len": self.max_len,
        }


@dataclass(frozen=True)
class DropoutConfig:
    spatial_rate: float = 0.2
    recurrent_rate: float = 0.4
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("spatial_rate", "recurrent_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise InputError(f"{name} must be in [0, 1), got {rate}")

    def to_dict(self) -> dict:
        return {
            "spatial_rate": self.spatial_rate,
            "recurrent_rate": self.recurrent_rate,
            "seed": self.seed,
        }


@dataclass
class ModelParams:
    embedding: np.ndarray   # (vocab, embed)
    wx_fwd: np.ndarray      # (embed, 4*hidden)
    wh_fwd: np.ndarray      # (hidden, 4*hidden)
    bias_fwd: np.ndarray    # (4*hidden,)
    wx_bwd: np.ndarray
    wh_bwd: np.ndarray
    bias_bwd: np.ndarray
    head_w: np.ndarray      # (2*hidden,)
    head_b: np.ndarray      # (1,)

    def arrays(self) -> dict[str, np.ndarray]:
        """Named blocks in serialization order."""
        return {name: getattr(self, name) for name in PARAM_ORDER}

    @property
    def dtype(self) -> np.dtype:
        return self.embedding.dtype

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(**{k: v.astype(dtype) for k, v in self.arrays().items()})

    def check_finite(self) -> None:
        for name, array in self.arrays().items():
            if not np.isfinite(array).all():
                raise InputError(f"parameter block {name!r} contains non-finite values")

    @classmethod
    def zeros(cls, dims: ModelDims, dtype=np.float32) -> "ModelParams":
        h4 = 4 * dims.hidden_units
        return cls(
            embedding=np.zeros((dims.vocab_size, dims.embed_dim), dtype),
            wx_fwd=np.zeros((dims.embed_dim, h4), dtype),
            wh_fwd=np.zeros((dims.hidden_units, h4), dtype),
            bias_fwd=np.zeros(h4, dtype),
            wx_bwd=np.zeros((dims.embed_dim, h4), dtype),
            wh_bwd=np.zeros((dims.hidden_units, h4), dtype),
            bias_bwd=np.zeros(h4, dtype),
            head_w=np.zeros(dims.feature_width, dtype),
            head_b=np.zeros(1, dtype),
        )


def zeros_like_params(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(array) for name, array in params.arrays().items()}


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))  # sign fix makes the factorization unique


def init_params(dims: ModelDims, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Glorot input weights, orthogonal recurrent blocks, forget bias 1."""
    h = dims.hidden_units
    params = ModelParams.zeros(dims, np.float64)
    params.embedding[:] = rng.uniform(-0.05, 0.05, size=params.embedding.shape)
    for prefix in ("fwd", "bwd"):
        wx = getattr(params, f"wx_{prefix}")
        wh = getattr(params, f"wh_{prefix}")
        bias = getattr(params, f"bias_{prefix}")
        for gate in range(4):
            block = slice(gate * h, (gate + 1) * h)
            wx[:, block] = _glorot(rng, (dims.embed_dim, h))
            wh[:, block] = _orthogonal(rng, h)
        bias[h : 2 * h] = 1.0  # keep the forget gate open at the start
    params.head_w[:] = _glorot(rng, (dims.feature_width, 1))[:, 0]
    return params.astype(dtype)
