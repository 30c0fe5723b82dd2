"""Dataclass configs for the constructive policy."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of the sparse spatial attention encoder.

    n_layers = 0 is a degenerate-but-defined configuration: encoding then
    reduces to the initial linear embedding.
    """

    d_h: int = 128
    n_heads: int = 8
    n_layers: int = 3
    k_neighbors: int = 32
    ffn_hidden: int | None = None  # None -> d_h
    phi_hidden: int = 16

    def __post_init__(self):
        if self.d_h < 1 or self.n_heads < 1:
            raise ValueError("d_h and n_heads must be positive")
        if self.d_h % self.n_heads != 0:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.phi_hidden < 1:
            raise ValueError("phi_hidden must be >= 1")

    @property
    def d_k(self) -> int:
        return self.d_h // self.n_heads

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else self.d_h


@dataclass(frozen=True)
class PolicyConfig:
    """Full policy: encoder shape, memory shape, and feature toggles.

    The toggles freeze parameters rather than fork code paths, so every
    ablation row runs the exact same computation graph:
      use_distance_bias=False  -> per-head bias scalars fixed at 0
      knn_sparse=False         -> every node attends to all others (K=N-1)
      use_memory=False         -> write gate multiplied by 0 and the read
                                  projection block fixed at 0
    """

    n_periods: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mem_slots: int = 32
    ctx_dim: int = 16
    beta: float | None = None  # inverse temperature; None -> 1/sqrt(d_h)
    learn_beta: bool = False
    use_distance_bias: bool = True
    knn_sparse: bool = True
    use_memory: bool = True

    def __post_init__(self):
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.mem_slots < 1:
            raise ValueError("mem_slots must be >= 1")
        if self.ctx_dim < 1:
            raise ValueError("ctx_dim must be >= 1")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def feature_dim(self) -> int:
        # per-node input: x, y, then one demand weight per period
        return 2 + self.n_periods

    @property
    def beta_value(self) -> float:
        return self.beta if self.beta is not None else 1.0 / (self.encoder.d_h**0.5)

    @property
    def write_mult(self) -> float:
        return 1.0 if self.use_memory else 0.0

    def with_toggles(
        self,
        use_distance_bias: bool | None = None,
        knn_sparse: bool | None = None,
        use_memory: bool | None = None,
    ) -> "PolicyConfig":
        return dataclasses.replace(
            self,
            use_distance_bias=self.use_distance_bias if use_distance_bias is None else use_distance_bias,
            knn_sparse=self.knn_sparse if knn_sparse is None else knn_sparse,
            use_memory=self.use_memory if use_memory is None else use_memory,
        )


@dataclass(frozen=True)
class TrainConfig:
    """REINFORCE training hyperparameters."""

    lr: float = 1e-4
    batch_size: int = 512
    epochs: int = 10
    steps_per_epoch: int = 250
    lambda_orth: float = 1e-3
    lambda_ent: float = 1e-3
    validation_size: int = 100
    seed: int = 0
    flip_entropy_sign: bool = False  # recover the literal penalty form

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("lr, batch_size, epochs, steps_per_epoch must be positive")
        if self.lambda_orth < 0 or self.lambda_ent < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.validation_size < 1:
            raise ValueError("validation_size must be >= 1")
