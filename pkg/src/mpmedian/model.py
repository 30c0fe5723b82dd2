"""Parameter construction and a small facade bundling config + weights.

All learnable tensors live in one flat ParameterStore with stable names,
which is also the checkpoint key space. Linear maps initialize uniform
within +-1/sqrt(fan_in); per-head distance-bias scalars start at zero so
training starts from unbiased attention.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import EncoderConfig, PolicyConfig
from .decoder import DecodeResult, decode, sample_best_of
from .encoder import NodeEmbeddings, encode
from .instance import ProblemInstance


def build_params(config: PolicyConfig, rng: np.random.Generator) -> dc.ParameterStore:
    """All encoder/decoder/memory parameters for one policy.

    Disabled features keep their parameters (same graph, exact code-path
    subsets) but freeze them at the neutral value: distance-bias scalars
    at 0, the memory read projection block at 0.
    """
    enc = config.encoder
    h, f = enc.d_h, config.feature_dim
    store = dc.ParameterStore()
    u = dc.uniform_init

    store.add("enc.init.w", u(rng, (h, f), f))
    store.add("enc.init.b", np.zeros(h))
    for layer in range(enc.n_layers):
        pre = f"enc.l{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"{pre}.{name}", u(rng, (h, h), h))
        store.add(f"{pre}.phi.w1", u(rng, (enc.phi_hidden, 1), 1))
        store.add(f"{pre}.phi.b1", np.zeros(enc.phi_hidden))
        store.add(f"{pre}.phi.w2", u(rng, (1, enc.phi_hidden), enc.phi_hidden))
        store.add(f"{pre}.phi.b2", np.zeros(1))
        store.add(f"{pre}.w_head", np.zeros(enc.n_heads), trainable=config.use_distance_bias)
        store.add(f"{pre}.ln1.g", np.ones(h))
        store.add(f"{pre}.ln1.b", np.zeros(h))
        store.add(f"{pre}.ffn.w1", u(rng, (enc.ffn_width, h), h))
        store.add(f"{pre}.ffn.b1", np.zeros(enc.ffn_width))
        store.add(f"{pre}.ffn.w2", u(rng, (h, enc.ffn_width), enc.ffn_width))
        store.add(f"{pre}.ffn.b2", np.zeros(h))
        store.add(f"{pre}.ln2.g", np.ones(h))
        store.add(f"{pre}.ln2.b", np.zeros(h))

    store.add("dec.start", u(rng, (1, h), h))
    store.add("dec.ctx.w", u(rng, (config.ctx_dim, 3), 3))
    store.add("dec.ctx.b", np.zeros(config.ctx_dim))
    dc.add_gru_params(store, "dec.gru", h, h + config.ctx_dim, rng)
    store.add("dec.mem.keys", u(rng, (config.mem_slots, h), h))
    store.add("dec.mem.values0", u(rng, (config.mem_slots, h), h))
    store.add("dec.mem.theta_write", np.zeros(()), trainable=config.use_memory)
    store.add("dec.mem.beta", np.asarray(config.beta_value), trainable=config.learn_beta)
    store.add("dec.q.wh", u(rng, (h, h), h))
    if config.use_memory:
        store.add("dec.q.wr", u(rng, (h, h), h))
    else:
        store.add("dec.q.wr", np.zeros((h, h)), trainable=False)
    store.add("dec.q.b", np.zeros(h))
    store.add("dec.wk", u(rng, (h, h), h))
    return store


def randomize_gate_params(store: dc.ParameterStore, rng: np.random.Generator) -> None:
    """Give the feature gates nonzero values (they initialize neutral).

    Useful for exercising untrained models: distance-bias scalars and the
    write gate start at values where the corresponding code paths are
    inert or half-open.
    """
    for name in store.names():
        if name.endswith(".w_head") and store[name].trainable:
            store[name].data = rng.uniform(-0.5, 0.5, size=store[name].data.shape)
        if name == "dec.mem.theta_write" and store[name].trainable:
            store[name].data = np.asarray(rng.uniform(-1.0, 1.0))


def config_to_dict(config: PolicyConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(payload: dict) -> PolicyConfig:
    enc = EncoderConfig(**payload["encoder"])
    rest = {k: v for k, v in payload.items() if k != "encoder"}
    return PolicyConfig(encoder=enc, **rest)


@dataclass
class Policy:
    """A configured policy with its weights."""

    config: PolicyConfig
    params: dc.ParameterStore

    @classmethod
    def init(cls, config: PolicyConfig, seed: int, randomize_gates: bool = False) -> "Policy":
        rng = np.random.default_rng(seed)
        params = build_params(config, rng)
        if randomize_gates:
            randomize_gate_params(params, rng)
        return cls(config=config, params=params)

    def encode(self, instance: ProblemInstance, capture_layers: bool = False) -> NodeEmbeddings:
        return encode(instance, self.config, self.params, capture_layers)

    def solve(
        self,
        instance: ProblemInstance,
        mode: str = "greedy",
        samples: int = 1,
        rng: np.random.Generator | None = None,
        capture_trace: bool = False,
    ) -> DecodeResult:
        """Encode then decode. mode 'greedy' is deterministic; 'sample'
        takes the best of `samples` draws."""
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown mode {mode!r}")
        with dc.no_grad():
            embeddings = self.encode(instance)
            if mode == "greedy":
                return decode(
                    instance, embeddings, self.params, self.config,
                    mode="greedy", capture_trace=capture_trace,
                )
            if samples == 1:
                return decode(
                    instance, embeddings, self.params, self.config,
                    mode="sample", rng=rng, capture_trace=capture_trace,
                )
            return sample_best_of(
                instance, embeddings, self.params, self.config, samples, rng
            )

    def save(self, base) -> None:
        dc.save_checkpoint(self.params, base, extra={"policy_config": config_to_dict(self.config)})

    @classmethod
    def load(cls, base) -> "Policy":
        values, manifest = dc.load_checkpoint(base)
        payload = manifest.get("extra", {}).get("policy_config")
        if payload is None:
            raise dc.CheckpointError("checkpoint manifest lacks the policy config")
        config = config_from_dict(payload)
        policy = cls.init(config, seed=0)
        policy.params.load_values(values)
        return policy

    def copy(self) -> "Policy":
        return Policy(config=self.config, params=self.params.copy())
