"""Actor/critic networks: attention encoder over the token set, plus the
order-sensitive feedforward baseline.

The attention network embeds each token type with its own linear projector
(no positional encoding), runs a stack of post-norm encoder layers
(multi-head attention -> add -> norm -> feedforward -> add -> norm), max-
pools the device rows into a single vector, and feeds the concatenated
[uav, pooled devices, preference, local map] latent through an MLP head.
Masked device slots are zeroed at embedding time and excluded from both
attention and pooling, which makes outputs independent of padding and
invariant to device order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .momdp import DEVICE_TOKEN_DIM, NUM_OBJECTIVES, UAV_TOKEN_DIM, TokenState
from .world import NUM_ACTIONS

ROLE_ACTOR = "actor"
ROLE_CRITIC = "critic"


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    heads: int = 4
    layers: int = 2
    hidden: int = 128
    kmax: int = 12
    local_crop: int = 10
    dtype: str = "float64"  # float32 trades gradcheck headroom for speed

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def lm_dim(self) -> int:
        return 2 * self.local_crop * self.local_crop

    @property
    def num_tokens(self) -> int:
        return self.kmax + 3


class Linear:
    """y = x @ W + b with uniform fan-in initialization."""

    def __init__(self, params: dict, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, bias: bool = True,
                 dtype=np.float64):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(in_dim, out_dim)).astype(dtype),
            requires_grad=True,
        )
        params[f"{name}.weight"] = self.weight
        self.bias = None
        if bias:
            self.bias = Tensor(
                rng.uniform(-bound, bound, size=(out_dim,)).astype(dtype),
                requires_grad=True,
            )
            params[f"{name}.bias"] = self.bias

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


def attention(q: Tensor, z: Tensor, v: Tensor, key_mask: np.ndarray
              ) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention restricted to unmasked keys.

    Accepts (B, T, d_q) or multi-head (B, H, T, d_q) operands with a key
    mask of shape (B, T). Returns (weighted values, attention
    probabilities); probability rows are stochastic over unmasked keys and
    exactly zero on masked ones.
    """
    if not key_mask.any(axis=-1).all():
        raise ValueError("attention: some batch element has every key masked")
    d_q = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(z)), d_q ** -0.5)
    expand = (slice(None),) + (None,) * (scores.ndim - 2)
    probs = ad.masked_softmax(scores, key_mask[expand], validate=False)
    return ad.matmul(probs, v), probs


class EncoderLayer:
    """Post-norm block: multi-head attention -> add -> norm -> hidden-wide
    feedforward -> add -> norm. The per-head projections are stored fused
    as (d, d) matrices whose column blocks belong to the individual heads
    (same parameters, one GEMM)."""

    def __init__(self, params: dict, name: str, cfg: EncoderConfig,
                 rng: np.random.Generator):
        d, dt = cfg.embed_dim, cfg.np_dtype
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        self.wq = Linear(params, f"{name}.q", d, d, rng, bias=False, dtype=dt)
        self.wk = Linear(params, f"{name}.k", d, d, rng, bias=False, dtype=dt)
        self.wv = Linear(params, f"{name}.v", d, d, rng, bias=False, dtype=dt)
        self.ff1 = Linear(params, f"{name}.ff1", d, cfg.hidden, rng, dtype=dt)
        self.ff2 = Linear(params, f"{name}.ff2", cfg.hidden, d, rng, dtype=dt)

    def _split_heads(self, t: Tensor, batch: int, tokens: int) -> Tensor:
        return ad.swap_axes(
            ad.reshape(t, (batch, tokens, self.heads, self.head_dim)), 1, 2
        )

    def __call__(self, x: Tensor, token_mask: np.ndarray,
                 record: list | None = None) -> Tensor:
        batch, tokens, d = x.shape
        q = self._split_heads(self.wq(x), batch, tokens)
        k = self._split_heads(self.wk(x), batch, tokens)
        v = self._split_heads(self.wv(x), batch, tokens)
        out, probs = attention(q, k, v, token_mask)
        if record is not None:
            record.append(probs.values)  # (B, H, T, T)
        merged = ad.reshape(ad.swap_axes(out, 1, 2), (batch, tokens, d))
        x = ad.residual_layer_norm(x, merged)
        ff = self.ff2(ad.relu(self.ff1(x)))
        return ad.residual_layer_norm(x, ff)


class AttentionNetwork:
    """Permutation-invariant actor or critic over the token state."""

    def __init__(self, cfg: EncoderConfig, role: str, rng: np.random.Generator):
        if role not in (ROLE_ACTOR, ROLE_CRITIC):
            raise ValueError(f"role must be actor or critic, got {role!r}")
        self.cfg = cfg
        self.role = role
        self.out_dim = NUM_ACTIONS if role == ROLE_ACTOR else (
            NUM_OBJECTIVES * NUM_ACTIONS
        )
        self.params: dict[str, Tensor] = {}
        p, d, dt = self.params, cfg.embed_dim, cfg.np_dtype
        self.proj_uav = Linear(p, "proj_uav", UAV_TOKEN_DIM, d, rng, dtype=dt)
        self.proj_dev = Linear(p, "proj_dev", DEVICE_TOKEN_DIM, d, rng, dtype=dt)
        self.proj_pref = Linear(p, "proj_pref", NUM_OBJECTIVES, d, rng, dtype=dt)
        self.proj_lm = Linear(p, "proj_lm", cfg.lm_dim, d, rng, dtype=dt)
        self.encoder = [
            EncoderLayer(p, f"enc{i}", cfg, rng) for i in range(cfg.layers)
        ]
        self.head1 = Linear(p, "head1", 4 * d, cfg.hidden, rng, dtype=dt)
        self.head2 = Linear(p, "head2", cfg.hidden, self.out_dim, rng, dtype=dt)

    # -- forward pieces -------------------------------------------------------

    def embed_tokens(self, uav, devices, mask, preference, local_map) -> Tensor:
        """Project each token type to the shared embedding; rows are ordered
        [uav, device_1..kmax, preference, local_map] and masked device rows
        are zeroed."""
        dt = self.cfg.np_dtype
        uav_e = ad.reshape(self.proj_uav(Tensor(np.asarray(uav, dtype=dt))),
                           (-1, 1, self.cfg.embed_dim))
        dev_e = self.proj_dev(Tensor(np.asarray(devices, dtype=dt)))
        dev_e = ad.mul(dev_e, np.asarray(mask, dtype=dt)[:, :, None])
        pref_e = ad.reshape(
            self.proj_pref(Tensor(np.asarray(preference, dtype=dt))),
            (-1, 1, self.cfg.embed_dim),
        )
        lm_e = ad.reshape(self.proj_lm(Tensor(np.asarray(local_map, dtype=dt))),
                          (-1, 1, self.cfg.embed_dim))
        return ad.concat([uav_e, dev_e, pref_e, lm_e], axis=1)

    def token_mask(self, mask: np.ndarray) -> np.ndarray:
        batch = mask.shape[0]
        ones = np.ones((batch, 1), dtype=bool)
        return np.concatenate([ones, mask.astype(bool), ones, ones], axis=1)

    def aggregate(self, encoded: Tensor, mask: np.ndarray) -> Tensor:
        """MaxPool the device rows and concatenate with the uav, preference
        and local-map rows into a 4d latent (device-count independent)."""
        kmax = self.cfg.kmax
        device_rows = ad.slice_rows(encoded, 1, 1 + kmax)
        pooled = ad.max_pool_rows(device_rows, np.asarray(mask, dtype=bool))
        latent = ad.concat(
            [
                ad.take_row(encoded, 0),
                pooled,
                ad.take_row(encoded, kmax + 1),
                ad.take_row(encoded, kmax + 2),
            ],
            axis=-1,
        )
        return latent

    def forward(self, uav, devices, mask, preference, local_map,
                record_attention: list | None = None) -> Tensor:
        """Batched forward pass. Arrays: uav (B,4), devices (B,kmax,5),
        mask (B,kmax) bool, preference (B,2), local_map (B,lm_dim)."""
        mask = np.asarray(mask, dtype=bool)
        x = self.embed_tokens(uav, devices, mask, preference, local_map)
        tmask = self.token_mask(mask)
        for layer in self.encoder:
            x = layer(x, tmask, record=record_attention)
        latent = self.aggregate(x, mask)
        out = self.head2(ad.relu(self.head1(latent)))
        if self.role == ROLE_CRITIC:
            out = ad.reshape(out, (-1, NUM_OBJECTIVES, NUM_ACTIONS))
        return out

    def forward_tokens(self, ts: TokenState,
                       record_attention: list | None = None) -> np.ndarray:
        """Single-state convenience wrapper; returns plain values."""
        with ad.no_grad():
            out = self.forward(
                ts.uav[None], ts.devices[None], ts.mask[None],
                ts.preference[None], ts.local_map[None],
                record_attention=record_attention,
            )
        return out.values[0]


class FeedforwardNetwork:
    """MLP over [flat feature vector, preference]; input size fixed by K."""

    def __init__(self, num_devices: int, hidden: int, role: str,
                 rng: np.random.Generator, dtype=np.float64):
        if role not in (ROLE_ACTOR, ROLE_CRITIC):
            raise ValueError(f"role must be actor or critic, got {role!r}")
        self.role = role
        self.num_devices = num_devices
        self.dtype = dtype
        self.input_dim = (
            UAV_TOKEN_DIM + DEVICE_TOKEN_DIM * num_devices + NUM_OBJECTIVES
        )
        self.out_dim = NUM_ACTIONS if role == ROLE_ACTOR else (
            NUM_OBJECTIVES * NUM_ACTIONS
        )
        self.params: dict[str, Tensor] = {}
        self.fc1 = Linear(self.params, "fc1", self.input_dim, hidden, rng,
                          dtype=dtype)
        self.fc2 = Linear(self.params, "fc2", hidden, hidden, rng, dtype=dtype)
        self.fc3 = Linear(self.params, "fc3", hidden, self.out_dim, rng,
                          dtype=dtype)

    def forward(self, features, preference) -> Tensor:
        features = np.asarray(features, dtype=self.dtype)
        if features.ndim != 2 or features.shape[1] + NUM_OBJECTIVES != self.input_dim:
            raise ValueError(
                f"expected features (B, {self.input_dim - NUM_OBJECTIVES}), "
                f"got {features.shape}"
            )
        x = Tensor(np.concatenate(
            [features, np.asarray(preference, dtype=self.dtype)], axis=1
        ))
        h = ad.relu(self.fc2(ad.relu(self.fc1(x))))
        out = self.fc3(h)
        if self.role == ROLE_CRITIC:
            out = ad.reshape(out, (-1, NUM_OBJECTIVES, NUM_ACTIONS))
        return out


def param_count(net_or_params) -> int:
    """Exact count of trainable scalars in a network or parameter dict."""
    params = getattr(net_or_params, "params", net_or_params)
    return int(sum(t.values.size for t in params.values()))


def param_count_report(actor, critics: list, targets: list | None = None) -> dict:
    """Counts under the documented interpretations of "model size"."""
    report = {
        "actor": param_count(actor),
        "critic": param_count(critics[0]) if critics else 0,
        "actor_plus_twin_critics": param_count(actor)
        + sum(param_count(c) for c in critics),
    }
    if targets:
        report["actor_plus_twins_plus_targets"] = report[
            "actor_plus_twin_critics"
        ] + sum(param_count(t) for t in targets)
    return report


def copy_values(src: dict[str, Tensor], dst: dict[str, Tensor]) -> None:
    """Hard-sync dst parameters to src (used for target initialization)."""
    if set(src) != set(dst):
        raise ValueError("parameter name sets differ")
    for name, tensor in src.items():
        dst[name].values = tensor.values.copy()


def load_values(net, arrays: dict[str, np.ndarray]) -> None:
    if set(arrays) != set(net.params):
        missing = sorted(set(net.params) - set(arrays))
        extra = sorted(set(arrays) - set(net.params))
        raise ValueError(f"checkpoint mismatch: missing {missing}, extra {extra}")
    for name, values in arrays.items():
        current = net.params[name].values
        if current.shape != values.shape:
            raise ValueError(f"{name}: shape {values.shape} != {current.shape}")
        net.params[name].values = np.array(values, dtype=current.dtype)
