"""Frozen miniature image and text transformers with representation-token
insertion.

Both encoders are pre-norm transformer stacks. From layer J onward the input
sequence is extended with K aligned space tokens: the image branch inserts
them between the class token and the patches, the text branch immediately
after BOS. Under the ``full`` variant the slot is refreshed with newly
aligned tokens at every layer (the previous slot outputs are discarded);
under the ``shared`` variant the slot receives a convex mix of fresh tokens
and the previous layer's slot outputs, weighted by the transfer coefficient
beta. Inserted tokens receive no positional embeddings: positions are
consumed at the embedding stage, before layer 1.

The text branch is autoregressive; its mask is the plain causal mask over
the post-insertion indexing, so inserted tokens attend to BOS and to earlier
inserted tokens only. The image branch is fully bidirectional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import CapacityError, ConfigError, InputError, ShapeError
from .numerics import Parameter, Tensor
from .repspace import AlignedTokens, AlignerStack, RepresentationSpace, align_space_tokens

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
FIRST_FREE_ID = 3

VARIANTS = ("full", "shared")


@dataclass(frozen=True)
class EncoderConfig:
    """Shapes and insertion schedule shared by both encoder stacks."""

    L: int
    heads: int
    d_v: int
    d_t: int
    M: int
    N: int
    vocab: int
    J: int
    K: int
    beta: float
    variant: str = "shared"
    insert_pos_embed: bool = False  # open question; default off

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not (1 <= self.J <= self.L + 1):
            raise ConfigError(f"insertion layer J={self.J} outside [1, L+1]={self.L + 1}")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"transfer coefficient beta={self.beta} outside [0, 1]")
        for name, width in (("d_v", self.d_v), ("d_t", self.d_t)):
            if width % self.heads != 0:
                raise ConfigError(f"{name}={width} not divisible by heads={self.heads}")
        if self.K < 0:
            raise ConfigError(f"token count K={self.K} must be nonnegative")

    @property
    def inserts(self) -> bool:
        return self.J <= self.L and self.K > 0

    @property
    def effective_beta(self) -> float:
        # the full variant refreshes the slot every layer
        return 1.0 if self.variant == "full" else self.beta


@dataclass
class LayerParams:
    """Frozen weights of one pre-norm transformer layer."""

    ln1_g: Parameter
    ln1_b: Parameter
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    ln2_g: Parameter
    ln2_b: Parameter
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.ln1_g, self.ln1_b, self.wq, self.bq, self.wk, self.bk,
                self.wv, self.bv, self.wo, self.bo, self.ln2_g, self.ln2_b,
                self.w1, self.b1, self.w2, self.b2]


@dataclass
class ImageEncoder:
    config: EncoderConfig
    patch_proj: Parameter
    cls_token: Parameter
    pos_embed: Parameter
    layers: list[LayerParams]
    ln_out_g: Parameter
    ln_out_b: Parameter

    def parameters(self) -> list[Parameter]:
        out = [self.patch_proj, self.cls_token, self.pos_embed]
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend([self.ln_out_g, self.ln_out_b])
        return out


@dataclass
class TextEncoder:
    config: EncoderConfig
    token_embed: Parameter
    pos_embed: Parameter
    layers: list[LayerParams]
    ln_out_g: Parameter
    ln_out_b: Parameter

    def parameters(self) -> list[Parameter]:
        out = [self.token_embed, self.pos_embed]
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend([self.ln_out_g, self.ln_out_b])
        return out


@dataclass
class ImageForwardResult:
    class_out: Tensor
    rep_out: Tensor | None
    trace: list[np.ndarray] | None = None


@dataclass
class TextForwardResult:
    eos_out: Tensor
    eos_index: int
    rep_out: Tensor | None
    trace: list[np.ndarray] | None = None


# -- construction -------------------------------------------------------------


def _init_layer(prefix: str, width: int, rng: np.random.Generator, dtype) -> LayerParams:
    # fan-in scaled init stands in for pre-trained weights; the backbone is
    # frozen, so only the scale of mixing matters, not the values.
    def mat(name, rows, cols):
        return Parameter(f"{prefix}.{name}", (rng.normal(0.0, rows ** -0.5,
                         size=(rows, cols))).astype(dtype), trainable=False)

    def vec(name, size, value=0.0):
        return Parameter(f"{prefix}.{name}", np.full(size, value, dtype=dtype),
                         trainable=False)

    hidden = 4 * width
    return LayerParams(
        ln1_g=vec("ln1.gamma", width, 1.0), ln1_b=vec("ln1.beta", width),
        wq=mat("attn.wq", width, width), bq=vec("attn.bq", width),
        wk=mat("attn.wk", width, width), bk=vec("attn.bk", width),
        wv=mat("attn.wv", width, width), bv=vec("attn.bv", width),
        wo=mat("attn.wo", width, width), bo=vec("attn.bo", width),
        ln2_g=vec("ln2.gamma", width, 1.0), ln2_b=vec("ln2.beta", width),
        w1=mat("mlp.w1", width, hidden), b1=vec("mlp.b1", hidden),
        w2=mat("mlp.w2", hidden, width), b2=vec("mlp.b2", width),
    )


def init_image_encoder(config: EncoderConfig, rng: np.random.Generator,
                       dtype=np.float32) -> ImageEncoder:
    d = config.d_v
    return ImageEncoder(
        config=config,
        patch_proj=Parameter("image.patch_proj", (rng.normal(0.0, d ** -0.5,
                             size=(d, d))).astype(dtype), trainable=False),
        cls_token=Parameter("image.cls_token",
                            rng.normal(0.0, 0.02, size=d).astype(dtype), trainable=False),
        pos_embed=Parameter("image.pos_embed",
                            rng.normal(0.0, 0.01, size=(1 + config.M, d)).astype(dtype),
                            trainable=False),
        layers=[_init_layer(f"image.layers.{i}", d, rng, dtype) for i in range(config.L)],
        ln_out_g=Parameter("image.ln_out.gamma", np.ones(d, dtype=dtype), trainable=False),
        ln_out_b=Parameter("image.ln_out.beta", np.zeros(d, dtype=dtype), trainable=False),
    )


def init_text_encoder(config: EncoderConfig, rng: np.random.Generator,
                      dtype=np.float32) -> TextEncoder:
    d = config.d_t
    return TextEncoder(
        config=config,
        token_embed=Parameter("text.token_embed",
                              rng.normal(0.0, 0.02, size=(config.vocab, d)).astype(dtype),
                              trainable=False),
        pos_embed=Parameter("text.pos_embed",
                            rng.normal(0.0, 0.01, size=(config.N, d)).astype(dtype),
                            trainable=False),
        layers=[_init_layer(f"text.layers.{i}", d, rng, dtype) for i in range(config.L)],
        ln_out_g=Parameter("text.ln_out.gamma", np.ones(d, dtype=dtype), trainable=False),
        ln_out_b=Parameter("text.ln_out.beta", np.zeros(d, dtype=dtype), trainable=False),
    )


# -- forward machinery ---------------------------------------------------------


def prc_mix(fresh: Tensor | AlignedTokens, carried: Tensor, beta: float) -> Tensor:
    """Convex mix of freshly aligned tokens and the previous layer's slot
    output: beta * fresh + (1 - beta) * carried."""
    if isinstance(fresh, AlignedTokens):
        fresh = fresh.tokens
    if fresh.shape != carried.shape:
        raise ShapeError(f"mix shapes differ: {fresh.shape} vs {carried.shape}")
    if not (0.0 <= beta <= 1.0):
        raise ConfigError(f"beta={beta} outside [0, 1]")
    dtype = fresh.dtype
    return nm.add(nm.mul(fresh, nm.constant(beta, dtype)),
                  nm.mul(carried, nm.constant(1.0 - beta, dtype)))


def _layer_forward(lp: LayerParams, x: Tensor, mask: np.ndarray | None,
                   heads: int, live: bool) -> Tensor:
    h = nm.layer_norm(x, lp.ln1_g.as_tensor(live), lp.ln1_b.as_tensor(live))
    q = nm.add(nm.matmul(h, lp.wq.as_tensor(live)), lp.bq.as_tensor(live))
    k = nm.add(nm.matmul(h, lp.wk.as_tensor(live)), lp.bk.as_tensor(live))
    v = nm.add(nm.matmul(h, lp.wv.as_tensor(live)), lp.bv.as_tensor(live))
    attn = nm.masked_self_attention(q, k, v, mask, num_heads=heads)
    x = nm.add(x, nm.add(nm.matmul(attn, lp.wo.as_tensor(live)), lp.bo.as_tensor(live)))
    h = nm.layer_norm(x, lp.ln2_g.as_tensor(live), lp.ln2_b.as_tensor(live))
    h = nm.gelu(nm.add(nm.matmul(h, lp.w1.as_tensor(live)), lp.b1.as_tensor(live)))
    h = nm.add(nm.matmul(h, lp.w2.as_tensor(live)), lp.b2.as_tensor(live))
    return nm.add(x, h)


def _insert_or_mix(x: Tensor, fresh: Tensor, layer: int, J: int, K: int,
                   prefix_len: int, beta: float) -> Tensor:
    """Extend the sequence at layer J; mix into the existing slot afterwards."""
    head = nm.slice_rows(x, 0, prefix_len)
    if layer == J:
        tail = nm.slice_rows(x, prefix_len, x.shape[0])
        slot = fresh
    else:
        carried = nm.slice_rows(x, prefix_len, prefix_len + K)
        tail = nm.slice_rows(x, prefix_len + K, x.shape[0])
        slot = prc_mix(fresh, carried, beta)
    return nm.concat_rows([head, slot, tail])


def _maybe_add_positions(fresh: Tensor, layer: int, cfg: EncoderConfig,
                         pos_embed, live: bool) -> Tensor:
    """Optionally grant the layer-J tokens the positional rows of the slot
    they occupy (indices 1..K). Off by default; positions are otherwise
    consumed at the embedding stage only."""
    if not cfg.insert_pos_embed or layer != cfg.J:
        return fresh
    if 1 + cfg.K > pos_embed.value.shape[0]:
        raise ConfigError(
            f"positional table of {pos_embed.value.shape[0]} rows cannot cover "
            f"{cfg.K} inserted tokens")
    return nm.add(fresh, nm.slice_rows(pos_embed.as_tensor(live), 1, 1 + cfg.K))


def causal_mask(n: int, dtype=np.float32) -> np.ndarray:
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = nm.BLOCKED
    return mask


def build_text_attention_mask(n: int, K: int, insert_pos: int, layer: int,
                              config: EncoderConfig) -> np.ndarray:
    """Additive causal mask for the text branch at one layer.

    Below the insertion layer this is the plain (n, n) causal mask; from
    layer J onward it is the causal mask over the extended length n + K,
    under post-insertion indexing.
    """
    if not (0 < insert_pos <= n):
        raise ConfigError(f"insertion position {insert_pos} outside (0, {n}]")
    if K < 0:
        raise ConfigError(f"K={K} must be nonnegative")
    if layer >= config.J and K > 0:
        return causal_mask(n + K)
    return causal_mask(n)


def encode_image(enc: ImageEncoder, patches: np.ndarray,
                 space: RepresentationSpace | None, stack: AlignerStack | None,
                 live: bool = True, keep_trace: bool = False) -> ImageForwardResult:
    """Run the image stack, inserting aligned tokens from layer J.

    ``patches`` is the (M, d_v) raw patch matrix. The returned class and
    representation outputs are post final-norm.
    """
    cfg = enc.config
    patches = np.asarray(patches)
    if patches.shape != (cfg.M, cfg.d_v):
        raise ShapeError(f"expected patches of shape {(cfg.M, cfg.d_v)}, got {patches.shape}")
    inserting = cfg.inserts and space is not None and stack is not None
    dtype = enc.cls_token.value.dtype
    patch_t = nm.constant(patches.astype(dtype, copy=False), dtype)
    embedded = nm.matmul(patch_t, enc.patch_proj.as_tensor(live))
    cls_row = nm.stack_rows([enc.cls_token.as_tensor(live)])
    x = nm.add(nm.concat_rows([cls_row, embedded]), enc.pos_embed.as_tensor(live))
    trace: list[np.ndarray] | None = [] if keep_trace else None
    beta = cfg.effective_beta
    for layer in range(1, cfg.L + 1):
        if inserting and layer >= cfg.J:
            fresh = align_space_tokens(space, stack, layer - 1, live=live).tokens
            fresh = _maybe_add_positions(fresh, layer, cfg, enc.pos_embed, live)
            x = _insert_or_mix(x, fresh, layer, cfg.J, cfg.K, 1, beta)
        x = _layer_forward(enc.layers[layer - 1], x, None, cfg.heads, live)
        if trace is not None:
            trace.append(x.data.copy())
    x = nm.layer_norm(x, enc.ln_out_g.as_tensor(live), enc.ln_out_b.as_tensor(live))
    class_out = nm.pick_row(x, 0)
    rep_out = nm.slice_rows(x, 1, 1 + cfg.K) if inserting else None
    return ImageForwardResult(class_out, rep_out, trace)


def _validate_text_ids(ids: np.ndarray, cfg: EncoderConfig) -> int:
    if ids.ndim != 1 or ids.size < 2:
        raise InputError(f"token sequence must be 1D with at least BOS and EOS, got shape {ids.shape}")
    if ids[0] != BOS_ID:
        raise InputError(f"sequence must start with BOS (id {BOS_ID}), got {int(ids[0])}")
    eos_positions = np.nonzero(ids == EOS_ID)[0]
    if eos_positions.size != 1:
        raise InputError(f"sequence must contain exactly one EOS (id {EOS_ID}), found {eos_positions.size}")
    if ids.size > cfg.N:
        raise CapacityError(
            f"sequence length {ids.size} exceeds capacity {cfg.N} "
            f"(extended length would be {ids.size + cfg.K} > {cfg.N + cfg.K})")
    if (ids < 0).any() or (ids >= cfg.vocab).any():
        raise InputError("token id outside vocabulary")
    return int(eos_positions[0])


def encode_text(enc: TextEncoder, token_ids, space: RepresentationSpace | None,
                stack: AlignerStack | None, live: bool = True,
                keep_trace: bool = False) -> TextForwardResult:
    """Run the text stack, inserting aligned tokens after BOS from layer J.

    The EOS output is taken at its post-insertion index (shifted by K once
    tokens are inserted) after the final norm.
    """
    cfg = enc.config
    ids = np.asarray(token_ids, dtype=np.int64)
    eos_pos = _validate_text_ids(ids, cfg)
    n = ids.size
    inserting = cfg.inserts and space is not None and stack is not None
    x = nm.add(nm.embedding_lookup(enc.token_embed.as_tensor(live), ids),
               nm.slice_rows(enc.pos_embed.as_tensor(live), 0, n))
    trace: list[np.ndarray] | None = [] if keep_trace else None
    beta = cfg.effective_beta
    for layer in range(1, cfg.L + 1):
        if inserting and layer >= cfg.J:
            fresh = align_space_tokens(space, stack, layer - 1, live=live).tokens
            fresh = _maybe_add_positions(fresh, layer, cfg, enc.pos_embed, live)
            x = _insert_or_mix(x, fresh, layer, cfg.J, cfg.K, 1, beta)
            mask = build_text_attention_mask(n, cfg.K, 1, layer, cfg)
        else:
            mask = build_text_attention_mask(n, 0, 1, layer, cfg)
        x = _layer_forward(enc.layers[layer - 1], x, mask, cfg.heads, live)
        if trace is not None:
            trace.append(x.data.copy())
    x = nm.layer_norm(x, enc.ln_out_g.as_tensor(live), enc.ln_out_b.as_tensor(live))
    eos_index = eos_pos + (cfg.K if inserting else 0)
    eos_out = nm.pick_row(x, eos_index)
    rep_out = nm.slice_rows(x, 1, 1 + cfg.K) if inserting else None
    return TextForwardResult(eos_out, eos_index, rep_out, trace)
