"""Model assembly with the frozen/trainable split, AdamW optimization, and
the gradient checker.

The frozen backbone (both encoder stacks, the class and text projections,
all embeddings) is seeded random — a stand-in for pre-trained weights — and
never receives gradients or updates. The trainable set is exactly the
representation space, the aligner stacks, and the representation projection
residual (or full matrix under the ``full`` variant).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from . import objective as obj
from .encoders import (EncoderConfig, ImageEncoder, TextEncoder, encode_image,
                       encode_text, init_image_encoder, init_text_encoder)
from .errors import ConfigError, GradientCheckError, InputError
from .heads import (ProjectionHeads, init_heads, pool_representation,
                    project_class_feature, project_representation_feature,
                    project_text_feature)
from .numerics import GradientTape, Parameter, Tensor
from .objective import LossBreakdown, LossWeights
from .repspace import (AlignerStack, RepresentationSpace, init_full_stack,
                       init_shared_residual_stack, init_space, stack_parameters)


@dataclass(frozen=True)
class ModelConfig:
    """Structural description of one model; the trainable set depends only
    on this and the variant, never on data."""

    variant: str = "shared"
    L: int = 4
    heads: int = 4
    d_v: int = 32
    d_t: int = 32
    d: int = 16
    d_r: int = 16
    K: int = 3
    J: int = 2
    r1: int = 2
    r2: int = 4
    M: int = 16
    N: int = 16
    vocab: int = 64
    beta: float = 0.9
    insert_image: bool = True   # off under the image-branch ablation
    insert_text: bool = True    # off under the text-branch ablation
    shared_space: bool = True   # off under the separate-spaces ablation
    insert_pos_embed: bool = False

    def __post_init__(self):
        for name in ("L", "heads", "d_v", "d_t", "d", "d_r", "K", "M", "N", "vocab"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.variant == "shared":
            for name in ("r1", "r2"):
                if getattr(self, name) < 1:
                    raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def encoder_config(self, insert: bool) -> EncoderConfig:
        return EncoderConfig(
            L=self.L, heads=self.heads, d_v=self.d_v, d_t=self.d_t, M=self.M,
            N=self.N, vocab=self.vocab, J=self.J if insert else self.L + 1,
            K=self.K, beta=self.beta, variant=self.variant,
            insert_pos_embed=self.insert_pos_embed)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.01
    steps: int = 500
    batch: int = 8
    seed: int = 1
    alpha: float = 0.7
    lam: float = 0.2
    tau: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, lam=self.lam, tau=self.tau)


@dataclass
class ModelState:
    config: ModelConfig
    seed: int
    dtype: np.dtype
    image: ImageEncoder
    text: TextEncoder
    spaces: dict[str, RepresentationSpace]
    aligners: dict[str, AlignerStack]
    heads: ProjectionHeads
    params: dict[str, Parameter]

    def space_for(self, modality: str) -> RepresentationSpace:
        return self.spaces.get(modality) or self.spaces["shared"]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def frozen_parameters(self) -> list[Parameter]:
        return [p for p in self.params.values() if not p.trainable]

    def trainable_names(self) -> list[str]:
        return [p.name for p in self.trainable_parameters()]

    def frozen_fingerprint(self) -> str:
        """SHA-256 over the raw bytes of all frozen parameters, in name order."""
        digest = hashlib.sha256()
        for p in sorted(self.frozen_parameters(), key=lambda p: p.name):
            digest.update(p.name.encode())
            digest.update(np.ascontiguousarray(p.value).tobytes())
        return digest.hexdigest()

    def trainable_count(self) -> int:
        return sum(p.value.size for p in self.trainable_parameters())


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> ModelState:
    """Assemble encoders, spaces, aligners and heads from one seed."""
    rng = np.random.default_rng(seed)
    image = init_image_encoder(config.encoder_config(config.insert_image), rng, dtype)
    text = init_text_encoder(config.encoder_config(config.insert_text), rng, dtype)
    heads = init_heads(config.d_v, config.d_t, config.d, config.variant, config.r2,
                       rng, dtype, with_rep=config.insert_image)

    spaces: dict[str, RepresentationSpace] = {}
    if config.shared_space:
        spaces["shared"] = init_space(config.K, config.d_r, seed=seed + 1,
                                      name="space.tokens", dtype=dtype)
    else:
        spaces["v"] = init_space(config.K, config.d_r, seed=seed + 1,
                                 name="space.tokens.v", dtype=dtype)
        spaces["t"] = init_space(config.K, config.d_r, seed=seed + 2,
                                 name="space.tokens.t", dtype=dtype)

    count = config.L - config.J + 1
    aligners: dict[str, AlignerStack] = {}
    branches = []
    if config.insert_image:
        branches.append(("v", config.d_v))
    if config.insert_text:
        branches.append(("t", config.d_t))
    if count > 0:
        for modality, width in branches:
            if config.variant == "full":
                aligners[modality] = init_full_stack(
                    modality, config.d_r, width, config.J - 1, count, rng, dtype=dtype)
            else:
                aligners[modality] = init_shared_residual_stack(
                    modality, config.d_r, width, config.J - 1, count, config.r1,
                    rng, dtype=dtype)

    params: dict[str, Parameter] = {}

    def register(ps):
        for p in ps:
            if p.name in params:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            params[p.name] = p

    register(image.parameters())
    register(text.parameters())
    register(heads.parameters())
    for space in spaces.values():
        register([space.tokens])
    for stack in aligners.values():
        register(stack_parameters(stack))

    return ModelState(config=config, seed=seed, dtype=np.dtype(dtype), image=image,
                      text=text, spaces=spaces, aligners=aligners, heads=heads,
                      params=params)


def clone_model_as(state: ModelState, dtype) -> ModelState:
    """Rebuild the same model at another dtype, copying current values."""
    clone = build_model(state.config, state.seed, dtype=dtype)
    for name, p in state.params.items():
        clone.params[name].value[...] = p.value.astype(dtype)
    return clone


# -- feature pipeline ----------------------------------------------------------


def image_features(state: ModelState, patches: np.ndarray,
                   live: bool = True) -> tuple[Tensor, Tensor | None]:
    """Class feature and (when the image branch inserts) representation
    feature for one image."""
    stack = state.aligners.get("v")
    space = state.space_for("v") if stack is not None else None
    result = encode_image(state.image, patches, space, stack, live=live)
    f_c = project_class_feature(state.heads, result.class_out, live=live)
    f_r = None
    if result.rep_out is not None:
        pooled = pool_representation(result.rep_out)
        f_r = project_representation_feature(state.heads, pooled, live=live)
    return f_c, f_r


def text_classifier_features(state: ModelState, prompts: list[np.ndarray],
                             live: bool = True) -> Tensor:
    """Adapted text features for every class prompt, stacked to (C, d)."""
    stack = state.aligners.get("t")
    space = state.space_for("t") if stack is not None else None
    rows = []
    for ids in prompts:
        result = encode_text(state.text, ids, space, stack, live=live)
        rows.append(project_text_feature(state.heads, result.eos_out, live=live))
    return nm.stack_rows(rows)


def reference_image_feature(state: ModelState, patches: np.ndarray) -> np.ndarray:
    """Frozen zero-shot image feature (insertion disabled, frozen head)."""
    result = encode_image(state.image, patches, None, None, live=False)
    return project_class_feature(state.heads, result.class_out, live=False).data


def reference_text_features(state: ModelState, prompts: list[np.ndarray]) -> np.ndarray:
    """Frozen zero-shot text features for a prompt set; cache per class set."""
    rows = []
    for ids in prompts:
        result = encode_text(state.text, ids, None, None, live=False)
        rows.append(project_text_feature(state.heads, result.eos_out, live=False).data)
    return np.stack(rows, axis=0)


def batch_loss(state: ModelState, images: np.ndarray, labels: np.ndarray,
               prompts: list[np.ndarray], weights: LossWeights,
               frozen_text: np.ndarray, live: bool = True) -> tuple[Tensor, LossBreakdown]:
    """Average composite loss over one batch, inside the active tape."""
    if len(images) == 0:
        raise InputError("empty batch")
    if len(images) != len(labels):
        raise InputError(f"batch size mismatch: {len(images)} images, {len(labels)} labels")
    C = len(prompts)
    if any(not (0 <= int(y) < C) for y in labels):
        raise InputError(f"label outside the {C}-class prompt set")
    ws = text_classifier_features(state, prompts, live=live)
    ce_c_terms, ce_r_terms, cos_v_terms = [], [], []
    for patches, label in zip(images, labels):
        f_c, f_r = image_features(state, patches, live=live)
        f0 = reference_image_feature(state, patches)
        p_c = obj.class_probabilities(f_c, ws, weights.tau)
        ce_c_terms.append(obj.cross_entropy_loss(p_c, int(label)))
        if f_r is not None:
            p_r = obj.class_probabilities(f_r, ws, weights.tau)
            ce_r_terms.append(obj.cross_entropy_loss(p_r, int(label)))
        cos_v_terms.append(obj.cosine_distance(f_c, f0))
    ce_c = _average(ce_c_terms)
    ce_r = _average(ce_r_terms) if ce_r_terms else nm.constant(0.0, state.dtype)
    cos_v = _average(cos_v_terms)
    cos_t = obj.text_consistency(ws, frozen_text)
    total, breakdown = obj.total_loss(ce_c, ce_r, cos_v, cos_t, weights)
    _check_finite(breakdown)
    return total, breakdown


def _average(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = nm.add(acc, t)
    return nm.mul(acc, nm.constant(1.0 / len(terms), acc.dtype))


def _check_finite(breakdown: LossBreakdown) -> None:
    for name in ("ce_c", "ce_r", "cos_v", "cos_t", "total"):
        if not math.isfinite(getattr(breakdown, name)):
            raise FloatingPointError(f"non-finite loss term {name!r}: {getattr(breakdown, name)}")


# -- optimization ---------------------------------------------------------------


@dataclass
class OptimizerState:
    config: TrainConfig
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(state: ModelState, config: TrainConfig) -> OptimizerState:
    opt = OptimizerState(config=config)
    for p in state.trainable_parameters():
        opt.m[p.name] = np.zeros_like(p.value)
        opt.v[p.name] = np.zeros_like(p.value)
    return opt


def apply_gradients(state: ModelState, opt: OptimizerState,
                    grads: dict[str, np.ndarray]) -> None:
    """One decoupled-weight-decay Adam step over the trainable set.

    Decay applies only to parameters flagged for it (aligner and residual
    matrices; never the space tokens, never biases).
    """
    cfg = opt.config
    opt.step += 1
    t = opt.step
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    for p in state.trainable_parameters():
        g = grads.get(p.name)
        if g is None:
            continue
        g = g.astype(p.value.dtype, copy=False)
        if cfg.weight_decay and p.decay:
            p.value[...] = p.value * (1.0 - cfg.lr * cfg.weight_decay)
        m = opt.m[p.name]
        v = opt.v[p.name]
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        p.value[...] = p.value - cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)


def train_step(state: ModelState, opt: OptimizerState, images: np.ndarray,
               labels: np.ndarray, prompts: list[np.ndarray],
               frozen_text: np.ndarray, weights: LossWeights | None = None) -> LossBreakdown:
    """Forward, backward and one optimizer step; frozen parameters untouched."""
    if weights is None:
        weights = opt.config.loss_weights()
    with GradientTape() as tape:
        total, breakdown = batch_loss(state, images, labels, prompts, weights, frozen_text)
        total.backward()
        grads = tape.gradients()
    apply_gradients(state, opt, grads)
    return breakdown


def collect_gradients(state: ModelState, loss_builder) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``loss_builder()`` for every trainable
    parameter; separated out so tests can instrument it."""
    with GradientTape() as tape:
        total = loss_builder()
        total.backward()
        return tape.gradients()


# -- gradient verification -------------------------------------------------------


@dataclass
class GradientCheckReport:
    tolerance: float
    per_parameter: dict[str, float]
    worst_parameter: str
    worst_error: float

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance


_REL_FLOOR = 1e-5


def gradient_check(state: ModelState, images: np.ndarray, labels: np.ndarray,
                   prompts: list[np.ndarray], weights: LossWeights,
                   eps: tuple[float, ...] = (1e-5, 1e-6),
                   tolerance: float = 1e-4) -> GradientCheckReport:
    """Compare reverse-mode gradients of the composite loss against central
    finite differences, parameter by parameter.

    The model is cloned to float64 so the oracle resolves 1e-4 relative
    agreement; both sides differentiate the identical code path. The sharp
    similarity temperature gives the loss large third derivatives along some
    coordinates, so each entry keeps its best estimate across the probe
    steps (truncation shrinks with eps, rounding grows; a genuine gradient
    bug is stable across both). Relative error per scalar is
    |a - b| / max(|a|, |b|, 1e-5), reported as the max per parameter; the
    worst offender above tolerance raises :class:`GradientCheckError`.
    """
    work = clone_model_as(state, np.float64)
    if work.trainable_count() > 5000:
        raise ConfigError(
            f"gradient check needs a small config (<= 5000 trainable scalars), "
            f"got {work.trainable_count()}")
    images64 = np.asarray(images, dtype=np.float64)
    frozen_text = reference_text_features(work, prompts)

    def loss_builder() -> Tensor:
        total, _ = batch_loss(work, images64, labels, prompts, weights, frozen_text)
        return total

    reverse = collect_gradients(work, loss_builder)

    def loss_value() -> float:
        return loss_builder().item()

    trainables = work.trainable_parameters()
    fd_runs = [nm.finite_difference_gradients(loss_value, trainables, eps=e) for e in eps]
    per_param: dict[str, float] = {}
    worst_param, worst_error = "", 0.0
    for p in trainables:
        a = reverse[p.name].astype(np.float64)
        errors = None
        for fd in fd_runs:
            b = fd[p.name]
            rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), _REL_FLOOR)
            errors = rel if errors is None else np.minimum(errors, rel)
        err = float(errors.max())
        per_param[p.name] = err
        if err > worst_error:
            worst_param, worst_error = p.name, err
    report = GradientCheckReport(tolerance, per_param, worst_param, worst_error)
    if not report.passed:
        raise GradientCheckError(
            f"gradient mismatch on {worst_param!r}: max relative error "
            f"{worst_error:.3e} > {tolerance:.1e}")
    return report
