"""The range-Doppler sequence classifier.

Per frame: two shared-weight 3x3 convolutions, each followed by ReLU and 2x2
max pooling, then a dense projection of the flattened feature maps into an
embedding with fixed sinusoidal positional encoding.  The token sequence runs
through pre-norm encoder blocks in which a width-3 convolution along the
token axis replaces the usual dense feed-forward:

    x = x + MHA(LN(x))
    x = x + ReLU(TokenConv(LN(x)))

Global average pooling over tokens feeds a single sigmoid output unit.

Inputs are scaled by 1 / (range_bins * doppler_bins) on entry so raw
range-Doppler magnitudes (whose peaks grow with the FFT sizes) land in a
range where the fixed learning-rate recipe is stable.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import layers

POOL_STAGES = 2  # two fixed 2x2 max-pool stages after the convolutions


class NumericsError(ArithmeticError):
    """Raised when a forward pass produces a non-finite intermediate."""


@dataclass(frozen=True)
class TransDopeConfig:
    """Architecture hyperparameters; every tensor shape derives from these."""

    seq_len: int = 8
    range_bins: int = 64
    doppler_bins: int = 16
    channels: int = 3
    conv_filters: int = 32
    conv_kernel: int = 3
    embed_dim: int = 128
    heads: int = 2
    encoder_layers: int = 3
    ffn_conv_kernel: int = 3

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}")
        if min(self.channels, self.conv_filters, self.encoder_layers + 1, self.heads) < 1:
            raise ValueError("channels, conv_filters, and heads must be >= 1")
        divisor = 2 ** POOL_STAGES
        if self.range_bins % divisor or self.doppler_bins % divisor:
            raise ValueError(
                f"range_bins and doppler_bins must be divisible by {divisor} "
                f"for {POOL_STAGES} pooling stages, got "
                f"{self.range_bins} x {self.doppler_bins}"
            )
        if self.embed_dim % self.heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even for sinusoidal encoding pairs")
        if self.conv_kernel % 2 == 0 or self.ffn_conv_kernel % 2 == 0:
            raise ValueError("convolution kernels must be odd for same padding")

    @property
    def pooled_shape(self) -> tuple[int, int, int]:
        divisor = 2 ** POOL_STAGES
        return (self.range_bins // divisor, self.doppler_bins // divisor, self.conv_filters)

    @property
    def feature_count(self) -> int:
        h, w, f = self.pooled_shape
        return h * w * f

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.range_bins, self.doppler_bins, self.channels)

    @property
    def input_scale(self) -> float:
        return 1.0 / (self.range_bins * self.doppler_bins)


def param_spec(config: TransDopeConfig) -> list[tuple[str, tuple[int, ...], int | None]]:
    """Trainable tensors in declaration order: (name, shape, fan_in).

    ``fan_in`` is None for tensors initialized to constants (biases, norms).
    The positional table is a fixed function of the config, not a parameter.
    """
    k, c, f = config.conv_kernel, config.channels, config.conv_filters
    d, feat, kf = config.embed_dim, config.feature_count, config.ffn_conv_kernel
    spec: list[tuple[str, tuple[int, ...], int | None]] = [
        ("conv1_w", (k, k, c, f), k * k * c),
        ("conv1_b", (f,), None),
        ("conv2_w", (k, k, f, f), k * k * f),
        ("conv2_b", (f,), None),
        ("embed_w", (feat, d), feat),
        ("embed_b", (d,), None),
    ]
    for i in range(config.encoder_layers):
        prefix = f"l{i}_"
        for proj in ("q", "k", "v", "out"):
            spec.append((f"{prefix}{proj}_w", (d, d), d))
            spec.append((f"{prefix}{proj}_b", (d,), None))
        spec.append((f"{prefix}ffn_w", (kf, d, d), kf * d))
        spec.append((f"{prefix}ffn_b", (d,), None))
        spec.append((f"{prefix}ln1_g", (d,), None))
        spec.append((f"{prefix}ln1_b", (d,), None))
        spec.append((f"{prefix}ln2_g", (d,), None))
        spec.append((f"{prefix}ln2_b", (d,), None))
    spec.append(("head_w", (d, 1), d))
    spec.append(("head_b", (1,), None))
    return spec


def positional_table(seq_len: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal encoding: sin on even columns, cos on odd columns."""
    positions = np.arange(seq_len, dtype=np.float64)[:, None]
    denom = np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((seq_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions / denom)
    table[:, 1::2] = np.cos(positions / denom)
    table.flags.writeable = False
    return table


@dataclass
class TransDopeModel:
    """Trainable tensors plus the architecture they belong to.

    Weights are mutated in place by the trainer; inference never mutates.
    """

    config: TransDopeConfig
    params: dict[str, np.ndarray]
    pos_table: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.pos_table is None:
            self.pos_table = positional_table(self.config.seq_len, self.config.embed_dim)

    @classmethod
    def initialize(cls, config: TransDopeConfig, seed: int = 0) -> "TransDopeModel":
        """He-style fan-in uniform init for weights, constants elsewhere (PCG64)."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        params: dict[str, np.ndarray] = {}
        for name, shape, fan_in in param_spec(config):
            if fan_in is not None:
                bound = np.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith("_g"):
                params[name] = np.ones(shape)
            else:
                params[name] = np.zeros(shape)
        return cls(config=config, params=params)


def param_count(model: TransDopeModel) -> int:
    """Number of trainable scalars (the fixed positional table is excluded)."""
    return sum(int(p.size) for p in model.params.values())


def _check_frames(x: np.ndarray, config: TransDopeConfig, expect_seq: bool):
    if expect_seq:
        want = (config.seq_len, *config.frame_shape)
        if x.shape[-4:] != want or x.ndim not in (4, 5):
            raise ValueError(f"expected sequence shaped (..., {want}), got {x.shape}")
    else:
        if x.shape[-3:] != config.frame_shape:
            raise ValueError(
                f"expected frames shaped (..., {config.frame_shape}), got {x.shape}"
            )


def _conv_stack_forward(frames: np.ndarray, p: dict, with_cache: bool):
    """frames: (M, N, P, C) already input-scaled -> (M, N/4, P/4, F)."""
    c1, cc1 = layers.conv2d_forward(frames, p["conv1_w"], p["conv1_b"])
    r1, m1 = layers.relu_forward(c1)
    p1, cp1 = layers.maxpool2_forward(r1)
    c2, cc2 = layers.conv2d_forward(p1, p["conv2_w"], p["conv2_b"])
    r2, m2 = layers.relu_forward(c2)
    p2, cp2 = layers.maxpool2_forward(r2)
    cache = (cc1, m1, cp1, cc2, m2, cp2) if with_cache else None
    return p2, cache


def _conv_stack_backward(dout: np.ndarray, cache, grads: dict):
    cc1, m1, cp1, cc2, m2, cp2 = cache
    d = layers.maxpool2_backward(dout, cp2)
    d = layers.relu_backward(d, m2)
    d, grads["conv2_w"], grads["conv2_b"] = layers.conv2d_backward(d, cc2)
    d = layers.maxpool2_backward(d, cp1)
    d = layers.relu_backward(d, m1)
    d, grads["conv1_w"], grads["conv1_b"] = layers.conv2d_backward(d, cc1)
    return d


def _encoder_forward(tokens: np.ndarray, p: dict, prefix: str, heads: int, with_cache: bool):
    h1, cl1 = layers.layer_norm_forward(tokens, p[prefix + "ln1_g"], p[prefix + "ln1_b"])
    attn_out, ca = layers.attention_forward(h1, p, prefix, heads)
    x = tokens + attn_out
    h2, cl2 = layers.layer_norm_forward(x, p[prefix + "ln2_g"], p[prefix + "ln2_b"])
    conv_out, cf = layers.token_conv_forward(h2, p[prefix + "ffn_w"], p[prefix + "ffn_b"])
    act, mf = layers.relu_forward(conv_out)
    y = x + act
    cache = (cl1, ca, cl2, cf, mf, prefix) if with_cache else None
    return y, cache


def _encoder_backward(dy: np.ndarray, cache, p: dict, grads: dict):
    cl1, ca, cl2, cf, mf, prefix = cache
    d_act = layers.relu_backward(dy, mf)
    dh2, grads[prefix + "ffn_w"], grads[prefix + "ffn_b"] = layers.token_conv_backward(
        d_act, cf
    )
    dx, grads[prefix + "ln2_g"], grads[prefix + "ln2_b"] = layers.layer_norm_backward(
        dh2, cl2
    )
    dx = dx + dy  # residual
    dh1, attn_grads = layers.attention_backward(dx, ca, p)
    grads.update(attn_grads)
    dtokens, grads[prefix + "ln1_g"], grads[prefix + "ln1_b"] = layers.layer_norm_backward(
        dh1, cl1
    )
    return dtokens + dx  # residual


def _forward_batch(x: np.ndarray, model: TransDopeModel, with_cache: bool):
    """x: (B, T, N, P, C) raw magnitudes -> (logits (B,), caches)."""
    cfg = model.config
    p = model.params
    b, t = x.shape[:2]
    scaled = np.asarray(x, dtype=np.float64) * cfg.input_scale
    frames = scaled.reshape(b * t, *cfg.frame_shape)
    feats, conv_cache = _conv_stack_forward(frames, p, with_cache)
    flat = feats.reshape(b * t, cfg.feature_count)
    emb, _ = layers.linear_forward(flat, p["embed_w"], p["embed_b"])
    tokens = emb.reshape(b, t, cfg.embed_dim) + model.pos_table
    enc_caches = []
    for i in range(cfg.encoder_layers):
        tokens, cache = _encoder_forward(tokens, p, f"l{i}_", cfg.heads, with_cache)
        enc_caches.append(cache)
    pooled = tokens.mean(axis=1)
    logits, _ = layers.linear_forward(pooled, p["head_w"], p["head_b"])
    logits = logits[:, 0]
    if not np.all(np.isfinite(logits)):
        raise NumericsError("forward pass produced a non-finite logit")
    caches = (flat, tokens, pooled, conv_cache, enc_caches, (b, t)) if with_cache else None
    return logits, caches


def _backward_batch(dlogits: np.ndarray, caches, model: TransDopeModel) -> dict:
    cfg = model.config
    p = model.params
    flat, tokens_final, pooled, conv_cache, enc_caches, (b, t) = caches
    grads: dict[str, np.ndarray] = {}

    dpooled, grads["head_w"], grads["head_b"] = layers.linear_backward(
        dlogits[:, None], (pooled, p["head_w"])
    )
    dtokens = np.repeat(dpooled[:, None, :], t, axis=1) / t
    for i in reversed(range(cfg.encoder_layers)):
        dtokens = _encoder_backward(dtokens, enc_caches[i], p, grads)
    demb = dtokens.reshape(b * t, cfg.embed_dim)
    dflat, grads["embed_w"], grads["embed_b"] = layers.linear_backward(
        demb, (flat, p["embed_w"])
    )
    dfeats = dflat.reshape(b * t, *cfg.pooled_shape)
    dframes = _conv_stack_backward(dfeats, conv_cache, grads)
    # input scaling and reshape need no parameter gradients beyond this point
    return grads


# ---------------------------------------------------------------------------
# Public inference operations


def _as_values(seq) -> np.ndarray:
    """Accept an ARDSequence/ARDFrame or a plain array of magnitudes."""
    return np.asarray(getattr(seq, "values", seq))


def time_conv_forward(seq, model: TransDopeModel) -> np.ndarray:
    """Shared-weight conv/pool stack applied to each frame of one sequence.

    seq_values: (T, N, P, C) -> (T, N/4, P/4, conv_filters).
    """
    cfg = model.config
    seq_values = _as_values(seq)
    _check_frames(seq_values, cfg, expect_seq=False)
    if seq_values.ndim != 4 or seq_values.shape[0] != cfg.seq_len:
        raise ValueError(
            f"expected exactly {cfg.seq_len} frames, got shape {seq_values.shape}"
        )
    frames = np.asarray(seq_values, dtype=np.float64) * cfg.input_scale
    feats, _ = _conv_stack_forward(frames, model.params, with_cache=False)
    return feats


def embed_tokens(features: np.ndarray, model: TransDopeModel) -> np.ndarray:
    """Flatten per-frame features, project to the embedding, add positions.

    features: (T, N/4, P/4, F) or (T, feature_count) -> (T, embed_dim).
    """
    cfg = model.config
    t = features.shape[0]
    flat = features.reshape(t, -1)
    if t != cfg.seq_len or flat.shape[1] != cfg.feature_count:
        raise ValueError(
            f"expected ({cfg.seq_len}, {cfg.feature_count}) features, got {features.shape}"
        )
    emb, _ = layers.linear_forward(flat, model.params["embed_w"], model.params["embed_b"])
    return emb + model.pos_table


def encoder_layer_forward(
    tokens: np.ndarray, model: TransDopeModel, layer: int
) -> np.ndarray:
    """One pre-norm encoder block; tokens: (T, D) or (B, T, D)."""
    cfg = model.config
    if not 0 <= layer < cfg.encoder_layers:
        raise ValueError(f"layer {layer} out of range [0, {cfg.encoder_layers})")
    squeeze = tokens.ndim == 2
    x = tokens[None] if squeeze else tokens
    y, _ = _encoder_forward(x, model.params, f"l{layer}_", cfg.heads, with_cache=False)
    return y[0] if squeeze else y


def forward_batch(x: np.ndarray, model: TransDopeModel) -> np.ndarray:
    """Probabilities for a batch of sequences; x: (B, T, N, P, C) -> (B,)."""
    _check_frames(x, model.config, expect_seq=True)
    if x.ndim != 5:
        raise ValueError(f"expected a batch of sequences, got shape {x.shape}")
    logits, _ = _forward_batch(x, model, with_cache=False)
    return layers.sigmoid(logits)


def forward(seq, model: TransDopeModel) -> float:
    """Probability of the metal-present class for one (T, N, P, C) sequence."""
    seq_values = _as_values(seq)
    _check_frames(seq_values, model.config, expect_seq=True)
    if seq_values.ndim != 4:
        raise ValueError(f"expected a single sequence, got shape {seq_values.shape}")
    return float(forward_batch(seq_values[None], model)[0])


# ---------------------------------------------------------------------------
# Streaming inference over a sliding window


def embed_frame(model: TransDopeModel, frame) -> np.ndarray:
    """Position-independent token for one frame: conv stack + embedding."""
    cfg = model.config
    frame_values = _as_values(frame)
    _check_frames(frame_values, cfg, expect_seq=False)
    frames = np.asarray(frame_values, dtype=np.float64)[None] * cfg.input_scale
    feats, _ = _conv_stack_forward(frames, model.params, with_cache=False)
    emb, _ = layers.linear_forward(
        feats.reshape(1, cfg.feature_count), model.params["embed_w"], model.params["embed_b"]
    )
    return emb[0]


def classify_tokens(model: TransDopeModel, tokens: np.ndarray) -> float:
    """Probability from (T, embed_dim) position-independent tokens."""
    cfg = model.config
    x = (tokens + model.pos_table)[None]
    for i in range(cfg.encoder_layers):
        x, _ = _encoder_forward(x, model.params, f"l{i}_", cfg.heads, with_cache=False)
    pooled = x.mean(axis=1)
    logits, _ = layers.linear_forward(pooled, model.params["head_w"], model.params["head_b"])
    logit = logits[0, 0]
    if not np.isfinite(logit):
        raise NumericsError("forward pass produced a non-finite logit")
    return float(layers.sigmoid(np.array([logit]))[0])


class SlidingClassifier:
    """Keeps the most recent ``seq_len`` frames and classifies the window.

    Per-frame convolution features are computed once when a frame arrives;
    positional encoding is re-applied per window, so results match
    :func:`forward` on the stacked window exactly.
    """

    def __init__(self, model: TransDopeModel):
        self.model = model
        self._tokens: deque[np.ndarray] = deque(maxlen=model.config.seq_len)

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def ready(self) -> bool:
        return len(self._tokens) == self.model.config.seq_len

    def reset(self):
        self._tokens.clear()

    def push(self, frame_values: np.ndarray) -> float | None:
        """Add a frame; returns the window probability once full, else None."""
        self._tokens.append(embed_frame(self.model, frame_values))
        if not self.ready:
            return None
        return classify_tokens(self.model, np.stack(tuple(self._tokens)))
