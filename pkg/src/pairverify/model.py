"""Dual-stream verification model.

Each item is encoded twice: a commodity stream produces the similarity
embedding and, for the ``sat`` variant, a threshold stream produces a second
embedding whose pairwise inner product acts as a per-pair decision threshold.
The pair score is ``similarity - threshold`` and a pair is predicted
identical exactly when the score is positive.

Variants:
  * ``baseline`` - commodity stream only, threshold frozen at a constant.
  * ``lt``       - commodity stream plus one learnable scalar threshold.
  * ``sat``      - full dual stream; threshold adapts per pair.

Per-modality encoders are small linear-tanh-linear stacks over bag-of-token
counts (text) and dense feature vectors (image); a linear fusion layer maps
the concatenated modality embeddings into the output space. All gradients
are computed analytically and checked against finite differences in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .numerics import LinearLayer, RngState, linear_backward, linear_forward

VARIANTS = ("baseline", "lt", "sat")
MODALITIES = ("text", "image", "both")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "sat"
    modality: str = "both"
    commodity_dim: int = 32
    threshold_dim: int = 32
    text_vocab: int = 128
    image_dim: int = 40
    hidden_dim: int = 48
    fixed_threshold: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.modality not in MODALITIES:
            raise UsageError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        for name in ("commodity_dim", "threshold_dim", "text_vocab", "image_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")

    @property
    def uses_text(self) -> bool:
        return self.modality in ("text", "both")

    @property
    def uses_image(self) -> bool:
        return self.modality in ("image", "both")

    @property
    def fusion_in_dim(self) -> int:
        return self.hidden_dim * (int(self.uses_text) + int(self.uses_image))


@dataclass
class StreamParams:
    """One encoding stream: optional per-modality stacks plus a fusion layer."""

    text_encoder: Optional[list]  # [LinearLayer vocab->hidden, LinearLayer hidden->hidden]
    image_encoder: Optional[list]
    fusion: LinearLayer


@dataclass
class ModelParams:
    config: ModelConfig
    commodity_stream: StreamParams
    threshold_stream: Optional[StreamParams]
    scalar_threshold: np.ndarray  # shape (), frozen for baseline, unused for sat


@dataclass
class EmbeddingPair:
    """Embeddings of one item: ``commodity`` for similarity, ``threshold``
    for the adaptive threshold (zero-length for baseline/lt)."""

    commodity: np.ndarray
    threshold: np.ndarray


@dataclass(frozen=True)
class ScoreParts:
    similarity: float
    threshold: float
    score: float


def _init_layer(out_dim: int, in_dim: int, rng: RngState) -> LinearLayer:
    bound = math.sqrt(6.0 / (in_dim + out_dim))
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearLayer(weight=weight, bias=np.zeros(out_dim))


def _init_stream(config: ModelConfig, out_dim: int, rng: RngState) -> StreamParams:
    text = None
    image = None
    if config.uses_text:
        text = [
            _init_layer(config.hidden_dim, config.text_vocab, rng),
            _init_layer(config.hidden_dim, config.hidden_dim, rng),
        ]
    if config.uses_image:
        image = [
            _init_layer(config.hidden_dim, config.image_dim, rng),
            _init_layer(config.hidden_dim, config.hidden_dim, rng),
        ]
    fusion = _init_layer(out_dim, config.fusion_in_dim, rng)
    return StreamParams(text_encoder=text, image_encoder=image, fusion=fusion)


def init_model(config: ModelConfig, rng: RngState) -> ModelParams:
    """Glorot-uniform weights, zero biases, scalar threshold at its resting value.

    The two streams of ``sat`` get independent draws (weights are not shared).
    """
    commodity = _init_stream(config, config.commodity_dim, rng)
    threshold = None
    if config.variant == "sat":
        threshold = _init_stream(config, config.threshold_dim, rng)
    scalar = config.fixed_threshold if config.variant == "baseline" else 0.0
    return ModelParams(
        config=config,
        commodity_stream=commodity,
        threshold_stream=threshold,
        scalar_threshold=np.array(scalar, dtype=np.float64),
    )


def _stream_items(params: ModelParams):
    yield "commodity", params.commodity_stream
    if params.threshold_stream is not None:
        yield "threshold", params.threshold_stream


def all_blocks(params: ModelParams) -> dict:
    """Named views of every stored parameter array, in a fixed order.

    The scalar threshold appears only for baseline and lt; sat has no scalar.
    """
    blocks: dict = {}
    for stream_name, stream in _stream_items(params):
        for enc_name, layers in (("text", stream.text_encoder), ("image", stream.image_encoder)):
            if layers is None:
                continue
            for i, layer in enumerate(layers):
                blocks[f"{stream_name}.{enc_name}.{i}.weight"] = layer.weight
                blocks[f"{stream_name}.{enc_name}.{i}.bias"] = layer.bias
        blocks[f"{stream_name}.fusion.weight"] = stream.fusion.weight
        blocks[f"{stream_name}.fusion.bias"] = stream.fusion.bias
    if params.config.variant in ("baseline", "lt"):
        blocks["scalar_threshold"] = params.scalar_threshold
    return blocks


def trainable_blocks(params: ModelParams) -> dict:
    """Like ``all_blocks`` but without frozen parameters (baseline's scalar)."""
    blocks = all_blocks(params)
    if params.config.variant == "baseline":
        blocks.pop("scalar_threshold")
    return blocks


def _check_features(config: ModelConfig, text_tokens, image_feat):
    if config.uses_text:
        if text_tokens is None or np.shape(text_tokens)[-1] != config.text_vocab:
            raise ShapeError(
                f"text features must have length {config.text_vocab}, "
                f"got {None if text_tokens is None else np.shape(text_tokens)}"
            )
    if config.uses_image:
        if image_feat is None or np.shape(image_feat)[-1] != config.image_dim:
            raise ShapeError(
                f"image features must have length {config.image_dim}, "
                f"got {None if image_feat is None else np.shape(image_feat)}"
            )


def _stream_forward(stream: StreamParams, text, image):
    """Forward one stream; inputs may be vectors or row-batches."""
    parts = []
    caches = []
    if stream.text_encoder is not None:
        h, c0 = linear_forward(stream.text_encoder[0], text, "tanh")
        e, c1 = linear_forward(stream.text_encoder[1], h, "identity")
        parts.append(e)
        caches.append((c0, c1))
    if stream.image_encoder is not None:
        h, c0 = linear_forward(stream.image_encoder[0], image, "tanh")
        e, c1 = linear_forward(stream.image_encoder[1], h, "identity")
        parts.append(e)
        caches.append((c0, c1))
    joined = np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0]
    out, fusion_cache = linear_forward(stream.fusion, joined, "identity")
    return out, (caches, fusion_cache, [p.shape[-1] for p in parts])


def _stream_backward(stream: StreamParams, cache, grad_out, grads: dict, prefix: str):
    enc_caches, fusion_cache, widths = cache
    g_w, g_b, d_joined = linear_backward(fusion_cache, grad_out)
    grads[f"{prefix}.fusion.weight"] = g_w
    grads[f"{prefix}.fusion.bias"] = g_b
    splits = np.split(d_joined, np.cumsum(widths)[:-1], axis=-1)
    names = [n for n, enc in (("text", stream.text_encoder), ("image", stream.image_encoder)) if enc is not None]
    for name, (c0, c1), d_part in zip(names, enc_caches, splits):
        g_w1, g_b1, d_h = linear_backward(c1, d_part)
        g_w0, g_b0, _ = linear_backward(c0, d_h)
        grads[f"{prefix}.{name}.1.weight"] = g_w1
        grads[f"{prefix}.{name}.1.bias"] = g_b1
        grads[f"{prefix}.{name}.0.weight"] = g_w0
        grads[f"{prefix}.{name}.0.bias"] = g_b0


def encode(params: ModelParams, commodity) -> EmbeddingPair:
    """Embed one item through both streams.

    ``commodity`` needs ``text_tokens`` and ``image_feat`` attributes; only
    the modalities selected by the config are read.
    """
    config = params.config
    text = np.asarray(commodity.text_tokens, dtype=np.float64) if config.uses_text else None
    image = np.asarray(commodity.image_feat, dtype=np.float64) if config.uses_image else None
    _check_features(config, text, image)
    p, _ = _stream_forward(params.commodity_stream, text, image)
    if params.threshold_stream is not None:
        q, _ = _stream_forward(params.threshold_stream, text, image)
    else:
        q = np.zeros(0)
    return EmbeddingPair(commodity=p, threshold=q)


def encode_batch(params: ModelParams, commodities: Sequence) -> tuple:
    """Embed many items in two stacked passes.

    Returns ``(P, Q)`` with one row per commodity; ``Q`` has zero columns
    for baseline/lt. Row order follows the input order.
    """
    config = params.config
    n = len(commodities)
    text = image = None
    if config.uses_text:
        text = np.empty((n, config.text_vocab))
        for i, c in enumerate(commodities):
            text[i] = np.asarray(c.text_tokens, dtype=np.float64)
    if config.uses_image:
        image = np.empty((n, config.image_dim))
        for i, c in enumerate(commodities):
            image[i] = np.asarray(c.image_feat, dtype=np.float64)
    if n == 0:
        p = np.zeros((0, config.commodity_dim))
        q_dim = config.threshold_dim if config.variant == "sat" else 0
        return p, np.zeros((0, q_dim))
    _check_features(config, text, image)
    p, _ = _stream_forward(params.commodity_stream, text, image)
    if params.threshold_stream is not None:
        q, _ = _stream_forward(params.threshold_stream, text, image)
    else:
        q = np.zeros((n, 0))
    return p, q


def concat_embedding(e: EmbeddingPair) -> np.ndarray:
    """Complete stored representation: commodity and threshold embeddings
    concatenated."""
    return np.concatenate([e.commodity, e.threshold])


def score_pair(e1: EmbeddingPair, e2: EmbeddingPair, params: ModelParams) -> ScoreParts:
    """Similarity is the commodity inner product; the threshold is the
    threshold inner product (sat) or the scalar (lt/baseline)."""
    if e1.commodity.shape != e2.commodity.shape:
        raise ShapeError(
            f"commodity embedding dims disagree: {e1.commodity.shape} vs {e2.commodity.shape}"
        )
    if e1.threshold.shape != e2.threshold.shape:
        raise ShapeError(
            f"threshold embedding dims disagree: {e1.threshold.shape} vs {e2.threshold.shape}"
        )
    s = float(e1.commodity @ e2.commodity)
    if params.config.variant == "sat":
        t = float(e1.threshold @ e2.threshold)
    else:
        t = float(params.scalar_threshold)
    return ScoreParts(similarity=s, threshold=t, score=s - t)


def predict(parts: ScoreParts) -> str:
    """``"identical"`` iff the score is strictly positive, else ``"different"``."""
    return "identical" if parts.score > 0.0 else "different"


def softplus(x):
    """log(1 + exp(x)) without overflow, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    """Logistic function, stable on both tails."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_label(y):
    if y not in (0, 1):
        raise UsageError(f"label must be 0 or 1, got {y!r}")


def pair_loss(parts: ScoreParts, y: int) -> float:
    """Two-way cross entropy over (similarity, threshold).

    Equivalent to ``-log(softmax([s, t])[y])`` but computed in the stable
    logistic form: ``softplus(-(s - t))`` for an identical pair and
    ``softplus(s - t)`` for a different one.
    """
    _check_label(y)
    d = parts.score
    return float(softplus(-d) if y == 1 else softplus(d))


def loss_grad(parts: ScoreParts, y: int):
    """``(dL/ds, dL/dt)``; the two are exact negatives of each other."""
    _check_label(y)
    g = float(sigmoid(np.asarray(parts.score))) - y
    return g, -g


def batch_forward_backward(params: ModelParams, batch: Sequence) -> tuple:
    """Mean pair loss and its exact gradient for a batch of
    ``(commodity_a, commodity_b, y)`` triples.

    Both items of every pair run through each stream in one stacked pass;
    gradients reduce in fixed order, so results are reproducible. Returns
    ``(mean_loss, grads)`` where ``grads`` has one entry per trainable block
    (plus an exact-zero ``scalar_threshold`` entry for baseline).
    """
    if len(batch) == 0:
        raise UsageError("batch must be non-empty")
    config = params.config
    n = len(batch)
    ys = np.empty(n)
    for _, _, y in batch:
        _check_label(y)
    ys[:] = [y for _, _, y in batch]

    def stack(attr, width):
        rows = np.empty((2 * n, width))
        for i, (a, b, _) in enumerate(batch):
            rows[i] = np.asarray(getattr(a, attr), dtype=np.float64)
            rows[n + i] = np.asarray(getattr(b, attr), dtype=np.float64)
        return rows

    text = image = None
    first = batch[0]
    _check_features(
        config,
        np.asarray(first[0].text_tokens) if config.uses_text else None,
        np.asarray(first[0].image_feat) if config.uses_image else None,
    )
    if config.uses_text:
        text = stack("text_tokens", config.text_vocab)
    if config.uses_image:
        image = stack("image_feat", config.image_dim)

    p_all, p_cache = _stream_forward(params.commodity_stream, text, image)
    p1, p2 = p_all[:n], p_all[n:]
    s = np.einsum("ij,ij->i", p1, p2)

    q_all = q_cache = None
    if config.variant == "sat":
        q_all, q_cache = _stream_forward(params.threshold_stream, text, image)
        q1, q2 = q_all[:n], q_all[n:]
        t = np.einsum("ij,ij->i", q1, q2)
    else:
        t = np.full(n, float(params.scalar_threshold))

    d = s - t
    losses = np.where(ys == 1, softplus(-d), softplus(d))
    mean_loss = float(losses.mean())

    # d(mean loss)/ds_i, with the 1/n of the mean folded in.
    g_s = (sigmoid(d) - ys) / n
    g_t = -g_s

    grads: dict = {}
    d_p = np.empty_like(p_all)
    d_p[:n] = g_s[:, None] * p2
    d_p[n:] = g_s[:, None] * p1
    _stream_backward(params.commodity_stream, p_cache, d_p, grads, "commodity")

    if config.variant == "sat":
        d_q = np.empty_like(q_all)
        d_q[:n] = g_t[:, None] * q_all[n:]
        d_q[n:] = g_t[:, None] * q_all[:n]
        _stream_backward(params.threshold_stream, q_cache, d_q, grads, "threshold")
    elif config.variant == "lt":
        grads["scalar_threshold"] = np.array(g_t.sum())
    else:
        grads["scalar_threshold"] = np.array(0.0)

    ordered = all_blocks(params)
    return mean_loss, {name: grads[name] for name in ordered}


def clone_params(params: ModelParams) -> ModelParams:
    """Deep copy; the copy shares no arrays with the original."""

    def copy_stream(stream: Optional[StreamParams]):
        if stream is None:
            return None
        def copy_layers(layers):
            if layers is None:
                return None
            return [LinearLayer(l.weight.copy(), l.bias.copy()) for l in layers]
        return StreamParams(
            text_encoder=copy_layers(stream.text_encoder),
            image_encoder=copy_layers(stream.image_encoder),
            fusion=LinearLayer(stream.fusion.weight.copy(), stream.fusion.bias.copy()),
        )

    return ModelParams(
        config=params.config,
        commodity_stream=copy_stream(params.commodity_stream),
        threshold_stream=copy_stream(params.threshold_stream),
        scalar_threshold=params.scalar_threshold.copy(),
    )


def set_blocks(params: ModelParams, values: dict) -> None:
    """Overwrite parameter arrays from same-shaped named blocks, in place."""
    blocks = all_blocks(params)
    for name, arr in values.items():
        if name not in blocks:
            raise ShapeError(f"unknown parameter block '{name}'")
        if blocks[name].shape != np.shape(arr):
            raise ShapeError(
                f"block '{name}' has shape {blocks[name].shape}, got {np.shape(arr)}"
            )
        blocks[name][...] = arr
