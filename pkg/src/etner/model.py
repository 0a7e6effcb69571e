"""The entity-transformer encoder.

Per-token sparse features go through a position-shared feed-forward
projection, get concatenated with dense embedding vectors, and are projected
to d_model.  A stack of pre-norm transformer layers with relative-position
attention produces the encoded sequence, from which a linear head emits
per-tag scores for the CRF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .bilou import N_TAGS
from .text import N_LEXICAL, SparseTokenFeatures, feature_arrays

MAX_LAYERS = 6


@dataclass
class ModelConfig:
    d_model: int = 256
    n_heads: int = 4
    ff_units: int = 256
    n_layers: int = 2
    sparse_proj_dim: int = 128
    dense_dim: int = 32
    rel_clip: int = 5
    dropout: float = 0.1
    n_tags: int = N_TAGS

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        if not 1 <= self.n_layers <= MAX_LAYERS:
            raise ValueError(
                f"n_layers={self.n_layers} outside [1, {MAX_LAYERS}] (cap of {MAX_LAYERS})"
            )
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        for name in ("d_model", "n_heads", "ff_units", "sparse_proj_dim", "rel_clip"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dense_dim < 0:
            raise ValueError(f"dense_dim must be >= 0, got {self.dense_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_tags < 2:
            raise ValueError(f"n_tags must be >= 2, got {self.n_tags}")


@dataclass
class ModelParams:
    """All learnable tensors, keyed by name in a fixed (manifest) order."""

    config: ModelConfig
    n_words: int
    n_ngrams: int
    use_lexical: bool
    tensors: dict

    @property
    def sparse_width(self) -> int:
        return self.n_words + self.n_ngrams + (N_LEXICAL if self.use_lexical else 0)

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def grads(self) -> dict:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        }

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def init_params(
    config: ModelConfig,
    n_words: int,
    n_ngrams: int,
    use_lexical: bool = False,
    seed: int = 0,
    dtype=np.float32,
) -> ModelParams:
    """Fan-in-scaled uniform weights U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    zero biases, unit layer-norm gains, zero CRF scores."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    tensors: dict = {}

    def weight(name, fan_in, fan_out):
        limit = 1.0 / math.sqrt(fan_in)
        tensors[name] = ad.parameter(
            rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        )

    def zeros(name, *shape):
        tensors[name] = ad.parameter(np.zeros(shape, dtype=dtype))

    def ones(name, *shape):
        tensors[name] = ad.parameter(np.ones(shape, dtype=dtype))

    d, s = config.d_model, config.ff_units
    sparse_width = n_words + n_ngrams + (N_LEXICAL if use_lexical else 0)
    weight("sparse_proj.w", sparse_width, config.sparse_proj_dim)
    zeros("sparse_proj.b", config.sparse_proj_dim)
    weight("fusion.w", config.sparse_proj_dim + config.dense_dim, d)
    zeros("fusion.b", d)
    for i in range(config.n_layers):
        p = f"layers.{i}"
        ones(f"{p}.ln1.g", d)
        zeros(f"{p}.ln1.b", d)
        for mat in ("wq", "wk", "wv", "wo"):
            weight(f"{p}.attn.{mat}", d, d)
            zeros(f"{p}.attn.b{mat[1]}", d)
        limit = 1.0 / math.sqrt(config.head_dim)
        tensors[f"{p}.attn.rel"] = ad.parameter(
            rng.uniform(-limit, limit, size=(2 * config.rel_clip + 1, config.head_dim)).astype(dtype)
        )
        ones(f"{p}.ln2.g", d)
        zeros(f"{p}.ln2.b", d)
        weight(f"{p}.ffn.w1", d, s)
        zeros(f"{p}.ffn.b1", s)
        weight(f"{p}.ffn.w2", s, d)
        zeros(f"{p}.ffn.b2", d)
    weight("emit.w", d, config.n_tags)
    zeros("emit.b", config.n_tags)
    zeros("crf.trans", config.n_tags, config.n_tags)
    zeros("crf.start", config.n_tags)
    zeros("crf.end", config.n_tags)
    return ModelParams(config, n_words, n_ngrams, use_lexical, tensors)


# ---------------------------------------------------------------------------
# feature rows -> CSR


def features_to_csr(feats, n_words: int, n_ngrams: int, width: int):
    """Pack one sequence's sparse features into CSR rows."""
    idx, vals, counts = feature_arrays(feats, n_words, n_ngrams)
    indptr = np.zeros(len(feats) + 1, dtype=np.int64)
    indptr[1:] = counts
    np.cumsum(indptr, out=indptr)
    return sp.csr_matrix((vals, idx, indptr), shape=(len(feats), width))


# ---------------------------------------------------------------------------
# forward pieces; all return autodiff tensors


def sparse_projection_rows(params: ModelParams, csr) -> ad.Tensor:
    """relu(csr @ W + b) over token rows; the weights are shared across positions."""
    if csr.shape[1] != params.sparse_width:
        raise ValueError(
            f"width mismatch: features {csr.shape[1]} vs params {params.sparse_width}"
        )
    csr = csr.astype(params["sparse_proj.w"].data.dtype)
    return ad.relu(
        ad.add(ad.sparse_matmul(csr, params["sparse_proj.w"]), params["sparse_proj.b"])
    )


def sparse_projection(feats, params: ModelParams) -> ad.Tensor:
    """Single-sequence form: list of SparseTokenFeatures -> [n, sparse_proj_dim]."""
    csr = features_to_csr(feats, params.n_words, params.n_ngrams, params.sparse_width)
    return sparse_projection_rows(params, csr)


def fuse_rows(params: ModelParams, sparse_out: ad.Tensor, dense: np.ndarray) -> ad.Tensor:
    """Concat sparse projection with dense vectors, project to d_model."""
    if dense.shape[0] != sparse_out.data.shape[0]:
        raise ValueError(
            f"row-count mismatch: sparse {sparse_out.data.shape[0]} vs dense {dense.shape[0]}"
        )
    if dense.shape[1] != params.config.dense_dim:
        raise ValueError(
            f"width mismatch: dense {dense.shape[1]} vs config {params.config.dense_dim}"
        )
    dtype = params["fusion.w"].data.dtype
    if dense.shape[1] == 0:
        x = sparse_out
    else:
        x = ad.concat([sparse_out, ad.constant(dense.astype(dtype))])
    return ad.add(ad.matmul(x, params["fusion.w"]), params["fusion.b"])


def fuse(sparse_out: ad.Tensor, dense, params: ModelParams) -> ad.Tensor:
    vectors = dense.vectors if hasattr(dense, "vectors") else np.asarray(dense)
    return fuse_rows(params, sparse_out, vectors)


def relative_position_index(n: int, clip: int) -> np.ndarray:
    """Index into the relative embedding table for each (query, key) pair:
    clip(j - i, -clip, clip) + clip."""
    offsets = np.arange(n)[None, :] - np.arange(n)[:, None]
    return np.clip(offsets, -clip, clip) + clip


def relative_attention(
    x: ad.Tensor,
    params: ModelParams,
    layer: int,
    pad_mask: np.ndarray | None = None,
    train: bool = False,
    rng=None,
):
    """Multi-head scaled dot-product attention with learned relative-position
    key embeddings; returns (output [B, T, D], attention probs [B, H, T, T]).

    Padded key positions get a -1e9 logit bias, which underflows to exactly
    zero weight after the max-shifted softmax.
    """
    cfg = params.config
    bsz, tlen, d = x.data.shape
    h, dh = cfg.n_heads, cfg.head_dim
    p = f"layers.{layer}.attn"

    def heads(name):
        y = ad.add(ad.matmul(x, params[f"{p}.{name}"]), params[f"{p}.b{name[1]}"])
        return ad.permute(ad.reshape(y, (bsz, tlen, h, dh)), (0, 2, 1, 3))

    q = heads("wq")
    k = heads("wk")
    v = heads("wv")

    content = ad.matmul(q, ad.permute(k, (0, 1, 3, 2)))  # [B, H, T, T]

    rel_idx = relative_position_index(tlen, cfg.rel_clip)
    rel = ad.gather_rows(params[f"{p}.rel"], rel_idx)  # [T, T, Dh]
    qp = ad.reshape(ad.permute(q, (2, 0, 1, 3)), (tlen, bsz * h, dh))
    rel_logits = ad.matmul(qp, ad.permute(rel, (0, 2, 1)))  # [T, B*H, T]
    rel_logits = ad.permute(ad.reshape(rel_logits, (tlen, bsz, h, tlen)), (1, 2, 0, 3))

    logits = ad.scale(ad.add(content, rel_logits), 1.0 / math.sqrt(dh))
    if pad_mask is not None:
        bias = np.where(pad_mask, 0.0, -1e9).astype(x.data.dtype)
        logits = ad.add(logits, ad.constant(bias[:, None, None, :]))

    probs = ad.softmax(logits)
    dropped = ad.dropout(probs, cfg.dropout, rng, train)
    ctx = ad.matmul(dropped, v)  # [B, H, T, Dh]
    merged = ad.reshape(ad.permute(ctx, (0, 2, 1, 3)), (bsz, tlen, d))
    out = ad.add(ad.matmul(merged, params[f"{p}.wo"]), params[f"{p}.bo"])
    return out, probs


def encoder_layer(
    x: ad.Tensor,
    params: ModelParams,
    layer: int,
    pad_mask: np.ndarray | None = None,
    train: bool = False,
    rng=None,
) -> ad.Tensor:
    """Pre-norm residual block: x + drop(attn(LN(x))), then + drop(FFN(LN(.)))."""
    cfg = params.config
    p = f"layers.{layer}"
    attn_in = ad.layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    attn_out, _ = relative_attention(attn_in, params, layer, pad_mask, train, rng)
    x = ad.add(x, ad.dropout(attn_out, cfg.dropout, rng, train))

    ff_in = ad.layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    hidden = ad.relu(ad.add(ad.matmul(ff_in, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"]))
    ff_out = ad.add(ad.matmul(hidden, params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
    return ad.add(x, ad.dropout(ff_out, cfg.dropout, rng, train))


def encode_rows(
    params: ModelParams,
    csr,
    dense: np.ndarray,
    pad_mask: np.ndarray,
    train: bool = False,
    rng=None,
):
    """Full encoder over a padded batch.

    csr: [B*T, sparse_width] feature rows; dense: [B*T, dense_dim];
    pad_mask: bool [B, T].  Returns (encoded [B, T, D], emissions [B, T, K]).
    """
    cfg = params.config
    bsz, tlen = pad_mask.shape
    sp_out = sparse_projection_rows(params, csr)
    fused = fuse_rows(params, sp_out, dense)
    x = ad.reshape(fused, (bsz, tlen, cfg.d_model))
    for i in range(cfg.n_layers):
        x = encoder_layer(x, params, i, pad_mask, train, rng)
    flat = ad.reshape(x, (bsz * tlen, cfg.d_model))
    em = ad.add(ad.matmul(flat, params["emit.w"]), params["emit.b"])
    return x, ad.reshape(em, (bsz, tlen, cfg.n_tags))


def encode(params: ModelParams, feats, dense, train: bool = False, rng=None):
    """Single-sequence encode: features + DenseSequence -> (E, emissions [n, K])."""
    n = len(feats)
    csr = features_to_csr(feats, params.n_words, params.n_ngrams, params.sparse_width)
    vectors = dense.vectors if hasattr(dense, "vectors") else np.asarray(dense)
    mask = np.ones((1, n), dtype=bool)
    enc, em = encode_rows(params, csr, vectors, mask, train, rng)
    return ad.reshape(enc, (n, params.config.d_model)), ad.reshape(em, (n, params.config.n_tags))
