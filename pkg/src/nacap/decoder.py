"""Parallel Transformer caption decoder and its input builders.

decode_parallel maps a full-length input stream plus image features to
per-position vocabulary distributions in one pass. Without a causal mask
every position attends to every other (the non-autoregressive property);
with one, the same stack decodes left to right for the autoregressive
baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .aligner import PositionDistribution
from .data import UNK_ID
from .tensor import Tensor


@dataclass
class DecoderInput:
    embedded: Tensor  # (n, d_model)

    @property
    def n(self):
        return self.embedded.shape[0]


class DecoderOutput:
    """Per-position logits; probs is their row-softmax, built on first use."""

    __slots__ = ("logits", "_probs")

    def __init__(self, logits):
        self.logits = logits  # (n, V)
        self._probs = None

    @property
    def probs(self):
        if self._probs is None:
            self._probs = T.softmax(self.logits)
        return self._probs


def upsample_indices(m, n):
    """Centered uniform upsampling of m source slots onto n positions."""
    return np.array([((2 * i + 1) * m) // (2 * n) for i in range(n)], dtype=np.intp)


def build_input_deterministic(coarse_ids, n, params):
    """Embed a coarse token sequence and stretch it to n positions.

    An empty coarse sequence falls back to a single UNK placeholder.
    """
    if n < 1:
        raise ValueError("target length must be >= 1")
    ids = list(coarse_ids) or [UNK_ID]
    idx = upsample_indices(len(ids), n)
    emb = T.embedding(params["embedding.table"], [ids[j] for j in idx])
    pe = T.positional_encoding(n, params.config.d_model)
    return DecoderInput(embedded=T.add(emb, pe))


def build_input_nondeterministic(dist, n, params):
    """Expected embeddings under per-position distributions, stretched to n.

    Each source slot contributes probs[j] @ embedding-table, the
    probability-weighted average embedding; one-hot rows therefore reproduce
    build_input_deterministic exactly.
    """
    if n < 1:
        raise ValueError("target length must be >= 1")
    probs = dist.probs if isinstance(dist, PositionDistribution) else dist
    m = probs.shape[0]
    if m < 1:
        raise ValueError("need at least one distribution row")
    expected = T.matmul(probs, params["embedding.table"])
    rows = T.gather_rows(expected, upsample_indices(m, n))
    pe = T.positional_encoding(n, params.config.d_model)
    return DecoderInput(embedded=T.add(rows, pe))


def build_input_regions(image, n, params):
    """Projected region rows stretched to n positions (no-aligner baseline)."""
    if n < 1:
        raise ValueError("target length must be >= 1")
    rows = T.gather_rows(image.proj, upsample_indices(image.k, n))
    pe = T.positional_encoding(n, params.config.d_model)
    return DecoderInput(embedded=T.add(rows, pe))


def _multi_head(query_src, kv_src, params, prefix, heads, valid_mask):
    q = T.matmul(query_src, params[f"{prefix}.query_weight"])
    k = T.matmul(kv_src, params[f"{prefix}.key_weight"])
    v = T.matmul(kv_src, params[f"{prefix}.value_weight"])
    d = q.shape[1]
    dh = d // heads
    outs = []
    for h in range(heads):
        qh = T.slice_cols(q, h * dh, (h + 1) * dh)
        kh = T.slice_cols(k, h * dh, (h + 1) * dh)
        vh = T.slice_cols(v, h * dh, (h + 1) * dh)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dh))
        weights = T.softmax(scores, valid_mask=valid_mask)
        outs.append(T.matmul(weights, vh))
    merged = outs[0] if heads == 1 else T.concat(outs, axis=1)
    return T.matmul(merged, params[f"{prefix}.out_weight"])


def decode_parallel(inp, image, params, causal=False, dropout_rng=None):
    """Run the decoder stack once over all n positions.

    causal=True masks self-attention to the left context (autoregressive
    mode); dropout_rng activates training-time dropout.
    """
    cfg = params.config
    y = inp.embedded
    n = y.shape[0]
    mask = np.tril(np.ones((n, n), dtype=bool)) if causal else None
    p = cfg.dropout

    for layer in range(cfg.layers):
        base = f"decoder.layer{layer}"
        branch = _multi_head(y, y, params, f"{base}.self_attn", cfg.heads, mask)
        branch = T.dropout(branch, p, dropout_rng)
        y = T.layer_norm(T.add(y, branch),
                         params[f"{base}.norm1.gain"], params[f"{base}.norm1.bias"])

        branch = _multi_head(y, image.proj, params, f"{base}.inter_attn",
                             cfg.heads, None)
        branch = T.dropout(branch, p, dropout_rng)
        y = T.layer_norm(T.add(y, branch),
                         params[f"{base}.norm2.gain"], params[f"{base}.norm2.bias"])

        hidden = T.relu(T.add(T.matmul(y, params[f"{base}.ffn.w1"]),
                              params[f"{base}.ffn.b1"]))
        branch = T.add(T.matmul(hidden, params[f"{base}.ffn.w2"]),
                       params[f"{base}.ffn.b2"])
        branch = T.dropout(branch, p, dropout_rng)
        y = T.layer_norm(T.add(y, branch),
                         params[f"{base}.norm3.gain"], params[f"{base}.norm3.bias"])

    logits = T.add(T.matmul(y, params["decoder.out_weight"]),
                   params["decoder.out_bias"])
    return DecoderOutput(logits)
