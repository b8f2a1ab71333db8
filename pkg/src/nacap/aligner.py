"""Coarse-word position aligner: image attention feeding a single GRU layer.

At each step the previous hidden state attends over the projected region
features; the GRU consumes the previous word embedding concatenated with
that attention context and emits logits over the vocabulary. Teacher forcing
conditions on gold prefixes; greedy decoding feeds back its own argmax and
stops at EOS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import BOS_ID, EOS_ID
from .tensor import Tensor


@dataclass
class AlignerState:
    hidden: Tensor   # (1, d_model)
    context: Tensor  # (1, d_model)
    step: int


class PositionDistribution:
    """Per-step vocabulary distributions along an alignment path.

    probs is the row-softmax of logits by construction, materialized on
    first use (training's hard-input phase only ever touches the logits).
    """

    __slots__ = ("logits", "_probs")

    def __init__(self, logits):
        self.logits = logits  # (m, V)
        self._probs = None

    @property
    def probs(self):
        if self._probs is None:
            self._probs = T.softmax(self.logits)
        return self._probs

    @property
    def length(self):
        return self.logits.shape[0]


def initial_state(image, params):
    pooled = T.reshape(image.pooled, (1, -1))
    hidden = T.tanh(T.matmul(pooled, params["aligner.init_weight"]))
    return AlignerState(hidden=hidden, context=pooled, step=0)


def attention_keys(image, params):
    """Projected attention keys, constant across the steps of one decode."""
    return T.matmul(image.proj, params["aligner.attn_key"])


def attention(hidden, image, params, keys=None):
    """Scaled dot-product attention of the hidden state over region rows.

    Returns (weights (1, k), context (1, d_model)); context is the
    weight-averaged projected feature rows.
    """
    d = hidden.shape[1]
    if keys is None:
        keys = attention_keys(image, params)
    q = T.matmul(hidden, params["aligner.attn_query"])
    scores = T.scale(T.matmul(q, T.transpose(keys)), 1.0 / math.sqrt(d))
    weights = T.softmax(scores)
    return weights, T.matmul(weights, image.proj)


def _gru_cell(state, prev_token, image, params, keys):
    d = state.hidden.shape[1]
    _, context = attention(state.hidden, image, params, keys)
    emb = T.embedding(params["embedding.table"], [prev_token])
    x = T.concat([emb, context], axis=1)
    gi = T.add(T.matmul(x, params["aligner.gru_input_weight"]),
               params["aligner.gru_input_bias"])
    gh = T.add(T.matmul(state.hidden, params["aligner.gru_hidden_weight"]),
               params["aligner.gru_hidden_bias"])
    reset = T.sigmoid(T.add(T.slice_cols(gi, 0, d), T.slice_cols(gh, 0, d)))
    update = T.sigmoid(T.add(T.slice_cols(gi, d, 2 * d),
                             T.slice_cols(gh, d, 2 * d)))
    cand = T.tanh(T.add(T.slice_cols(gi, 2 * d, 3 * d),
                        T.mul(reset, T.slice_cols(gh, 2 * d, 3 * d))))
    # h' = (1 - update) * cand + update * h
    hidden = T.add(cand, T.mul(update, T.sub(state.hidden, cand)))
    return AlignerState(hidden=hidden, context=context, step=state.step + 1)


def step(state, prev_token, image, params, keys=None):
    """One aligner step; returns (new state, logits row (1, V))."""
    if keys is None:
        keys = attention_keys(image, params)
    new_state = _gru_cell(state, prev_token, image, params, keys)
    logits = T.add(T.matmul(new_state.hidden, params["aligner.out_weight"]),
                   params["aligner.out_bias"])
    return new_state, logits


def teacher_forced(coarse_ids, image, params):
    """Distributions for each position conditioned on the gold prefix.

    Row i answers "which word comes next after coarse_ids[:i]"; the final
    row is the EOS slot, so the result has len(coarse_ids) + 1 rows.
    """
    coarse_ids = list(coarse_ids)
    if not coarse_ids:
        raise ValueError("teacher forcing needs a non-empty coarse sequence")
    keys = attention_keys(image, params)
    state = initial_state(image, params)
    hiddens = []
    for token in [BOS_ID] + coarse_ids:
        state = _gru_cell(state, token, image, params, keys)
        hiddens.append(state.hidden)
    stacked = hiddens[0] if len(hiddens) == 1 else T.concat(hiddens, axis=0)
    logits = T.add(T.matmul(stacked, params["aligner.out_weight"]),
                   params["aligner.out_bias"])
    return PositionDistribution(logits=logits)


def greedy_decode(image, params, m_max):
    """Argmax decoding from BOS until EOS or m_max steps.

    Returns (tokens, PositionDistribution). The distribution has one row per
    step taken, including the step whose argmax was EOS; ties break toward
    the lowest token id.
    """
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    keys = attention_keys(image, params)
    state = initial_state(image, params)
    prev = BOS_ID
    tokens = []
    rows = []
    for _ in range(m_max):
        state, logits = step(state, prev, image, params, keys)
        rows.append(logits)
        choice = int(np.argmax(logits.data[0]))
        if choice == EOS_ID:
            break
        tokens.append(choice)
        prev = choice
    logits = rows[0] if len(rows) == 1 else T.concat(rows, axis=0)
    return tokens, PositionDistribution(logits=logits)
