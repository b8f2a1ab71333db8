"""End-to-end caption generation in four modes, plus the length predictor.

  fnic-dt   coarse words from the aligner, hard embeddings, one decoder pass
  fnic-ndt  coarse-word distributions as soft decoder input, one pass
  at        causal decoder, one full pass per emitted word
  naic      no aligner, region rows stretched to length, one pass

Every mode decodes greedily and is deterministic given (params, image).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import aligner, decoder
from . import tensor as T
from .data import BOS_ID, EOS_ID, PAD_ID
from .tensor import Tensor

MODE_FNIC_NDT = "fnic-ndt"
MODE_FNIC_DT = "fnic-dt"
MODE_AT = "at"
MODE_NAIC = "naic"
MODES = (MODE_FNIC_NDT, MODE_FNIC_DT, MODE_AT, MODE_NAIC)


@dataclass
class DecodedCaption:
    tokens: list          # emitted token ids, no PAD/BOS/EOS
    mode: str
    chosen_probs: list    # probability of each emitted token at its position
    wall_time_ns: int


@dataclass
class LengthPrediction:
    n: int
    logits: Tensor  # (1, n_max)


class CallCounter:
    """Counts decoder passes; injectable for the AT-vs-NA cost invariant."""

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1


def predict_length(image, params):
    """Argmax over length classes 1..n_max; ties resolve to the shorter."""
    pooled = T.reshape(image.pooled, (1, -1))
    logits = T.add(T.matmul(pooled, params["length_head.weight"]),
                   params["length_head.bias"])
    return LengthPrediction(n=int(np.argmax(logits.data[0])) + 1, logits=logits)


def _collect(probs_2d):
    """Per-position argmax -> (clean tokens, their probabilities).

    Positions from the first EOS onward are dropped; stray PAD/BOS picks
    are filtered out of what remains.
    """
    ids = np.argmax(probs_2d, axis=1)
    tokens, probs = [], []
    for i, token in enumerate(ids):
        token = int(token)
        if token == EOS_ID:
            break
        if token in (PAD_ID, BOS_ID):
            continue
        tokens.append(token)
        probs.append(float(probs_2d[i, token]))
    return tokens, probs


def generate_deterministic(image, params, m_max=None, counter=None):
    """Two-stage decode: greedy coarse words, then one parallel pass."""
    start = time.perf_counter_ns()
    coarse, _ = aligner.greedy_decode(image, params,
                                      m_max or params.config.m_max)
    n = predict_length(image, params).n
    inp = decoder.build_input_deterministic(coarse, n, params)
    out = decoder.decode_parallel(inp, image, params)
    if counter is not None:
        counter.bump()
    tokens, probs = _collect(out.probs.data)
    return DecodedCaption(tokens=tokens, mode=MODE_FNIC_DT, chosen_probs=probs,
                          wall_time_ns=max(1, time.perf_counter_ns() - start))


def generate_nondeterministic(image, params, m_max=None, counter=None,
                              onehot=False):
    """Soft decode: coarse-word distributions drive the decoder input.

    Rows along the greedy path pair 1:1 with emitted coarse words; the
    trailing EOS-step row is dropped. onehot=True collapses each row to a
    point mass (then the output must match generate_deterministic exactly).
    """
    start = time.perf_counter_ns()
    coarse, dist = aligner.greedy_decode(image, params,
                                         m_max or params.config.m_max)
    n = predict_length(image, params).n
    m = len(coarse)
    if m == 0:
        inp = decoder.build_input_deterministic([], n, params)
    else:
        probs = T.slice_rows(dist.probs, 0, m)
        if onehot:
            hard = np.zeros_like(probs.data)
            hard[np.arange(m), np.argmax(probs.data, axis=1)] = 1.0
            probs = Tensor(hard)
        inp = decoder.build_input_nondeterministic(probs, n, params)
    out = decoder.decode_parallel(inp, image, params)
    if counter is not None:
        counter.bump()
    tokens, probs_out = _collect(out.probs.data)
    return DecodedCaption(tokens=tokens, mode=MODE_FNIC_NDT,
                          chosen_probs=probs_out,
                          wall_time_ns=max(1, time.perf_counter_ns() - start))


def generate_autoregressive(image, params, n_max=None, counter=None):
    """Greedy word-by-word decode; one full decoder pass per emitted word."""
    start = time.perf_counter_ns()
    n_max = n_max or params.config.n_max
    table = params["embedding.table"]
    d = params.config.d_model
    prefix = [BOS_ID]
    tokens, probs = [], []
    for _ in range(n_max):
        inp = decoder.DecoderInput(
            embedded=T.add(T.embedding(table, prefix),
                           T.positional_encoding(len(prefix), d))
        )
        out = decoder.decode_parallel(inp, image, params, causal=True)
        if counter is not None:
            counter.bump()
        row = out.probs.data[-1]
        choice = int(np.argmax(row))
        if choice == EOS_ID:
            break
        prefix.append(choice)
        if choice not in (PAD_ID, BOS_ID):
            tokens.append(choice)
            probs.append(float(row[choice]))
    return DecodedCaption(tokens=tokens, mode=MODE_AT, chosen_probs=probs,
                          wall_time_ns=max(1, time.perf_counter_ns() - start))


def generate_naic(image, params, n=None, counter=None):
    """Single parallel pass over stretched region rows (no aligner)."""
    start = time.perf_counter_ns()
    if n is None:
        n = predict_length(image, params).n
    inp = decoder.build_input_regions(image, n, params)
    out = decoder.decode_parallel(inp, image, params)
    if counter is not None:
        counter.bump()
    tokens, probs = _collect(out.probs.data)
    return DecodedCaption(tokens=tokens, mode=MODE_NAIC, chosen_probs=probs,
                          wall_time_ns=max(1, time.perf_counter_ns() - start))


def generate(image, params, mode, counter=None):
    """Dispatch one decode by mode name."""
    if mode == MODE_FNIC_NDT:
        return generate_nondeterministic(image, params, counter=counter)
    if mode == MODE_FNIC_DT:
        return generate_deterministic(image, params, counter=counter)
    if mode == MODE_AT:
        return generate_autoregressive(image, params, counter=counter)
    if mode == MODE_NAIC:
        return generate_naic(image, params, counter=counter)
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def decode_forced_length(image, params, mode, n, coarse_len=8):
    """Decode with an exact emitted length, ignoring EOS (latency shaping).

    Runs the same code paths as the natural decodes but pins the number of
    steps, so latency can be measured as a function of output length.
    Returns wall time in nanoseconds.
    """
    start = time.perf_counter_ns()
    if mode == MODE_AT:
        table = params["embedding.table"]
        d = params.config.d_model
        prefix = [BOS_ID]
        for _ in range(n):
            inp = decoder.DecoderInput(
                embedded=T.add(T.embedding(table, prefix),
                               T.positional_encoding(len(prefix), d))
            )
            out = decoder.decode_parallel(inp, image, params, causal=True)
            prefix.append(int(np.argmax(out.probs.data[-1])))
    elif mode in (MODE_FNIC_NDT, MODE_FNIC_DT):
        state = aligner.initial_state(image, params)
        prev = BOS_ID
        rows = []
        for _ in range(coarse_len):
            state, logits = aligner.step(state, prev, image, params)
            rows.append(logits)
            prev = int(np.argmax(logits.data[0]))
        logits = T.concat(rows, axis=0)
        if mode == MODE_FNIC_NDT:
            inp = decoder.build_input_nondeterministic(T.softmax(logits), n, params)
        else:
            coarse = list(np.argmax(logits.data, axis=1))
            inp = decoder.build_input_deterministic(coarse, n, params)
        decoder.decode_parallel(inp, image, params)
    elif mode == MODE_NAIC:
        inp = decoder.build_input_regions(image, n, params)
        decoder.decode_parallel(inp, image, params)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return max(1, time.perf_counter_ns() - start)
