"""Corpus BLEU, caption diversity statistics, and the decode-latency bench."""

from __future__ import annotations

import json
import math
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass

from . import inference
from .data import RESERVED_TOKENS


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    novel_pct: float
    unique_pct: float
    vocab_usage_pct: float
    # filled only by the latency benchmark; eval leaves them null so reports
    # for equal seeds are byte-identical
    mean_latency_ns: dict | None = None
    speedup: dict | None = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def pretty(self):
        lines = [
            f"BLEU@1 {self.bleu1:.4f}  BLEU@2 {self.bleu2:.4f}  "
            f"BLEU@3 {self.bleu3:.4f}  BLEU@4 {self.bleu4:.4f}",
            f"novel {self.novel_pct:.2f}%  unique {self.unique_pct:.2f}%  "
            f"vocab usage {self.vocab_usage_pct:.2f}%",
        ]
        if self.mean_latency_ns:
            for mode, ns in self.mean_latency_ns.items():
                sp = (self.speedup or {}).get(mode)
                extra = f"  speedup {sp:.2f}x" if sp is not None else ""
                lines.append(f"latency[{mode}] {ns / 1e6:.3f} ms{extra}")
        return "\n".join(lines)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, reference_sets, max_n=4, smooth=False):
    """Corpus-level BLEU@1..max_n over token lists.

    Modified n-gram precision with per-reference-set clipping, counts summed
    over the corpus before any ratio; geometric mean over orders 1..N;
    brevity penalty exp(1 - r/c) when c <= r with r the closest reference
    length (ties to the shorter). Unsmoothed scores are 0 whenever any
    order's precision is 0; smooth=True add-one smooths orders >= 2 for
    tiny corpora.
    """
    if not hypotheses:
        raise ValueError("corpus_bleu needs at least one hypothesis")
    if len(hypotheses) != len(reference_sets):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(reference_sets)} reference sets"
        )
    matched = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        hyp = list(hyp)
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(hyp)), L))
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            best = Counter()
            for ref in refs:
                for gram, c in _ngrams(list(ref), n).items():
                    if c > best[gram]:
                        best[gram] = c
            total[n] += sum(counts.values())
            matched[n] += sum(min(c, best[gram]) for gram, c in counts.items())

    precisions = [0.0] * (max_n + 1)
    for n in range(1, max_n + 1):
        num, den = matched[n], total[n]
        if smooth and n >= 2:
            num, den = num + 1, den + 1
        precisions[n] = num / den if den else 0.0

    if hyp_len == 0:
        return [0.0] * max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    scores = []
    for n in range(1, max_n + 1):
        ps = precisions[1:n + 1]
        if min(ps) <= 0.0:
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in ps) / n))
    return scores


def diversity_stats(hypotheses, training_captions, vocab):
    """(novel %, unique %, vocabulary usage %) over caption strings.

    novel: not an exact string match of any training caption. unique:
    occurs exactly once among the hypotheses. usage: share of non-reserved
    vocabulary tokens appearing in at least one hypothesis.
    """
    if not hypotheses:
        raise ValueError("diversity_stats needs at least one hypothesis")
    seen = set(training_captions)
    counts = Counter(hypotheses)
    novel = sum(1 for h in hypotheses if h not in seen)
    unique = sum(1 for h in hypotheses if counts[h] == 1)
    used = set()
    for h in hypotheses:
        used.update(h.split())
    usable = vocab.size - len(RESERVED_TOKENS)
    used_known = sum(1 for t in vocab.id_to_token[4:] if t in used)
    return (
        100.0 * novel / len(hypotheses),
        100.0 * unique / len(hypotheses),
        100.0 * used_known / usable if usable else 0.0,
    )


# ---------------------------------------------------------------------------
# latency benchmark
# ---------------------------------------------------------------------------

@dataclass
class LatencyRow:
    mode: str
    n_bucket: str     # emitted-length bucket, or "all"
    mean_ns: float
    std_ns: float
    speedup: float | None


def _bucket(length):
    lo = (max(length, 1) - 1) // 4 * 4 + 1
    return f"{lo}-{lo + 3}"


def latency_bench(mode_params, images, repeats=20, warmup=5):
    """Single-sentence decode latency per mode, averaged over images x repeats.

    Decodes run one at a time on the calling thread. Speedups are relative
    to the "at" mode when present. Returns (rows, mean_ns_by_mode).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    samples = {}
    for mode, params in mode_params.items():
        for _ in range(warmup):
            inference.generate(images[0], params, mode)
        timings = []
        for _ in range(repeats):
            for image in images:
                cap = inference.generate(image, params, mode)
                timings.append((len(cap.tokens), cap.wall_time_ns))
        samples[mode] = timings

    means = {
        mode: statistics.fmean(ns for _, ns in rows)
        for mode, rows in samples.items()
    }
    at_mean = means.get(inference.MODE_AT)

    out = []
    for mode, rows in samples.items():
        speed = (at_mean / means[mode]) if at_mean else None
        times = [ns for _, ns in rows]
        out.append(LatencyRow(mode, "all", statistics.fmean(times),
                              statistics.pstdev(times), speed))
        buckets = {}
        for length, ns in rows:
            buckets.setdefault(_bucket(length), []).append(ns)
        for label in sorted(buckets, key=lambda b: int(b.split("-")[0])):
            ts = buckets[label]
            out.append(LatencyRow(mode, label, statistics.fmean(ts),
                                  statistics.pstdev(ts), None))
    return out, means


def forced_length_sweep(mode_params, image, lengths, repeats=20, warmup=3,
                        coarse_len=8):
    """Latency at pinned emitted lengths (EOS ignored).

    The coarse stage length stays fixed across the sweep: it tracks scene
    content, not caption verbosity. Returns {mode: {n: mean_ns}}.
    """
    out = {}
    for mode, params in mode_params.items():
        per_len = {}
        for n in lengths:
            for _ in range(warmup):
                inference.decode_forced_length(image, params, mode, n,
                                               coarse_len=coarse_len)
            times = [
                inference.decode_forced_length(image, params, mode, n,
                                               coarse_len=coarse_len)
                for _ in range(repeats)
            ]
            per_len[n] = statistics.fmean(times)
        out[mode] = per_len
    return out


def latency_rows_to_csv(rows, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "n_bucket", "mean_ns", "std_ns", "speedup"])
        for r in rows:
            writer.writerow([
                r.mode, r.n_bucket, f"{r.mean_ns:.1f}", f"{r.std_ns:.1f}",
                "" if r.speedup is None else f"{r.speedup:.4f}",
            ])
