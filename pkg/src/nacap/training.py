"""Two-phase joint optimization plus baseline training modes.

The aligned model trains in two phases: first with hard gold coarse-word
embeddings as decoder input (deterministic), then continuing from those
weights with the aligner's soft distributions as input (nondeterministic),
gradients flowing through the distributions. Baselines: "at" trains the
causal decoder with teacher forcing, "naic" the parallel decoder on
stretched region rows.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import aligner, decoder, encoder, inference
from . import tensor as T
from .data import BOS_ID, EOS_ID, PAD_ID, build_examples, build_vocabulary
from .params import init_params, save_checkpoint
from .tensor import Tape, backward

log = logging.getLogger(__name__)

PHASE_DETERMINISTIC = "deterministic"
PHASE_NONDETERMINISTIC = "nondeterministic"

TRAIN_MODES = ("fnic", "at", "naic")


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or an unusable batch."""


@dataclass
class LossBreakdown:
    total: float
    position: float
    fine: float
    length: float


class Adam:
    def __init__(self, params, lr=5e-4, beta1=0.8, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = 0.0
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _length_loss(image, params, target_len):
    pred = inference.predict_length(image, params)
    klass = min(target_len, params.config.n_max) - 1
    return T.cross_entropy(pred.logits, [klass], pad_id=-1)


def example_losses(example, params, mode, phase, dropout_rng=None):
    """Loss terms for one example; returns (position, fine, length) tensors.

    position and length are None for modes that do not train them.
    """
    image = encoder.encode(example.regions, params)
    n = len(example.target)

    if mode == "fnic":
        dist = aligner.teacher_forced(example.coarse, image, params)
        loss_pos = T.cross_entropy(
            dist.logits, list(example.coarse) + [EOS_ID], pad_id=PAD_ID
        )
        if phase == PHASE_DETERMINISTIC:
            inp = decoder.build_input_deterministic(example.coarse, n, params)
        elif phase == PHASE_NONDETERMINISTIC:
            soft = T.slice_rows(dist.probs, 0, len(example.coarse))
            inp = decoder.build_input_nondeterministic(soft, n, params)
        else:
            raise ValueError(f"unknown phase {phase!r}")
        out = decoder.decode_parallel(inp, image, params, dropout_rng=dropout_rng)
        loss_fine = T.cross_entropy(out.logits, example.target, pad_id=PAD_ID)
        return loss_pos, loss_fine, _length_loss(image, params, n)

    if mode == "at":
        shifted = [BOS_ID] + list(example.target[:-1])
        pe = T.positional_encoding(n, params.config.d_model)
        inp = decoder.DecoderInput(
            embedded=T.add(T.embedding(params["embedding.table"], shifted), pe)
        )
        out = decoder.decode_parallel(
            inp, image, params, causal=True, dropout_rng=dropout_rng
        )
        return None, T.cross_entropy(out.logits, example.target, pad_id=PAD_ID), None

    if mode == "naic":
        inp = decoder.build_input_regions(image, n, params)
        out = decoder.decode_parallel(inp, image, params, dropout_rng=dropout_rng)
        loss_fine = T.cross_entropy(out.logits, example.target, pad_id=PAD_ID)
        return None, loss_fine, _length_loss(image, params, n)

    raise ValueError(f"unknown training mode {mode!r}, expected {TRAIN_MODES}")


def _mean(parts):
    if not parts:
        return None
    total = parts[0]
    for p in parts[1:]:
        total = T.add(total, p)
    return T.scale(total, 1.0 / len(parts))


def train_step(batch, params, opt, mode, phase, lambda_length=0.1,
               dropout_rng=None):
    """One optimizer update over a batch; returns the loss breakdown.

    Batch elements run one at a time on a shared tape; their losses are
    averaged in fixed order so results are bit-reproducible.
    """
    if not batch:
        raise TrainingError("empty batch")
    params.zero_grads()
    with Tape() as tape:
        pos_parts, fine_parts, len_parts = [], [], []
        for ex in batch:
            lp, lf, ll = example_losses(ex, params, mode, phase, dropout_rng)
            if lp is not None:
                pos_parts.append(lp)
            fine_parts.append(lf)
            if ll is not None:
                len_parts.append(ll)
        loss_pos = _mean(pos_parts)
        loss_fine = _mean(fine_parts)
        loss_len = _mean(len_parts)
        total = loss_fine
        if loss_pos is not None:
            total = T.add(total, loss_pos)
        if loss_len is not None:
            total = T.add(total, T.scale(loss_len, lambda_length))
        if not np.isfinite(total.item()):
            scenes = [ex.scene_id for ex in batch]
            raise TrainingError(
                f"non-finite loss {total.item()} on batch of scenes {scenes}"
            )
        backward(total, tape)
    opt.step()
    return LossBreakdown(
        total=total.item(),
        position=loss_pos.item() if loss_pos is not None else 0.0,
        fine=loss_fine.item(),
        length=loss_len.item() if loss_len is not None else 0.0,
    )


def _epoch_schedule(config, mode):
    if mode == "fnic":
        return [(PHASE_DETERMINISTIC, config.epochs_phase1),
                (PHASE_NONDETERMINISTIC, config.epochs_phase2)]
    return [(PHASE_DETERMINISTIC, config.epochs_phase1 + config.epochs_phase2)]


def train(config, records, out_dir, mode="fnic", epoch_checkpoints=True):
    """Full training run; returns the final checkpoint path.

    Writes per-epoch checkpoints, a vocabulary file, and a CSV loss log to
    out_dir. All randomness derives from config.seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    captions = [c for rec in records for c in rec.captions]
    vocab = build_vocabulary(captions, min_count=config.min_count)
    vocab.save(out_dir / "vocab.txt")
    examples = build_examples(records, vocab)
    if not examples:
        raise TrainingError("no usable training examples")

    params = init_params(config.model_config(vocab.size), config.seed)
    opt = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    shuffle_rng = np.random.default_rng([config.seed, 11])
    dropout_rng = np.random.default_rng([config.seed, 13])
    meta = {
        "mode": mode,
        "seed": config.seed,
        "lr": config.lr,
        "betas": [config.beta1, config.beta2],
        "batch_size": config.batch_size,
        "epochs": config.epochs_phase1 + config.epochs_phase2,
        "vocab": vocab.id_to_token[4:],
    }

    log_path = out_dir / f"{mode}-train-log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "L", "L_P", "L_F", "L_len"])
        epoch = 0
        for phase, n_epochs in _epoch_schedule(config, mode):
            for _ in range(n_epochs):
                epoch += 1
                order = shuffle_rng.permutation(len(examples))
                sums = np.zeros(4)
                n_batches = 0
                for lo in range(0, len(order), config.batch_size):
                    batch = [examples[i] for i in order[lo:lo + config.batch_size]]
                    b = train_step(
                        batch, params, opt, mode, phase,
                        lambda_length=config.lambda_length,
                        dropout_rng=dropout_rng,
                    )
                    sums += (b.total, b.position, b.fine, b.length)
                    n_batches += 1
                avg = sums / n_batches
                writer.writerow(
                    [epoch, phase, f"{avg[0]:.6f}", f"{avg[1]:.6f}",
                     f"{avg[2]:.6f}", f"{avg[3]:.6f}"]
                )
                fh.flush()
                log.info("epoch %d (%s): L=%.4f", epoch, phase, avg[0])
                if epoch_checkpoints:
                    save_checkpoint(
                        out_dir / f"{mode}-epoch{epoch:03d}.ckpt", params, meta
                    )

    final = out_dir / f"{mode}.ckpt"
    save_checkpoint(final, params, meta)
    return final
