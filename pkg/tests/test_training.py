"""Trainer tests: losses, optimizer, two-phase schedule, checkpoints."""

import math

import numpy as np
import pytest

from helpers import assert_grad_close, finite_difference_grad
from nacap import aligner, data, decoder, encoder, training
from nacap import tensor as T
from nacap.data import EOS_ID, PAD_ID, CaptionExample, RegionFeatureSet
from nacap.params import (
    CheckpointError,
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from nacap.config import RunConfig
from nacap.tensor import Tape, backward
from nacap.training import Adam, LossBreakdown, TrainingError, train, train_step


def _tiny_example(seed=0, k=2, d_in=4, n=4, vocab=20):
    rng = np.random.default_rng(seed)
    regions = RegionFeatureSet(rng.normal(size=(k, d_in)))
    target = list(rng.integers(4, vocab, size=n - 1)) + [EOS_ID]
    coarse = [target[0], target[2]]
    return CaptionExample("toy", regions, target, coarse)


def _tiny_params(vocab=20, d_model=8, d_hidden=16, d_in=4, seed=0, n_max=8):
    return init_params(
        ModelConfig(vocab_size=vocab, d_model=d_model, d_hidden=d_hidden,
                    heads=2, d_in=d_in, n_max=n_max, m_max=4, dropout=0.0),
        seed=seed,
    )


def _joint_loss(example, params, phase):
    lp, lf, ll = training.example_losses(example, params, "fnic", phase)
    return T.add(T.add(lp, lf), T.scale(ll, 0.1))


class TestLossBasics:
    def test_breakdown_identity(self):
        params = _tiny_params()
        opt = Adam(params, lr=0.0)
        b = train_step([_tiny_example()], params, opt, "fnic",
                       training.PHASE_NONDETERMINISTIC, lambda_length=0.1)
        assert b.total == pytest.approx(b.position + b.fine + 0.1 * b.length,
                                        abs=1e-12)
        assert b.position >= 0 and b.fine >= 0 and b.length >= 0

    def test_position_loss_matches_nll_scan(self):
        params = _tiny_params()
        ex = _tiny_example()
        image = encoder.encode(ex.regions, params)
        dist = aligner.teacher_forced(ex.coarse, image, params)
        gold = list(ex.coarse) + [EOS_ID]
        want = -np.mean(
            [math.log(dist.probs.data[i, g]) for i, g in enumerate(gold)]
        )
        got = T.cross_entropy(dist.logits, gold, pad_id=PAD_ID).item()
        assert abs(got - want) < 1e-9

    def test_empty_batch_rejected(self):
        params = _tiny_params()
        opt = Adam(params)
        with pytest.raises(TrainingError):
            train_step([], params, opt, "fnic", training.PHASE_DETERMINISTIC)

    def test_non_finite_loss_aborts_with_scene_ids(self):
        params = _tiny_params()
        params["encoder.weight"].data[:] = np.nan
        opt = Adam(params)
        with pytest.raises(TrainingError, match="toy"):
            train_step([_tiny_example()], params, opt, "fnic",
                       training.PHASE_DETERMINISTIC)

    def test_baseline_modes_produce_losses(self):
        params = _tiny_params()
        opt = Adam(params)
        ex = _tiny_example()
        b_at = train_step([ex], params, opt, "at",
                          training.PHASE_DETERMINISTIC)
        assert b_at.position == 0.0 and b_at.length == 0.0 and b_at.fine > 0
        b_na = train_step([ex], params, opt, "naic",
                          training.PHASE_DETERMINISTIC)
        assert b_na.position == 0.0 and b_na.fine > 0 and b_na.length > 0


class TestPhaseConsistency:
    def test_onehot_gold_reproduces_deterministic_fine_loss(self):
        params = _tiny_params()
        ex = _tiny_example()
        image = encoder.encode(ex.regions, params)
        n = len(ex.target)

        det_inp = decoder.build_input_deterministic(ex.coarse, n, params)
        det_out = decoder.decode_parallel(det_inp, image, params)
        det_loss = T.cross_entropy(det_out.logits, ex.target, PAD_ID).item()

        hard = np.zeros((len(ex.coarse), params.config.vocab_size))
        hard[np.arange(len(ex.coarse)), ex.coarse] = 1.0
        soft_inp = decoder.build_input_nondeterministic(
            T.Tensor(hard), n, params
        )
        soft_out = decoder.decode_parallel(soft_inp, image, params)
        soft_loss = T.cross_entropy(soft_out.logits, ex.target, PAD_ID).item()
        assert abs(det_loss - soft_loss) < 1e-9


class TestGradients:
    @pytest.mark.parametrize("phase", [training.PHASE_DETERMINISTIC,
                                       training.PHASE_NONDETERMINISTIC])
    def test_joint_loss_gradients_spot_check(self, phase):
        params = _tiny_params()
        ex = _tiny_example()
        with Tape() as tape:
            loss = _joint_loss(ex, params, phase)
            backward(loss, tape)
        picks = ["aligner.gru_input_weight", "decoder.layer0.inter_attn.key_weight",
                 "embedding.table", "length_head.weight", "encoder.bias"]
        for name in picks:
            leaf = params[name]
            got = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            want = finite_difference_grad(
                lambda: _joint_loss(ex, params, phase).item(), leaf
            )
            assert_grad_close(got, want)


class TestAdam:
    def test_lr_zero_is_bitwise_noop(self):
        params = _tiny_params()
        before = {n: t.data.copy() for n, t in params.items()}
        opt = Adam(params, lr=0.0)
        ex = _tiny_example()
        for _ in range(3):
            train_step([ex], params, opt, "fnic",
                       training.PHASE_NONDETERMINISTIC)
        for name, t in params.items():
            assert (t.data == before[name]).all(), name

    def test_updates_reduce_loss_on_one_batch(self):
        params = _tiny_params()
        opt = Adam(params, lr=5e-3)
        ex = _tiny_example()
        first = train_step([ex], params, opt, "fnic",
                           training.PHASE_DETERMINISTIC).total
        for _ in range(60):
            last = train_step([ex], params, opt, "fnic",
                              training.PHASE_DETERMINISTIC).total
        assert last < first


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        params = _tiny_params(seed=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {"mode": "fnic", "note": 1})
        loaded, meta = load_checkpoint(path)
        assert meta == {"mode": "fnic", "note": 1}
        assert loaded.config == params.config
        assert sorted(loaded.names()) == sorted(params.names())
        for name in params.names():
            assert (loaded[name].data == params[name].data).all(), name

    def test_corrupt_magic_rejected(self, tmp_path):
        params = _tiny_params()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch_explicit(self, tmp_path):
        params = _tiny_params()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        blob = bytearray(path.read_bytes())
        blob[8:12] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        params = _tiny_params()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 17])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)


def _mini_run_config(seed=0):
    return RunConfig(
        d_model=16, d_hidden=32, heads=2, dropout=0.1,
        lr=1e-3, batch_size=8, epochs_phase1=1, epochs_phase2=1,
        seed=seed, min_count=1, k_max=4, d_in=8, scenes=10,
        n_max=16, m_max=6,
    )


def _mini_records(seed=0, n=10, d_in=8):
    grammar = data.Grammar(k_max=4, d_in=d_in)
    return data.generate_corpus(seed, n, grammar)


class TestTrainLoop:
    def test_two_runs_same_seed_bit_identical(self, tmp_path):
        config = _mini_run_config(seed=3)
        records = _mini_records(seed=3)
        p1 = train(config, records, tmp_path / "run1", mode="fnic",
                   epoch_checkpoints=False)
        p2 = train(config, records, tmp_path / "run2", mode="fnic",
                   epoch_checkpoints=False)
        assert p1.read_bytes() == p2.read_bytes()
        log1 = (tmp_path / "run1" / "fnic-train-log.csv").read_text()
        log2 = (tmp_path / "run2" / "fnic-train-log.csv").read_text()
        assert log1 == log2

    def test_hyperparameters_echoed_in_metadata(self, tmp_path):
        config = _mini_run_config()
        path = train(config, _mini_records(), tmp_path, mode="fnic",
                     epoch_checkpoints=False)
        _, meta = load_checkpoint(path)
        assert meta["lr"] == config.lr
        assert meta["betas"] == [0.8, 0.999]
        assert meta["epochs"] == 2
        assert meta["mode"] == "fnic"
        assert len(meta["vocab"]) > 0

    def test_csv_log_schema_and_phases(self, tmp_path):
        config = _mini_run_config()
        train(config, _mini_records(), tmp_path, mode="fnic",
              epoch_checkpoints=False)
        lines = (tmp_path / "fnic-train-log.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,phase,L,L_P,L_F,L_len"
        assert lines[1].split(",")[1] == "deterministic"
        assert lines[2].split(",")[1] == "nondeterministic"

    def test_epoch_checkpoints_written(self, tmp_path):
        config = _mini_run_config()
        train(config, _mini_records(), tmp_path, mode="fnic")
        assert (tmp_path / "fnic-epoch001.ckpt").exists()
        assert (tmp_path / "fnic-epoch002.ckpt").exists()
        assert (tmp_path / "vocab.txt").exists()

    def test_overfit_small_corpus(self, tmp_path):
        # 200 steps over a 50-example corpus must cut the loss
        records = _mini_records(seed=1, n=20)
        captions = [c for r in records for c in r.captions]
        vocab = data.build_vocabulary(captions, min_count=1)
        examples = data.build_examples(records, vocab)[:50]
        params = init_params(
            ModelConfig(vocab_size=vocab.size, d_model=16, d_hidden=32,
                        heads=2, d_in=8, n_max=16, m_max=6, dropout=0.0),
            seed=0,
        )
        opt = Adam(params, lr=1e-3)
        rng = np.random.default_rng(0)
        first = None
        for step in range(200):
            batch = [examples[i] for i in rng.integers(0, len(examples), size=8)]
            b = train_step(batch, params, opt, "fnic",
                           training.PHASE_DETERMINISTIC)
            if first is None:
                first = b.total
        assert b.total < first
