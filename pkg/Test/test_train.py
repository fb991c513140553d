#!/usr/bin/env python
"""
Unit tests for class-weighted sampling, the optimizer, the training loop and checkpoints.
"""
import os
import sys
import tempfile
import unittest
from collections import Counter

import torch

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'scr', 'Extractor'))

from config import ModelConfig, TrainConfig
from corpus.models import label_table
from errors import CheckpointIOError, EmptyInput, FormatVersionMismatch, NonFiniteGradient, ShapeMismatch
from model import init_params, loss_and_grad, predict_logits
from tokenizer import BOS_ID, EOS_ID, RESERVED, EncodedExample, Vocabulary
from train import (
    Checkpoint,
    OptState,
    adam_step,
    class_weights,
    clip_global_norm,
    global_norm,
    load_checkpoint,
    save_checkpoint,
    train,
    weighted_sample,
)

LABELS = label_table()


def synthetic_vocab(size=50):
    return Vocabulary([*RESERVED, "$", "#", *(f"w{i}" for i in range(size - 6))])


def synthetic_examples(n=64, n_classes=11, seed=0):
    """Each class has its own cue token; the rest of the sequence is noise"""
    g = torch.Generator().manual_seed(seed)
    examples = []
    for i in range(n):
        label = i % n_classes
        noise = torch.randint(6 + n_classes, 50, (6,), generator=g).tolist()
        ids = (BOS_ID, 4, noise[0], 4, 6 + label, 5, noise[1], 5, *noise[2:], EOS_ID)
        examples.append(EncodedExample(ids, (1, 4), (5, 8), label, str(i), "T1", "T2"))
    return examples


class TestSampling(unittest.TestCase):

    def test_inverse_frequency_weights(self):
        weights = class_weights([0, 0, 0, 1])
        self.assertTrue(torch.allclose(weights, torch.tensor([4 / 3, 4 / 3, 4 / 3, 4.0], dtype=torch.float64)))

    def test_single_class_is_uniform(self):
        weights = class_weights([2, 2, 2])
        self.assertEqual(len(set(weights.tolist())), 1)

    def test_imbalance_ratio(self):
        labels = [0] * 5392 + [1] * 658
        weights = class_weights(labels)
        self.assertAlmostEqual(float(weights[-1] / weights[0]), 5392 / 658, places=9)

    def test_empty_labels(self):
        with self.assertRaises(EmptyInput):
            class_weights([])

    def test_per_class_frequency_is_uniform(self):
        labels = [0] * 1000 + [1] * 100 + [2] * 10 + [3] * 5
        draws = weighted_sample(class_weights(labels), 100000, seed=42)
        counts = Counter(labels[i] for i in draws)
        for label in range(4):
            self.assertAlmostEqual(counts[label] / 100000, 0.25, delta=0.02)

    def test_weights_proportional(self):
        draws = weighted_sample(torch.tensor([3.0, 1.0]), 400000, seed=1)
        self.assertAlmostEqual(draws.count(0) / 400000, 0.75, delta=0.005)

    def test_same_seed_same_draws(self):
        weights = class_weights([0, 0, 1, 2])
        self.assertEqual(weighted_sample(weights, 50, seed=9), weighted_sample(weights, 50, seed=9))

    def test_needs_at_least_one_draw(self):
        with self.assertRaises(ValueError):
            weighted_sample(torch.tensor([1.0]), 0)


class TestOptimizer(unittest.TestCase):

    def test_clip_halves_norm_two(self):
        grads = {"a": torch.tensor([2.0], dtype=torch.float64), "b": torch.zeros(3, dtype=torch.float64)}
        clipped = clip_global_norm(grads, 1.0)
        self.assertEqual(float(clipped["a"]), 1.0)

    def test_clip_leaves_small_norm(self):
        grads = {"a": torch.tensor([0.3, 0.4], dtype=torch.float64)}
        self.assertIs(clip_global_norm(grads, 1.0), grads)

    def test_clip_bound_over_random_trials(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(1000):
            grads = {
                "w": torch.randn(4, 3, generator=g, dtype=torch.float64) * 3,
                "b": torch.randn(5, generator=g, dtype=torch.float64),
            }
            self.assertLessEqual(global_norm(clip_global_norm(grads, 1.0)), 1.0 + 1e-12)

    def test_clip_rejects_non_finite(self):
        with self.assertRaises(NonFiniteGradient):
            clip_global_norm({"a": torch.tensor([float("nan")])}, 1.0)

    def test_first_adam_step(self):
        params = {"x": torch.zeros(1, dtype=torch.float64)}
        grads = {"x": torch.ones(1, dtype=torch.float64)}
        new, opt = adam_step(params, grads, OptState.zeros(params), TrainConfig())
        self.assertAlmostEqual(float(new["x"]), -3e-5, delta=1e-12)
        self.assertEqual(opt.step, 1)
        self.assertEqual(float(params["x"]), 0.0)

    def test_zero_gradient_changes_nothing(self):
        params = {"x": torch.tensor([1.5, -2.0], dtype=torch.float64)}
        grads = {"x": torch.zeros(2, dtype=torch.float64)}
        new, _ = adam_step(params, grads, OptState.zeros(params), TrainConfig())
        self.assertTrue(torch.equal(new["x"], params["x"]))

    def test_warmup_scales_first_steps(self):
        params = {"x": torch.zeros(1, dtype=torch.float64)}
        grads = {"x": torch.ones(1, dtype=torch.float64)}
        new, _ = adam_step(params, grads, OptState.zeros(params), TrainConfig(warmup_steps=4))
        self.assertAlmostEqual(float(new["x"]), -3e-5 / 4, delta=1e-12)

    def test_loss_descends_on_a_fixed_batch(self):
        cfg = ModelConfig(vocab_size=50, hidden=16, layers=4, heads=2, ff_dim=32, max_positions=32,
                          cnn_filters_per_size=4, head_dim=8, dropout=0.0)
        settings = TrainConfig(learning_rate=1e-3)
        params = init_params(cfg, 0)
        batch = synthetic_examples(8)
        opt = OptState.zeros(params)
        first, _ = loss_and_grad(params, batch, cfg)
        for _ in range(50):
            _, grads = loss_and_grad(params, batch, cfg)
            params, opt = adam_step(params, clip_global_norm(grads, 1.0), opt, settings)
        last, _ = loss_and_grad(params, batch, cfg)
        self.assertLess(last, first)


class TestTraining(unittest.TestCase):

    def setUp(self):
        self.vocab = synthetic_vocab()
        self.examples = synthetic_examples()

    def test_overfits_a_small_separable_set(self):
        model_cfg = ModelConfig(hidden=32, layers=4, heads=4, ff_dim=64, max_positions=32,
                                cnn_filters_per_size=8, head_dim=16)
        train_cfg = TrainConfig(epochs=200, dropout=0.1, learning_rate=1e-3, seed=3)
        ckpt = train(self.examples, model_cfg, train_cfg, self.vocab, LABELS)
        predicted = predict_logits(ckpt.params, self.examples, ckpt.model_cfg).argmax(dim=-1)
        gold = torch.tensor([ex.label_id for ex in self.examples])
        self.assertGreaterEqual(float((predicted == gold).double().mean()), 0.95)

    def test_same_seed_is_bitwise_reproducible(self):
        model_cfg = ModelConfig(hidden=16, layers=4, heads=2, ff_dim=32, max_positions=32,
                                cnn_filters_per_size=4, head_dim=8)
        train_cfg = TrainConfig(epochs=2, batch_size=16, gradient_accumulation_steps=2, learning_rate=1e-3)
        a = train(self.examples, model_cfg, train_cfg, self.vocab, LABELS)
        b = train(self.examples, model_cfg, train_cfg, self.vocab, LABELS)
        for name in a.params:
            self.assertTrue(torch.equal(a.params[name], b.params[name]), name)

    def test_zero_epochs_returns_initial_params(self):
        model_cfg = ModelConfig(hidden=16, layers=4, heads=2, ff_dim=32, max_positions=32)
        ckpt = train(self.examples, model_cfg, TrainConfig(epochs=0, seed=5), self.vocab, LABELS)
        initial = init_params(ckpt.model_cfg, 5)
        self.assertTrue(all(torch.equal(initial[n], ckpt.params[n]) for n in initial))
        self.assertEqual(ckpt.model_cfg.vocab_size, 50)
        self.assertEqual(ckpt.model_cfg.n_classes, 11)

    def test_epoch_log_lines(self):
        model_cfg = ModelConfig(hidden=16, layers=4, heads=2, ff_dim=32, max_positions=32,
                                cnn_filters_per_size=4, head_dim=8)
        with tempfile.TemporaryDirectory() as tmp:
            log = os.path.join(tmp, "train.log")
            train(self.examples, model_cfg, TrainConfig(epochs=2), self.vocab, LABELS, log_path=log)
            with open(log, encoding="utf-8") as f:
                lines = f.read().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertRegex(lines[1], r"^epoch 2\tloss [0-9.]+\ttrain_acc [0-9.]+$")

    def test_empty_examples(self):
        with self.assertRaises(EmptyInput):
            train([], ModelConfig(), TrainConfig(), self.vocab, LABELS)


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "model.ckpt")
        cfg = ModelConfig(vocab_size=50, hidden=16, layers=4, heads=2, ff_dim=32, max_positions=32,
                          cnn_window_sizes=[2, 3], cnn_filters_per_size=4, head_dim=8, include_cls_path=False)
        self.ckpt = Checkpoint(
            model_cfg=cfg,
            params=init_params(cfg, 123),
            vocab=synthetic_vocab(),
            labels=LABELS,
            train_cfg=TrainConfig(learning_rate=1e-4, epochs=3),
            epoch=3,
            seed=123,
        )

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        save_checkpoint(self.ckpt, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.model_cfg, self.ckpt.model_cfg)
        self.assertEqual(loaded.train_cfg, self.ckpt.train_cfg)
        self.assertEqual(loaded.labels, LABELS)
        self.assertEqual(loaded.vocab, self.ckpt.vocab)
        self.assertEqual((loaded.epoch, loaded.seed), (3, 123))
        self.assertEqual(list(loaded.params), list(self.ckpt.params))
        for name, tensor in self.ckpt.params.items():
            self.assertTrue(torch.equal(loaded.params[name], tensor), name)

    def test_truncated_file(self):
        save_checkpoint(self.ckpt, self.path)
        with open(self.path, "rb") as f:
            raw = f.read()
        for cut in (len(raw) - 8, raw.index(b"\nEND\n") - 10, 3):
            with self.subTest(cut=cut):
                with open(self.path, "wb") as f:
                    f.write(raw[:cut])
                with self.assertRaises((CheckpointIOError, FormatVersionMismatch)):
                    load_checkpoint(self.path)

    def test_wrong_version(self):
        save_checkpoint(self.ckpt, self.path)
        with open(self.path, "rb") as f:
            raw = f.read()
        with open(self.path, "wb") as f:
            f.write(raw.replace(b"REXT1", b"REXT9", 1))
        with self.assertRaises(FormatVersionMismatch):
            load_checkpoint(self.path)

    def test_manifest_shape_disagreeing_with_payload(self):
        save_checkpoint(self.ckpt, self.path)
        with open(self.path, "rb") as f:
            raw = f.read()
        with open(self.path, "wb") as f:
            f.write(raw.replace(b"tensor=embed.tokens\t50,16", b"tensor=embed.tokens\t16,50", 1))
        with self.assertRaises(ShapeMismatch):
            load_checkpoint(self.path)

    def _edit_header(self, old, new):
        save_checkpoint(self.ckpt, self.path)
        with open(self.path, "rb") as f:
            raw = f.read()
        self.assertIn(old, raw)
        with open(self.path, "wb") as f:
            f.write(raw.replace(old, new, 1))

    def test_malformed_payload_size(self):
        self._edit_header(b"\npayload=", b"\npayload=x")
        with self.assertRaises(CheckpointIOError):
            load_checkpoint(self.path)

    def test_malformed_manifest_fields(self):
        for old, new in (
            (b"tensor=embed.tokens\t50,16", b"tensor=embed.tokens\t50,x"),
            (b"tensor=embed.tokens\t50,16\tfloat64\t0\t", b"tensor=embed.tokens\t50,16\tfloat64\tzero\t"),
            (b"tensor=embed.tokens\t50,16\tfloat64", b"tensor=embed.tokens\t50,16"),
            (b"tensor=embed.tokens\t50,16\tfloat64", b"tensor=embed.tokens\t50,16\tint8"),
        ):
            with self.subTest(new=new):
                self._edit_header(old, new)
                with self.assertRaises(ShapeMismatch):
                    load_checkpoint(self.path)

    def test_malformed_metadata(self):
        self._edit_header(b"meta.epoch=3", b"meta.epoch=three")
        with self.assertRaises(CheckpointIOError):
            load_checkpoint(self.path)
        self._edit_header(b"label=INHIBITOR", b"label=inhibitor")
        with self.assertRaises(CheckpointIOError):
            load_checkpoint(self.path)

    def test_max_seq_length_is_stored(self):
        self.assertIsNone(self._saved_and_loaded().max_seq_length)
        self.ckpt.max_seq_length = 24
        self.assertEqual(self._saved_and_loaded().max_seq_length, 24)

    def _saved_and_loaded(self):
        save_checkpoint(self.ckpt, self.path)
        return load_checkpoint(self.path)

    def test_missing_file(self):
        with self.assertRaises(CheckpointIOError):
            load_checkpoint(os.path.join(self.tmp.name, "absent.ckpt"))


if __name__ == '__main__':
    unittest.main()
