#!/usr/bin/env python
"""
Tests for the command line front-end and configuration precedence.
"""
import io
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'scr', 'Extractor'))

from cli import build_parser, main, resolve_config
from errors import ConfigError

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')
CORPUS = [
    "--abstracts", os.path.join(FIXTURES, 'abstracts.tsv'),
    "--entities", os.path.join(FIXTURES, 'entities.tsv'),
    "--relations", os.path.join(FIXTURES, 'relations.tsv'),
]
SMALL_MODEL = [
    "--hidden", "16", "--heads", "2", "--ff-dim", "32", "--max-positions", "64",
    "--max-seq-length", "64", "--cnn-filters-per-size", "4", "--head-dim", "8",
]


def run(argv):
    """Run the CLI and return (exit code, stdout, stderr)"""
    out, err = io.StringIO(), io.StringIO()
    with patch('sys.stdout', out), patch('sys.stderr', err):
        code = main(argv + ["--log-level", "WARNING"])
    return code, out.getvalue(), err.getvalue()


class TestConfiguration(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config = os.path.join(self.tmp.name, 'run.env')

    def tearDown(self):
        self.tmp.cleanup()

    def _resolve(self, argv, config_text=None):
        if config_text is not None:
            with open(self.config, 'w', encoding='utf-8') as f:
                f.write(config_text)
            argv = argv + ["--config", self.config]
        return resolve_config(build_parser().parse_args(["train"] + argv))

    def test_defaults(self):
        cfg = self._resolve([])
        self.assertEqual(cfg.train.learning_rate, 3e-5)
        self.assertEqual(cfg.train.epochs, 7)
        self.assertEqual(cfg.train.batch_size, 32)
        self.assertEqual(cfg.max_seq_length, 512)
        self.assertEqual(cfg.model.head, "rbert-cnn")
        self.assertTrue(cfg.model.include_cls_path)
        self.assertEqual(cfg.splitter.non_terminal_tokens, ["vivo", "Vmax"])

    def test_flag_overrides_file(self):
        cfg = self._resolve(["--learning-rate", "2e-4"], "# comment\nlearning_rate=1e-4\nepochs=3\n")
        self.assertEqual(cfg.train.learning_rate, 2e-4)
        self.assertEqual(cfg.train.epochs, 3)

    def test_shared_keys_reach_every_section(self):
        cfg = self._resolve(["--dropout", "0.1", "--seed", "9"])
        self.assertEqual(cfg.model.dropout, 0.1)
        self.assertEqual(cfg.train.dropout, 0.1)
        self.assertEqual((cfg.seed, cfg.train.seed), (9, 9))

    def test_variant_flags(self):
        cfg = self._resolve(["--head", "model1", "--cls-path", "off", "--cnn-window-sizes", "2,3"])
        self.assertEqual(cfg.model.head, "model1")
        self.assertFalse(cfg.model.include_cls_path)
        self.assertEqual(cfg.model.cnn_window_sizes, [2, 3])

    def test_unknown_key_in_file(self):
        with self.assertRaises(ConfigError):
            self._resolve([], "learning_rat=1e-4\n")

    def test_invalid_value(self):
        with self.assertRaises(ConfigError):
            self._resolve(["--layers", "2"])

    def test_sample_config_file_loads(self):
        sample = os.path.join(os.path.dirname(__file__), '..', 'scr', 'Extractor', 'config.env')
        cfg = resolve_config(build_parser().parse_args(["train", "--config", sample]))
        self.assertEqual(cfg.train.max_grad_norm, 1.0)
        self.assertEqual(cfg.model.cnn_window_sizes, [3, 4, 5])

    def test_unknown_head_is_a_usage_error(self):
        with patch('sys.stderr', io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                build_parser().parse_args(["train", "--head", "bert"])
        self.assertEqual(ctx.exception.code, 2)


class TestCommands(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.dir, name)

    def test_stats(self):
        code, out, _ = run(["stats"] + CORPUS)
        self.assertEqual(code, 0)
        self.assertIn("positive relations: 11", out.splitlines())
        self.assertIn("documents: 5", out.splitlines())

    def test_missing_file_names_the_path(self):
        missing = self.path("nope.tsv")
        code, out, err = run(["stats", "--abstracts", missing, "--entities", missing])
        self.assertEqual(code, 1)
        self.assertIn(missing, err)
        self.assertEqual(out, "")

    def test_preprocess_is_deterministic(self):
        first, second = self.path("a.tsv"), self.path("b.tsv")
        code, out, _ = run(["preprocess"] + CORPUS + ["--output", first])
        self.assertEqual(code, 0)
        self.assertIn("cross-sentence skipped: 1", out)
        run(["preprocess"] + CORPUS + ["--output", second])
        with open(first, 'rb') as a, open(second, 'rb') as b:
            self.assertEqual(a.read(), b.read())
        with open(first, encoding='utf-8') as f:
            text = f.read()
        self.assertNotIn("AGONIST-INHIBITOR", text)

    def test_missing_required_setting(self):
        code, _, err = run(["train"])
        self.assertEqual(code, 1)
        self.assertIn("--examples", err)

    def test_pipeline_end_to_end(self):
        examples, vocab, ckpt = self.path("ex.tsv"), self.path("vocab.txt"), self.path("model.ckpt")
        preds, report_out, log = self.path("pred.tsv"), self.path("report.txt"), self.path("train.log")

        self.assertEqual(run(["preprocess"] + CORPUS + ["--output", examples])[0], 0)
        code, out, _ = run(["build-vocab", "--examples", examples, "--vocab", vocab])
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("vocabulary: "))

        code, _, err = run(["train", "--examples", examples, "--vocab", vocab, "--checkpoint", ckpt,
                            "--epochs", "2", "--batch-size", "4", "--log", log] + SMALL_MODEL)
        self.assertEqual(code, 0, err)
        with open(log, encoding='utf-8') as f:
            self.assertEqual(len(f.read().splitlines()), 2)

        code, _, err = run(["predict", "--checkpoint", ckpt, "--examples", examples,
                            "--predictions", preds])
        self.assertEqual(code, 0, err)

        code, out, err = run(["evaluate", "--predictions", preds,
                              "--gold", os.path.join(FIXTURES, 'relations.tsv'), "--report-out", report_out])
        self.assertEqual(code, 0, err)
        self.assertTrue(out.splitlines()[-1].startswith("Global results across all interactions types\t"))
        with open(report_out, encoding='utf-8') as f:
            self.assertEqual(f.read(), out)

    def test_predict_from_raw_corpus(self):
        examples, vocab, ckpt = self.path("ex.tsv"), self.path("vocab.txt"), self.path("model.ckpt")
        run(["preprocess"] + CORPUS + ["--output", examples])
        run(["build-vocab", "--examples", examples, "--vocab", vocab])
        run(["train", "--examples", examples, "--vocab", vocab, "--checkpoint", ckpt, "--epochs", "0"] + SMALL_MODEL)
        code, out, err = run(["predict", "--checkpoint", ckpt,
                              "--abstracts", CORPUS[1], "--entities", CORPUS[3]])
        self.assertEqual(code, 0, err)
        for line in out.splitlines():
            self.assertEqual(len(line.split("\t")), 4)
            self.assertNotIn("Other", line)

    def test_predict_length_comes_from_the_checkpoint(self):
        examples, vocab, ckpt = self.path("ex.tsv"), self.path("vocab.txt"), self.path("model.ckpt")
        run(["preprocess"] + CORPUS + ["--output", examples])
        run(["build-vocab", "--examples", examples, "--vocab", vocab])
        run(["train", "--examples", examples, "--vocab", vocab, "--checkpoint", ckpt, "--epochs", "0"] + SMALL_MODEL)
        code, _, err = run(["predict", "--checkpoint", ckpt, "--examples", examples])
        self.assertEqual(code, 0, err)
        code, _, err = run(["predict", "--checkpoint", ckpt, "--examples", examples, "--max-seq-length", "128"])
        self.assertEqual(code, 1)
        self.assertIn("exceeds max_positions 64", err)

    def test_corrupt_checkpoint_is_reported(self):
        ckpt = self.path("broken.ckpt")
        with open(ckpt, 'wb') as f:
            f.write(b"REXT1\npayload=x\nEND\n")
        code, _, err = run(["predict", "--checkpoint", ckpt, "--examples", self.path("missing.tsv")])
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith("error: "), err)


if __name__ == '__main__':
    unittest.main()
