"""
Class-weighted training loop, optimizer and checkpoint persistence.

Every epoch draws len(examples) indices with replacement, each example
weighted by total / count(its class), so all classes are seen about equally
often. Batches follow draw order; gradients are accumulated, clipped by global
norm and applied with bias-corrected Adam.
"""
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import ValidationError
from torch.utils.data import WeightedRandomSampler

from config import ModelConfig, TrainConfig
from corpus.models import RelationLabel
from errors import (
    CheckpointIOError,
    EmptyInput,
    FormatVersionMismatch,
    NonFiniteGradient,
    ShapeMismatch,
    VocabMismatch,
)
from model import TRAIN, Params, batch_gradients, init_params, param_shapes, torch_dtype
from tokenizer import EncodedExample, Vocabulary

logger = logging.getLogger(__name__)

FORMAT_VERSION = "REXT1"
_END = "END"
_NUMPY_DTYPES = {"float64": "<f8", "float32": "<f4"}


def class_weights(labels: Sequence[int]) -> torch.Tensor:
    """Per-example weight N / n_c, N the number of examples and n_c the size of the example's class"""
    if not labels:
        raise EmptyInput("cannot weight an empty list of labels")
    ids = torch.as_tensor(list(labels), dtype=torch.long)
    counts = torch.bincount(ids).to(torch.float64)
    return len(labels) / counts[ids]


def weighted_sample(
    weights: torch.Tensor,
    n_draws: int,
    seed: int = 0,
    generator: Optional[torch.Generator] = None,
) -> List[int]:
    """Draw n_draws indices with replacement, index i with probability proportional to weights[i]"""
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    if generator is None:
        generator = torch.Generator().manual_seed(seed)
    sampler = WeightedRandomSampler(
        torch.as_tensor(weights, dtype=torch.float64), n_draws, replacement=True, generator=generator
    )
    return list(sampler)


def global_norm(grads: Dict[str, torch.Tensor]) -> float:
    return math.sqrt(sum(float(g.pow(2).sum()) for g in grads.values()))


def clip_global_norm(grads: Dict[str, torch.Tensor], max_norm: float) -> Dict[str, torch.Tensor]:
    for name, grad in grads.items():
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradient(f"gradient of {name} is not finite")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: grad * scale for name, grad in grads.items()}


@dataclass
class OptState:
    m: Dict[str, torch.Tensor]
    v: Dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def zeros(cls, params: Params) -> "OptState":
        return cls(
            m={name: torch.zeros_like(p) for name, p in params.items()},
            v={name: torch.zeros_like(p) for name, p in params.items()},
        )


def adam_step(params: Params, grads: Params, opt: OptState, cfg: TrainConfig) -> Tuple[Params, OptState]:
    """
    One bias-corrected Adam update

    Args:
        params: current parameters (left untouched)
        grads: gradient per parameter name
        opt: moment accumulators and step counter
        cfg: learning rate, betas, epsilon, warmup and decoupled weight decay

    Returns:
        New parameters and new optimizer state
    """
    step = opt.step + 1
    lr = cfg.learning_rate
    if cfg.warmup_steps:
        lr *= min(1.0, step / cfg.warmup_steps)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correction1, correction2 = 1 - b1 ** step, 1 - b2 ** step

    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * opt.m[name] + (1 - b1) * g
        v = b2 * opt.v[name] + (1 - b2) * g * g
        update = (m / correction1) / ((v / correction2).sqrt() + cfg.adam_epsilon)
        updated = p - lr * update
        if cfg.weight_decay:
            updated = updated - lr * cfg.weight_decay * p
        new_params[name], new_m[name], new_v[name] = updated, m, v
    return new_params, OptState(m=new_m, v=new_v, step=step)


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: Params
    vocab: Vocabulary
    labels: List[RelationLabel]
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    epoch: int = 0
    seed: int = 42
    max_seq_length: Optional[int] = None


def _batches(indices: List[int], size: int) -> List[List[int]]:
    return [indices[i:i + size] for i in range(0, len(indices), size)]


def train(
    examples: Sequence[EncodedExample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    labels: Sequence[RelationLabel],
    log_path: Optional[str] = None,
) -> Checkpoint:
    """
    Train a fresh model on encoded examples

    The vocabulary fixes vocab_size, the label table fixes n_classes and the
    training dropout replaces the model dropout. Parameter initialization, the
    sampler and dropout masks each use their own generator seeded from
    train_cfg.seed, so the run is reproducible bit for bit.
    """
    if not examples:
        raise EmptyInput("no training examples")
    if model_cfg.vocab_size and model_cfg.vocab_size != len(vocab):
        raise VocabMismatch(f"model vocab_size {model_cfg.vocab_size} != vocabulary size {len(vocab)}")
    model_cfg = model_cfg.model_copy(
        update={"vocab_size": len(vocab), "n_classes": len(labels), "dropout": train_cfg.dropout}
    )

    seed = train_cfg.seed
    params = init_params(model_cfg, seed)
    opt = OptState.zeros(params)
    sampler_gen = torch.Generator().manual_seed(seed)
    dropout_gen = torch.Generator().manual_seed(seed + 1)
    weights = class_weights([ex.label_id for ex in examples])
    steps = train_cfg.gradient_accumulation_steps

    logger.info(
        "Training %s head on %d examples for %d epochs (batch %d, lr %g)",
        model_cfg.head, len(examples), train_cfg.epochs, train_cfg.batch_size, train_cfg.learning_rate,
    )
    for epoch in range(1, train_cfg.epochs + 1):
        order = weighted_sample(weights, len(examples), generator=sampler_gen)
        batches = _batches(order, train_cfg.batch_size)
        total_loss, correct = 0.0, 0
        pending: Optional[Params] = None
        n_pending = 0
        for i, indices in enumerate(batches):
            batch = [examples[j] for j in indices]
            result = batch_gradients(params, batch, model_cfg, TRAIN, dropout_gen)
            total_loss += result.loss * len(batch)
            gold = torch.tensor([ex.label_id for ex in batch])
            correct += int((result.logits.argmax(dim=-1) == gold).sum())

            scaled = {name: g / steps for name, g in result.grads.items()}
            pending = scaled if pending is None else {n: pending[n] + scaled[n] for n in pending}
            n_pending += 1
            if n_pending == steps or i == len(batches) - 1:
                params, opt = adam_step(params, clip_global_norm(pending, train_cfg.max_grad_norm), opt, train_cfg)
                pending, n_pending = None, 0

        line = f"epoch {epoch}\tloss {total_loss / len(order):.6f}\ttrain_acc {correct / len(order):.4f}"
        logger.info(line)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    return Checkpoint(
        model_cfg=model_cfg,
        params=params,
        vocab=vocab,
        labels=list(labels),
        train_cfg=train_cfg,
        epoch=train_cfg.epochs,
        seed=seed,
    )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(item) for item in value)
    return str(value)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """
    Write a checkpoint: a text header, the line END, then raw little-endian tensors.

    The file is written next to its destination and moved into place, so a
    reader never sees a partial checkpoint.
    """
    dtype = _NUMPY_DTYPES[ckpt.model_cfg.dtype]
    header = [FORMAT_VERSION]
    header += [f"model.{k}={_format_value(v)}" for k, v in ckpt.model_cfg.model_dump().items()]
    header += [f"train.{k}={_format_value(v)}" for k, v in ckpt.train_cfg.model_dump().items()]
    header += [f"meta.epoch={ckpt.epoch}", f"meta.seed={ckpt.seed}"]
    if ckpt.max_seq_length is not None:
        header.append(f"meta.max_seq_length={ckpt.max_seq_length}")
    header += [f"label={label.value}" for label in ckpt.labels]
    header += [f"vocab={token}" for token in ckpt.vocab.tokens]

    payloads, offset = [], 0
    for name, tensor in ckpt.params.items():
        data = tensor.detach().cpu().numpy().astype(dtype).tobytes()
        shape = ",".join(str(d) for d in tensor.shape)
        header.append(f"tensor={name}\t{shape}\t{ckpt.model_cfg.dtype}\t{offset}\t{len(data)}")
        payloads.append(data)
        offset += len(data)
    header += [f"payload={offset}", _END]

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("utf-8"))
            for data in payloads:
                f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.info("Saved checkpoint with %d tensors to %s", len(payloads), path)


def _parse_header(lines: List[str]) -> Tuple[Dict[str, str], Dict[str, str], Dict[str, str], List[str], List[str], List[str]]:
    model_values, train_values, meta, labels, tokens, tensors = {}, {}, {}, [], [], []
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointIOError(f"malformed checkpoint header line {line!r}")
        if key.startswith("model."):
            model_values[key[6:]] = value
        elif key.startswith("train."):
            train_values[key[6:]] = value
        elif key.startswith("meta.") or key == "payload":
            meta[key] = value
        elif key == "label":
            labels.append(value)
        elif key == "vocab":
            tokens.append(value)
        elif key == "tensor":
            tensors.append(value)
        else:
            raise CheckpointIOError(f"unknown checkpoint header key {key!r}")
    return model_values, train_values, meta, labels, tokens, tensors


def _header_int(value: Optional[str], what: str, path: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise CheckpointIOError(f"{path}: {what} is not an integer: {value!r}") from None


def _manifest_entry(entry: str) -> Tuple[str, Tuple[int, ...], np.dtype, int, int]:
    """name, shape, numpy dtype, offset and byte count of one tensor= line"""
    fields = entry.split("\t")
    if len(fields) != 5:
        raise ShapeMismatch(f"tensor entry {entry!r} has {len(fields)} fields, expected 5")
    name, shape_text, dtype_name, offset, nbytes = fields
    if dtype_name not in _NUMPY_DTYPES:
        raise ShapeMismatch(f"tensor {name} has unknown dtype {dtype_name!r}")
    try:
        shape = tuple(int(d) for d in shape_text.split(",") if d)
        return name, shape, np.dtype(_NUMPY_DTYPES[dtype_name]), int(offset), int(nbytes)
    except ValueError:
        raise ShapeMismatch(f"tensor {name} has a malformed manifest entry {entry!r}") from None


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {e}") from e

    first = raw.split(b"\n", 1)[0].decode("utf-8", errors="replace")
    if first != FORMAT_VERSION:
        raise FormatVersionMismatch(first, FORMAT_VERSION)
    marker = f"\n{_END}\n".encode("utf-8")
    cut = raw.find(marker)
    if cut < 0:
        raise CheckpointIOError(f"{path}: checkpoint header is truncated")
    try:
        lines = raw[:cut].decode("utf-8").split("\n")[1:]
    except UnicodeDecodeError as e:
        raise CheckpointIOError(f"{path}: checkpoint header is not UTF-8: {e}") from e
    payload = raw[cut + len(marker):]

    model_values, train_values, meta, label_values, tokens, tensors = _parse_header(lines)
    declared = _header_int(meta.get("payload"), "payload size", path)
    if declared != len(payload):
        raise CheckpointIOError(f"{path}: payload holds {len(payload)} bytes, header says {declared}")
    try:
        model_cfg = ModelConfig(**model_values)
        train_cfg = TrainConfig(**train_values)
    except ValidationError as e:
        raise CheckpointIOError(f"{path}: invalid settings in checkpoint header: {e}") from e
    try:
        vocab = Vocabulary(tokens)
        labels = [RelationLabel(value) for value in label_values]
    except (VocabMismatch, ValueError) as e:
        raise CheckpointIOError(f"{path}: invalid vocabulary or label table: {e}") from e
    expected = param_shapes(model_cfg)
    dtype = torch_dtype(model_cfg)

    params: Params = {}
    for entry in tensors:
        name, shape, np_dtype, offset, nbytes = _manifest_entry(entry)
        if expected.get(name) != shape:
            raise ShapeMismatch(f"tensor {name} has shape {shape}, the model config expects {expected.get(name)}")
        if nbytes != math.prod(shape) * np_dtype.itemsize or offset < 0 or offset + nbytes > len(payload):
            raise ShapeMismatch(f"tensor {name}: {nbytes} bytes at offset {offset} do not hold shape {shape}")
        array = np.frombuffer(payload, dtype=np_dtype, count=math.prod(shape), offset=offset).reshape(shape)
        params[name] = torch.from_numpy(array.copy()).to(dtype)
    missing = set(expected) - set(params)
    if missing:
        raise ShapeMismatch(f"checkpoint lacks tensors: {', '.join(sorted(missing))}")

    max_seq_length = meta.get("meta.max_seq_length")
    return Checkpoint(
        model_cfg=model_cfg,
        params=params,
        vocab=vocab,
        labels=labels,
        train_cfg=train_cfg,
        epoch=_header_int(meta.get("meta.epoch", "0"), "epoch", path),
        seed=_header_int(meta.get("meta.seed", "0"), "seed", path),
        max_seq_length=None if max_seq_length is None else _header_int(max_seq_length, "max_seq_length", path),
    )
