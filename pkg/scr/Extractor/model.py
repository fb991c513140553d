"""
Transformer encoder with the two relation classification heads.

model1     the <s> vector of the last layer through dense -> tanh -> dense
rbert-cnn  a CNN over the last four layers stacked along the sequence axis,
           averaged chemical and protein span vectors, optionally the <s>
           vector, each through its own affine map, concatenated and fed to
           a final dense layer

Parameters are a flat dict of named tensors so that gradients, optimizer
state and checkpoints all share one naming scheme. Gradients come from
reverse-mode autograd; grad_check verifies them against central differences.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch.nn.utils.rnn import pad_sequence

from config import ModelConfig
from errors import ConfigError, IdOutOfRange, InsufficientLayers, ModelError, SequenceTooLong, SpanOutOfRange
from tokenizer import PAD_ID, EncodedExample

logger = logging.getLogger(__name__)

Params = Dict[str, torch.Tensor]
Span = Tuple[int, int]

LAYER_NORM_EPS = 1e-12
TRAIN, EVAL = "train", "eval"


def torch_dtype(cfg: ModelConfig) -> torch.dtype:
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered name -> shape table of every tensor the configured model uses"""
    H, V, C, D = cfg.hidden, cfg.vocab_size, cfg.n_classes, cfg.head_dim
    shapes: Dict[str, Tuple[int, ...]] = {
        "embed.tokens": (V, H),
        "embed.positions": (cfg.max_positions, H),
        "embed.norm.gain": (H,),
        "embed.norm.bias": (H,),
    }
    for layer in range(cfg.layers):
        prefix = f"layer{layer}."
        for proj in ("q", "k", "v", "o"):
            shapes[f"{prefix}attn.{proj}.weight"] = (H, H)
            shapes[f"{prefix}attn.{proj}.bias"] = (H,)
        shapes[f"{prefix}attn.norm.gain"] = (H,)
        shapes[f"{prefix}attn.norm.bias"] = (H,)
        shapes[f"{prefix}ffn.in.weight"] = (cfg.ff_dim, H)
        shapes[f"{prefix}ffn.in.bias"] = (cfg.ff_dim,)
        shapes[f"{prefix}ffn.out.weight"] = (H, cfg.ff_dim)
        shapes[f"{prefix}ffn.out.bias"] = (H,)
        shapes[f"{prefix}ffn.norm.gain"] = (H,)
        shapes[f"{prefix}ffn.norm.bias"] = (H,)

    if cfg.head == "model1":
        shapes["cls_head.dense.weight"] = (H, H)
        shapes["cls_head.dense.bias"] = (H,)
        shapes["cls_head.out.weight"] = (C, H)
        shapes["cls_head.out.bias"] = (C,)
        return shapes

    for k in cfg.cnn_window_sizes:
        shapes[f"conv{k}.weight"] = (cfg.cnn_filters_per_size, k, H)
        shapes[f"conv{k}.bias"] = (cfg.cnn_filters_per_size,)
    shapes["cnn.weight"] = (D, cfg.n_pooled_features)
    shapes["cnn.bias"] = (D,)
    shapes["chem.weight"] = (D, H)
    shapes["chem.bias"] = (D,)
    shapes["prot.weight"] = (D, H)
    shapes["prot.bias"] = (D,)
    n_heads = 3
    if cfg.include_cls_path:
        shapes["cls.weight"] = (D, H)
        shapes["cls.bias"] = (D,)
        n_heads += 1
    shapes["out.weight"] = (C, n_heads * D)
    shapes["out.bias"] = (C,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Params:
    """
    Deterministic initialization from a seed

    Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the
    product of all but the leading dimension; biases are zero and
    normalization gains one.
    """
    if cfg.vocab_size <= 0:
        raise ConfigError("vocab_size must be set before initializing parameters")
    generator = torch.Generator().manual_seed(seed)
    dtype = torch_dtype(cfg)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = torch.ones(shape, dtype=dtype)
        elif name.endswith(".bias"):
            params[name] = torch.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / math.sqrt(math.prod(shape[1:]))
            params[name] = (torch.rand(shape, generator=generator, dtype=dtype) * 2 - 1) * bound
    return params


@dataclass
class HiddenStates:
    layers: List[torch.Tensor]  # embedding output then one (B, T, H) tensor per layer
    lengths: torch.Tensor  # (B,) non-pad tokens per row
    pad_mask: torch.Tensor  # (B, T) True on padding


@dataclass
class ForwardTrace:
    logits: torch.Tensor  # (B, C)
    probabilities: torch.Tensor
    pooled: Optional[torch.Tensor] = None  # (B, n_pooled) max-pooled CNN features
    conv_activations: Dict[int, List[torch.Tensor]] = field(default_factory=dict)  # per window, per example (filters, positions)
    stacked: List[torch.Tensor] = field(default_factory=list)  # per example (4T, H)
    pool_argmax: Tuple = ()

    def pool_signature(self) -> Tuple:
        """Which position wins each max-pool and whether it is past the ReLU kink"""
        return self.pool_argmax


def _layer_norm(x: torch.Tensor, params: Params, prefix: str) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), params[f"{prefix}.gain"], params[f"{prefix}.bias"], LAYER_NORM_EPS)


def _dropout(x: torch.Tensor, p: float, mode: str, generator: Optional[torch.Generator]) -> torch.Tensor:
    if mode != TRAIN or p == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


def _encoder_layer(params: Params, prefix: str, x: torch.Tensor, mask: torch.Tensor, n_heads: int) -> torch.Tensor:
    B, T, H = x.shape
    head_size = H // n_heads

    def project(name: str) -> torch.Tensor:
        out = F.linear(x, params[f"{prefix}attn.{name}.weight"], params[f"{prefix}attn.{name}.bias"])
        return out.view(B, T, n_heads, head_size).transpose(1, 2)

    q, k, v = project("q"), project("k"), project("v")
    scores = q @ k.transpose(-1, -2) / math.sqrt(head_size) + mask
    context = (torch.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(B, T, H)
    attended = F.linear(context, params[f"{prefix}attn.o.weight"], params[f"{prefix}attn.o.bias"])
    x = _layer_norm(x + attended, params, f"{prefix}attn.norm")

    inner = F.gelu(F.linear(x, params[f"{prefix}ffn.in.weight"], params[f"{prefix}ffn.in.bias"]))
    ff = F.linear(inner, params[f"{prefix}ffn.out.weight"], params[f"{prefix}ffn.out.bias"])
    return _layer_norm(x + ff, params, f"{prefix}ffn.norm")


def encode_forward(params: Params, ids: Union[torch.Tensor, Sequence[int]], cfg: ModelConfig) -> HiddenStates:
    """
    Run the encoder over token ids of shape (T,) or (B, T).

    Positions holding the pad id are masked out of attention columns.
    """
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.dim() == 1:
        ids = ids.unsqueeze(0)
    B, T = ids.shape
    if T > params["embed.positions"].shape[0]:
        raise SequenceTooLong(f"sequence of {T} tokens exceeds {params['embed.positions'].shape[0]} positions")
    vocab_size = params["embed.tokens"].shape[0]
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= vocab_size):
        raise IdOutOfRange(f"token ids must lie in [0, {vocab_size})")

    pad = ids.eq(PAD_ID)
    x = params["embed.tokens"][ids] + params["embed.positions"][:T]
    x = _layer_norm(x, params, "embed.norm")
    mask = torch.zeros((B, 1, 1, T), dtype=x.dtype).masked_fill(pad[:, None, None, :], float("-inf"))

    layers = [x]
    for layer in range(cfg.layers):
        x = _encoder_layer(params, f"layer{layer}.", x, mask, cfg.heads)
        layers.append(x)
    return HiddenStates(layers=layers, lengths=(~pad).sum(dim=1), pad_mask=pad)


def head_model1(
    params: Params,
    states: HiddenStates,
    cfg: ModelConfig,
    mode: str = EVAL,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    v = _dropout(states.layers[-1][:, 0], cfg.dropout, mode, generator)
    hidden = torch.tanh(F.linear(v, params["cls_head.dense.weight"], params["cls_head.dense.bias"]))
    hidden = _dropout(hidden, cfg.dropout, mode, generator)
    return F.linear(hidden, params["cls_head.out.weight"], params["cls_head.out.bias"])


def _span_average(h: torch.Tensor, spans: Sequence[Span]) -> torch.Tensor:
    weights = torch.zeros(h.shape[:2], dtype=h.dtype)
    for row, (start, end) in enumerate(spans):
        weights[row, start:end] = 1.0 / (end - start)
    return torch.einsum("bt,bth->bh", weights, h)


def head_rbert_cnn(
    params: Params,
    states: HiddenStates,
    chem_spans: Sequence[Span],
    prot_spans: Sequence[Span],
    cfg: ModelConfig,
    mode: str = EVAL,
    generator: Optional[torch.Generator] = None,
) -> ForwardTrace:
    n_layers = len(states.layers) - 1
    if n_layers < 4:
        raise InsufficientLayers(f"the CNN head needs 4 encoder layers, got {n_layers}")
    last = states.layers[-1]
    lengths = [int(n) for n in states.lengths]
    for row, length in enumerate(lengths):
        for start, end in (chem_spans[row], prot_spans[row]):
            if not 0 <= start < end <= length:
                raise SpanOutOfRange(f"span ({start}, {end}) outside a sequence of {length} tokens")

    # last four layers stacked along the sequence axis, per example
    stacked = [
        torch.cat([states.layers[layer][row, :length] for layer in range(n_layers - 3, n_layers + 1)], dim=0)
        for row, length in enumerate(lengths)
    ]
    channels = pad_sequence(stacked, batch_first=True).transpose(1, 2)  # (B, H, 4T)
    n_rows = torch.tensor([4 * length for length in lengths])

    pooled, activations, argmax = [], {}, []
    for k in cfg.cnn_window_sizes:
        weight = params[f"conv{k}.weight"].transpose(1, 2)  # (filters, H, k)
        pre = F.conv1d(channels, weight, params[f"conv{k}.bias"])  # (B, filters, 4T - k + 1)
        valid = torch.arange(pre.shape[-1])[None, :] <= (n_rows[:, None] - k)
        pre = pre.masked_fill(~valid[:, None, :], float("-inf"))
        best = pre.max(dim=-1)
        pooled.append(torch.relu(best.values))
        activations[k] = [torch.relu(pre[row, :, : 4 * length - k + 1]) for row, length in enumerate(lengths)]
        argmax.append((tuple(best.indices.flatten().tolist()), tuple((best.values > 0).flatten().tolist())))
    features = torch.cat(pooled, dim=-1)

    heads = [
        torch.tanh(F.linear(features, params["cnn.weight"], params["cnn.bias"])),
        F.linear(torch.tanh(_span_average(last, chem_spans)), params["chem.weight"], params["chem.bias"]),
        F.linear(torch.tanh(_span_average(last, prot_spans)), params["prot.weight"], params["prot.bias"]),
    ]
    if cfg.include_cls_path:
        heads.append(F.linear(torch.tanh(last[:, 0]), params["cls.weight"], params["cls.bias"]))
    fused = _dropout(torch.cat(heads, dim=-1), cfg.dropout, mode, generator)
    logits = F.linear(fused, params["out.weight"], params["out.bias"])
    return ForwardTrace(
        logits=logits,
        probabilities=torch.softmax(logits, dim=-1),
        pooled=features,
        conv_activations=activations,
        stacked=stacked,
        pool_argmax=tuple(argmax),
    )


class Batch(NamedTuple):
    ids: torch.Tensor
    chem_spans: List[Span]
    prot_spans: List[Span]
    labels: torch.Tensor


def collate(examples: Sequence[EncodedExample]) -> Batch:
    ids = pad_sequence(
        [torch.tensor(ex.ids, dtype=torch.long) for ex in examples], batch_first=True, padding_value=PAD_ID
    )
    return Batch(
        ids=ids,
        chem_spans=[ex.chem_tok_span for ex in examples],
        prot_spans=[ex.prot_tok_span for ex in examples],
        labels=torch.tensor([ex.label_id for ex in examples], dtype=torch.long),
    )


def forward(
    params: Params,
    batch: Batch,
    cfg: ModelConfig,
    mode: str = EVAL,
    generator: Optional[torch.Generator] = None,
) -> ForwardTrace:
    states = encode_forward(params, batch.ids, cfg)
    if cfg.head == "model1":
        logits = head_model1(params, states, cfg, mode, generator)
        return ForwardTrace(logits=logits, probabilities=torch.softmax(logits, dim=-1))
    return head_rbert_cnn(params, states, batch.chem_spans, batch.prot_spans, cfg, mode, generator)


def loss(trace: Union[ForwardTrace, torch.Tensor], label: Union[int, Sequence[int], torch.Tensor]) -> torch.Tensor:
    """Mean cross-entropy, -logit[label] + logsumexp(logits), over the batch"""
    logits = trace.logits if isinstance(trace, ForwardTrace) else trace
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(label, dtype=torch.long).reshape(-1)
    if int(labels.max()) >= logits.shape[-1] or int(labels.min()) < 0:
        raise ValueError(f"label ids must lie in [0, {logits.shape[-1]})")
    picked = logits.gather(1, labels[:, None]).squeeze(1)
    return (torch.logsumexp(logits, dim=-1) - picked).mean()


class BatchResult(NamedTuple):
    loss: float
    grads: Params
    logits: torch.Tensor


def batch_gradients(
    params: Params,
    batch: Sequence[EncodedExample],
    cfg: ModelConfig,
    mode: str = EVAL,
    generator: Optional[torch.Generator] = None,
) -> BatchResult:
    if not batch:
        raise ValueError("cannot compute gradients of an empty batch")
    leaves = {name: tensor.detach().requires_grad_(True) for name, tensor in params.items()}
    collated = collate(batch)
    trace = forward(leaves, collated, cfg, mode, generator)
    value = loss(trace, collated.labels)
    grads = torch.autograd.grad(value, list(leaves.values()), allow_unused=True)
    named = {
        name: grad if grad is not None else torch.zeros_like(leaves[name])
        for name, grad in zip(leaves, grads)
    }
    return BatchResult(loss=value.item(), grads=named, logits=trace.logits.detach())


def loss_and_grad(
    params: Params,
    batch: Sequence[EncodedExample],
    cfg: ModelConfig,
    mode: str = EVAL,
    generator: Optional[torch.Generator] = None,
) -> Tuple[float, Params]:
    """Mean loss over the batch and its gradient for every named parameter"""
    result = batch_gradients(params, batch, cfg, mode, generator)
    return result.loss, result.grads


def predict_logits(params: Params, batch: Sequence[EncodedExample], cfg: ModelConfig) -> torch.Tensor:
    with torch.no_grad():
        return forward(params, collate(batch), cfg, EVAL).logits


GradFn = Callable[[Params, Sequence[EncodedExample], ModelConfig], Tuple[float, Params]]


def _eval_loss(params: Params, batch: Batch, cfg: ModelConfig) -> Tuple[float, Tuple]:
    with torch.no_grad():
        trace = forward(params, batch, cfg, EVAL)
        return loss(trace, batch.labels).item(), trace.pool_signature()


def grad_check(
    params: Params,
    example: Union[EncodedExample, Sequence[EncodedExample]],
    cfg: ModelConfig,
    eps: float = 1e-4,
    n_coords: int = 200,
    seed: int = 0,
    grad_fn: Optional[GradFn] = None,
    floor: float = 1e-6,
) -> float:
    """
    Largest relative error between analytic and central-difference gradients.

    At least n_coords coordinates are sampled, spread evenly over every named
    tensor. A coordinate whose perturbation moves a max-pool winner or crosses
    its ReLU kink is replaced by another draw from the same tensor; ModelError
    is raised when fewer than n_coords coordinates could be compared. Relative
    error is |a - n| / max(|a| + |n|, floor). Dropout is off (eval mode).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    batch = [example] if isinstance(example, EncodedExample) else list(example)
    _, analytic = (grad_fn or loss_and_grad)(params, batch, cfg)
    collated = collate(batch)
    _, base_signature = _eval_loss(params, collated, cfg)

    generator = torch.Generator().manual_seed(seed)
    per_tensor = max(1, math.ceil(n_coords / len(params)))
    worst, checked, skipped = 0.0, 0, 0
    for name, tensor in params.items():
        order = torch.randperm(tensor.numel(), generator=generator).tolist()
        wanted = min(per_tensor, tensor.numel())
        done = 0
        for index in order:
            if done == wanted:
                break
            values = []
            for delta in (eps, -eps):
                shifted = tensor.clone()
                shifted.view(-1)[index] += delta
                values.append(_eval_loss({**params, name: shifted}, collated, cfg))
            if values[0][1] != base_signature or values[1][1] != base_signature:
                skipped += 1
                continue
            numeric = (values[0][0] - values[1][0]) / (2 * eps)
            exact = analytic[name].reshape(-1)[index].item()
            worst = max(worst, abs(exact - numeric) / max(abs(exact) + abs(numeric), floor))
            done += 1
        checked += done
    logger.debug("grad_check: %d coordinates checked, %d skipped at kinks, max error %.3e", checked, skipped, worst)
    if checked < n_coords:
        raise ModelError(f"grad_check compared only {checked} of {n_coords} coordinates ({skipped} skipped at kinks)")
    return worst
