"""
The plan classifier: a small decoder-style transformer over token
sequences whose last hidden state, joined with the normalized aggregate
L1-error, feeds an MLP with two softmax outputs (optimal, sub-optimal).
"""

import json
import logging
import math
import struct
from collections import namedtuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig, to_dict
from .errors import ConfigError, InputError
from .featurize import encode_sequence
from .l1error import query_l1
from .planspace import OPTIMAL, SUBOPTIMAL, enumerate_subplans, infer_join_closure

logger = logging.getLogger(__name__)

CLASSES = (OPTIMAL, SUBOPTIMAL)
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}

INIT_STD = 0.02
MAGIC = b"PSV1"


class CausalSelfAttention(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.qkv = nn.Linear(config.embed_dim, 3 * config.embed_dim)
        self.proj = nn.Linear(config.embed_dim, config.embed_dim)
        self.attn_drop = nn.Dropout(config.dropout_rate)
        self.resid_drop = nn.Dropout(config.dropout_rate)

    def forward(self, x, key_mask):
        batch, length, dim = x.shape
        q, k, v = self.qkv(x).split(dim, dim=2)
        q = q.view(batch, length, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(batch, length, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        causal = torch.ones(length, length, dtype=torch.bool, device=x.device).tril()
        allowed = causal[None, None, :, :] & key_mask[:, None, None, :]
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = self.attn_drop(F.softmax(scores, dim=-1))

        out = (weights @ v).transpose(1, 2).contiguous().view(batch, length, dim)
        return self.resid_drop(self.proj(out))


class Block(nn.Module):
    """Pre-layer-norm transformer block."""

    def __init__(self, config):
        super().__init__()
        hidden = config.ffn_multiplier * config.embed_dim
        self.ln1 = nn.LayerNorm(config.embed_dim)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.embed_dim)
        self.ffn = nn.Sequential(
            nn.Linear(config.embed_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, config.embed_dim),
            nn.Dropout(config.dropout_rate),
        )

    def forward(self, x, key_mask):
        x = x + self.attn(self.ln1(x), key_mask)
        return x + self.ffn(self.ln2(x))


class PlanClassifier(nn.Module):
    """
    Transformer + MLP classifier.  ``forward`` returns the two logits per
    example; probabilities come from ``predict_proba``.
    """

    def __init__(self, config):
        super().__init__()
        config.validate()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.embed_dim)
        self.pos_emb = nn.Embedding(config.max_len, config.embed_dim)
        self.drop = nn.Dropout(config.dropout_rate)
        self.blocks = nn.ModuleList([Block(config) for _ in range(config.layers)])
        self.ln_f = nn.LayerNorm(config.embed_dim)
        self.head = nn.Sequential(
            nn.Linear(config.embed_dim + 1, config.mlp_hidden),
            nn.GELU(),
            nn.Linear(config.mlp_hidden, len(CLASSES)),
        )

    def forward(self, tokens, attention_mask, l1):
        if tokens.dim() != 2 or tokens.shape != attention_mask.shape:
            raise InputError("tokens and attention mask must both be [batch, length]")
        length = tokens.shape[1]
        if length > self.config.max_len:
            raise InputError(
                "sequence length {} exceeds max_len {}".format(length, self.config.max_len)
            )
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise InputError(
                "token id out of range for a vocabulary of {}".format(self.config.vocab_size)
            )
        key_mask = attention_mask.bool()
        if not bool(key_mask[:, 0].all()):
            raise InputError("the first position of every sequence must be attended")

        positions = torch.arange(length, device=tokens.device)
        x = self.drop(self.tok_emb(tokens) + self.pos_emb(positions)[None, :, :])
        for block in self.blocks:
            x = block(x, key_mask)
        x = self.ln_f(x)

        last = key_mask.long().sum(dim=1) - 1
        hidden = x[torch.arange(x.shape[0], device=x.device), last]
        features = torch.cat([hidden, l1.to(hidden.dtype)[:, None]], dim=1)
        return self.head(features)

    def predict_proba(self, tokens, attention_mask, l1):
        return F.softmax(self.forward(tokens, attention_mask, l1), dim=-1)


def _init_weights(module):
    if isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, mean=0.0, std=INIT_STD)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.normal_(module.weight, mean=0.0, std=INIT_STD)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def init_model(config):
    """
    Returns a freshly initialized classifier: normal(0, 0.02) weights, zero
    biases, drawn from a generator seeded with ``config.seed`` only.
    """
    if config.embed_dim % config.heads:
        raise ConfigError(
            "embed_dim {} is not divisible by heads {}".format(config.embed_dim, config.heads)
        )
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = PlanClassifier(config)
        model.apply(_init_weights)
    return model


#####################################################################

Batch = namedtuple("Batch", ["tokens", "attention_mask", "l1", "labels"])


def l1_feature(l1_aggregate, l1_scale):
    """
    Returns the aggregate L1 divided by the largest aggregate the query could
    reach, the scalar fed to the MLP next to the hidden state.
    """
    return float(l1_aggregate) / float(l1_scale) if l1_scale else 0.0


def collate(examples, max_len=None, dtype=torch.float32):
    """
    Returns a Batch of tensors from examples carrying ``sequence``,
    ``l1_aggregate``, ``l1_scale`` and ``label``.
    """
    sequences = [e.sequence if max_len is None else e.sequence.padded(max_len) for e in examples]
    lengths = {len(s.tokens) for s in sequences}
    if len(lengths) > 1:
        raise InputError("sequences in one batch must share a length, got {}".format(sorted(lengths)))
    tokens = torch.tensor([s.tokens for s in sequences], dtype=torch.long)
    mask = torch.tensor([s.attention_mask for s in sequences], dtype=torch.long)
    l1 = torch.tensor([l1_feature(e.l1_aggregate, e.l1_scale) for e in examples], dtype=dtype)
    labels = torch.tensor([CLASS_INDEX[e.label] for e in examples], dtype=torch.long)
    return Batch(tokens, mask, l1, labels)


def forward(model, example):
    """
    Returns ``(p_optimal, p_suboptimal)`` for one example in inference mode.
    """
    was_training = model.training
    model.eval()
    try:
        batch = collate([example], dtype=next(model.parameters()).dtype)
        with torch.no_grad():
            probs = model.predict_proba(batch.tokens, batch.attention_mask, batch.l1)[0]
    finally:
        model.train(was_training)
    return float(probs[0]), float(probs[1])


def loss_and_gradients(model, batch):
    """
    Returns the mean cross-entropy of ``batch`` and a dict of gradients per
    named parameter.  Existing gradients are cleared first.
    """
    if batch.labels.numel() == 0:
        raise InputError("loss of an empty batch is undefined")
    model.zero_grad(set_to_none=True)
    logits = model(batch.tokens, batch.attention_mask, batch.l1)
    loss = F.cross_entropy(logits, batch.labels)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return loss.detach(), grads


def predict_batch(model, examples, batch_size=256):
    """
    Returns an array of p_suboptimal for each example, in inference mode.
    """
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    try:
        with torch.no_grad():
            for start in range(0, len(examples), batch_size):
                batch = collate(examples[start : start + batch_size], dtype=dtype)
                probs = model.predict_proba(batch.tokens, batch.attention_mask, batch.l1)
                out.append(probs[:, 1].cpu().numpy().astype(np.float64))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


Prediction = namedtuple("Prediction", ["label", "probability", "report", "pairs"])


class _Encoded:
    def __init__(self, sequence, l1_aggregate, l1_scale):
        self.sequence = sequence
        self.l1_aggregate = l1_aggregate
        self.l1_scale = l1_scale
        self.label = OPTIMAL


def predict(model, query, cards_lookup, est, vocab, threshold=0.5, graph=None):
    """
    Classifies a query before execution.

    ``cards_lookup`` gives the best available (true or surrogate) cardinality
    of each subplan and orders rho; ``est`` is the optimizer's own estimated
    assignment and orders rho_hat.  Returns a Prediction whose probability is
    that of the sub-optimal class.
    """
    graph = graph or infer_join_closure(query)
    by_k = enumerate_subplans(graph)
    if callable(cards_lookup) and not hasattr(cards_lookup, "__getitem__"):
        truth_like = {s.key: cards_lookup(s) for k in by_k for s in by_k[k]}
    else:
        truth_like = cards_lookup
    pairs, report = query_l1(by_k, truth_like, est)
    sequence = encode_sequence(pairs, vocab, model.config.max_len)
    _, p_sub = forward(model, _Encoded(sequence, report.aggregate, report.scale))
    label = SUBOPTIMAL if p_sub > threshold else OPTIMAL
    return Prediction(label, p_sub, report, pairs)


#####################################################################


def save_checkpoint(model, path, extra=None):
    """
    Writes a PSV1 checkpoint: the magic bytes, a uint32 length and a UTF-8
    JSON document holding the model config (plus ``extra``), a uint32 section
    count, then for every parameter tensor in registration order its name,
    shape and little-endian float32 values.
    """
    header = {"model": to_dict(model.config)}
    if extra:
        header.update(extra)
    document = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    state = model.state_dict()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(document)))
        f.write(document)
        f.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            encoded = name.encode("utf-8")
            values = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", values.ndim))
            f.write(struct.pack("<{}I".format(values.ndim), *values.shape))
            f.write(values.tobytes())


def load_checkpoint(path):
    """
    Returns ``(model, header)`` read from a PSV1 checkpoint.
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise InputError("{} is not a PSV1 checkpoint".format(path))
    offset = 4
    (doc_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + doc_len].decode("utf-8"))
    offset += doc_len
    config = ModelConfig(**header["model"])
    model = PlanClassifier(config)
    expected = model.state_dict()

    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if count != len(expected):
        raise InputError("checkpoint holds {} sections, model has {}".format(count, len(expected)))
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from("<{}I".format(ndim), data, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += 4 * size
        if name not in expected or tuple(expected[name].shape) != tuple(shape):
            raise InputError("unexpected checkpoint section {} {}".format(name, tuple(shape)))
        state[name] = torch.from_numpy(values.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model, header
