"""A small seeded pre-norm transformer whose linear layers can run at FP4/FP8.

Layer order is fixed and shared by initialisation, checkpoints and plans::

    embedding (vocab x d_model)
    for each block: QKV (d, 3d), OUT_PROJ (d, d), FFN_UP (d, d_ff), FFN_DOWN (d_ff, d)
    unembedding (d_model x vocab)

Only the four per-block linear kinds are quantization candidates. Attention
is single-head and causal; layer norm has no learned parameters; the FFN
uses the tanh GELU. Nothing else is quantized.
"""

from __future__ import annotations

import enum
import hashlib
import io
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quant import BitWidth, quant_matmul
from .tensorcore import Rng, frobenius_norm, matmul

CHECKPOINT_MAGIC = b"FPXM"
CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


class LayerKind(enum.IntEnum):
    QKV = 0
    OUT_PROJ = 1
    FFN_UP = 2
    FFN_DOWN = 3


@dataclass(frozen=True, order=True)
class LayerId:
    block_index: int
    kind: LayerKind

    def __str__(self) -> str:
        return f"{self.block_index}.{self.kind.name}"


@dataclass(frozen=True)
class LayerRecord:
    input: np.ndarray
    output: np.ndarray


# LayerId -> LayerRecord, in layer order
ForwardTrace = dict


@dataclass
class ToyTransformer:
    num_blocks: int
    d_model: int
    d_ff: int
    vocab: int
    embedding: np.ndarray
    unembedding: np.ndarray
    weights: dict[LayerId, np.ndarray]
    # None = absmax scaling on every linear layer
    scale_floor: float | None = None
    _fingerprint: str | None = field(default=None, repr=False, compare=False)

    @property
    def layers(self) -> list[LayerId]:
        return layer_ids(self.num_blocks)

    @property
    def num_layers(self) -> int:
        return 4 * self.num_blocks

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = hashlib.sha256(to_bytes(self)).hexdigest()
        return self._fingerprint


def layer_ids(num_blocks: int) -> list[LayerId]:
    return [LayerId(b, k) for b in range(num_blocks) for k in LayerKind]


def weight_shapes(num_blocks, d_model, d_ff, vocab) -> list[tuple[int, int]]:
    per_block = [(d_model, 3 * d_model), (d_model, d_model), (d_model, d_ff), (d_ff, d_model)]
    return [(vocab, d_model)] + per_block * num_blocks + [(d_model, vocab)]


def init_model(seed: int, num_blocks: int, d_model: int, d_ff: int, vocab: int) -> ToyTransformer:
    """Draw every weight uniformly in +-1/sqrt(fan_in) from one SplitMix64 stream."""
    for name, v in (("num_blocks", num_blocks), ("d_model", d_model), ("d_ff", d_ff), ("vocab", vocab)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    rng = Rng(seed)
    mats = []
    for rows, cols in weight_shapes(num_blocks, d_model, d_ff, vocab):
        bound = 1.0 / np.sqrt(rows)
        u = rng.uniform_array(rows * cols).reshape(rows, cols)
        mats.append(((2.0 * u - 1.0) * bound).astype(np.float32))
    return _assemble(num_blocks, d_model, d_ff, vocab, mats)


def _assemble(num_blocks, d_model, d_ff, vocab, mats) -> ToyTransformer:
    ids = layer_ids(num_blocks)
    weights = {lid: mats[1 + i] for i, lid in enumerate(ids)}
    return ToyTransformer(num_blocks, d_model, d_ff, vocab,
                          embedding=mats[0], unembedding=mats[-1], weights=weights)


def _ordered_mats(model: ToyTransformer) -> list[np.ndarray]:
    return [model.embedding] + [model.weights[l] for l in model.layers] + [model.unembedding]


# -- checkpoint ---------------------------------------------------------------

def to_bytes(model: ToyTransformer) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<5I", CHECKPOINT_VERSION, model.num_blocks, model.d_model,
                          model.d_ff, model.vocab))
    for m in _ordered_mats(model):
        buf.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> ToyTransformer:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an FPXM checkpoint (bad magic)")
    version, nb, dm, dff, vocab = struct.unpack_from("<5I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 4 + 20
    mats = []
    for rows, cols in weight_shapes(nb, dm, dff, vocab):
        n = rows * cols
        if offset + 4 * n > len(data):
            raise ValueError("truncated checkpoint")
        mats.append(np.frombuffer(data, dtype="<f4", count=n, offset=offset)
                    .reshape(rows, cols).astype(np.float32))
        offset += 4 * n
    if offset != len(data):
        raise ValueError(f"{len(data) - offset} trailing bytes in checkpoint")
    return _assemble(nb, dm, dff, vocab, mats)


def save_model(model: ToyTransformer, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path) -> ToyTransformer:
    return from_bytes(Path(path).read_bytes())


def weight_checksum(model: ToyTransformer) -> str:
    return hashlib.sha256(to_bytes(model)).hexdigest()


# -- forward ------------------------------------------------------------------

def _layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _causal_attention(q, k, v) -> np.ndarray:
    t, d = q.shape
    scores = (q @ k.T) / np.sqrt(d)
    scores = np.where(np.tril(np.ones((t, t), dtype=bool)), scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def resolve_bits(plan) -> Mapping[LayerId, BitWidth]:
    """Accept a PrecisionPlan, a LayerId -> bits mapping, or None."""
    if plan is None:
        return {}
    return getattr(plan, "assignment", plan)


def run_linear(model: ToyTransformer, layer: LayerId, x: np.ndarray, bits: BitWidth) -> np.ndarray:
    w = model.weights[layer]
    if bits is BitWidth.B16:
        return matmul(x, w)
    # one bitwidth per layer, applied to activations and weights alike
    return quant_matmul(x, w, bits, bits, scale_floor=model.scale_floor)


def forward(model: ToyTransformer, tokens: Sequence[int], plan=None) -> tuple[np.ndarray, ForwardTrace]:
    tokens = list(tokens)
    if not tokens:
        raise ValueError("tokens must be non-empty")
    for t in tokens:
        if not 0 <= int(t) < model.vocab:
            raise ValueError(f"token index {t} out of range for vocab {model.vocab}")
    bits_of = resolve_bits(plan)
    trace: ForwardTrace = {}

    def lin(layer, x):
        y = run_linear(model, layer, x, BitWidth.parse(bits_of.get(layer, BitWidth.B16)))
        trace[layer] = LayerRecord(x, y)
        return y

    d = model.d_model
    x = model.embedding[np.asarray(tokens, dtype=np.int64)].astype(np.float64)
    for b in range(model.num_blocks):
        qkv = lin(LayerId(b, LayerKind.QKV), _layer_norm(x))
        att = _causal_attention(qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:])
        x = x + lin(LayerId(b, LayerKind.OUT_PROJ), att)
        up = lin(LayerId(b, LayerKind.FFN_UP), _layer_norm(x))
        x = x + lin(LayerId(b, LayerKind.FFN_DOWN), _gelu(up))
    logits = matmul(_layer_norm(x), model.unembedding)
    return logits, trace


def relative_divergence(a: np.ndarray, ref: np.ndarray) -> float:
    denom = frobenius_norm(ref)
    if denom == 0.0:
        return 0.0 if frobenius_norm(a) == 0.0 else float("inf")
    return frobenius_norm(a - ref) / denom


def quality_proxy(model: ToyTransformer, corpus: Sequence[Sequence[int]], plan,
                  reference: Sequence[np.ndarray] | None = None) -> float:
    """Mean relative logit divergence of ``plan`` against the unquantized run.

    ``reference`` may hold precomputed unquantized logits, one per sequence.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    total = 0.0
    for i, seq in enumerate(corpus):
        ref = reference[i] if reference is not None else forward(model, seq)[0]
        out, _ = forward(model, seq, plan)
        total += relative_divergence(out, ref)
    return total / len(corpus)


# -- corpus -------------------------------------------------------------------

def generate_corpus(seed: int, vocab: int, num_sequences: int, seq_len: int,
                    branching: int = 4) -> list[list[int]]:
    """Sequences from a seeded sparse Markov chain over ``vocab`` tokens."""
    rng = Rng(seed)
    successors = [[rng.below(vocab) for _ in range(branching)] for _ in range(vocab)]
    seqs = []
    for _ in range(num_sequences):
        tok = rng.below(vocab)
        seq = [tok]
        for _ in range(seq_len - 1):
            # 10% chance of a uniform jump keeps the chain irreducible
            tok = rng.below(vocab) if rng.next_uniform() < 0.1 else successors[tok][rng.below(branching)]
            seq.append(tok)
        seqs.append(seq)
    return seqs


def write_corpus(seqs: Iterable[Sequence[int]], path) -> None:
    """One token per line; a blank line separates sequences."""
    blocks = ["\n".join(str(int(t)) for t in s) for s in seqs]
    Path(path).write_text("\n\n".join(blocks) + "\n")


def read_corpus(path) -> list[list[int]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    seqs: list[list[int]] = []
    cur: list[int] = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            if cur:
                seqs.append(cur)
                cur = []
            continue
        if not line.isdigit():
            raise ValueError(f"{path}:{lineno}: expected an unsigned integer, got {line!r}")
        cur.append(int(line))
    if cur:
        seqs.append(cur)
    if not seqs:
        raise ValueError(f"corpus file is empty: {path}")
    return seqs
