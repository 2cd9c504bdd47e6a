"""Independent reimplementations used as test oracles.

Nothing here imports the package's forward pass or quantizer; the replay
below rebuilds both from the raw weight matrices.
"""

import itertools
import math

import numpy as np

KINDS = ("QKV", "OUT_PROJ", "FFN_UP", "FFN_DOWN")
RANGES = {4: 6.0, 8: 240.0}


def fp_quantize(x, bits):
    """Absmax scaling onto the integer grid, half-to-even rounding."""
    rng = RANGES[bits]
    peak = float(np.abs(x).max())
    scale = peak / rng if peak > 0 else 1.0
    q = np.clip(np.rint(x / scale), -rng, rng)
    return q, scale


def fp_matmul(x, w, bits):
    qx, sx = fp_quantize(x, bits)
    qw, sw = fp_quantize(w, bits)
    return sx * sw * (qx @ qw)


def _norm(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def _attend(qkv, d):
    q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    t = q.shape[0]
    s = q @ k.T / math.sqrt(d)
    s[np.triu_indices(t, 1)] = -np.inf
    s = np.exp(s - s.max(axis=1, keepdims=True))
    return (s / s.sum(axis=1, keepdims=True)) @ v


def record_linear_io(model, tokens):
    """Full-precision pass; returns {(block, kind): (input, output)}."""
    d = model.d_model
    w = {(l.block_index, l.kind.name): np.asarray(m, dtype=np.float64) for l, m in model.weights.items()}
    x = np.asarray(model.embedding, dtype=np.float64)[tokens]
    io = {}
    for b in range(model.num_blocks):
        h = _norm(x)
        qkv = h @ w[b, "QKV"]
        io[b, "QKV"] = (h, qkv)
        a = _attend(qkv, d)
        o = a @ w[b, "OUT_PROJ"]
        io[b, "OUT_PROJ"] = (a, o)
        x = x + o
        h = _norm(x)
        up = h @ w[b, "FFN_UP"]
        io[b, "FFN_UP"] = (h, up)
        g = _gelu(up)
        down = g @ w[b, "FFN_DOWN"]
        io[b, "FFN_DOWN"] = (g, down)
        x = x + down
    return io


def replay_epsilons(model, corpus):
    """Relative Frobenius error of each layer at 4 bits, squared norms pooled over the corpus."""
    w = {(l.block_index, l.kind.name): np.asarray(m, dtype=np.float64) for l, m in model.weights.items()}
    num, den = {}, {}
    for seq in corpus:
        for key, (inp, ref) in record_linear_io(model, seq).items():
            approx = fp_matmul(inp, w[key], 4)
            num[key] = num.get(key, 0.0) + float(((ref - approx) ** 2).sum())
            den[key] = den.get(key, 0.0) + float((ref ** 2).sum())
    return {k: math.sqrt(num[k] / den[k]) for k in num}


def brute_force_subset(eps, layer_keys, k):
    """Exhaustive argmin of the summed error over k-subsets.

    Ties go to the subset whose sorted (epsilon, key) list is smallest, which
    is what a greedy ascending pick produces.
    """
    best, best_key = None, None
    for combo in itertools.combinations(range(len(eps)), k):
        total = math.fsum(eps[i] for i in combo)
        tie = sorted((eps[i], layer_keys[i]) for i in combo)
        cand = (total, tie)
        if best is None or cand < best:
            best, best_key = cand, combo
    return {layer_keys[i] for i in best_key}
