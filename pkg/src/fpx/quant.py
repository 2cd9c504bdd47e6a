"""Per-tensor floating-point quantization on an idealized integer grid.

A tensor is scaled by ``max(|X|) / range`` and rounded (half to even) onto
the integers in ``[-range, +range]``; ``range`` is 6 for FP4 and 240 for FP8.
The linear-layer product is then ``scale_x * scale_w * (Q(X) @ Q(W))``.

``scale_floor`` controls the small-tensor branch. With the default of 1.0 a
tensor whose magnitude already fits the grid is rounded unscaled, exactly as
the textbook formula reads. ``scale_floor=None`` always rescales to the full
grid width (absmax scaling), which is what the toy transformer uses because
its weights are far below 1 in magnitude and would otherwise round to zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensorcore import ShapeError, as_matrix, matmul


class BitWidth(enum.IntEnum):
    B4 = 4
    B8 = 8
    B16 = 16

    @property
    def range(self) -> float:
        if self is BitWidth.B16:
            return float("inf")
        return _RANGES[self]

    @classmethod
    def parse(cls, value) -> "BitWidth":
        if isinstance(value, BitWidth):
            return value
        if isinstance(value, str):
            v = value.strip().upper().removeprefix("FP").removeprefix("B")
            return cls(int(v))
        return cls(int(value))


_RANGES = {BitWidth.B4: 6.0, BitWidth.B8: 240.0}
_TINY = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class QuantizedMatrix:
    q: np.ndarray
    scale: float
    bits: BitWidth


def compute_scale(x: np.ndarray, bits: BitWidth, scale_floor: float | None = 1.0) -> float:
    rng = bits.range
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if scale_floor is None:
        scale = peak / rng
        # subnormal peaks would give a zero or denormal scale; unit scale is exact enough there
        return scale if scale >= _TINY else 1.0
    return max(peak / rng, scale_floor)


def quantize(x, bits: BitWidth, scale_floor: float | None = 1.0) -> QuantizedMatrix:
    bits = BitWidth.parse(bits)
    if bits is BitWidth.B16:
        raise ValueError("B16 is the unquantized path; handle it before calling quantize")
    x = as_matrix(x)
    scale = compute_scale(x, bits, scale_floor)
    rng = bits.range
    # np.rint rounds half to even
    q = np.clip(np.rint(x / scale), -rng, rng)
    return QuantizedMatrix(q=q, scale=scale, bits=bits)


def dequantize(qx: QuantizedMatrix) -> np.ndarray:
    return qx.scale * qx.q


def fake_quantize(x, bits: BitWidth, scale_floor: float | None = 1.0) -> np.ndarray:
    """Round-trip ``x`` through the grid; B16 returns ``x`` unchanged."""
    bits = BitWidth.parse(bits)
    if bits is BitWidth.B16:
        return as_matrix(x)
    return dequantize(quantize(x, bits, scale_floor))


def quant_matmul(x, w, bits_x: BitWidth, bits_w: BitWidth,
                 scale_floor: float | None = 1.0) -> np.ndarray:
    x = as_matrix(x)
    w = as_matrix(w)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
    bits_x = BitWidth.parse(bits_x)
    bits_w = BitWidth.parse(bits_w)
    if bits_x is BitWidth.B16:
        qx, sx = x, 1.0
    else:
        t = quantize(x, bits_x, scale_floor)
        qx, sx = t.q, t.scale
    if bits_w is BitWidth.B16:
        qw, sw = w, 1.0
    else:
        t = quantize(w, bits_w, scale_floor)
        qw, sw = t.q, t.scale
    prod = matmul(qx, qw)
    if sx == 1.0 and sw == 1.0:
        return prod
    return (sx * sw) * prod
