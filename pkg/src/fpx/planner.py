"""Offline FP4 sensitivity calibration and gamma-driven precision assignment."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .latency import estimate
from .quant import BitWidth
from .toymodel import LayerId, LayerKind, ToyTransformer, forward, quality_proxy, run_linear


class DegenerateLayerError(ValueError):
    pass


@dataclass(frozen=True)
class LayerCalibration:
    layer: LayerId
    epsilon: float


@dataclass
class PrecisionPlan:
    gamma: float
    assignment: dict[LayerId, BitWidth]
    calibration: list[LayerCalibration]
    model_fingerprint: str = ""

    @property
    def num_layers(self) -> int:
        return len(self.assignment)

    @property
    def low_precision_layers(self) -> set[LayerId]:
        return {l for l, b in self.assignment.items() if b is BitWidth.B4}

    @property
    def fp4_fraction(self) -> float:
        return len(self.low_precision_layers) / self.num_layers if self.assignment else 0.0

    @property
    def bitwidth_avg(self) -> float:
        return bitwidth_avg(self.fp4_fraction)

    def to_json(self) -> str:
        eps = {c.layer: c.epsilon for c in self.calibration}
        layers = [
            {"block": l.block_index, "kind": l.kind.name, "bits": int(self.assignment[l]),
             "epsilon": eps.get(l)}
            for l in sorted(self.assignment)
        ]
        doc = {"gamma": self.gamma, "model_fingerprint": self.model_fingerprint, "layers": layers}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PrecisionPlan":
        doc = json.loads(text)
        assignment, calibration = {}, []
        for row in doc["layers"]:
            lid = LayerId(int(row["block"]), LayerKind[row["kind"]])
            bits = BitWidth(int(row["bits"]))
            if bits not in (BitWidth.B4, BitWidth.B8):
                raise ValueError(f"plan layer {lid} has bits {bits}; only 4 or 8 allowed")
            assignment[lid] = bits
            if row.get("epsilon") is not None:
                calibration.append(LayerCalibration(lid, float(row["epsilon"])))
        return cls(float(doc["gamma"]), assignment, calibration, doc.get("model_fingerprint", ""))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PrecisionPlan":
        return cls.from_json(Path(path).read_text())


def round_count(gamma: float, num_layers: int) -> int:
    """Number of FP4 layers for ``gamma``: round half up of gamma * L."""
    return int(math.floor(gamma * num_layers + 0.5))


def bitwidth_avg(fp4_fraction: float) -> float:
    return 8.0 - 4.0 * fp4_fraction


def calibrate(model: ToyTransformer, corpus: Sequence[Sequence[int]]) -> list[LayerCalibration]:
    """Per-layer FP4 relative output error on recorded unquantized inputs.

    Each layer is replayed alone at B4 on the inputs captured from the full
    precision pass, so upstream layers never see quantization. Squared norms
    are summed over the whole corpus before taking the ratio.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    num = {l: 0.0 for l in model.layers}
    den = {l: 0.0 for l in model.layers}
    for seq in corpus:
        _, trace = forward(model, seq)
        for layer, rec in trace.items():
            approx = run_linear(model, layer, rec.input, BitWidth.B4)
            diff = rec.output - approx
            num[layer] += float(np.sum(diff * diff))
            den[layer] += float(np.sum(rec.output * rec.output))
    out = []
    for layer in model.layers:
        if den[layer] == 0.0:
            raise DegenerateLayerError(f"layer {layer} has zero-norm reference output")
        out.append(LayerCalibration(layer, math.sqrt(num[layer]) / math.sqrt(den[layer])))
    return out


def ranked_layers(calibration: Iterable[LayerCalibration]) -> list[LayerId]:
    """Ascending epsilon; ties fall back to LayerId order."""
    return [c.layer for c in sorted(calibration, key=lambda c: (c.epsilon, c.layer))]


def assign(calibration: Sequence[LayerCalibration], gamma: float,
           model_fingerprint: str = "") -> PrecisionPlan:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    order = ranked_layers(calibration)
    k = round_count(gamma, len(order))
    chosen = set(order[:k])
    assignment = {l: (BitWidth.B4 if l in chosen else BitWidth.B8) for l in sorted(order)}
    return PrecisionPlan(gamma, assignment, list(calibration), model_fingerprint)


@dataclass
class SweepRow:
    gamma: float
    plan: PrecisionPlan
    quality_proxy: float
    latency_ms: float | None


def sweep(model: ToyTransformer, corpus: Sequence[Sequence[int]], gammas: Sequence[float],
          cost_table=None, size_tag: str | None = None,
          calibration: Sequence[LayerCalibration] | None = None) -> list[SweepRow]:
    """Calibrate once, then plan, score and (optionally) time each gamma.

    Latency is predicted only when both ``cost_table`` and ``size_tag`` are
    given. Rows come back sorted by gamma.
    """
    gammas = list(gammas)
    if not gammas:
        raise ValueError("gammas must be non-empty")
    for g in gammas:
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {g}")
    if calibration is None:
        calibration = calibrate(model, corpus)
    reference = [forward(model, seq)[0] for seq in corpus]
    fp = model.fingerprint()
    rows = []
    for g in sorted(gammas):
        plan = assign(calibration, g, fp)
        qp = quality_proxy(model, corpus, plan, reference=reference)
        lat = None
        if cost_table is not None and size_tag is not None:
            lat = estimate(cost_table, size_tag, plan).total_ms
        rows.append(SweepRow(g, plan, qp, lat))
    return rows


def gamma_grid(step: float = 0.1) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(n + 1)]
