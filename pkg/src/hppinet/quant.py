"""Symmetric per-tensor int8 weight quantization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCALE_FLOOR = 1e-12
QMAX = 127


@dataclass(frozen=True)
class QuantizedTensor:
    scale: float
    values: np.ndarray  # int8

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.values.dtype != np.int8:
            raise ValueError("quantized values must be int8")

    @property
    def shape(self):
        return self.values.shape


def quantize_tensor_int8(t) -> QuantizedTensor:
    """scale = max|t| / 127 (floored), values rounded half-to-even and clamped to +-127."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("cannot quantize non-finite values")
    peak = float(np.max(np.abs(t))) if t.size else 0.0
    scale = max(peak / QMAX, SCALE_FLOOR)
    q = np.clip(np.rint(t / scale), -QMAX, QMAX).astype(np.int8)  # rint rounds half to even
    return QuantizedTensor(scale, q)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.values.astype(np.float64) * q.scale


@dataclass
class QuantizationReport:
    float_bytes: int
    int8_bytes: int
    float_acc: float
    int8_acc: float
    argmax_agreement: float

    @property
    def size_ratio(self) -> float:
        return self.int8_bytes / self.float_bytes

    @property
    def acc_delta_pp(self) -> float:
        """Accuracy lost by quantization, in percentage points."""
        return 100.0 * (self.float_acc - self.int8_acc)

    def to_text(self) -> str:
        return (
            f"float64 size  {self.float_bytes / 1024:.1f} KiB\n"
            f"int8 size     {self.int8_bytes / 1024:.1f} KiB (x{self.size_ratio:.3f})\n"
            f"accuracy      {100 * self.float_acc:.2f}% -> {100 * self.int8_acc:.2f}% "
            f"(delta {self.acc_delta_pp:+.2f} pp)\n"
            f"argmax kept   {100 * self.argmax_agreement:.2f}%\n"
        )


def quantize_model(graph, dataset, base=None):
    """Weight-only int8 quantization of ``graph``.

    Returns (quantized file bytes, report, dequantized graph). The report
    compares serialized sizes and accuracy on ``dataset`` (an
    ``ArrayDataset``). Aliased layers are resolved against ``base``.
    """
    from .serialize import from_bytes, to_bytes
    from .train import batched_predict

    data = to_bytes(graph, quantized=True)
    qgraph = from_bytes(data, base=base)
    p_float = batched_predict(graph, dataset.feeds)
    p_int8 = batched_predict(qgraph, dataset.feeds)
    pred_f, pred_q = p_float.argmax(axis=1), p_int8.argmax(axis=1)
    report = QuantizationReport(
        float_bytes=len(to_bytes(graph)),
        int8_bytes=len(data),
        float_acc=float(np.mean(pred_f == dataset.y)),
        int8_acc=float(np.mean(pred_q == dataset.y)),
        argmax_agreement=float(np.mean(pred_f == pred_q)),
    )
    return data, report, qgraph
