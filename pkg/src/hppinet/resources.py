"""MACC, RAM and ROM accounting per graph, and the expected system metrics.

Conventions:

* conv ``k*k*Cin*Cout*H'*W'``, DSC ``(k*k*Cin + Cin*Cout)*H*W``, dense
  ``n*m``, LSTM ``T*4*(F+H)*H``, batch norm 2 per element, ECA
  ``kE*C + C``, global average pooling 1 per input element; ReLU, max
  pooling, softmax, reshape and concat are free.
* RAM is the peak of live activation bytes over the layer schedule plus
  the largest per-layer scratch buffer. Activations are 4-byte floats as on
  the target microcontroller; parameters are excluded.
* ROM is the serialized parameter bytes; aliased tensors are stored once
  per deployment bundle.
* KiB = 1024 bytes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import ModelGraph
from .serialize import to_bytes

KIB = 1024
ACT_BYTES = 4


def layer_macc(graph: ModelGraph, name: str, shapes=None) -> int:
    shapes = shapes or graph.output_shapes()
    spec = graph.layer(name)
    p = graph.params.get(name, {})
    out = shapes[name]
    inp = shapes[spec.inputs[0]] if spec.inputs else None
    kind = spec.kind
    if kind == "conv2d":
        k, _, cin, cout = p["w"].shape
        return int(k * k * cin * cout * out[0] * out[1])
    if kind == "dsc":
        k, _, cin = p["dw"].shape
        cout = p["pw"].shape[-1]
        return int((k * k * cin + cin * cout) * out[0] * out[1])
    if kind == "dense":
        n, m = p["w"].shape
        return int(n * m)
    if kind == "lstm":
        f, h4 = p["wx"].shape
        h = h4 // 4
        return int(inp[0] * 4 * (f + h) * h)
    if kind == "batchnorm":
        return int(2 * np.prod(out))
    if kind == "eca":
        c = inp[-1]
        return int(p["kernel"].size * c + c)
    if kind == "gap":
        return int(np.prod(inp))
    return 0


def macc_of(graph: ModelGraph) -> int:
    shapes = graph.output_shapes()
    return sum(layer_macc(graph, spec.name, shapes) for spec in graph.layers)


def _scratch_elems(graph: ModelGraph, spec, shapes) -> int:
    """Working memory a layer needs besides its input and output buffers."""
    p = graph.params.get(spec.name, {})
    if spec.kind == "lstm":
        return 5 * (p["wh"].shape[0])  # gate pre-activations and cell state
    if spec.kind == "dsc":
        out = shapes[spec.name]
        return int(out[0] * out[1] * p["dw"].shape[-1])  # depthwise result
    if spec.kind == "eca":
        return int(shapes[spec.inputs[0]][-1])  # channel weights
    return 0


def liveness_schedule(graph: ModelGraph):
    """Per executed layer, the set of activation names live while it runs.

    An activation is live from its producer (inputs: from the start) until
    its last consumer; the graph output stays live to the end.
    """
    order = [spec.name for spec in graph.layers]
    pos = {name: -1 for name in graph.inputs}
    pos.update({name: i for i, name in enumerate(order)})
    last = dict(pos)
    for i, spec in enumerate(graph.layers):
        for src in spec.inputs:
            last[src] = max(last[src], i)
    last[graph.output] = len(order) - 1
    return [
        (name, {a for a in pos if pos[a] <= i <= last[a]})
        for i, name in enumerate(order)
    ]


def ram_bytes(graph: ModelGraph, act_bytes: int = ACT_BYTES) -> int:
    shapes = graph.output_shapes()
    for name in graph.inputs:
        shapes[name] = graph.input_shape
    size = {name: int(np.prod(s)) * act_bytes for name, s in shapes.items()}
    peak = max((sum(size[a] for a in live) for _, live in liveness_schedule(graph)), default=0)
    scratch = max((_scratch_elems(graph, spec, shapes) for spec in graph.layers), default=0)
    return peak + scratch * act_bytes


def ram_of(graph: ModelGraph, act_bytes: int = ACT_BYTES) -> float:
    return ram_bytes(graph, act_bytes) / KIB


def rom_bytes(graph: ModelGraph, quantized: bool = False) -> int:
    return len(to_bytes(graph, quantized))


def rom_of(graph: ModelGraph, quantized: bool = False) -> float:
    """Serialized size in KiB. Aliased layers only store a reference."""
    return rom_bytes(graph, quantized) / KIB


def bundle_rom_of(graphs, quantized: bool = False) -> float:
    """ROM of a deployment bundle; a shared tensor is stored by its owner only."""
    owners = {}
    for g in graphs:
        for layer in g.params:
            if layer not in g.alias_of:
                owners[id(g.params[layer])] = g.name
    for g in graphs:
        for layer, src in g.alias_of.items():
            if id(g.params[layer]) not in owners:
                raise ValueError(f"{g.name}.{layer} aliases a tensor no graph in the bundle owns")
    return sum(rom_bytes(g, quantized) for g in graphs) / KIB


# ---------------------------------------------------------------------------
# expected system metrics


@dataclass(frozen=True)
class ModuleMetrics:
    acc: float
    ram: float  # KiB
    rom: float  # KiB
    macc: int

    def __post_init__(self):
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], got {self.acc}")
        if self.ram < 0 or self.rom < 0 or self.macc < 0:
            raise ValueError("RAM, ROM and MACC must be non-negative")


@dataclass(frozen=True)
class SystemMetrics:
    expected_acc: float
    expected_ram: float
    total_rom: float
    total_macc: int
    p: float


def expected_system_metrics(fl: ModuleMetrics, plmn: ModuleMetrics, s: ModuleMetrics, p: float = 0.5) -> SystemMetrics:
    """Accuracy and RAM averaged over the branch taken with probability ``p``.

    ACC = ACC_FL * (p ACC_PLMN + (1-p) ACC_S), RAM = RAM_FL + p RAM_PLMN +
    (1-p) RAM_S; ROM and MACC add up over the three modules.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"branch probability must be in [0, 1], got {p}")
    return SystemMetrics(
        expected_acc=fl.acc * (p * plmn.acc + (1 - p) * s.acc),
        expected_ram=fl.ram + p * plmn.ram + (1 - p) * s.ram,
        total_rom=fl.rom + plmn.rom + s.rom,
        total_macc=fl.macc + plmn.macc + s.macc,
        p=p,
    )


def module_metrics(graph: ModelGraph, acc: float, quantized: bool = False) -> ModuleMetrics:
    return ModuleMetrics(acc, ram_of(graph), rom_of(graph, quantized), macc_of(graph))


MODULE_ORDER = ("First_Layer", "PLMN", "Stationary")


def write_report_csv(modules: dict[str, ModuleMetrics], system: SystemMetrics, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["module", "acc", "ram_kib", "rom_kib", "macc"])
        for name, m in modules.items():
            w.writerow([name, f"{m.acc:.6f}", f"{m.ram:.3f}", f"{m.rom:.3f}", m.macc])
        w.writerow(
            ["system", f"{system.expected_acc:.6f}", f"{system.expected_ram:.3f}", f"{system.total_rom:.3f}", system.total_macc]
        )


def report_text(modules: dict[str, ModuleMetrics], system: SystemMetrics) -> str:
    lines = [f"{'module':<12} {'ACC':>8} {'RAM KiB':>9} {'ROM KiB':>9} {'MACC':>10}"]
    for name, m in modules.items():
        lines.append(f"{name:<12} {100 * m.acc:7.2f}% {m.ram:9.2f} {m.rom:9.1f} {m.macc:10d}")
    lines.append(
        f"{'system':<12} {100 * system.expected_acc:7.2f}% {system.expected_ram:9.2f} "
        f"{system.total_rom:9.1f} {system.total_macc:10d}"
    )
    lines.append(f"p = {system.p:g}")
    lines.append(f"expected ACC {100 * system.expected_acc:.2f}%")
    lines.append(f"expected RAM {system.expected_ram:.2f} KiB")
    lines.append(f"total ROM {system.total_rom:.1f} KiB")
    lines.append(f"total MACC {system.total_macc}")
    return "\n".join(lines) + "\n"
