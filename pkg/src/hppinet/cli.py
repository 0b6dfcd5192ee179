"""Command-line entry point: ``hppinet <command> [options]``.

Every command reads and writes under ``--out DIR``:

    dataset.npz, manifest.txt, streams/*.csv      synth
    first_layer.hppi, stationary.hppi, plmn.hppi  train
    history_<module>.csv                          train
    accuracy.txt, confusion_*.csv                 eval
    *.int8.hppi, quantization.txt                 quantize
    resources.csv, resources.txt                  resources
    events.csv                                    stream
    attribution.csv, attribution.txt              explain
    ablation.csv                                  ablate

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .frontend import write_stream_csv
from .labels import FINE_LABELS
from .serialize import ModelFormatError, load_model, save_model

log = logging.getLogger("hppinet")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _dataset(out: Path):
    from .synth import load_dataset

    path = out / "dataset.npz"
    if not path.exists():
        raise DataError(f"{path} not found; run `hppinet synth --out {out}` first")
    return load_dataset(path)


def _model(out: Path, name: str, base=None):
    path = out / f"{name}.hppi"
    if not path.exists():
        raise DataError(f"{path} not found; train the {name} module first")
    return load_model(path, base=base)


def _models(out: Path):
    fl = _model(out, "first_layer")
    return fl, _model(out, "plmn"), _model(out, "stationary", base=fl)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig, out: Path) -> int:
    from .synth import generate_activity_stream, make_dataset, save_dataset, write_manifest

    profiles = cfg.profiles()
    split = make_dataset(profiles, cfg.windows_per_class, cfg.split, cfg.seed, cfg.rate_hz)
    save_dataset(split, out / "dataset.npz")
    write_manifest(split, out / "manifest.txt")
    (out / "streams").mkdir(exist_ok=True)
    for label in FINE_LABELS:
        stream = generate_activity_stream(label, cfg.windows_per_class * 16 / cfg.rate_hz, cfg.rate_hz, cfg.seed, profiles)
        write_stream_csv(stream, out / "streams" / f"{label}.csv")
    print(split.manifest(), end="")
    return 0


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    from .pipeline import train_first_layer, train_plmn, train_stationary
    from .train import dataset_for, evaluate
    from .zoo import PlmnVariant

    split = _dataset(out)
    tc = cfg.train_config()
    if args.variant and args.module != "plmn":
        raise UsageError("--variant only applies to --module plmn")
    if args.module == "first":
        graph, hist = train_first_layer(split, tc, cfg.seed)
        save_model(graph, out / "first_layer.hppi")
        hist.to_csv(out / "history_first_layer.csv")
    elif args.module == "stationary":
        fl = _model(out, "first_layer")
        graph, hist, head_hist = train_stationary(split, fl, tc, cfg.seed + 1)
        save_model(fl, out / "first_layer.hppi")
        save_model(graph, out / "stationary.hppi")
        hist.to_csv(out / "history_stationary.csv")
        head_hist.to_csv(out / "history_first_layer_head.csv")
        print(f"first_layer test accuracy {100 * evaluate(fl, dataset_for(fl, split.test))[0]:.2f}% (head refit)")
    else:
        variant = PlmnVariant(args.variant or "full")
        graph, hist = train_plmn(split, variant, tc, cfg.seed)
        save_model(graph, out / f"{graph.name}.hppi")
        hist.to_csv(out / f"history_{graph.name}.csv")
    acc = evaluate(graph, dataset_for(graph, split.test))[0]
    print(f"{graph.name} test accuracy {100 * acc:.2f}% (stopped at epoch {hist.stopped_epoch}, best {hist.best_epoch})")
    return 0


def cmd_eval(args, cfg: RunConfig, out: Path) -> int:
    from .pipeline import system_accuracy
    from .train import dataset_for, evaluate, write_confusion_csv

    split = _dataset(out)
    fl, plmn, st = _models(out)
    lines = []
    for g in (fl, plmn, st):
        acc, cm = evaluate(g, dataset_for(g, split.test))
        write_confusion_csv(cm, g.class_labels, out / f"confusion_{g.name}.csv")
        lines.append(f"{g.name:<12} {100 * acc:6.2f}%")
    acc, cm = system_accuracy(fl, plmn, st, split.test)
    write_confusion_csv(cm, FINE_LABELS, out / "confusion_system.csv")
    lines.append(f"{'system':<12} {100 * acc:6.2f}%")
    text = "\n".join(lines) + "\n"
    (out / "accuracy.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_quantize(args, cfg: RunConfig, out: Path) -> int:
    from .quant import quantize_model
    from .train import dataset_for

    split = _dataset(out)
    fl, plmn, st = _models(out)
    _, _, qfl = quantize_model(fl, dataset_for(fl, split.test))
    texts = []
    for g, base in ((fl, None), (plmn, None), (st, qfl)):
        qbytes, report, _ = quantize_model(g, dataset_for(g, split.test), base=base)
        (out / f"{g.name}.int8.hppi").write_bytes(qbytes)
        texts.append(f"[{g.name}]\n" + report.to_text())
    text = "\n".join(texts)
    (out / "quantization.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_resources(args, cfg: RunConfig, out: Path) -> int:
    from .pipeline import branch_probability
    from .resources import ModuleMetrics, expected_system_metrics, module_metrics, report_text, write_report_csv
    from .train import dataset_for, evaluate

    p = cfg.p if args.p is None else args.p
    if not 0.0 <= p <= 1.0:
        raise UsageError(f"--p must be in [0, 1], got {p}")
    if cfg.metrics:
        mods = {name: ModuleMetrics(**cfg.metrics[name]) for name in ("first_layer", "plmn", "stationary")}
    else:
        split = _dataset(out)
        graphs = dict(zip(("first_layer", "plmn", "stationary"), _models(out)))
        mods = {
            name: module_metrics(g, evaluate(g, dataset_for(g, split.test))[0], quantized=args.quantized)
            for name, g in graphs.items()
        }
        if args.p is None and args.empirical_p:
            p = branch_probability(split.test)
    system = expected_system_metrics(mods["first_layer"], mods["plmn"], mods["stationary"], p)
    write_report_csv(mods, system, out / "resources.csv")
    text = report_text(mods, system)
    (out / "resources.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_stream(args, cfg: RunConfig, out: Path) -> int:
    from .resources import ram_of
    from .runtime import Models, branch_fraction, co_resident, mean_resident_ram, stream_run, write_events_csv
    from .synth import SyntheticSource, mixed_schedule

    split = _dataset(out)
    fl, plmn, st = _models(out)
    n = args.windows or cfg.stream_windows
    ram = {"first_layer": ram_of(fl), "plmn": ram_of(plmn), "stationary": ram_of(st)}
    source = SyntheticSource(mixed_schedule(n, cfg.stream_seed, cfg.mean_run), cfg.stream_seed, cfg.profiles())
    events, state = stream_run(source, Models(fl, plmn, st), split.stats, ram)
    write_events_csv(events, out / "events.csv")
    p_hat = branch_fraction(events)
    expected_ram = ram["first_layer"] + p_hat * ram["plmn"] + (1 - p_hat) * ram["stationary"]
    acc = np.mean([e.fine == e.true_label for e in events])
    print(f"windows {len(events)}  accuracy {100 * acc:.2f}%  p_hat {p_hat:.4f}")
    print(f"mean resident RAM over A/B windows {mean_resident_ram(events):.3f} KiB, expected {expected_ram:.3f} KiB")
    print(f"peak resident RAM {state.peak_ram_kib:.3f} KiB, co-resident second stages: {co_resident(events)}")
    return 0


def cmd_explain(args, cfg: RunConfig, out: Path) -> int:
    from .explain import explain_plmn
    from .train import dataset_for

    split = _dataset(out)
    plmn = _model(out, args.model)
    tr, te = dataset_for(plmn, split.train), dataset_for(plmn, split.test)
    report = explain_plmn(plmn, tr.feeds, tr.y, te.feeds, te.y, split.test, epochs=cfg.explain_epochs, seed=cfg.seed)
    report.write_csv(out / "attribution.csv")
    text = report.to_text()
    (out / "attribution.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_ablate(args, cfg: RunConfig, out: Path) -> int:
    import csv

    from .pipeline import train_plmn
    from .resources import rom_of
    from .train import dataset_for, evaluate
    from .zoo import ABLATION_ORDER

    split = _dataset(out)
    rows = []
    for variant in ABLATION_ORDER:
        g, _ = train_plmn(split, variant, cfg.train_config(), cfg.seed)
        acc = evaluate(g, dataset_for(g, split.test))[0]
        rows.append((variant.display_name, acc, rom_of(g), g.parameter_count()))
        print(f"{variant.display_name:<20} {100 * acc:6.2f}%  ROM {rom_of(g):8.1f} KiB")
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "acc", "rom_kib", "params"])
        for name, acc, rom, n in rows:
            w.writerow([name, f"{acc:.6f}", f"{rom:.3f}", n])
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "quantize": cmd_quantize,
    "resources": cmd_resources,
    "stream": cmd_stream,
    "explain": cmd_explain,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    parser = _Parser(prog="hppinet", description="Hierarchical activity recognition experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train one module")
    p.add_argument("--module", required=True, choices=("first", "plmn", "stationary"))
    p.add_argument("--variant", choices=("full", "no_attention", "fft", "wt", "gt", "plcn"), help="PLMN ablation variant")
    sub.add_parser("eval", parents=[common], help="accuracy and confusion matrices on the test split")
    sub.add_parser("quantize", parents=[common], help="int8 weight quantization report")
    p = sub.add_parser("resources", parents=[common], help="MACC/RAM/ROM table with expected system metrics")
    p.add_argument("--p", type=float, help="probability that a window goes to PLMN (default from config, 0.5)")
    p.add_argument("--quantized", action="store_true", help="report int8 ROM")
    p.add_argument("--empirical-p", action="store_true", help="use the A share of the test split when --p is not given")
    p = sub.add_parser("stream", parents=[common], help="run the two-stage runtime on a mixed synthetic stream")
    p.add_argument("--windows", type=int, help="number of windows (default from config, 1000)")
    p = sub.add_parser("explain", parents=[common], help="branch and axis attribution report")
    p.add_argument("--model", default="plmn", help="PLMN model file stem (default: plmn)")
    sub.add_parser("ablate", parents=[common], help="train and tabulate the six PLMN variants")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"hppinet: --config: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hppinet: --config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"hppinet {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, ModelFormatError, ValueError, OSError) as exc:
        print(f"hppinet {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
