"""Command-line surface: gen-data, train, evaluate, stress-test, bench-rtf.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error,
1 anything else.  Every failure prints one line to stderr of the form
``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

from .config import KEY_MAP, load_config, system_label
from .data import SynthSpec, gen_corpus, read_dataset, write_dataset
from .decode import stress_test
from .errors import ConfigError, DataError, NumericError, ToolkitError
from .experiment import bench_rtf, build_model_from_config, evaluate_model, load_model_params, train_model
from .metrics import count_params

__all__ = ["main", "build_parser"]

_SPEC_FIELDS = {f.name: f.type for f in fields(SynthSpec)}


def _parse_spec_file(path):
    values = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {text!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in _SPEC_FIELDS:
                raise ConfigError(f"{path}:{line_no}: unknown generator key {key!r}")
            values[key] = _coerce_spec(key, raw)
    return values


def _coerce_spec(key, raw):
    ftype = _SPEC_FIELDS[key]
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "tuple":
            return tuple(int(part.strip()) for part in raw.split(","))
    except ValueError:
        raise ConfigError(f"generator key {key}: cannot parse {raw!r} as {ftype}") from None
    return raw


def _add_config_flags(parser):
    for key in KEY_MAP:
        parser.add_argument(f"--{key}", dest=key, default=None, metavar="V")
    parser.add_argument("--config", default=None, help="flat key = value config file")


def _config_from(args):
    overrides = {key: vars(args).get(key) for key in KEY_MAP}
    return load_config(args.config, overrides)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rnntkit",
        description="Multi-dialect dual-orthography transducer toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p_gen.add_argument("--spec", default=None, help="generator settings file")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.add_argument("--seed", type=int, default=None, help="override the generator seed")

    p_train = sub.add_parser("train", help="train a model per the run config")
    _add_config_flags(p_train)
    p_train.add_argument("--task", dest="task_alias", default=None, metavar="H|P|both",
                         help="shorthand for --train.task")

    p_eval = sub.add_parser("evaluate", help="decode a split and emit a results CSV")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p_eval.add_argument("--oracle-dialect", action="store_true",
                        help="feed ground-truth dialect through the conditioning channels")
    p_eval.add_argument("--baseline", default=None,
                        help="baseline results CSV; adds a relative-improvement column")
    p_eval.add_argument("--out", default=None, help="results CSV path")

    p_stress = sub.add_parser("stress-test", help="forced-dialect correctness sweep")
    _add_config_flags(p_stress)
    p_stress.add_argument("--checkpoint", required=True)
    p_stress.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p_stress.add_argument("--p-grid", default="0,0.25,0.5,0.75,1.0")
    p_stress.add_argument("--out", default=None, help="stress CSV path")

    p_bench = sub.add_parser("bench-rtf", help="decode-speed benchmark")
    _add_config_flags(p_bench)
    p_bench.add_argument("--checkpoint", required=True)
    p_bench.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p_bench.add_argument("--runs", type=int, default=5)
    p_bench.add_argument("--warmup", type=int, default=1)
    p_bench.add_argument("--out", default=None, help="benchmark CSV path")
    return parser


def _load_model_from(args, cfg):
    dataset = read_dataset(cfg.data_dir)
    model = build_model_from_config(cfg, dataset)
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint {args.checkpoint} does not exist")
    load_model_params(model, args.checkpoint)
    return model, dataset


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join("" if cell is None else str(cell) for cell in row) + "\n")


def _fmt(value, digits=2):
    return None if value is None else f"{value:.{digits}f}"


def _cmd_gen_data(args):
    values = _parse_spec_file(args.spec) if args.spec else {}
    if args.seed is not None:
        values["seed"] = args.seed
    spec = SynthSpec(**values)
    dataset = gen_corpus(spec)
    write_dataset(dataset, args.out)
    sizes = {name: len(utts) for name, utts in dataset.splits.items()}
    print(
        f"wrote {args.out}: dialects={','.join(dataset.dialects)} "
        + " ".join(f"{name}={sizes[name]}" for name in ("train", "dev", "test"))
    )
    return 0


def _cmd_train(args):
    if args.task_alias is not None and vars(args).get("train.task") is None:
        vars(args)["train.task"] = args.task_alias
    cfg = _config_from(args)
    model, history = train_model(cfg)
    label = system_label(cfg)
    best = min(history, key=lambda entry: entry.dev_score)
    print(
        f"trained {label}: best epoch {best.epoch} dev_score={best.dev_score:.2f} "
        f"checkpoint={os.path.join(cfg.checkpoint_dir, label + '.ckpt')}"
    )
    return 0


def _read_baseline_rates(path):
    rates = {}
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n").split(",")
        idx = {name: header.index(name) for name in ("task", "error_rate_percent")}
        for line in handle:
            cells = line.rstrip("\n").split(",")
            if len(cells) < len(header):
                continue
            try:
                rates[cells[idx["task"]]] = float(cells[idx["error_rate_percent"]])
            except ValueError:
                continue
    return rates


def _cmd_evaluate(args):
    cfg = _config_from(args)
    model, dataset = _load_model_from(args, cfg)
    report = evaluate_model(model, cfg, dataset, split=args.split,
                            oracle_dialect=args.oracle_dialect)
    label = system_label(cfg)
    baseline = _read_baseline_rates(args.baseline) if args.baseline else None
    header = ["system", "task", "unit", "error_rate_percent", "dialect_acc_percent",
              "params_millions", "rtfx"]
    if baseline is not None:
        header.append("rel_vs_baseline_percent")
    params_m = count_params(model)
    acc = report.dialect_acc
    rows = []
    for task in sorted(report.rates):
        row = [label, task, "char" if task == "hanzi" else "syllable",
               f"{report.rates[task]:.2f}", _fmt(acc), f"{params_m:.5f}", None]
        if baseline is not None:
            base = baseline.get(task)
            rel = None if base in (None, 0.0) else 100.0 * (base - report.rates[task]) / base
            row.append(_fmt(rel))
        rows.append(row)
    out = args.out or os.path.join(cfg.results_dir, f"results_{label}_{args.split}.csv")
    _write_csv(out, header, rows)
    summary = " ".join(f"{task}={report.rates[task]:.2f}" for task in sorted(report.rates))
    extras = []
    if report.dialect_acc_adc is not None:
        extras.append(f"adc_acc={report.dialect_acc_adc:.2f}")
    if report.dialect_acc_votes is not None:
        extras.append(f"vote_acc={report.dialect_acc_votes:.2f}")
        extras.append(f"vote_coverage={report.vote_coverage:.2f}")
    print(f"{label} {args.split}: {summary} {' '.join(extras)}".rstrip() + f" -> {out}")
    return 0


def _cmd_stress(args):
    cfg = _config_from(args)
    model, dataset = _load_model_from(args, cfg)
    try:
        grid = [float(part) for part in args.p_grid.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --p-grid {args.p_grid!r}") from None
    if not grid:
        raise ConfigError("empty --p-grid")
    rows = stress_test(model, dataset, grid, seed=cfg.seed, split=args.split,
                       max_symbols_per_frame=cfg.max_symbols)
    label = system_label(cfg)
    out = args.out or os.path.join(cfg.results_dir, f"stress_{label}.csv")
    _write_csv(
        out,
        ["p", "empirical_correctness", "cer_hanzi", "ser_pinyin", "dialect_acc"],
        [
            [f"{r.p:g}", f"{r.empirical_correctness:.4f}", f"{r.cer_hanzi:.2f}",
             f"{r.ser_pinyin:.2f}", f"{r.dialect_acc:.2f}"]
            for r in rows
        ],
    )
    for r in rows:
        print(
            f"p={r.p:g} fed_correct={r.empirical_correctness:.3f} "
            f"cer_hanzi={r.cer_hanzi:.2f} ser_pinyin={r.ser_pinyin:.2f} "
            f"dialect_acc={r.dialect_acc:.2f}"
        )
    print(f"-> {out}")
    return 0


def _cmd_bench(args):
    cfg = _config_from(args)
    model, dataset = _load_model_from(args, cfg)
    report = bench_rtf(model, cfg, dataset, split=args.split, runs=args.runs,
                       warmup=args.warmup)
    label = system_label(cfg)
    out = args.out or os.path.join(cfg.results_dir, f"rtf_{label}.csv")
    rows = [
        [str(i + 1), f"{wall:.6f}", f"{report.audio_seconds:.2f}", f"{r:.2f}",
         f"{report.params_millions:.5f}"]
        for i, (wall, r) in enumerate(zip(report.run_wall_seconds, report.run_rtfx()))
    ]
    rows.append(["mean", f"{report.wall_seconds:.6f}", f"{report.audio_seconds:.2f}",
                 f"{report.rtfx:.2f}", f"{report.params_millions:.5f}"])
    _write_csv(out, ["run", "wall_seconds", "audio_seconds", "rtfx", "params_millions"], rows)
    print(
        f"{label}: params={report.params_millions:.5f}M audio={report.audio_seconds:.2f}s "
        f"mean_rtfx={report.rtfx:.2f} over {len(report.run_wall_seconds)} runs -> {out}"
    )
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "stress-test": _cmd_stress,
    "bench-rtf": _cmd_bench,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 4
    except ToolkitError as exc:
        print(f"error[contract]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
