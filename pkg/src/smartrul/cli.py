"""Command-line entry point: ``smartrul <subcommand> [flags]``.

Exit status is 0 on success, 1 on a usage error, 2 when the input data
cannot be used and 3 when ``gradcheck`` fails its tolerance.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import SMART_IDS, __version__
from .evaluate import (
    DayMetrics,
    consecutive_days,
    plot_days,
    prf_over_days,
    summary_text,
    threshold_classify,
    transfer_eval,
    write_metrics,
)
from .features import rank_and_select, scan_day_files, score_columns, write_score_table
from .ingest import (
    CACHE_MAGIC,
    FormatError,
    IngestSummary,
    InsufficientHistoryError,
    load_cache,
    load_day_files,
    save_cache,
)
from .lstm import NumericError, grad_check, init_model, load_model, save_model
from .normalize import Strategy
from .online import AsOf, Offsets, fleet_simulate, read_predictions, write_predictions
from .synth import FleetConfig, generate_fleet, read_truth, write_fleet
from .trainer import TrainConfig, TrainingError, plot_sweep, read_config_file, sweep, train, write_sweep
from .windows import dump_tensor, split_train_val, training_windows

log = logging.getLogger("smartrul")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DATA_ERRORS = (FormatError, InsufficientHistoryError, TrainingError, NumericError, ValueError,
               KeyError, OSError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument helpers -----------------------------------------------------------

def _day(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers: {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers: {text!r}") from None


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI: {text!r}")
    return vals[0], vals[1]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--config", metavar="FILE", help="flat key = value file of flag defaults")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default .)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", metavar="PATH", nargs="+", required=required,
                   help="day-file directories, CSV files, or a history cache")
    p.add_argument("--drive-model", metavar="NAME", help="keep only this drive model")


def _train_args(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--hidden", type=_ints, default=d.hidden_sizes, metavar="H,H",
                   help="units per LSTM layer (default 100,100)")
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--ts", type=int, default=d.ts, help="window length in days")
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--epochs", type=int, default=d.max_epochs, help="maximum epochs")
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=d.optimizer)
    p.add_argument("--val-fraction", type=float, default=d.val_fraction)
    p.add_argument("--failed-before", type=_day, metavar="DATE",
                   help="train only on devices that failed before DATE")


def build_parser() -> Parser:
    common = _common()
    parser = Parser(prog="smartrul", description="Remaining-useful-life toolkit for SMART drive telemetry.")
    parser.add_argument("--version", action="version", version=f"smartrul {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="parse day files into a history cache")
    _data_args(p)

    p = sub.add_parser("features", parents=[common], help="score SMART columns of failed devices")
    _data_args(p)
    p.add_argument("--k", type=int, default=len(SMART_IDS), help="features to select (default 5)")

    p = sub.add_parser("train", parents=[common], help="fit the LSTM regressor")
    _data_args(p)
    _train_args(p)
    p.add_argument("--dump-windows", action="store_true", help="also write the training window tensor")

    p = sub.add_parser("sweep", parents=[common], help="train along one hyper-parameter axis")
    _data_args(p)
    _train_args(p)
    p.add_argument("--axis", choices=("units", "dropout", "ts"), required=True)
    p.add_argument("--values", type=_floats, required=True, metavar="V,V,...")
    p.add_argument("--plot", action="store_true", help="also write sweep_<axis>.svg")

    p = sub.add_parser("simulate", parents=[common], help="online predictions for a fleet")
    _data_args(p)
    p.add_argument("--model-file", required=True, metavar="FILE")
    p.add_argument("--strategy", choices=("1", "2"), default="2",
                   help="1 = historical max, 2 = 75th percentile (default)")
    when = p.add_mutually_exclusive_group(required=True)
    when.add_argument("--as-of", type=_day, metavar="DATE", help="predict every device on DATE")
    when.add_argument("--offsets", type=_ints, metavar="N,N", help="predict N days before each known failure")
    p.add_argument("--quantile", type=float, default=0.75)
    p.add_argument("--truth", metavar="FILE", help="ground-truth failure days (truth.csv)")

    p = sub.add_parser("evaluate", parents=[common], help="threshold metrics per day")
    p.add_argument("--preds", metavar="FILE", help="score an existing predictions CSV")
    _data_args(p, required=False)
    p.add_argument("--model-file", metavar="FILE")
    p.add_argument("--start", type=_day, metavar="DATE", help="first of the evaluated days")
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--strategy", choices=("1", "2"), default="2")
    p.add_argument("--quantile", type=float, default=0.75)
    p.add_argument("--truth", metavar="FILE")
    p.add_argument("--horizon", type=int, default=10, help="failure horizon in days (default 10)")
    p.add_argument("--loss-fp", type=float, default=1.0, help="cost of one false alarm")
    p.add_argument("--loss-fn", type=float, default=1.0, help="cost of one missed failure")
    p.add_argument("--plot", action="store_true", help="also write metrics.svg")

    p = sub.add_parser("transfer", parents=[common], help="score a model on another drive model")
    _data_args(p)
    p.add_argument("--model-file", required=True, metavar="FILE")
    p.add_argument("--source-model", default="", metavar="NAME", help="drive model the network was trained on")
    p.add_argument("--start", type=_day, required=True, metavar="DATE")
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--quantile", type=float, help="override the 0.75 quantile of strategy 2")
    p.add_argument("--truth", metavar="FILE")
    p.add_argument("--horizon", type=int, default=10)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fleet as day files")
    d = FleetConfig()
    p.add_argument("--devices", type=int, default=d.n_devices)
    p.add_argument("--horizon-days", type=int, default=d.horizon_days)
    p.add_argument("--failure-days", type=_pair, default=d.failure_days, metavar="LO,HI")
    p.add_argument("--scale", type=_pair, default=d.scale, metavar="LO,HI")
    p.add_argument("--missing-rate", type=float, default=d.missing_rate)
    p.add_argument("--drive-model", default=d.model, metavar="NAME")
    p.add_argument("--start", type=_day, default=d.start, metavar="DATE")

    p = sub.add_parser("gradcheck", parents=[common], help="compare BPTT with finite differences")
    p.add_argument("--hidden", type=int, default=4, help="units per layer (default 4)")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--ts", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


# -- config file ----------------------------------------------------------------

def _apply_config(parser: Parser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse twice: config-file values become defaults, explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = read_config_file(args.config)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    dests = {a.dest: a for a in sub._actions}  # noqa: SLF001
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("config", "help"):
            parser.error(f"{args.config}: unknown option {key!r} for {args.command}")
        action = dests[dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):  # noqa: SLF001
            defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[dest] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- data loading -----------------------------------------------------------------

def _load(paths: Sequence[str], drive_model: str | None, summary: IngestSummary | None = None):
    summary = summary if summary is not None else IngestSummary()
    files: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(sorted(p for p in path.glob("*.csv") if p.name != "truth.csv"))
        elif path.is_file():
            with open(path) as fh:
                if fh.readline().startswith(CACHE_MAGIC):
                    if len(paths) != 1:
                        raise ValueError("a history cache cannot be mixed with other inputs")
                    histories = load_cache(path)
                    if drive_model:
                        histories = {s: h for s, h in histories.items() if h.model == drive_model}
                    return histories
            files.append(path)
        else:
            raise FileNotFoundError(f"no such file or directory: {raw}")
    if not files:
        raise FormatError("no day files found")
    return load_day_files(files, drive_model, summary)


def _truth_for(args) -> dict | None:
    if getattr(args, "truth", None):
        return read_truth(args.truth)
    for raw in getattr(args, "data", None) or ():
        candidate = Path(raw) / "truth.csv"
        if candidate.is_file():
            return read_truth(candidate)
    return None


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        hidden_sizes=args.hidden,
        dropout=args.dropout,
        ts=args.ts,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        optimizer=args.optimizer,
        val_fraction=args.val_fraction,
    )


def _failed(histories, before: date | None):
    return {s: h for s, h in histories.items()
            if h.failure_date is not None and (before is None or h.failure_date < before)}


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


# -- subcommands --------------------------------------------------------------------

def cmd_ingest(args, out: Path) -> int:
    summary = IngestSummary()
    histories = _load(args.data, args.drive_model, summary)
    save_cache(histories, out / "histories.csv")
    _write(out, "ingest_summary.txt", summary.to_text())
    print(summary.to_text(), end="")
    return EXIT_OK


def cmd_features(args, out: Path) -> int:
    files = []
    for raw in args.data:
        p = Path(raw)
        files.extend(sorted(q for q in p.glob("*.csv") if q.name != "truth.csv") if p.is_dir() else [p])
    values, rul, ids = scan_day_files(files, args.drive_model)
    if len(rul) == 0:
        raise ValueError("no failed devices in the input")
    scores = score_columns(values, rul, ids)
    selection = rank_and_select(scores, min(args.k, len(scores)))
    with open(out / "feature_scores.csv", "w", newline="") as fh:
        write_score_table(scores, selection.indices, fh)
    chosen = [ids[i] for i in selection.indices]
    print("selected smart ids " + " ".join(str(i) for i in chosen))
    if selection.disagreements:
        print("not in fisher top-k " + " ".join(str(ids[i]) for i in selection.disagreements))
    return EXIT_OK


def _windows(args):
    histories = _failed(_load(args.data, args.drive_model), args.failed_before)
    windows, skipped = training_windows(histories, ts=args.ts)
    for serial, why in sorted(skipped.items()):
        log.info("skip %s: %s", serial, why)
    if not windows:
        raise ValueError("no training windows (no failed devices with enough history)")
    return windows


def cmd_train(args, out: Path) -> int:
    config = _train_config(args)
    windows = _windows(args)
    split = split_train_val(windows, config.val_fraction, config.seed)
    if args.dump_windows:
        dump_tensor(split.train, out / "train_windows.bin", config.seed)
        dump_tensor(split.validation, out / "val_windows.bin", config.seed)
    model, report = train(config, split, progress=lambda r: log.info(
        "epoch %d train %.3f val %.3f", r.epoch, r.train_loss, r.val_loss))
    save_model(model, out / "model.txt")
    with open(out / "train_log.csv", "w", newline="") as fh:
        report.write_csv(fh)
    _write(out, "train_summary.txt", report.summary())
    print(report.summary(), end="")
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    base = _train_config(args)
    if args.axis == "ts":
        from .ingest import extract_matrix
        from .normalize import minmax_train

        histories = _failed(_load(args.data, args.drive_model), args.failed_before)
        data = []
        for h in sorted(histories.values(), key=lambda h: h.serial):
            try:
                data.append(minmax_train(extract_matrix(h, h.failure_date)))
            except InsufficientHistoryError as exc:
                log.info("skip %s", exc)
    else:
        data = split_train_val(_windows(args), base.val_fraction, base.seed)
    values = [int(v) for v in args.values] if args.axis in ("units", "ts") else args.values
    rows = sweep(base, args.axis, values, data)
    path = out / f"sweep_{args.axis}.csv"
    with open(path, "w", newline="") as fh:
        write_sweep(rows, args.axis, fh)
    if args.plot:
        plot_sweep(rows, args.axis, out / f"sweep_{args.axis}.svg")
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_simulate(args, out: Path) -> int:
    model = load_model(args.model_file)
    histories = _load(args.data, args.drive_model)
    policy = AsOf(args.as_of) if args.as_of else Offsets(tuple(args.offsets))
    strategy = Strategy.parse(args.strategy)
    result = fleet_simulate(model, histories, policy, strategy, truth=_truth_for(args), quantile=args.quantile)
    with open(out / "predictions.csv", "w", newline="") as fh:
        write_predictions(result.predictions, fh)
    with open(out / "skipped.csv", "w", newline="") as fh:
        fh.write("serial,t_c,reason\n")
        for s in result.skipped:
            fh.write(f"{s.serial},{'' if s.t_c is None else s.t_c.isoformat()},\"{s.reason}\"\n")
    _write(out, "simulate_report.txt", result.report())
    print(result.report(), end="")
    return EXIT_OK


def cmd_evaluate(args, out: Path) -> int:
    if args.preds:
        with open(args.preds, newline="") as fh:
            preds = [p for p in read_predictions(fh) if p.actual_rul is not None]
        if not preds:
            raise ValueError("no predictions with actual_rul to score")
        by_day = defaultdict(list)
        for p in preds:
            by_day[p.t_c].append(p)
        rows = [DayMetrics.from_outcome(d, threshold_classify(by_day[d], args.horizon)) for d in sorted(by_day)]
    else:
        if not (args.model_file and args.data and args.start):
            raise UsageError("evaluate needs --preds FILE, or --model-file, --data and --start")
        model = load_model(args.model_file)
        histories = _load(args.data, args.drive_model)
        preds = []
        rows = prf_over_days(model, histories, consecutive_days(args.start, args.days),
                             Strategy.parse(args.strategy), args.horizon, _truth_for(args),
                             args.quantile, predictions=preds)
        with open(out / "predictions.csv", "w", newline="") as fh:
            write_predictions(preds, fh, latency=False)
    with open(out / "metrics.csv", "w", newline="") as fh:
        write_metrics(rows, fh)
    text = summary_text(rows, args.loss_fp, args.loss_fn)
    _write(out, "metrics_summary.txt", text)
    if args.plot:
        plot_days(rows, out / "metrics.svg")
    print(text, end="")
    return EXIT_OK


def cmd_transfer(args, out: Path) -> int:
    model = load_model(args.model_file)
    histories = _load(args.data, args.drive_model)
    report = transfer_eval(model, histories, consecutive_days(args.start, args.days),
                           source_model=args.source_model, quantile=args.quantile,
                           truth=_truth_for(args), horizon=args.horizon)
    _write(out, "transfer.txt", report.text())
    with open(out / "transfer_predictions.csv", "w", newline="") as fh:
        write_predictions(report.predictions, fh, latency=False)
    print(report.text(), end="")
    return EXIT_OK


def cmd_synth(args, out: Path) -> int:
    config = FleetConfig(
        n_devices=args.devices,
        horizon_days=args.horizon_days,
        failure_days=(int(args.failure_days[0]), int(args.failure_days[1])),
        scale=tuple(args.scale),
        missing_rate=args.missing_rate,
        model=args.drive_model,
        start=args.start,
        seed=args.seed,
    )
    fleet = generate_fleet(config)
    paths = write_fleet(fleet, out)
    print(f"devices {len(fleet.histories)}\nday files {len(paths)}\ntruth {out / 'truth.csv'}")
    return EXIT_OK


def cmd_gradcheck(args, out: Path) -> int:
    if args.hidden <= 0 or args.layers <= 0 or args.ts <= 0:
        raise UsageError("--hidden, --layers and --ts must be positive")
    rng = np.random.default_rng([args.seed, 2])
    model = init_model(len(SMART_IDS), [args.hidden] * args.layers, dropout=0.2, ts=args.ts, seed=args.seed)
    window = rng.random((args.ts, len(SMART_IDS)))
    label = float(rng.uniform(0, 2))
    report = grad_check(model, window, label, args.epsilon, args.tolerance, seed=args.seed)
    print(f"max relative error {report.max_rel_error:.3e} at {report.parameter}{list(report.index)}"
          f" over {report.n_checked} parameters: {'pass' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CHECK


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "transfer": cmd_transfer,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"smartrul {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"smartrul {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
