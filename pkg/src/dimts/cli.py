"""Command line entry point: ingest, train, sample, evaluate, analyze-channels.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import data as dio
from .checkpoint import CheckpointError
from .eigen import DegenerateSpectrumError, SingularDegreeError
from .metrics import InsufficientWindowsError, evaluate
from .metrics import ZeroVarianceError as MetricVarianceError
from .permutation import ZeroVarianceError, adjacency_score, pearson_similarity, solve_ordering
from .training import NumericalFailure, RunConfig, generate, load_config, load_state, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dimts", description="Diffusion Mamba time-series generator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, window=True):
        sp.add_argument("--out-dir", required=True, help="directory for outputs")
        sp.add_argument("--seed", type=int, default=None)
        if window:
            sp.add_argument("--length", type=int, default=None, help="window length L")
            sp.add_argument("--stride", type=int, default=None, help="sliding stride")

    sp = sub.add_parser("ingest", help="cut a raw CSV into scaled sliding windows")
    sp.add_argument("input", help="raw series CSV with a header row")
    sp.add_argument("--config", default=None)
    common(sp)

    sp = sub.add_parser("train", help="train a model")
    sp.add_argument("input", help="ingested dataset directory or raw series CSV")
    sp.add_argument("--config", default=None, help="flat key = value config file")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--lambda1", type=float, default=None, help="Fourier loss weight")
    sp.add_argument("--lambda2", type=float, default=None, help="correlation shift loss weight")
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    common(sp)

    sp = sub.add_parser("sample", help="draw synthetic windows from a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("-n", "--num", type=int, default=4)
    sp.add_argument("--channels", type=int, default=None, help="expected channel count")
    common(sp)

    sp = sub.add_parser("evaluate", help="compare real and synthetic windows")
    sp.add_argument("real")
    sp.add_argument("synthetic")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--max-lag", type=int, default=None)
    sp.add_argument("--distance", choices=("js", "kl"), default="js")
    common(sp)

    sp = sub.add_parser("analyze-channels", help="channel similarity and scan order")
    sp.add_argument("input")
    common(sp)
    return p


def _run_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
        return cfg.updated(seed=args.seed, steps=getattr(args, "steps", None),
                           lambda1=getattr(args, "lambda1", None),
                           lambda2=getattr(args, "lambda2", None),
                           length=getattr(args, "length", None),
                           stride=getattr(args, "stride", None))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _dataset(path, cfg: RunConfig) -> dio.WindowedDataset:
    path = Path(path)
    if path.is_dir():
        ds = dio.load_dataset(path)
        if ds.length != cfg.length:
            raise dio.DataError(f"dataset windows have length {ds.length}, config asks for {cfg.length}")
        return ds
    if not path.exists():
        raise dio.DataError(f"{path} does not exist")
    return dio.ingest_csv(path, cfg.length, cfg.stride)


def _windows(path, length, stride):
    if not Path(path).exists():
        raise dio.DataError(f"{path} does not exist")
    return dio.load_windows(path, length, stride or 1)


def cmd_ingest(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(args.input, cfg)
    dio.save_dataset(args.out_dir, ds, cfg.length, cfg.stride)
    (Path(args.out_dir) / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    print(f"{ds.windows.shape[0]} windows of length {ds.length} x {ds.channels} channels")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    state = None
    if args.resume:
        state = load_state(args.resume)
        cfg = state.config.updated(steps=args.steps)
        state.config = cfg
    ds = _dataset(args.input, cfg)
    if state is not None and (state.model.config.seq_len, state.model.config.channels) != (
            ds.length, ds.channels):
        raise dio.DataError("checkpoint and dataset disagree on (L, C)")
    state, rows = train(cfg, ds, args.out_dir, state=state)
    last = rows[-1]["total"] if rows else float("nan")
    print(f"trained to step {state.step}; last loss {last:.6f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.num < 1:
        raise UsageError("-n must be positive")
    state = load_state(args.checkpoint)
    mc = state.model.config
    if args.length is not None and args.length != mc.seq_len:
        raise dio.DataError(f"checkpoint has L={mc.seq_len}, requested L={args.length}")
    if args.channels is not None and args.channels != mc.channels:
        raise dio.DataError(f"checkpoint has C={mc.channels}, requested C={args.channels}")
    scaled = generate(state, args.num, seed=args.seed)
    raw = dio.denormalize(scaled, state.data_min, state.data_max)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_windows_csv(out / "samples.csv", raw, state.names)
    dio.write_tensor(out / "samples.bin", raw)
    print(f"wrote {args.num} windows to {out / 'samples.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    real, names = _windows(args.real, args.length, args.stride)
    synth, synth_names = _windows(args.synthetic, real.shape[1], args.stride)
    if synth_names != names:
        raise dio.DataError(f"channel names differ: {names} vs {synth_names}")
    report = evaluate(real, synth, bins=args.bins, max_lag=args.max_lag,
                      distance=args.distance, names=names, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table())
    return EXIT_OK


def cmd_analyze(args) -> int:
    path = Path(args.input)
    if path.is_dir():
        ds = dio.load_dataset(path)
        windows, names = ds.windows, ds.names
    else:
        if not path.exists():
            raise dio.DataError(f"{path} does not exist")
        series, names = dio.read_csv(path)
        windows = series[None]
    G = pearson_similarity(windows, names)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        perm = solve_ordering(G)
    report = {
        "channel_names": names,
        "similarity": G.tolist(),
        "order": [int(i) for i in perm.pi],
        "order_names": [names[i] for i in perm.pi],
        "fiedler_vector": perm.fiedler.tolist(),
        "eigenvalue": perm.eigenvalue,
        "objective": perm.objective,
        "adjacency_score": adjacency_score(perm.pi, G),
        "degenerate": perm.degenerate,
        "warnings": [str(w.message) for w in caught],
    }
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "channels.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print("scan order: " + " -> ".join(report["order_names"]))
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "sample": cmd_sample,
            "evaluate": cmd_evaluate, "analyze-channels": cmd_analyze}

DATA_ERRORS = (dio.DataError, CheckpointError, ZeroVarianceError, MetricVarianceError,
               InsufficientWindowsError, OSError, UnicodeDecodeError)
NUMERIC_ERRORS = (NumericalFailure, FloatingPointError, DegenerateSpectrumError, SingularDegreeError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dimts: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"dimts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"dimts: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
