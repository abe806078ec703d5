"""Command-line interface: ``eegtok <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
Every run writes a ``key=value`` manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, spectral, synthetic
from .errors import EEGTokError, NumericalError
from .nn.model import load_model
from .phase_loss import LANDSCAPE_COLUMNS, landscape_grid, loss_landscape
from .preprocess import FilterSpec, condition
from .recording import (
    TARGET_RATE,
    CorpusIndex,
    draw_sample,
    index_corpus,
    load_canonical,
    read_csv,
    save_canonical,
    tile_recording,
)
from .trainer import TrainConfig, config_to_text, evaluate_reconstruction, load_config, reconstruct, train

log = logging.getLogger("eegtok")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _names(text):
    names = [n.strip() for n in text.split(",") if n.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty electrode list")
    return names


def write_manifest(path: Path, command: str, args: argparse.Namespace, seed=None, extra=None) -> Path:
    """``key=value`` provenance record; the timestamp is the only non-deterministic line."""
    settings = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    canonical = "\n".join(f"{k}={v}" for k, v in settings.items())
    if extra and "config" in extra:
        canonical += "\n" + extra["config"]
    lines = {
        "command": command,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed if seed is not None else "",
        "eegtok_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": platform.python_version(),
        **{f"arg.{k}": v for k, v in settings.items()},
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}={v}\n" for k, v in lines.items()), encoding="utf-8")
    return path


def _file_manifest(out: Path) -> Path:
    return out.with_name(out.name + ".manifest")


# subcommands ----------------------------------------------------------------

def cmd_ingest(args):
    rec = read_csv(args.csv, args.rate, args.electrodes)
    spec = None if args.no_filter else FilterSpec()
    rec = condition(rec, spec, args.target_rate)
    out = Path(args.out)
    stem = save_canonical(rec, out / Path(args.csv).stem)
    write_manifest(out / "manifest.txt", "ingest", args)
    print(f"{stem}: {rec.n_channels} channels x {rec.n_samples} samples at {rec.sample_rate:g} Hz")


def cmd_index(args):
    index = index_corpus(args.corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "channels", "trial_lengths"])
        for e in index.entries:
            w.writerow([e.path, e.channel_count, ";".join(map(str, e.trial_lengths))])
    (out.with_name(out.name + ".electrodes")).write_text(
        "".join(f"{i + 1},{n}\n" for i, n in enumerate(index.global_electrodes)), encoding="utf-8")
    for path, reason in index.skipped:
        print(f"skipped {path}: {reason}", file=sys.stderr)
    write_manifest(_file_manifest(out), "index", args)
    print(f"{len(index.entries)} recordings, {index.n_electrodes} electrodes")


def cmd_sample(args):
    index = index_corpus(args.corpus)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bodies = []
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "file", "start", "n_channels", "n_windows", "electrode_ids", "time_ids"])
        for i in range(args.n):
            s = draw_sample(index, rng, args.patches, args.patch_len, args.stride)
            w.writerow([i, index.entries[s.file_index].path, s.start, s.n_channels, s.n_windows,
                        ";".join(map(str, s.electrode_ids)), ";".join(map(str, s.time_ids))])
            bodies.append(s.patches.astype("<f4"))
    (out / "samples.f32").write_bytes(np.stack(bodies).tobytes())
    write_manifest(out / "manifest.txt", "sample", args, seed=args.seed)
    print(f"{args.n} samples of {args.patches} x {args.patch_len}")


def cmd_train(args):
    config = load_config(args.config) if args.config else TrainConfig.toy()
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        config = config.replace(**changes)
    index = index_corpus(args.corpus)
    out = Path(args.out)
    write_manifest(out / "manifest.txt", "train", args, seed=config.seed,
                   extra={"config": config_to_text(config)})
    model, state = train(config, index, out, steps=args.steps)
    last = state.history[-1]
    print(f"{state.step} steps, final total {last.total:.6g}, "
          f"perplexity {state.perplexity_history[-1]:.1f}")


def _load_for_inference(args):
    model = load_model(args.model)
    rec = load_canonical(args.recording)
    index = CorpusIndex.with_electrodes([rec], model.electrodes, [Path(args.recording)])
    samples = tile_recording(rec, index, model.config.n_patches, model.config.patch_len)
    return model, samples


def cmd_encode(args):
    model, samples = _load_for_inference(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    r = reconstruct(model, samples, model.car, model.zscore)
    with open(out, "w") as fh:
        fh.write("sample electrode_id time_id code\n")
        for i, s in enumerate(samples):
            for e, t, c in zip(s.electrode_ids, s.time_ids, r["indices"][i]):
                fh.write(f"{i} {e} {t} {c}\n")
    write_manifest(_file_manifest(out), "encode", args)
    print(f"{len(samples)} samples, {r['indices'].size} tokens")


def cmd_reconstruct(args):
    model, samples = _load_for_inference(args)
    samples = samples if args.samples == 0 else samples[:args.samples]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    r = reconstruct(model, samples, model.car, model.zscore)
    F = r["amplitude"].shape[-1]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "patch", "bin", "target_amplitude", "amplitude", "target_phase", "phase"])
        for i in range(len(samples)):
            for p in range(r["amplitude"].shape[1]):
                for k in range(F):
                    w.writerow([i, p, k + 1, repr(float(r["target_amplitude"][i, p, k])),
                                repr(float(r["amplitude"][i, p, k])),
                                repr(float(r["target_phase"][i, p, k])), repr(float(r["phase"][i, p, k]))])
    report = evaluate_reconstruction(model, samples, model.car, model.zscore)
    out.with_name(out.name + ".summary").write_text(report.to_text(), encoding="utf-8")
    write_manifest(_file_manifest(out), "reconstruct", args)
    print(f"phase error {report.phase_error:.4f} rad, amplitude MAE {report.amplitude_mae:.4g}")


def cmd_loss_landscape(args):
    table = loss_landscape(landscape_grid(args.grid, args.epsilon))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LANDSCAPE_COLUMNS)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    write_manifest(_file_manifest(out), "loss-landscape", args)
    print(f"{len(table)} rows")


def cmd_make_synthetic(args):
    center = None if args.phase_center == "uniform" else float(args.phase_center)
    paths = synthetic.make_synthetic_corpus(
        args.out, n_files=args.files, seed=args.seed, n_channels=args.channels,
        seconds=args.seconds, phase_center=center, phase_spread=args.phase_spread)
    write_manifest(Path(args.out) / "manifest.txt", "make-synthetic", args, seed=args.seed)
    print(f"{len(paths)} recordings in {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eegtok", description="EEG neural tokenizer with circular phase loss")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="CSV -> canonical recording (bandpass + resample)")
    s.add_argument("--csv", required=True)
    s.add_argument("--rate", required=True, type=_positive_float)
    s.add_argument("--electrodes", type=_names, help="comma-separated names (default: CSV header)")
    s.add_argument("--out", required=True)
    s.add_argument("--no-filter", action="store_true")
    s.add_argument("--target-rate", type=_positive_float, default=TARGET_RATE)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("index", help="list the recordings and global electrodes of a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("sample", help="draw randomized P x w samples")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=_positive_int, default=10)
    s.add_argument("--patches", type=_positive_int, default=256)
    s.add_argument("--patch-len", type=_positive_int, default=200)
    s.add_argument("--stride", type=_positive_int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train a tokenizer (default: toy profile)")
    s.add_argument("--config")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["baseline", "circular"])
    s.add_argument("--steps", type=_positive_int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("encode", cmd_encode, "recording -> token lines"),
                              ("reconstruct", cmd_reconstruct, "recording -> spectral reconstruction CSV")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--model", required=True)
        s.add_argument("--recording", required=True)
        s.add_argument("--out", required=True)
        if name == "reconstruct":
            s.add_argument("--samples", type=int, default=1, help="samples to emit (0 = all)")
        s.set_defaults(func=func)

    s = sub.add_parser("loss-landscape", help="phase losses and gradients over a delta grid")
    s.add_argument("--out", required=True)
    s.add_argument("--grid", type=_positive_int, default=1001)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.set_defaults(func=cmd_loss_landscape)

    s = sub.add_parser("make-synthetic", help="write a sinusoid-mixture corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--files", type=_positive_int, default=4)
    s.add_argument("--channels", type=_positive_int, default=8)
    s.add_argument("--seconds", type=_positive_int, default=32)
    s.add_argument("--phase-center", default=str(np.pi), help="radians, or 'uniform'")
    s.add_argument("--phase-spread", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"eegtok: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"eegtok: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (EEGTokError, OSError) as exc:
        print(f"eegtok: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
