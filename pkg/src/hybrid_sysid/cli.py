"""Command-line entry point: ``hybrid-sysid <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fatigue, lstm, metrics, pipeline, store, synth
from .signal import MultiChannelSignal, read_csv, write_csv
from .spectral import DEFAULT_BAND_LIMIT, DEFAULT_SEGMENT_LENGTH, FrfModel, estimate_frf

log = logging.getLogger("hybrid_sysid")

TASKS = {
    "fp": (synth.DRIVE, synth.DISP + synth.FORCE),
    "vs": (synth.DISP, synth.FORCE),
}
# (architecture, epochs, learning rate) of the selected models per task and scheme
PRESETS = {
    ("fp", "pure"): ((39,), 253, 2e-4),
    ("fp", "hybrid1"): ((25, 25), 75, 3e-3),
    ("fp", "hybrid2"): ((39,), 800, 1e-4),
    ("vs", "pure"): ((29,), 501, 2e-4),
    ("vs", "hybrid1"): ((39,), 402, 1e-4),
    ("vs", "hybrid2"): ((39,), 501, 2e-4),
}
STUDY_ARCHITECTURES = ((10,), (39,), (23, 23), (39, 39))


class UsageError(Exception):
    """Bad flags, config or manifest: exit code 2."""


def parse_arch(text: str) -> tuple[int, ...]:
    try:
        arch = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"architecture must be a comma list of cell counts, got {text!r}")
    if not arch or min(arch) < 1:
        raise argparse.ArgumentTypeError("every block needs at least one cell")
    return arch


def parse_arch_list(text: str) -> tuple[tuple[int, ...], ...]:
    return tuple(parse_arch(t) for t in text.split(";") if t.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def max_workers() -> int:
    raw = os.environ.get("HYBRID_SYSID_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"HYBRID_SYSID_THREADS must be an integer, got {raw!r}")


# --- shared helpers -----------------------------------------------------------

def wiring(args) -> tuple[tuple[str, ...], tuple[str, ...]]:
    ins, outs = TASKS[args.task]
    if getattr(args, "inputs", None):
        ins = args.inputs
    if getattr(args, "outputs", None):
        outs = args.outputs
    return tuple(ins), tuple(outs)


def load_manifest(path, require_roles: Sequence[str] = ()) -> store.DatasetManifest:
    if path is None:
        raise UsageError("--manifest is required")
    try:
        return store.validate_manifest(store.read_manifest(path), require_roles)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}")
    except store.ManifestError as exc:
        raise UsageError(f"invalid manifest {path}: {exc}")


def check_channels(manifest: store.DatasetManifest, names: Sequence[str]) -> None:
    available = manifest.entries[0].channels
    missing = [n for n in names if n not in available]
    if missing:
        raise UsageError(f"channels {missing} not in the dataset (has {list(available)})")


def load_signals(manifest: store.DatasetManifest, entries) -> list[MultiChannelSignal]:
    return [read_csv(manifest.resolve(e)) for e in entries]


def fit_segment(n: int, requested: int) -> int:
    return min(requested, 1 << (int(n).bit_length() - 1))


def fit_frf_model(signals, ins, outs, segment_length, band_limit) -> FrfModel:
    seg = fit_segment(min(len(s) for s in signals), segment_length)
    fs = signals[0].sample_rate
    return estimate_frf([s.select(ins) for s in signals], [s.select(outs) for s in signals],
                        seg, min(band_limit, fs / 2))


def provenance(args, manifest: store.DatasetManifest | None, **extra) -> dict:
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    out = {
        "seed": int(getattr(args, "seed", 0)),
        "config_hash": store.config_digest(settings),
        "manifest_hash": manifest.digest() if manifest is not None else "",
    }
    out.update(extra)
    return out


# --- commands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    if len(args.mean_range) != 2 or len(args.amplitude_range) != 2:
        raise UsageError("--mean-range and --amplitude-range take two values 'lo,hi'")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    spec = synth.NoiseSpec(white_limit=args.white_limit, pink_limit=args.pink_limit,
                           duration=args.duration, sample_rate=args.sample_rate,
                           mean_range=args.mean_range, amplitude_range=args.amplitude_range)
    if args.plant == "rig":
        plant = synth.RigPlant(cutoff=min(DEFAULT_BAND_LIMIT, args.sample_rate / 2))
    elif args.plant == "study":
        plant = synth.LtiPlant(synth.study_plant(args.sample_rate))
    else:
        if args.plant_bundle is None:
            raise UsageError("--plant bundle needs --plant-bundle")
        frf = store.load_bundle(args.plant_bundle).predictor.frf
        if frf is None:
            raise UsageError("plant bundle carries no FRF model")
        plant = synth.LtiPlant(frf)
    files = synth.make_dataset(args.kind, plant, args.count, args.seed, args.out, spec,
                               scales=args.scales, offsets=args.offsets, role=args.role,
                               prefix=args.prefix, output_noise=args.output_noise)
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def cmd_fit_frf(args) -> int:
    manifest = load_manifest(args.manifest, ("train",))
    ins, outs = wiring(args)
    check_channels(manifest, ins + outs)
    entries = manifest.select(role="train", kind="noise")
    if not entries:
        raise UsageError("no training noise files in the manifest")
    frf = fit_frf_model(load_signals(manifest, entries), ins, outs, args.segment_length, args.band_limit)
    pred = pipeline.HybridPredictor("frf", ins, outs, pipeline.WindowingConfig(), frf=frf)
    store.save_bundle(store.ModelBundle(pred, provenance(args, manifest, scheme="frf")), args.out)
    print(f"FRF model ({len(frf.frequencies)} bins, {len(entries)} files) written to {args.out}")
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest, ("train",))
    ins, outs = wiring(args)
    check_channels(manifest, ins + outs)
    arch, epochs, lr = PRESETS.get((args.task, args.scheme), ((39,), 100, 1e-3))
    arch = args.arch or arch
    epochs = args.epochs or epochs
    lr = args.learning_rate or lr
    windowing = pipeline.WindowingConfig(args.window_length, args.overlap)
    train_entries = manifest.select(role="train")
    train = load_signals(manifest, train_entries)

    frf = None
    if args.scheme != "pure":
        if args.frf:
            frf = store.load_bundle(args.frf).predictor.frf
            if frf is None:
                raise UsageError(f"{args.frf} holds no FRF model")
        else:
            noise = [s for s, e in zip(train, train_entries) if e.kind == "noise"] or train
            frf = fit_frf_model(noise, ins, outs, args.segment_length, args.band_limit)
        if frf.input_names != ins or frf.output_names != outs:
            raise UsageError("FRF wiring does not match the task wiring")
    out = Path(args.out)
    loss_log = Path(args.loss_log) if args.loss_log else out.with_suffix(".loss.csv")
    if args.scheme == "frf":
        bundle = store.ModelBundle(pipeline.HybridPredictor("frf", ins, outs, windowing, frf=frf),
                                   provenance(args, manifest, scheme="frf"))
        store.save_bundle(bundle, out)
        print(f"FRF bundle written to {out}")
        return 0

    validation = load_signals(manifest, manifest.select(role="validation"))
    config = lstm.TrainConfig(lr, epochs, args.batch_size, seed=args.seed, clip_norm=args.clip_norm)
    history: list[float] = []
    loss_log.parent.mkdir(parents=True, exist_ok=True)
    with open(loss_log, "w", newline="") as fh:
        fh.write(f"# scheme={args.scheme} task={args.task} arch={','.join(map(str, arch))}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])

        def on_epoch(epoch, loss):
            history.append(loss)
            w.writerow([epoch, repr(loss)])
            fh.flush()

        try:
            result = pipeline.fit_predictor(
                args.scheme, [s.select(ins) for s in train], [s.select(outs) for s in train], frf,
                windowing, arch, config, callback=on_epoch, validation=validation or None,
                validate_every=args.validate_every)
        except lstm.TrainingDiverged as exc:
            print(f"error: training diverged: {exc}; loss log kept at {loss_log}", file=sys.stderr)
            return 1
        ts = result.training_set
        fh.write(f"# raw_target_variance={ts.raw_target_variance!r} output_variance={ts.output_variance!r}\n")
    prov = provenance(args, manifest, scheme=args.scheme, task=args.task,
                      architecture=",".join(map(str, arch)), epochs=epochs, learning_rate=lr,
                      best_epoch=result.best_epoch,
                      parameters=result.predictor.lstm.n_parameters(),
                      raw_target_variance=ts.raw_target_variance,
                      output_variance=ts.output_variance)
    store.save_bundle(store.ModelBundle(result.predictor, prov), out)
    print(f"{args.scheme} model {list(arch)} with {prov['parameters']} parameters written to {out}")
    print(f"final training loss {history[-1]:.6g} (initial {history[0]:.6g}); loss log {loss_log}")
    return 0


def cmd_predict(args) -> int:
    bundle = store.load_bundle(args.bundle)
    pred = bundle.predictor
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.files:
        sig = read_csv(path)
        missing = [n for n in pred.input_names if n not in sig.names]
        if missing:
            print(f"error: {path}: missing input channels {missing}", file=sys.stderr)
            return 1
        y = pipeline.predict(pred, sig)
        target = out_dir / (Path(path).stem + ".pred.csv")
        write_csv(y, target, comments=[f"prediction of {Path(path).name} ({pred.scheme})"])
        print(f"wrote {target}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest, (args.role,))
    bundle = store.load_bundle(args.bundle)
    pred = bundle.predictor
    check_channels(manifest, pred.input_names + pred.output_names)
    entries = manifest.select(role=args.role)
    files = [metrics.EvalFile(e.path, e.group, s) for e, s in zip(entries, load_signals(manifest, entries))]
    report = metrics.evaluate(pred, files, segment_length=args.segment_length,
                              directions=fatigue.generate_directions(args.directions))
    if args.out:
        store.atomic_write(args.out, report.to_csv().encode())
        print(f"report written to {args.out}")
    print(report.summary())
    return 0


# --- dataset-size study ------------------------------------------------------------

def _study_job(job):
    (arch, size, init, train_in, train_out, val, windowing, config) = job
    result = pipeline.fit_predictor("pure", train_in[:size], train_out[:size], None, windowing,
                                    arch, config, init=init)
    pred = result.predictor
    rms, mr = [], []
    directions = fatigue.generate_directions()
    for sig in val:
        y = pipeline.predict(pred, sig)
        target = sig.select(pred.output_names)
        rms.append(np.mean([metrics.rms_error(y.channel(n), target.channel(n)) for n in pred.output_names]))
        mr.append(fatigue.multirain_ratio(y.data[:, :3], target.data[:, :3], directions))
    return arch, size, float(np.mean(rms)), float(np.mean(mr)), result.history[-1]


def run_study(plant: FrfModel, sizes: Sequence[int], architectures=STUDY_ARCHITECTURES,
              seed: int = 0, epochs: int = 100, learning_rate: float = 1e-3,
              duration: float = 30.0, validation_files: int = 8,
              windowing: pipeline.WindowingConfig = pipeline.WindowingConfig(),
              workers: int = 1, batch_size: int = 8) -> list[dict]:
    """Train the ``pure`` LSTM on growing noise datasets from an LTI plant.

    Training sets are nested (size ``s`` uses the first ``s`` files). Each
    architecture starts every size from one shared initialization. Rows
    hold the validation channel-mean RMS and mean Multi-Rain ratio.
    """
    fs = plant.sample_rate
    spec = synth.NoiseSpec(duration=duration, sample_rate=fs,
                           white_limit=min(20.0, 0.2 * fs), pink_limit=min(50.0, 0.45 * fs))
    lti = synth.LtiPlant(plant)
    train_x = [d[0] for d in synth.make_drives("noise", max(sizes), derive(seed, "study-train"), spec, plant.input_names)]
    val_x = [d[0] for d in synth.make_drives("noise", validation_files, derive(seed, "study-validation"), spec, plant.input_names)]
    train_y = lti.respond(train_x)
    val = [x.concat_channels(y) for x, y in zip(val_x, lti.respond(val_x))]
    config = lstm.TrainConfig(learning_rate, epochs, batch_size, seed=synth.derive_seed(seed, "study-shuffle"))
    n_in, n_out = plant.n_inputs, plant.n_outputs
    jobs = []
    for arch in architectures:
        init = lstm.init_network(arch, n_in, n_out, synth.derive_rng(seed, "study-init:" + ",".join(map(str, arch))))
        for size in sorted(sizes):
            jobs.append((tuple(arch), size, init, train_x, train_y, val, windowing, config))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_study_job, jobs))
    else:
        results = [_study_job(j) for j in jobs]
    rows = []
    for arch, size, rms, mr, loss in sorted(results, key=lambda r: (len(r[0]), r[0], r[1])):
        rows.append({"architecture": "{" + ",".join(map(str, arch)) + "}",
                     "parameters": lstm.parameter_count(arch, n_in, n_out),
                     "files": size, "rms": rms, "multirain": mr, "final_loss": loss})
    return rows


def derive(seed: int, label: str) -> int:
    return synth.derive_seed(seed, label) % (2 ** 31)


def spearman(x, y) -> float:
    """Rank correlation (no ties expected)."""
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    if rx.std() == 0 or ry.std() == 0:
        return float("nan")
    return float(np.corrcoef(rx, ry)[0, 1])


def cmd_study(args) -> int:
    if args.plant_bundle:
        plant = store.load_bundle(args.plant_bundle).predictor.frf
        if plant is None:
            raise UsageError(f"{args.plant_bundle} holds no FRF model")
    else:
        plant = synth.study_plant(args.sample_rate)
    rows = run_study(plant, args.sizes, args.architectures, args.seed, args.epochs,
                     args.learning_rate, args.duration, args.validation_files,
                     pipeline.WindowingConfig(args.window_length, args.overlap),
                     workers=max_workers(), batch_size=args.batch_size)
    fields = ["architecture", "parameters", "files", "rms", "multirain", "final_loss"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in fields])
    text = buf.getvalue()
    if args.out:
        store.atomic_write(args.out, text.encode())
    sys.stdout.write(text)
    for arch in dict.fromkeys(r["architecture"] for r in rows):
        sel = [r for r in rows if r["architecture"] == arch]
        rho = spearman([r["files"] for r in sel], [r["rms"] for r in sel])
        print(f"# {arch}: spearman(files, rms) = {rho:.3f}")
    return 0


# --- parser -------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="tab-separated key/value file supplying option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _wiring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=sorted(TASKS), default="fp")
    p.add_argument("--inputs", type=_names, help="explicit input channels (comma list)")
    p.add_argument("--outputs", type=_names, help="explicit output channels (comma list)")


def _spectral_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--segment-length", type=int, default=DEFAULT_SEGMENT_LENGTH)
    p.add_argument("--band-limit", type=float, default=DEFAULT_BAND_LIMIT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-sysid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize excitation/response files")
    _common(p)
    p.add_argument("--kind", choices=synth.KINDS, required=True)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plant", choices=("rig", "study", "bundle"), default="rig")
    p.add_argument("--plant-bundle")
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--sample-rate", type=float, default=200.0)
    p.add_argument("--white-limit", type=float, default=20.0)
    p.add_argument("--pink-limit", type=float, default=50.0)
    p.add_argument("--mean-range", type=_floats, default=(-4.0, 4.0))
    p.add_argument("--amplitude-range", type=_floats, default=(0.5, 2.0))
    p.add_argument("--scales", type=_floats, help="service-load scale factors")
    p.add_argument("--offsets", type=_floats, help="service-load offsets")
    p.add_argument("--role", choices=store.ROLES, help="override the default role split")
    p.add_argument("--prefix")
    p.add_argument("--output-noise", type=float, default=0.0,
                   help="std of additive Gaussian noise on plant outputs")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit-frf", help="estimate an FRF model from training noise")
    _common(p)
    _wiring_flags(p)
    _spectral_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_frf)

    p = sub.add_parser("train", help="train an LSTM-based predictor")
    _common(p)
    _wiring_flags(p)
    _spectral_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--scheme", choices=pipeline.SCHEMES, default="hybrid2")
    p.add_argument("--arch", type=parse_arch, help="cells per block, e.g. 39 or 25,25")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--window-length", type=int, default=256)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--validate-every", type=int, default=10)
    p.add_argument("--frf", help="FRF bundle for the hybrid schemes")
    p.add_argument("--loss-log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run a bundle on CSV files")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a bundle on a manifest split")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest")
    p.add_argument("--role", choices=store.ROLES, default="test")
    p.add_argument("--segment-length", type=int, default=DEFAULT_SEGMENT_LENGTH)
    p.add_argument("--directions", type=int, default=500)
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="dataset-size study on an LTI plant")
    _common(p)
    p.add_argument("--plant-bundle", help="FRF bundle used as ground-truth plant")
    p.add_argument("--sizes", type=_ints, default=(2, 5, 10, 20))
    p.add_argument("--arch", dest="architectures", type=parse_arch_list, default=STUDY_ARCHITECTURES,
                   help="architectures separated by ';', e.g. '10;39;23,23'")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--sample-rate", type=float, default=200.0)
    p.add_argument("--validation-files", type=int, default=8)
    # small batches make up for the few subsequences per epoch of desk-scale files
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--window-length", type=int, default=256)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out", help="study CSV path")
    p.set_defaults(func=cmd_study)
    return parser


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` with option defaults taken from ``--config`` (flags still win)."""
    path = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if path is None or command not in subparsers:
        return parser.parse_args(argv)
    try:
        cfg = store.read_config(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    sub = subparsers[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        dest = key.replace("-", "_")
        action = known.get(dest)
        if action is None or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for '{command}'")
        try:
            defaults[dest] = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}")
        if action.choices is not None and defaults[dest] not in action.choices:
            raise UsageError(f"config key {key!r}: {raw!r} not in {list(action.choices)}")
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"hybrid-sysid: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) else 2
    except (store.BundleError, store.ManifestError, ValueError, KeyError, OSError,
            RuntimeError, FloatingPointError) as exc:
        print(f"hybrid-sysid: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
