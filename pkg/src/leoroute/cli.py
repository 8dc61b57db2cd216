"""Command-line pipeline: constellation | dataset | train | eval | gradcheck.

Every subcommand reads its configuration from a key/value file plus flag
overrides (flags win), seeds all randomness from one --seed through named
substreams, writes a JSON run manifest next to its outputs, and exits 0 only
after re-validating that every declared output was written.
"""
import argparse
import dataclasses
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import constellation as cst
from . import gnn, graphs, oracle, sim
from .util import substream

GRADCHECK_TOLERANCE = 1e-4


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(path, subcommand, config, seed, artifacts, started):
    doc = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "tool_version": __version__,
        "started_utc": started,
        "finished_utc": _utc_now(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check_outputs(artifacts) -> None:
    missing = [str(p) for p in artifacts.values() if not Path(p).exists()]
    if missing:
        raise RuntimeError(f"declared outputs missing: {', '.join(missing)}")


def _load_config(args):
    values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            values = cst.parse_config_text(fh.read())
    for override in args.set or []:
        if "=" not in override:
            raise cst.ConfigError(f"--set expects key=value, got {override!r}")
        key, _, val = override.partition("=")
        values.update(cst.parse_config_text(f"{key.strip()} = {val.strip()}"))
    return cst.config_from_mapping(values)


def _schedule_times(extras) -> list:
    start = extras["snapshot_start_s"]
    cadence = extras["snapshot_cadence_s"]
    count = int(extras["snapshot_count"])
    if count < 1:
        raise cst.ConfigError(f"snapshot_count must be >= 1, got {count}")
    return [start + i * cadence for i in range(count)]


def _config_doc(config, extras) -> dict:
    doc = dataclasses.asdict(config)
    doc.update(extras)
    return doc


def cmd_constellation(args) -> int:
    started = _utc_now()
    config, extras = _load_config(args)
    times = _schedule_times(extras)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    for idx, t in enumerate(times):
        states = cst.propagate(None, config, t)
        snap = cst.snapshot(states, config, t, extras["isl_policy"])
        path = out_dir / f"snapshot_{idx:04d}.json"
        path.write_text(cst.snapshot_to_json(snap) + "\n", encoding="utf-8")
        artifacts[f"snapshot_{idx:04d}"] = path
        print(f"t={t:.1f}s nodes={snap.node_count} links={len(snap.links)} "
              f"isolated={len(snap.isolated)}")
    for path in artifacts.values():
        cst.snapshot_from_json(Path(path).read_text(encoding="utf-8"))
    _check_outputs(artifacts)
    _write_manifest(out_dir / "manifest.json", "constellation",
                    _config_doc(config, extras), args.seed, artifacts, started)
    return 0


def cmd_dataset(args) -> int:
    started = _utc_now()
    config, extras = _load_config(args)
    times = _schedule_times(extras)
    ds = oracle.build_dataset(
        config, times,
        destinations_per_snapshot=args.destinations,
        seed=args.seed,
        isl_policy=extras["isl_policy"],
        val_fraction=args.val_fraction,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    oracle.save_dataset(ds, out)
    oracle.load_dataset(out)  # validate round-trip
    print(f"samples={len(ds.samples)} train={len(ds.train_indices)} "
          f"val={len(ds.val_indices)} skipped_snapshots={ds.provenance['skipped_snapshots']}")
    artifacts = {"dataset": out}
    _check_outputs(artifacts)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "dataset",
                    _config_doc(config, extras), args.seed, artifacts, started)
    return 0


def cmd_train(args) -> int:
    started = _utc_now()
    ds = oracle.load_dataset(args.dataset)
    hyper = gnn.Hyperparameters(
        learning_rate=args.learning_rate,
        beta=args.beta,
        epochs=args.epochs,
        batch=args.batch,
        early_stop_patience=args.patience,
        hidden=args.hidden,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    progress_rows = []

    def progress(epoch, train_loss, val_loss):
        progress_rows.append((epoch, train_loss, val_loss))
        print(f"epoch={epoch} train_loss={train_loss:.6f} val_loss={val_loss:.6f}")

    params, report = gnn.train(ds, hyper, progress=progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gnn.save_params(params, out)
    gnn.load_params(out)  # validate round-trip
    curve_path = Path(args.progress) if args.progress else out.with_suffix(out.suffix + ".train.csv")
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, tl, vl in progress_rows:
            fh.write(f"{epoch},{tl!r},{vl!r}\n")
    print(f"best_epoch={report.best_epoch} epochs_run={len(report.train_losses)} "
          f"wall_clock_s={report.wall_clock_s:.1f}")
    artifacts = {"model": out, "training_curve": curve_path}
    _check_outputs(artifacts)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "train",
                    {"dataset": str(args.dataset), **dataclasses.asdict(hyper)},
                    args.seed, artifacts, started)
    return 0


def _parse_scales(text) -> list:
    scales = []
    for part in text.split(","):
        planes, _, sats = part.strip().partition("x")
        scales.append((int(planes), int(sats)))
    return scales


def cmd_eval(args) -> int:
    started = _utc_now()
    config, extras = _load_config(args)
    times = _schedule_times(extras)
    algorithms = tuple(a.strip().upper() for a in args.algorithms.split(","))
    if "GLR" in algorithms and not args.model:
        raise ValueError("GLR requested but no --model given")
    params = gnn.load_params(args.model, expect_f_low=graphs.F_LOW,
                             expect_f_high=graphs.F_HIGH) if args.model else None
    p_values = [float(p) for p in args.p_values.split(",")]
    scales = _parse_scales(args.scales) if args.scales else [
        (config.num_planes, config.sats_per_plane)
    ]
    rows = []
    for planes, sats in scales:
        scale_config = dataclasses.replace(config, num_planes=planes, sats_per_plane=sats)
        for p in p_values:
            exp = sim.ExperimentConfig(
                constellation=scale_config,
                snapshot_times=times,
                interruption_prob=p,
                packets=args.packets,
                packet_size_bits=args.packet_size_bits,
                tx_rate_bps=args.tx_rate_bps,
                algorithms=algorithms,
                model_path=args.model,
                seed=args.seed,
                isl_policy=extras["isl_policy"],
            )
            metrics = sim.run_experiment(exp, params=params, jobs=args.jobs)
            for algo in algorithms:
                m = metrics[algo]
                rows.append(sim.metrics_csv_row(m, scale_config.num_satellites, p))
                print(f"scale={scale_config.num_satellites} p={p} algo={algo} "
                      f"drop_rate={m.drop_rate:.4f} "
                      f"mean_delay_s={'-' if m.mean_delay_s is None else f'{m.mean_delay_s:.5f}'}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sim.write_results_csv(rows, out)
    artifacts = {"results": out}
    _check_outputs(artifacts)
    doc = _config_doc(config, extras)
    doc.update({
        "algorithms": list(algorithms),
        "p_values": p_values,
        "scales": [f"{p}x{s}" for p, s in scales],
        "packets": args.packets,
        "packet_size_bits": args.packet_size_bits,
        "tx_rate_bps": args.tx_rate_bps,
        "model": args.model,
    })
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "eval",
                    doc, args.seed, artifacts, started)
    return 0


def _gradcheck_samples(seed, count=10):
    rng = substream(seed, "gradcheck")
    samples = []
    while len(samples) < count:
        n = int(rng.integers(2, 11))
        adj = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.45:
                    adj[i, j] = adj[j, i] = 1.0
        if adj.sum() == 0:
            continue
        dest = int(rng.integers(n))
        fld = oracle.hop_distances(adj, dest)
        mask = fld.reachable().astype(float)
        labels = np.where(np.isfinite(fld.values), fld.values, 0.0)
        samples.append(oracle.TrainingSample(
            ahat=graphs.normalize(adj),
            features=graphs.build_features(adj, dest),
            labels=labels,
            mask=mask,
        ))
    return samples


def run_gradcheck(seed: int = 0, gradients_fn=None):
    """Finite-difference check over 10 random small samples.

    Returns ({tensor name: max relative error}, kink-skipped coordinate
    count); gradients_fn is injectable so tests can verify that a perturbed
    gradient is caught.
    """
    worst = {}
    skipped = 0
    rng = substream(seed, "gradcheck:params")
    for sample in _gradcheck_samples(seed):
        params = gnn.init_params(seed=int(rng.integers(2**31)))
        errors, n_skipped = gnn.finite_difference_check(
            params, sample, beta=1e-4, gradients_fn=gradients_fn
        )
        skipped += n_skipped
        for name, err in errors.items():
            worst[name] = max(worst.get(name, 0.0), err)
    return worst, skipped


def cmd_gradcheck(args) -> int:
    worst, skipped = run_gradcheck(args.seed)
    ok = True
    for name in sorted(worst):
        status = "ok" if worst[name] < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name} max_rel_err={worst[name]:.3e} {status}")
        ok = ok and worst[name] < GRADCHECK_TOLERANCE
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (tolerance {GRADCHECK_TOLERANCE}, "
          f"{skipped} relu-kink coordinates skipped)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leoroute",
        description="LEO constellation routing pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="key/value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (repeatable; flags win)")

    p = sub.add_parser("constellation", help="generate topology snapshot files")
    add_config(p)
    p.add_argument("--out", required=True, help="output directory for snapshot JSON files")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_constellation)

    p = sub.add_parser("dataset", help="build a labeled training dataset")
    add_config(p)
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--destinations", type=int, default=16,
                   help="destinations sampled per snapshot (default 16)")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the hop-distance model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output model parameter file")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--progress", help="per-epoch CSV path (default <out>.train.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="benchmark routing algorithms")
    add_config(p)
    p.add_argument("--out", required=True, help="output results CSV")
    p.add_argument("--model", help="model parameter file (required for GLR)")
    p.add_argument("--algorithms", default="TBR,TSR,CGR",
                   help="comma-separated subset of GLR,TBR,TSR,CGR")
    p.add_argument("--p-values", default="0.0", help="comma-separated interruption probabilities")
    p.add_argument("--scales", help="comma-separated planes x sats, e.g. 12x11,24x11")
    p.add_argument("--packets", type=int, default=1000)
    p.add_argument("--packet-size-bits", type=float, default=sim.DEFAULT_PACKET_SIZE_BITS)
    p.add_argument("--tx-rate-bps", type=float, default=sim.DEFAULT_TX_RATE_BPS)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for packet routing")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
