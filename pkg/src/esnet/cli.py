"""Command-line entry point: ``esnet generate | train | eval | diagnose | compare``.

Exit codes: 0 success, 1 usage, 2 data error, 3 invariant violation.
"""
import argparse
import csv
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from .config import ConfigError, RunConfig, resolve
from .diagnostics import export_trace, verify_decay
from .energy import original_energy
from .model import PLAIN, CheckpointError, EStableNet, init_params, load_checkpoint, predict
from .solver import SolverConfig, SolverError
from .spectral import Grid
from .training import TrainConfig, TrainingAborted, evaluate, relative_l2, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _add_config_flags(p):
    p.add_argument("--preset", default=argparse.SUPPRESS, help="ac1d or ac2d")
    p.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            p.add_argument(flag, dest=f.name, action="store_true", default=argparse.SUPPRESS)
            p.add_argument("--no-" + f.name.replace("_", "-"), dest=f.name, action="store_false",
                           default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, dest=f.name, default=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(prog="esnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a (phi0, phiT) dataset with the spectral solver")
    _add_config_flags(p)
    p.add_argument("--export-csv", default=None, help="also write one CSV row per grid point")

    p = sub.add_parser("train", help="train a network on a dataset")
    _add_config_flags(p)
    p.add_argument("--monitor-energy", action="store_true", help="check the decay identity on every batch")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the dataset test split")
    _add_config_flags(p)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--per-sample", default=None, help="CSV of per-sample relative L2")
    p.add_argument("--dump-predictions", default=None, help="CSV of x, prediction, truth for one sample")
    p.add_argument("--dump-index", type=int, default=0)

    p = sub.add_parser("diagnose", help="per-block energy traces and the decay identity check")
    _add_config_flags(p)
    p.add_argument("--random-weights", action="store_true", help="use a freshly initialised network")
    p.add_argument("--trace", default=None, help="output CSV (default <out-dir>/energy_trace.csv)")
    p.add_argument("--dump-fields", default=None, help="also write per-block fields as CSV")

    p = sub.add_parser("compare", help="train estable-g and plain with the same budget and report both")
    _add_config_flags(p)
    return parser


def _config_from_args(args) -> RunConfig:
    skip = {"command", "preset", "config", "export_csv", "split", "per_sample", "dump_predictions",
            "dump_index", "random_weights", "trace", "dump_fields", "monitor_energy"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip}
    try:
        return resolve(getattr(args, "preset", None), getattr(args, "config", None), overrides)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _prepare_out(cfg: RunConfig, name="config.resolved.txt"):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(cfg.dump())
    return out


def _load_dataset(cfg: RunConfig):
    path = cfg.dataset_path()
    if not path.exists():
        raise CliError(f"dataset {path} not found (run `esnet generate` first)", EXIT_DATA)
    try:
        ds = dsmod.read_dataset(path)
    except dsmod.DatasetError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    if ds.grid.dims != cfg.dims or ds.grid.n != cfg.n:
        raise CliError(f"dataset grid {ds.grid.dims}D n={ds.grid.n} does not match config "
                       f"{cfg.dims}D n={cfg.n}", EXIT_DATA)
    return ds


def _load_net(cfg: RunConfig):
    path = cfg.checkpoint_path()
    if not path.exists():
        raise CliError(f"checkpoint {path} not found", EXIT_DATA)
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _build_net(cfg: RunConfig, kind=None, epsilon=None, t_end=None):
    net = EStableNet.build(cfg.dims, cfg.blocks, cfg.kernel, kind=kind or cfg.kind,
                           channels=cfg.channel_tuple(), C=cfg.C,
                           epsilon=cfg.epsilon if epsilon is None else epsilon,
                           t_end=cfg.t_end if t_end is None else t_end)
    return init_params(net, cfg.init, cfg.seed)


def _train_cfg(cfg: RunConfig):
    return TrainConfig(lr0=cfg.lr0, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
                       epochs=cfg.epochs, halve_every=cfg.halve_every, restart_every=cfg.restart_every,
                       beta=cfg.beta, seed=cfg.seed, eval_every=cfg.eval_every)


def cmd_generate(cfg: RunConfig, args):
    out = _prepare_out(cfg)
    grid = Grid(cfg.dims, cfg.n)
    scfg = SolverConfig(epsilon=cfg.epsilon, t_end=cfg.t_end, rtol=cfg.rtol, atol=cfg.atol, dealias=cfg.dealias)
    start = time.perf_counter()
    try:
        ds = dsmod.generate(grid, scfg, cfg.count, cfg.seed, workers=cfg.effective_workers(),
                            progress=dsmod.Progress(stream=sys.stdout))
    except SolverError as exc:
        raise CliError(f"solver failure: {exc}", EXIT_DATA) from exc
    path = cfg.dataset_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    dsmod.write_dataset(path, ds)
    if args.export_csv:
        dsmod.export_csv(ds, args.export_csv)
    print(f"wrote {len(ds)} samples to {path} in {time.perf_counter() - start:.1f}s")
    print(f"header: dims={grid.dims} n={grid.n} epsilon={cfg.epsilon} t_end={cfg.t_end} count={len(ds)}")
    return out


def _run_training(cfg: RunConfig, ds, out: Path, kind=None, monitor=False):
    train_ds, test_ds = ds.split(cfg.train_fraction)
    if len(test_ds) == 0:
        raise CliError("train_fraction leaves no test samples", EXIT_USAGE)
    net = _build_net(cfg, kind=kind, epsilon=ds.epsilon, t_end=ds.t_end)
    ckpt = out / "checkpoint.bin"
    label = kind or cfg.kind
    print(f"[{label}] {net.parameter_count()} parameters, {len(train_ds)} train / {len(test_ds)} test")

    def progress(row):
        e = row["epoch"]
        if e % 10 == 0 or e + 1 == cfg.epochs:
            print(f"[{label}] epoch {e:5d} lr {row['lr']:.3e} train {row['train_mse']:.4e} "
                  f"test {row['test_mse']:.4e} rel {row['test_rel_l2']:.4e}", flush=True)

    try:
        result = train(net, train_ds, test_ds, _train_cfg(cfg), log_path=out / "metrics.csv",
                       checkpoint_path=ckpt, monitor_energy=monitor, progress=progress,
                       eval_workers=cfg.effective_workers())
    except TrainingAborted as exc:
        raise CliError(f"training aborted: {exc}; best checkpoint kept at {ckpt}", EXIT_DATA) from exc
    mse, rel = evaluate(net, test_ds)
    summary = {"kind": net.kind, "parameters": net.parameter_count(), "best_epoch": result.best_epoch,
               "test_mse": mse, "test_rel_l2": rel, "n_train": len(train_ds), "n_test": len(test_ds),
               "wall_time_s": result.wall_time}
    if monitor:
        summary["energy_violations"] = result.energy_violations
        summary["energy_checks"] = result.energy_checks
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"[{label}] best epoch {result.best_epoch}: test MSE {mse:.4e}, relative L2 {rel:.4e}")
    return net, summary, result


def cmd_train(cfg: RunConfig, args):
    out = _prepare_out(cfg)
    ds = _load_dataset(cfg)
    _, summary, result = _run_training(cfg, ds, out, monitor=args.monitor_energy)
    if args.monitor_energy and result.energy_violations:
        raise CliError(f"{result.energy_violations} energy decay violations during training", EXIT_INVARIANT)
    return out


def cmd_eval(cfg: RunConfig, args):
    out = _prepare_out(cfg, "config.eval.txt")
    ds = _load_dataset(cfg)
    net = _load_net(cfg)
    if net.dims != ds.grid.dims:
        raise CliError(f"checkpoint is {net.dims}D but dataset is {ds.grid.dims}D", EXIT_DATA)
    train_ds, test_ds = ds.split(cfg.train_fraction)
    target = {"test": test_ds, "train": train_ds, "all": ds}[args.split]
    if len(target) == 0:
        raise CliError(f"{args.split} split is empty", EXIT_DATA)
    mse, rel, pred = evaluate(net, target, workers=cfg.effective_workers(), return_pred=True)
    result = {"split": args.split, "samples": len(target), "mse": mse, "relative_l2": rel}
    (out / "eval.json").write_text(json.dumps(result, indent=2))
    print(f"{args.split}: {len(target)} samples  MSE {mse:.6e}  relative L2 {rel:.6e}")
    if args.per_sample:
        rels = relative_l2(pred, target.phiT, target.grid)
        with open(args.per_sample, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("sample", "seed", "mse", "relative_l2"))
            for i in range(len(target)):
                w.writerow((i, int(target.seeds[i]), repr(float(np.mean((pred[i] - target.phiT[i]) ** 2))),
                            repr(float(rels[i]))))
    if args.dump_predictions:
        i = args.dump_index
        if not 0 <= i < len(target):
            raise CliError(f"dump index {i} out of range", EXIT_USAGE)
        coords = [m.ravel() for m in target.grid.mesh()]
        names = ["x", "y"][:target.grid.dims]
        with open(args.dump_predictions, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*names, "phi0", "prediction", "truth"])
            for p, (a, b, c) in enumerate(zip(target.phi0[i].ravel(), pred[i].ravel(), target.phiT[i].ravel())):
                w.writerow([*(repr(float(cc[p])) for cc in coords), repr(float(a)), repr(float(b)), repr(float(c))])
    return out


def _diagnose_inputs(cfg: RunConfig, net):
    path = cfg.dataset_path()
    rng = np.random.default_rng(cfg.seed)
    if path.exists():
        ds = dsmod.read_dataset(path)
        if ds.grid.dims != net.dims:
            raise CliError("dataset and network dimensionality differ", EXIT_DATA)
        k = min(cfg.samples, len(ds))
        idx = np.sort(rng.choice(len(ds), size=k, replace=False))
        return ds.phi0[idx], f"{k} samples from {path}"
    grid = Grid(net.dims, cfg.n)
    seeds = rng.integers(0, 2 ** 63, size=cfg.samples)
    return np.stack([dsmod.sample_ic(grid, int(s)) for s in seeds]), f"{cfg.samples} fresh random inputs"


def _diagnose(cfg, net, out, trace_path=None, fields_path=None):
    if net.kind == PLAIN:
        raise CliError("diagnose needs an auxiliary variable; the plain network has none "
                       "(use `compare` for its original-energy curve)", EXIT_USAGE)
    phi0, origin = _diagnose_inputs(cfg, net)
    trace, report = verify_decay(net, phi0, keep_states=fields_path is not None)
    trace_path = trace_path or out / "energy_trace.csv"
    export_trace(trace, trace_path, fields_path=fields_path)
    print(f"diagnose on {origin}; trace written to {trace_path}")
    print(report.summary())
    summary = {"passed": report.passed, "max_identity_residual": report.max_residual,
               "discrete_monotone_fraction": float(np.mean(trace.discrete_monotone())),
               "original_monotone_fraction": report.original_monotone_fraction,
               "samples": trace.n_samples, "blocks": trace.n_blocks}
    (out / "diagnose.json").write_text(json.dumps(summary, indent=2))
    return report


def cmd_diagnose(cfg: RunConfig, args):
    out = _prepare_out(cfg, "config.diagnose.txt")
    net = _build_net(cfg) if args.random_weights else _load_net(cfg)
    report = _diagnose(cfg, net, out, args.trace, args.dump_fields)
    if not report.passed:
        raise CliError("energy decay check failed", EXIT_INVARIANT)
    return out


def _mean_original_energy(net, phi0, grid):
    from . import autodiff as ad
    from .model import forward
    with ad.no_grad():
        _, states = forward(net, phi0)
    return [float(np.mean(original_energy(s.phi.value[:, 0], grid, net.epsilon))) for s in states]


def cmd_compare(cfg: RunConfig, args):
    out = _prepare_out(cfg)
    ds = _load_dataset(cfg)
    report = {}
    nets = {}
    for kind in ("estable-g", PLAIN):
        sub = out / kind
        sub.mkdir(exist_ok=True)
        (sub / "config.resolved.txt").write_text(cfg.dump().replace(f"kind = {cfg.kind}", f"kind = {kind}"))
        net, summary, _ = _run_training(cfg, ds, sub, kind=kind)
        nets[kind] = net
        report[kind] = summary
    phi0, origin = _diagnose_inputs(cfg, nets["estable-g"])
    for kind, net in nets.items():
        report[kind]["mean_original_energy_per_block"] = _mean_original_energy(net, phi0, ds.grid)
    trace, decay = verify_decay(nets["estable-g"], phi0)
    export_trace(trace, out / "estable-g" / "energy_trace.csv")
    report["estable-g"]["decay_passed"] = decay.passed
    report["estable-g"]["original_monotone_fraction"] = decay.original_monotone_fraction
    report["ratio_plain_over_estable_rel_l2"] = report[PLAIN]["test_rel_l2"] / report["estable-g"]["test_rel_l2"]
    (out / "compare.json").write_text(json.dumps(report, indent=2))
    lines = [f"{'':24s}{'estable-g':>16s}{'plain':>16s}"]
    for key in ("parameters", "test_mse", "test_rel_l2", "best_epoch"):
        lines.append(f"{key:24s}{report['estable-g'][key]:>16.6g}{report[PLAIN][key]:>16.6g}")
    for n, (a, b) in enumerate(zip(report["estable-g"]["mean_original_energy_per_block"],
                                   report[PLAIN]["mean_original_energy_per_block"])):
        lines.append(f"{'E(phi) after block ' + str(n):24s}{a:>16.6g}{b:>16.6g}")
    text = "\n".join(lines)
    (out / "compare.txt").write_text(text + "\n")
    print(text)
    return out


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "diagnose": cmd_diagnose, "compare": cmd_compare}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _config_from_args(args)
        COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"esnet {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
