"""Batch command-line entry point: ``pcnn <subcommand> [--config FILE] [flags]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .config import ExperimentConfig
from .data import DATA_ENV, Dataset, load_split
from .network import ConfigError, Network, build_network
from .noise import (NoiseSpec, degradation_sweep, fidelity_accuracy_sweep, inject, retrain)
from .optics import (FootprintModel, QuadratureSpec, StarCouplerGeometry, coupling_matrix,
                     fidelity, footprint_compare, ideal_dft, save_matrix, tradeoff_sweep,
                     transmission)
from .train import TrainSpec, evaluate, train

SUBCOMMANDS = ("design", "train", "evaluate", "noise", "retrain", "footprint", "gradcheck", "sweep")


def fmt(v) -> str:
    """Full double precision (17 significant digits) for floats."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


class Run:
    """Output directory bookkeeping: refuses to reuse a non-empty directory."""

    def __init__(self, out: str | Path, cfg: ExperimentConfig):
        self.dir = Path(out)
        if self.dir.exists() and any(self.dir.iterdir()):
            raise FileExistsError(f"output directory {self.dir} is not empty; refusing to overwrite")
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.write_text("config.resolved.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def finish(self) -> None:
        manifest = {"files": [{"name": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                               "bytes": p.stat().st_size} for p in self.files]}
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    root = cfg.data.root
    if root is None:
        base = os.environ.get(DATA_ENV)
        if base is None:
            raise ConfigError(f"set data.root in the config or ${DATA_ENV}")
        root = str(Path(base) / cfg.data.dataset)
    root_path = Path(root)
    if not root_path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root_path}")
    spec = cfg.train_spec()
    return (load_split(root_path, "train").subset(spec.train_subset),
            load_split(root_path, "test").subset(spec.test_subset))


def _network(cfg: ExperimentConfig, train_set: Dataset | None = None,
             test_set: Dataset | None = None, log=print) -> Network:
    net = build_network(cfg.network_config())
    ckpt = cfg.network.checkpoint
    if ckpt:
        values, _ = ag.load_parameters(ckpt)
        net.load_state(values)
    elif train_set is not None:
        log("no checkpoint given; training a network first")
        train(net, train_set, test_set, cfg.train_spec())
    return net


def cmd_design(cfg: ExperimentConfig, run: Run, args) -> int:
    o = cfg.optics
    cfg.require("optics", "wavelength", "slab_index", "mode_width", "inputs")
    if o.radius is None and o.theta_edge_deg is None:
        raise ConfigError("missing required key 'optics.radius' (or 'optics.theta_edge_deg')")
    outputs = o.outputs or o.inputs
    if o.radius is not None:
        geom = StarCouplerGeometry(o.wavelength, o.slab_index, o.mode_width, o.radius, o.inputs,
                                   outputs, o.paraxial_limit_deg, o.strict)
    else:
        geom = StarCouplerGeometry.from_edge_angle(
            o.inputs, math.radians(o.theta_edge_deg), o.wavelength, o.slab_index, o.mode_width,
            outputs=outputs, paraxial_limit_deg=o.paraxial_limit_deg, strict=o.strict)
    q = cfg.quadrature
    quad = QuadratureSpec(q.points, q.panels, q.window_widths, q.tol)
    kappa = coupling_matrix(geom, quad)
    save_matrix(run.path("transfer_matrix.bin"), kappa)
    report = {"geometry": geom.to_dict(),
              "edge_angle_deg": math.degrees(float(np.max(np.abs(geom.input_angles)))),
              "max_column_power": float(np.max(np.sum(np.abs(kappa.entries) ** 2, axis=0)))}
    if geom.inputs == geom.outputs:
        report["F"] = fidelity(kappa, ideal_dft(geom.inputs))
        report["T"] = transmission(kappa)
        print(f"F={report['F']:.6f} T={report['T']:.6f}")
    run.write_text("design.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.sweep:
        s = cfg.sweep
        rows = tradeoff_sweep(s.n, (s.theta_min_deg, s.theta_max_deg), s.steps,
                              o.wavelength, o.slab_index, o.mode_width, quad)
        run.write_text("tradeoff.csv", csv_text(
            ["theta_deg", "R_m", "R_norm_m", "F", "T"],
            [(r.theta_deg, r.R_m, r.R_norm_m, r.F, r.T) for r in rows]))
    return 0


def cmd_train(cfg: ExperimentConfig, run: Run, args) -> int:
    train_set, test_set = _datasets(cfg)
    net = build_network(cfg.network_config())
    report = train(net, train_set, test_set, cfg.train_spec(),
                   log=lambda r: print(f"epoch {r.epoch}: train_acc={r.train_acc:.4f} "
                                       f"test_acc={r.test_acc:.4f}", flush=True))
    run.write_text("train_report.csv", report.to_csv())
    ag.save_parameters(run.path("checkpoint.ckpt"), net.parameters(),
                       {"network": cfg.network_config().to_dict()})
    print(report.summary(), f"wall_clock={report.wall_clock:.1f}s")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, run: Run, args) -> int:
    if not cfg.network.checkpoint:
        raise ConfigError("missing required key 'network.checkpoint'")
    _, test_set = _datasets(cfg)
    net = _network(cfg)
    res = evaluate(net, test_set)
    rows = [(c, int(res.confusion[c].sum()), int(res.confusion[c, c])) for c in range(10)]
    run.write_text("evaluate.csv", csv_text(["class", "count", "correct"], rows))
    run.write_text("summary.txt", f"accuracy={fmt(res.accuracy)} loss={fmt(res.loss)}\n")
    print(f"accuracy={res.accuracy:.4f} loss={res.loss:.4f}")
    return 0


def cmd_noise(cfg: ExperimentConfig, run: Run, args) -> int:
    train_set, test_set = _datasets(cfg)
    net = _network(cfg, train_set, test_set)
    n = cfg.noise
    sigmas = [args.sigma] if args.sigma is not None else n.sigmas
    clean = evaluate(net, test_set).accuracy
    rows = degradation_sweep(net, sigmas, n.instances, n.kinds, test_set, cfg.seed, tuple(n.targets))
    run.write_text("noise.csv", csv_text(
        ["sigma", "kind", "mean_acc", "std_acc", "instances", "seed"],
        [(r.sigma, r.kind, r.mean_acc, r.std_acc, r.instances, r.seed) for r in rows]))
    print(f"clean accuracy {clean:.4f}")
    for r in rows:
        print(f"sigma={r.sigma:g} {r.kind}: {r.mean_acc:.4f} +- {r.std_acc:.4f}")
    return 0


def cmd_retrain(cfg: ExperimentConfig, run: Run, args) -> int:
    train_set, test_set = _datasets(cfg)
    net = _network(cfg, train_set, test_set)
    r = cfg.retrain
    noisy = inject(net, NoiseSpec(r.sigma, tuple(cfg.noise.targets), r.kind, cfg.seed))
    before = evaluate(noisy, test_set).accuracy
    spec = TrainSpec(batch_size=r.batch_size, epochs=r.epochs, lr=cfg.train.lr, seed=cfg.seed,
                     train_subset=cfg.train.train_subset, test_subset=cfg.train.test_subset,
                     eval_train=cfg.train.eval_train)
    report = retrain(noisy, r.scope, train_set, test_set, spec)
    run.write_text("retrain.csv", report.to_csv({"scope": r.scope, "sigma": r.sigma}))
    print(f"scope={r.scope} sigma={r.sigma:g} noisy={before:.4f} "
          f"retrained={report.final_test_accuracy:.4f}")
    return 0


def cmd_footprint(cfg: ExperimentConfig, run: Run, args) -> int:
    f = cfg.footprint
    rep = footprint_compare(f.n, FootprintModel(f.mzi_width, f.mzi_height, f.normalized_radius,
                                                margin=f.margin))
    run.write_text("footprint.csv", csv_text(
        [fl.name for fl in fields(rep)], [tuple(asdict(rep).values())]))
    print(f"N={rep.n}: {rep.mzi_count} MZIs, mesh area {rep.mzi_area * 1e6:.2f} mm^2; "
          f"star coupler {rep.star_length * 1e3:.2f} mm x {rep.star_width * 1e3:.2f} mm "
          f"= {rep.star_area * 1e6:.4f} mm^2; ratio {rep.ratio:.1f}")
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, run: Run, args) -> int:
    net = build_network(cfg.network_config())
    g = cfg.gradcheck
    try:
        train_set, _ = _datasets(cfg)
        x, y = train_set.images[g.sample:g.sample + 1], train_set.labels[g.sample:g.sample + 1]
    except (ConfigError, FileNotFoundError):
        rng = np.random.default_rng(cfg.seed)
        x, y = rng.uniform(0, 1, (1, net.in_size)), np.array([int(rng.integers(10))])
    net.calibrate_scale(x)
    report = ag.check_gradients(lambda: net.loss(x, y), net.parameters(), g.h)
    run.write_text("gradcheck.csv", csv_text(["parameter", "max_rel_error"],
                                             list(report.errors.items())))
    print(report)
    return 0 if report.max_error < g.tolerance else 1


def cmd_sweep(cfg: ExperimentConfig, run: Run, args) -> int:
    train_set, test_set = _datasets(cfg)
    rows = fidelity_accuracy_sweep(cfg.network_config(), cfg.sweep.thetas_deg, train_set,
                                   test_set, cfg.train_spec())
    run.write_text("fidelity_accuracy.csv", csv_text(
        ["theta_deg", "R_m", "F", "T", "accuracy"],
        [(r.theta_deg, r.R_m, r.F, r.T, r.accuracy) for r in rows]))
    for r in rows:
        print(f"theta={r.theta_deg:g} deg R={r.R_m * 1e6:.1f} um F={r.F:.4f} acc={r.accuracy:.4f}")
    return 0


COMMANDS = {"design": cmd_design, "train": cmd_train, "evaluate": cmd_evaluate,
            "noise": cmd_noise, "retrain": cmd_retrain, "footprint": cmd_footprint,
            "gradcheck": cmd_gradcheck, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcnn", description=__doc__)
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (must be new or empty)")
    p.add_argument("--desk-scale", action="store_true",
                   help="10k/2k MNIST subsets, 10 epochs, 5 noise instances")
    p.add_argument("--preset")
    p.add_argument("--sigma", type=float)
    p.add_argument("--scope", choices=("final", "full"))
    p.add_argument("--checkpoint")
    p.add_argument("--sweep", action="store_true", help="design: also write the F/T trade-off CSV")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.desk_scale:
        cfg.apply_desk_scale()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.preset is not None:
        cfg.network.preset = args.preset
    if args.sigma is not None:
        cfg.retrain.sigma = args.sigma
    if args.scope is not None:
        cfg.retrain.scope = "full" if args.scope == "full" else "final_layer_only"
    if args.checkpoint is not None:
        cfg.network.checkpoint = args.checkpoint
    if cfg.out is None:
        cfg.out = f"runs/{args.command}-seed{cfg.seed}"
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run = Run(cfg.out, cfg)
        code = COMMANDS[args.command](cfg, run, args)
        run.finish()
        return code
    except (ConfigError, FileNotFoundError, FileExistsError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
