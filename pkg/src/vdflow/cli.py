"""Command-line entry point.

Subcommands take a JSON experiment config (same schema as
``harness.run_experiment``) and run one stage or the whole pipeline.
Exit codes: 0 success, 2 config/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, drips, fml, harness
from .dynamics import DivergenceError, SingularityError
from .localparam import fit_global


def _load_cfg(path):
    return json.loads(Path(path).read_text())


def _seed(cfg, args):
    return cfg.get("seed", 0) if args.seed is None else args.seed


def _gen_dataset(cfg, seed):
    model = cfg["model"]
    rhs, _ = harness._make_rhs(model, cfg.get("gamma"))
    basis = harness._basis_from_cfg(cfg)
    dt = cfg.get("dt", 0.01)
    if "sampler" in cfg:
        sampler = harness._sampler_from_cfg(cfg)
        return datagen.gen_fml_dataset(
            rhs, sampler, cfg["n_traj"], cfg["pairs_per_traj"], cfg["T_train"],
            dt, basis, np.asarray(cfg["s0_train"], dtype=float), model,
            np.asarray(cfg["validity_box"], dtype=float), seed=seed)
    spec = datagen.SamplingSpec(
        omega_s=np.asarray(cfg["omega_s"], dtype=float),
        omega_p=np.asarray(cfg["omega_p"], dtype=float),
        n_sam_s=cfg.get("n_sam_s", 1),
        grid_points_per_dim=cfg.get("grid_points_per_dim", 2), seed=seed)
    if cfg.get("sampling", "grid") == "grid":
        return datagen.gen_drips_dataset(rhs, spec, basis, model, dt)
    return datagen.gen_uniform_dataset(rhs, spec, basis, model, dt, cfg["n_prior_pairs"])


def cmd_gen_data(cfg, args):
    ds = _gen_dataset(cfg, _seed(cfg, args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datagen.write_dataset(ds, out / "dataset.csv")
    print(f"wrote {len(ds.s_in)} pairs to {out / 'dataset.csv'}")


def cmd_train_drips(cfg, args):
    basis = harness._basis_from_cfg(cfg)
    ds = datagen.read_dataset(cfg["dataset"], basis=basis)
    model = drips.train_drips(ds, drips.get_lifting(cfg["model"]),
                              rank=cfg.get("rank"))
    drips.save_drips(model, args.out)
    print(f"saved operator grid ({len(model.grid)} nodes, rank {model.rank}) to {args.out}")


def cmd_train_fml(cfg, args):
    seed = _seed(cfg, args)
    basis = harness._basis_from_cfg(cfg)
    ds = datagen.read_dataset(cfg["dataset"], basis=basis)
    arch = harness._arch_from_cfg(cfg, ds.s_in.shape[1], basis.n_par)
    net = fml.train_fml(ds, arch, harness._train_cfg(cfg.get("train", {}), seed))
    fml.save_fml(net, args.out)
    print(f"saved network to {args.out} (final loss {net.final_loss:.3e})")


def cmd_correct(cfg, args):
    seed = _seed(cfg, args)
    basis = harness._basis_from_cfg(cfg)
    prior = fml.load_fml(cfg["prior_net"])
    hf = datagen.read_dataset(cfg["hf_dataset"], basis=basis)
    net = fml.transfer_correct(prior, hf,
                               harness._train_cfg(cfg["train_correct"], seed),
                               cfg["freeze_until"])
    fml.save_fml(net, args.out)
    print(f"saved corrected network to {args.out} (final loss {net.final_loss:.3e})")


def cmd_predict(cfg, args):
    basis = harness._basis_from_cfg(cfg)
    dt = cfg.get("dt", 0.01)
    sig = harness.signal_registry(cfg["signal"])
    s0 = np.asarray(cfg["s0"], dtype=float)
    n_steps = int(round(cfg.get("T", sig.T) / dt))
    segments = fit_global(harness._signal_control(sig, basis.channels),
                          n_steps, dt, basis)
    if "drips_model" in cfg:
        model = drips.load_drips(cfg["drips_model"])
        traj = drips.drips_predict(model, s0, segments)
    else:
        net = fml.load_fml(cfg["fml_model"])
        traj = fml.fml_predict(net, s0, segments)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = "t," + ",".join(f"s{i}" for i in range(traj.states.shape[1]))
    rows = (["%.17g" % t] + ["%.17g" % v for v in s]
            for t, s in zip(traj.times, traj.states))
    harness._write_rows(out / "pred.csv", header, rows)
    print(f"wrote {out / 'pred.csv'}")


def _read_traj(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    from .dynamics import Trajectory
    return Trajectory(times=data[:, 0], states=data[:, 1:])


def cmd_eval(cfg, args):
    truth = _read_traj(cfg["truth"])
    pred = _read_traj(cfg["pred"])
    m = harness.modified_relative_error(truth, pred)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"max": list(m.max_per_state), "mean": list(m.mean_per_state)}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(json.dumps(report, sort_keys=True))


def cmd_run(cfg, args):
    result = harness.run_experiment(cfg, args.out, seed=args.seed)
    harness.emit_plotdata(result, Path(args.out) / "plots")
    for sid, stages in result.report["signals"].items():
        for stage, m in stages.items():
            worst = max(m["max"])
            print(f"{sid} [{stage}] max modified relative error: {worst:.3e}")


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-drips": cmd_train_drips,
    "train-fml": cmd_train_fml,
    "correct": cmd_correct,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "run": cmd_run,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vdflow",
                                     description="vehicle flow-map surrogates")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        _COMMANDS[args.command](cfg, args)
    except (DivergenceError, SingularityError, FloatingPointError,
            drips.RankDeficiencyError, drips.InterpolationError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
