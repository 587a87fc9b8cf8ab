"""Experiment orchestration: named test signals, metrics, artifact output.

Four experiment families are wired here: direct operator-interpolation
surrogates (``I-drips``), flow-map networks (``I-fml``), prior-model
correction against scarce true-model data (``II-correct``), and the
measured-trajectory pipeline (``III-ingest``).  Each run writes
``truth.csv``, ``pred.csv``, ``errors.csv`` and a ``report.json`` that
is byte-identical across repeated runs with the same config and seed,
up to the wall-clock field.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, drips, fml
from .dynamics import (
    DeadZoneParams,
    SlipFreeParams,
    SlipParams,
    Trajectory,
    experimental_prior_rhs,
    simulate,
    slip_rhs,
    slipfree_rhs,
    unicycle_rhs,
)
from .localparam import BasisSpec, fit_global

EPS_REL = 1e-8


# ---------------------------------------------------------------------------
# Named test signals


@dataclass(frozen=True)
class NamedSignal:
    id: str
    label: str
    model: str
    T: float
    control: callable  # t -> (..., channels)


def _sig(fu, fd):
    def control(t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.broadcast_to(fu(t), t.shape),
                         np.broadcast_to(fd(t), t.shape)], axis=-1)
    return control


_SIGNALS = {
    "uni-a": NamedSignal("uni-a", "Sinusoidal turning", "unicycle", 10.0,
                         _sig(lambda t: 0.2 + 0.6 * np.sin(0.75 * t),
                              lambda t: 0.4 * np.cos(0.8 * t))),
    "uni-b": NamedSignal("uni-b", "Accelerating weave", "unicycle", 10.0,
                         _sig(lambda t: 0.5 + 0.05 * t,
                              lambda t: 0.1 * np.sin(0.5 * t))),
    "uni-c": NamedSignal("uni-c", "Circular pattern at constant speed", "unicycle", 10.0,
                         _sig(lambda t: 1.0 + 0.0 * t, lambda t: 0.2 + 0.0 * t)),
    "bike-a": NamedSignal("bike-a", "Coupled oscillations", "slipfree", 10.0,
                          _sig(lambda t: 0.1 * np.sin(0.4 * t),
                               lambda t: -0.3 * np.cos(0.6 * t))),
    "bike-b": NamedSignal("bike-b", "Damped throttle, constant steer", "slipfree", 10.0,
                          _sig(lambda t: 0.05 * t * np.exp(-0.3 * t),
                               lambda t: 0.2 + 0.0 * t)),
    "bike-c": NamedSignal("bike-c", "Squared oscillations", "slipfree", 10.0,
                          _sig(lambda t: 0.1 * np.sin(0.5 * t) ** 2,
                               lambda t: 0.25 * np.cos(0.25 * t) ** 2)),
    "slip-a": NamedSignal("slip-a", "High frequency steering", "slip", 5.0,
                          _sig(lambda t: 0.2 + 0.2 * np.cos(0.3 * t),
                               lambda t: 0.5 * np.sin(t))),
    "slip-b": NamedSignal("slip-b", "Squared oscillations", "slip", 5.0,
                          _sig(lambda t: 0.4 * np.sin(0.5 * t) ** 2,
                               lambda t: 0.02 * np.cos(0.25 * t) ** 2)),
    "slip-c": NamedSignal("slip-c", "Piecewise trigonometric composition", "slip", 5.0,
                          _sig(lambda t: 0.4 * np.tanh(0.5 * t),
                               lambda t: 0.3 * np.sin(0.5 * t) / (0.1 * t + 1.0))),
    "exp-iii": NamedSignal("exp-iii", "Experimental throttle ramp", "slip", 5.0,
                           _sig(lambda t: 0.05 * t * np.exp(0.05 * t),
                                lambda t: 0.1 + 0.0 * t)),
}


def signal_registry(signal_id: str) -> NamedSignal:
    try:
        return _SIGNALS[signal_id]
    except KeyError:
        raise KeyError(
            f"unknown signal {signal_id!r}; valid ids: {sorted(_SIGNALS)}"
        ) from None


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsReport:
    errors: np.ndarray  # (n_steps+1, n_s)
    max_per_state: np.ndarray
    mean_per_state: np.ndarray
    wall_clock_s: float = 0.0


def modified_relative_error(truth: Trajectory, pred: Trajectory,
                            eps: float = EPS_REL) -> MetricsReport:
    """Per-state, per-step ``|s - s_hat| / (|s| + eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if truth.states.shape != pred.states.shape:
        raise ValueError(
            f"trajectory shapes differ: {truth.states.shape} vs {pred.states.shape}"
        )
    e = np.abs(truth.states - pred.states) / (np.abs(truth.states) + eps)
    return MetricsReport(errors=e, max_per_state=e.max(axis=0),
                         mean_per_state=e.mean(axis=0))


# ---------------------------------------------------------------------------
# Model plumbing


_DEFAULT_S0 = {
    "unicycle": [0.0, 0.0, 0.0],
    "slipfree": [0.0, 0.0, 0.0, 0.0],
    "slip": [1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
}


def _make_rhs(model: str, gamma):
    if model == "unicycle":
        return unicycle_rhs, 3
    if model == "slipfree":
        prm = SlipFreeParams(*gamma)
        return (lambda s, c: slipfree_rhs(s, c, prm)), 4
    if model == "slip":
        prm = SlipParams(*gamma)
        return (lambda s, c: slip_rhs(s, c, prm)), 6
    if model == "deadzone":
        prm = DeadZoneParams(*gamma)
        return (lambda s, c: experimental_prior_rhs(s, c, prm)), 4
    raise ValueError(f"unknown model {model!r}")


def _basis_from_cfg(cfg) -> BasisSpec:
    b = cfg.get("basis", {})
    return BasisSpec(family=b.get("family", "interpolating-nodes"),
                     degree=b.get("degree", 2), channels=b.get("channels", 2))


def _signal_control(sig: NamedSignal, channels: int):
    """Control law restricted to the parameterized channels."""
    if channels == 2:
        return sig.control
    return lambda t: sig.control(t)[..., :channels]


def _truth_and_segments(sig: NamedSignal, rhs, s0, dt, basis, n_sub=10):
    n_steps = int(round(sig.T / dt))
    truth = simulate(rhs, s0, sig.control, sig.T, dt, n_sub=n_sub)
    segments = fit_global(_signal_control(sig, basis.channels), n_steps, dt, basis)
    return truth, segments


# ---------------------------------------------------------------------------
# Synthetic measured-trajectory file


def make_synthetic_experiment(path, gamma, n_rows: int = 500, dt: float = 0.01,
                              seed: int = 0, noise: float = 5e-4) -> None:
    """Write a stand-in measured trajectory for the ingest pipeline.

    Rolls the slip-based plant under the ``exp-iii`` controls, converts
    body-frame velocities to the inertial frame, and adds small
    measurement noise.  Header matches the ingest contract.
    """
    sig = signal_registry("exp-iii")
    s0 = np.array([2.818, 2.887, 0.3, -3.133, 0.0, 0.0])
    rhs, _ = _make_rhs("slip", gamma)
    traj = simulate(rhs, s0, sig.control, (n_rows - 1) * dt, dt)
    x, y, vx, psi, vy, _ = traj.states.T
    vX = vx * np.cos(psi) - vy * np.sin(psi)
    vY = vx * np.sin(psi) + vy * np.cos(psi)
    rng = np.random.default_rng(seed)
    data = np.column_stack([traj.times, x, y, vX, vY, psi])
    data[:, 1:] += noise * rng.standard_normal(data[:, 1:].shape)
    lines = ["t,x,y,vX,vY,psi"]
    lines += [",".join("%.17g" % v for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Experiment runs


@dataclass
class SignalResult:
    signal: NamedSignal
    truth: Trajectory
    preds: dict  # stage -> Trajectory
    metrics: dict  # stage -> MetricsReport


@dataclass
class RunResult:
    case: str
    report: dict
    results: list = field(default_factory=list)


def _train_cfg(d, seed) -> fml.TrainConfig:
    return fml.TrainConfig(
        epochs=d.get("epochs", 1000), batch_size=d.get("batch_size", 256),
        lr=d.get("lr", 1e-3), lr_max=d.get("lr_max"),
        cycle_epochs=d.get("cycle_epochs", 100),
        patience=d.get("patience"), seed=seed,
    )


def _arch_from_cfg(cfg, n_s, n_par) -> fml.MlpArchitecture:
    a = cfg.get("arch", {})
    return fml.MlpArchitecture(n_s=n_s, n_par=n_par,
                               hidden_layers=a.get("hidden_layers", 3),
                               hidden_width=a.get("hidden_width", 64))


def _sampler_from_cfg(cfg) -> datagen.SignalSampler:
    s = cfg["sampler"]
    return datagen.SignalSampler(ranges=np.asarray(s["ranges"], dtype=float),
                                 clamp=np.asarray(s["clamp"], dtype=float))


def _case1_drips(cfg, seed):
    model = cfg["model"]
    rhs, n_s = _make_rhs(model, cfg.get("gamma"))
    basis = _basis_from_cfg(cfg)
    dt = cfg.get("dt", 0.01)
    spec = datagen.SamplingSpec(
        omega_s=np.asarray(cfg["omega_s"], dtype=float),
        omega_p=np.asarray(cfg["omega_p"], dtype=float),
        n_sam_s=cfg.get("n_sam_s", 6),
        grid_points_per_dim=cfg.get("grid_points_per_dim", 2), seed=seed)
    ds = datagen.gen_drips_dataset(rhs, spec, basis, model, dt)
    surrogate = drips.train_drips(ds, drips.get_lifting(model))
    s0 = np.asarray(cfg.get("s0", _DEFAULT_S0[model]), dtype=float)
    results = []
    for sid in cfg["signals"]:
        sig = signal_registry(sid)
        truth, segments = _truth_and_segments(sig, rhs, s0, dt, basis)
        pred = drips.drips_predict(surrogate, s0, segments)
        results.append(SignalResult(sig, truth, {"surrogate": pred},
                                    {"surrogate": modified_relative_error(truth, pred)}))
    return results, {"surrogate": len(ds.s_in)}, surrogate


def _fit_prior_net(cfg, seed, rhs_prior, n_s, basis, dt, control_map=None):
    """Train (or load) the low-fidelity network."""
    if cfg.get("prior_net"):
        return fml.load_fml(cfg["prior_net"]), 0
    arch = _arch_from_cfg(cfg, n_s, basis.n_par)
    if "sampler" in cfg:
        sampler = _sampler_from_cfg(cfg)
        ds = datagen.gen_fml_dataset(
            rhs_prior, sampler, cfg["n_traj"], cfg["pairs_per_traj"],
            cfg["T_train"], dt, basis,
            np.asarray(cfg["s0_train"], dtype=float), cfg["model"],
            np.asarray(cfg["validity_box"], dtype=float), seed=seed)
    else:
        spec = datagen.SamplingSpec(
            omega_s=np.asarray(cfg["omega_s"], dtype=float),
            omega_p=np.asarray(cfg["omega_p"], dtype=float), seed=seed)
        ds = datagen.gen_uniform_dataset(rhs_prior, spec, basis,
                                         cfg.get("prior_model", cfg["model"]), dt,
                                         cfg["n_prior_pairs"],
                                         control_map=control_map)
    net = fml.train_fml(ds, arch, _train_cfg(cfg.get("train_prior", cfg.get("train", {})), seed))
    return net, len(ds.s_in)


def _case1_fml(cfg, seed):
    rhs, n_s = _make_rhs(cfg["model"], cfg["gamma"])
    basis = _basis_from_cfg(cfg)
    dt = cfg.get("dt", 0.01)
    net, n_pairs = _fit_prior_net(cfg, seed, rhs, n_s, basis, dt)
    s0 = np.asarray(cfg.get("s0", _DEFAULT_S0[cfg["model"]]), dtype=float)
    results = []
    for sid in cfg["signals"]:
        sig = signal_registry(sid)
        truth, segments = _truth_and_segments(sig, rhs, s0, dt, basis)
        pred = fml.fml_predict(net, s0, segments)
        results.append(SignalResult(sig, truth, {"surrogate": pred},
                                    {"surrogate": modified_relative_error(truth, pred)}))
    return results, {"surrogate": n_pairs, "final_loss": net.final_loss}, net


def _case2_correct(cfg, seed):
    model = cfg["model"]
    rhs_true, n_s = _make_rhs(model, cfg["gamma_true"])
    rhs_prior, _ = _make_rhs(model, cfg["gamma_prior"])
    basis = _basis_from_cfg(cfg)
    dt = cfg.get("dt", 0.01)
    prior_net, n_prior = _fit_prior_net(cfg, seed, rhs_prior, n_s, basis, dt)
    # High-fidelity pairs come from the true plant, on a shifted stream.
    if "sampler" in cfg:
        sampler = _sampler_from_cfg(cfg)
        hf = datagen.gen_fml_dataset(
            rhs_true, sampler, cfg["hf_n_traj"], cfg["hf_pairs_per_traj"],
            cfg["T_train"], dt, basis, np.asarray(cfg["s0_train"], dtype=float),
            model, np.asarray(cfg["validity_box"], dtype=float), seed=seed + 1)
    else:
        spec = datagen.SamplingSpec(
            omega_s=np.asarray(cfg["omega_s"], dtype=float),
            omega_p=np.asarray(cfg["omega_p"], dtype=float), seed=seed + 1)
        hf = datagen.gen_uniform_dataset(rhs_true, spec, basis, model, dt, cfg["j_hf"])
    corrected = fml.transfer_correct(prior_net, hf,
                                     _train_cfg(cfg["train_correct"], seed),
                                     cfg["freeze_until"])
    s0 = np.asarray(cfg.get("s0", _DEFAULT_S0[model]), dtype=float)
    results = []
    for sid in cfg["signals"]:
        sig = signal_registry(sid)
        truth, segments = _truth_and_segments(sig, rhs_true, s0, dt, basis)
        prior_pred = fml.fml_predict(prior_net, s0, segments)
        corr_pred = fml.fml_predict(corrected, s0, segments)
        results.append(SignalResult(
            sig, truth, {"prior": prior_pred, "corrected": corr_pred},
            {"prior": modified_relative_error(truth, prior_pred),
             "corrected": modified_relative_error(truth, corr_pred)}))
    sizes = {"prior": n_prior, "hf": len(hf.s_in)}
    return results, sizes, corrected


def _case3_ingest(cfg, seed):
    basis = _basis_from_cfg(cfg)
    dt = cfg.get("dt", 0.01)
    measured = datagen.ingest_experiment(cfg["experiment_file"],
                                         window=cfg.get("smoothing_window", 5), dt=dt)
    n_s = measured.states.shape[1]
    delta_fixed = cfg.get("delta_fixed", 0.1)

    def control_map(c):
        pad = np.broadcast_to(delta_fixed, c.shape[:-1] + (1,))
        return np.concatenate([c, pad], axis=-1)

    rhs_full, _ = _make_rhs("deadzone", cfg["gamma_prior"])
    prior_net, n_prior = _fit_prior_net(cfg, seed, rhs_full, n_s, basis, dt,
                                        control_map=control_map)
    sig = signal_registry(cfg.get("signal", "exp-iii"))
    n_pairs = len(measured.states) - 1
    coeffs = fit_global(_signal_control(sig, basis.channels), n_pairs, dt, basis).coeffs
    hf = datagen.Dataset(model="measured", dt=dt,
                         s_in=measured.states[:-1], p=coeffs,
                         s_out=measured.states[1:],
                         group_id=np.zeros(n_pairs, dtype=int), basis=basis)
    corrected = fml.transfer_correct(prior_net, hf,
                                     _train_cfg(cfg["train_correct"], seed),
                                     cfg.get("freeze_until", 0))
    s0 = measured.states[0]
    segments = fit_global(_signal_control(sig, basis.channels), n_pairs, dt, basis)
    prior_pred = fml.fml_predict(prior_net, s0, segments)
    corr_pred = fml.fml_predict(corrected, s0, segments)
    results = [SignalResult(
        sig, measured, {"prior": prior_pred, "corrected": corr_pred},
        {"prior": modified_relative_error(measured, prior_pred),
         "corrected": modified_relative_error(measured, corr_pred)})]
    return results, {"prior": n_prior, "hf": n_pairs}, corrected


_CASES = {
    "I-drips": _case1_drips,
    "I-fml": _case1_fml,
    "II-correct": _case2_correct,
    "III-ingest": _case3_ingest,
}


def _write_rows(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _traj_rows(sid, traj: Trajectory):
    for t, s in zip(traj.times, traj.states):
        yield [sid, "%.17g" % t] + ["%.17g" % v for v in s]


def run_experiment(cfg: dict, out_dir, seed: int | None = None) -> RunResult:
    """Generate, train, (correct,) predict, evaluate, and write artifacts."""
    if "case" not in cfg or cfg["case"] not in _CASES:
        raise ValueError(f"config must set 'case' to one of {sorted(_CASES)}")
    if cfg["case"] == "II-correct" and list(cfg["gamma_true"]) == list(cfg["gamma_prior"]):
        raise ValueError("II-correct requires gamma_true != gamma_prior")
    seed = cfg.get("seed", 0) if seed is None else seed
    t0 = time.perf_counter()
    results, sizes, _model = _CASES[cfg["case"]](cfg, seed)
    wall = time.perf_counter() - t0

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_s = results[0].truth.states.shape[1]
    state_cols = ",".join(f"s{i}" for i in range(n_s))
    _write_rows(out / "truth.csv", "signal,t," + state_cols,
                (r for sr in results for r in _traj_rows(sr.signal.id, sr.truth)))
    main_stage = "corrected" if "corrected" in results[0].preds else "surrogate"
    _write_rows(out / "pred.csv", "signal,t," + state_cols,
                (r for sr in results for r in _traj_rows(sr.signal.id, sr.preds[main_stage])))
    if "prior" in results[0].preds:
        _write_rows(out / "prior_pred.csv", "signal,t," + state_cols,
                    (r for sr in results for r in _traj_rows(sr.signal.id, sr.preds["prior"])))
    err_cols = ",".join(f"e{i}" for i in range(n_s))
    _write_rows(out / "errors.csv", "signal,stage,t," + err_cols,
                ([sr.signal.id, stage, "%.17g" % t] + ["%.17g" % v for v in row]
                 for sr in results for stage, m in sorted(sr.metrics.items())
                 for t, row in zip(sr.truth.times, m.errors)))

    report = {
        "case": cfg["case"],
        "seed": seed,
        "config": cfg,
        "dataset_sizes": sizes,
        "signals": {
            sr.signal.id: {
                stage: {"max": list(m.max_per_state), "mean": list(m.mean_per_state)}
                for stage, m in sorted(sr.metrics.items())
            }
            for sr in results
        },
    }
    # report.json is deterministic for a given config+seed; timing lives apart.
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": wall}))
    if isinstance(_model, drips.DripsModel):
        drips.save_drips(_model, out / "model")
    elif isinstance(_model, fml.FlowMapNet):
        fml.save_fml(_model, out / "model")
    report["wall_clock_s"] = wall
    return RunResult(case=cfg["case"], report=report, results=results)


def emit_plotdata(result: RunResult, out_dir) -> None:
    """Per-signal overlay, control-trace, and error-curve CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sr in result.results:
        if len(sr.truth.states) == 0:
            raise ValueError(f"signal {sr.signal.id!r}: empty trajectory")
        n_s = sr.truth.states.shape[1]
        stages = sorted(sr.preds)
        cols = ["t"] + [f"truth_s{i}" for i in range(n_s)]
        blocks = [sr.truth.times[:, None], sr.truth.states]
        for stage in stages:
            cols += [f"{stage}_s{i}" for i in range(n_s)]
            blocks.append(sr.preds[stage].states)
        data = np.hstack(blocks)
        _write_rows(out / f"overlay_{sr.signal.id}.csv", ",".join(cols),
                    (["%.17g" % v for v in row] for row in data))
        ctrl = sr.signal.control(sr.truth.times)
        _write_rows(out / f"controls_{sr.signal.id}.csv",
                    "t," + ",".join(f"c{i}" for i in range(ctrl.shape[1])),
                    (["%.17g" % v for v in row]
                     for row in np.hstack([sr.truth.times[:, None], ctrl])))
        for stage in stages:
            e = sr.metrics[stage].errors
            _write_rows(out / f"errors_{sr.signal.id}_{stage}.csv",
                        "t," + ",".join(f"e{i}" for i in range(n_s)),
                        (["%.17g" % v for v in row]
                         for row in np.hstack([sr.truth.times[:, None], e])))
