"""Residual flow-map networks: one-step predictors s' = s + N([s; p]).

The net is a plain tanh MLP with a linear read-out, trained with Adam
on normalized residual targets.  Inputs get an affine normalization;
residual outputs are normalized by scale only, so a zero-weight net is
exactly the identity flow map.  ``transfer_correct`` retrains only the
last layers against new data, keeping the early layers bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import DivergenceError, Trajectory
from .localparam import GlobalParams

_DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class MlpArchitecture:
    n_s: int
    n_par: int
    hidden_layers: int = 3
    hidden_width: int = 64

    def __post_init__(self):
        if min(self.n_s, self.n_par, self.hidden_layers, self.hidden_width) < 1:
            raise ValueError("architecture dimensions must be positive")

    @property
    def layer_dims(self) -> list:
        d_in = self.n_s + self.n_par
        return [d_in] + [self.hidden_width] * self.hidden_layers + [self.n_s]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 256
    lr: float = 1e-3
    lr_max: float | None = None  # triangular cyclic schedule when set
    cycle_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        if self.lr_max is None:
            return self.lr
        half = self.cycle_epochs / 2
        phase = epoch % self.cycle_epochs
        frac = phase / half if phase < half else (self.cycle_epochs - phase) / half
        return self.lr + (self.lr_max - self.lr) * frac


@dataclass
class FlowMapNet:
    arch: MlpArchitecture
    weights: list  # M+1 matrices, weights[i]: (dims[i], dims[i+1])
    biases: list
    mu_in: np.ndarray
    sig_in: np.ndarray
    sig_out: np.ndarray  # scale only: residual targets keep zero mean at zero net
    frozen_layers: int = 0
    final_loss: float = field(default=math.nan)


def init_net(arch: MlpArchitecture, seed: int = 0) -> FlowMapNet:
    """Glorot-uniform weights, zero biases, identity normalization."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-bound, bound, size=(a, b)))
        biases.append(np.zeros(b))
    d_in = dims[0]
    return FlowMapNet(arch=arch, weights=weights, biases=biases,
                      mu_in=np.zeros(d_in), sig_in=np.ones(d_in),
                      sig_out=np.ones(arch.n_s))


def _forward_normalized(net: FlowMapNet, z: np.ndarray) -> np.ndarray:
    h = z
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ W + b)
    return h @ net.weights[-1] + net.biases[-1]


def forward(net: FlowMapNet, s, p) -> np.ndarray:
    """One-step map: ``s + sig_out * N((input - mu_in) / sig_in)``."""
    s = np.asarray(s, dtype=float)
    z = (np.concatenate([s, np.asarray(p, dtype=float)], axis=-1) - net.mu_in) / net.sig_in
    return s + net.sig_out * _forward_normalized(net, z)


def _backward(net: FlowMapNet, z, target, first_layer=0):
    """Loss and gradients of mean squared normalized-residual error.

    Layers below ``first_layer`` get zero gradients (frozen).
    """
    acts = [z]
    h = z
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    out = h @ net.weights[-1] + net.biases[-1]
    diff = out - target
    loss = float(np.mean(diff**2))
    n_lay = len(net.weights)
    gW = [np.zeros_like(W) for W in net.weights]
    gb = [np.zeros_like(b) for b in net.biases]
    delta = 2.0 * diff / diff.size
    for i in range(n_lay - 1, -1, -1):
        if i >= first_layer:
            gW[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
        if i == first_layer:
            break
        delta = (delta @ net.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, gW, gb


def _normalized_batch(net: FlowMapNet, s_in, p, s_out):
    z = (np.concatenate([s_in, p], axis=-1) - net.mu_in) / net.sig_in
    target = (s_out - s_in) / net.sig_out
    return z, target


def dataset_loss(net: FlowMapNet, s_in, p, s_out) -> float:
    z, target = _normalized_batch(net, s_in, p, s_out)
    return float(np.mean((_forward_normalized(net, z) - target) ** 2))


def train_fml(dataset, arch: MlpArchitecture, cfg: TrainConfig,
              net: FlowMapNet | None = None) -> FlowMapNet:
    """Adam on normalized residuals; deterministic for a fixed config.

    When ``net`` is given (transfer correction) its normalization and
    frozen layers are kept; otherwise normalization statistics are
    computed from the dataset.
    """
    s_in = np.asarray(dataset.s_in, dtype=float)
    p = np.asarray(dataset.p, dtype=float)
    s_out = np.asarray(dataset.s_out, dtype=float)
    n = len(s_in)
    if net is None:
        net = init_net(arch, cfg.seed)
        zin = np.concatenate([s_in, p], axis=-1)
        net.mu_in = zin.mean(axis=0)
        net.sig_in = np.where(zin.std(axis=0) > 0, zin.std(axis=0), 1.0)
        res = s_out - s_in
        net.sig_out = np.where(res.std(axis=0) > 0, res.std(axis=0), 1.0)
    first = net.frozen_layers
    z_all, t_all = _normalized_batch(net, s_in, p, s_out)

    batch = n if n < 1024 else min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    mW = [np.zeros_like(W) for W in net.weights]
    vW = [np.zeros_like(W) for W in net.weights]
    mb = [np.zeros_like(b) for b in net.biases]
    vb = [np.zeros_like(b) for b in net.biases]
    t = 0
    best = math.inf
    best_weights = None
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        lr = cfg.lr_at(epoch)
        ep_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, gW, gb = _backward(net, z_all[idx], t_all[idx], first)
            ep_loss += loss
            n_batches += 1
            t += 1
            c1 = 1.0 - cfg.beta1**t
            c2 = 1.0 - cfg.beta2**t
            for i in range(first, len(net.weights)):
                mW[i] = cfg.beta1 * mW[i] + (1 - cfg.beta1) * gW[i]
                vW[i] = cfg.beta2 * vW[i] + (1 - cfg.beta2) * gW[i] ** 2
                net.weights[i] -= lr * (mW[i] / c1) / (np.sqrt(vW[i] / c2) + cfg.eps)
                mb[i] = cfg.beta1 * mb[i] + (1 - cfg.beta1) * gb[i]
                vb[i] = cfg.beta2 * vb[i] + (1 - cfg.beta2) * gb[i] ** 2
                net.biases[i] -= lr * (mb[i] / c1) / (np.sqrt(vb[i] / c2) + cfg.eps)
        if cfg.patience is not None:
            ep_loss /= max(n_batches, 1)
            if ep_loss < best - 1e-15:
                best = ep_loss
                best_weights = ([W.copy() for W in net.weights],
                                [b.copy() for b in net.biases])
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
    if best_weights is not None:
        net.weights, net.biases = best_weights
    net.final_loss = dataset_loss(net, s_in, p, s_out)
    return net


def transfer_correct(prior: FlowMapNet, dataset, cfg: TrainConfig,
                     first_retrained_layer: int) -> FlowMapNet:
    """Retrain layers ``first_retrained_layer:`` on new data.

    Earlier layers and the prior's normalization are reused unchanged,
    so the corrected net stays in the prior's feature coordinates.
    """
    n_lay = len(prior.weights)
    if not 0 <= first_retrained_layer <= n_lay - 1:
        raise ValueError(f"first_retrained_layer must be in [0, {n_lay - 1}]")
    net = FlowMapNet(
        arch=prior.arch,
        weights=[W.copy() for W in prior.weights],
        biases=[b.copy() for b in prior.biases],
        mu_in=prior.mu_in.copy(), sig_in=prior.sig_in.copy(),
        sig_out=prior.sig_out.copy(),
        frozen_layers=first_retrained_layer,
    )
    return train_fml(dataset, prior.arch, cfg, net=net)


def fml_predict(net: FlowMapNet, s0, segments: GlobalParams) -> Trajectory:
    s = np.asarray(s0, dtype=float)
    n_steps = len(segments)
    states = np.empty((n_steps + 1, net.arch.n_s))
    states[0] = s
    for k in range(n_steps):
        s = forward(net, s, segments.coeffs[k])
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > _DIVERGENCE_BOUND:
            raise DivergenceError(k + 1)
        states[k + 1] = s
    return Trajectory(times=np.arange(n_steps + 1) * segments.dt, states=states)


def grad_check(net: FlowMapNet, s_in, p, s_out, n_weights: int = 100,
               h: float = 1e-5, seed: int = 0) -> float:
    """Max relative mismatch between analytic and central-difference grads.

    Frozen-layer analytic gradients are verified to be exactly zero and
    are excluded from the finite-difference comparison.
    """
    z, target = _normalized_batch(
        net, np.asarray(s_in, dtype=float), np.asarray(p, dtype=float),
        np.asarray(s_out, dtype=float))
    _, gW, gb = _backward(net, z, target, net.frozen_layers)
    for i in range(net.frozen_layers):
        assert not gW[i].any() and not gb[i].any()
    rng = np.random.default_rng(seed)
    flat = []
    for i in range(net.frozen_layers, len(net.weights)):
        flat.extend((i, "W", j) for j in range(net.weights[i].size))
        flat.extend((i, "b", j) for j in range(net.biases[i].size))
    picks = [flat[k] for k in rng.choice(len(flat), min(n_weights, len(flat)), replace=False)]
    worst = 0.0
    for i, kind, j in picks:
        arr = net.weights[i] if kind == "W" else net.biases[i]
        ana = (gW[i] if kind == "W" else gb[i]).reshape(-1)[j]
        orig = arr.reshape(-1)[j]
        arr.reshape(-1)[j] = orig + h
        lp, _, _ = _backward(net, z, target, len(net.weights))
        arr.reshape(-1)[j] = orig - h
        lm, _, _ = _backward(net, z, target, len(net.weights))
        arr.reshape(-1)[j] = orig
        num = (lp - lm) / (2 * h)
        worst = max(worst, abs(ana - num) / max(abs(num), 1e-8))
    return worst


# ---------------------------------------------------------------------------
# Model archive


def save_fml(net: FlowMapNet, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_s": net.arch.n_s, "n_par": net.arch.n_par,
        "hidden_layers": net.arch.hidden_layers,
        "hidden_width": net.arch.hidden_width,
        "frozen_layers": net.frozen_layers,
        "final_loss": None if math.isnan(net.final_loss) else net.final_loss,
        "mu_in": list(net.mu_in), "sig_in": list(net.sig_in),
        "sig_out": list(net.sig_out),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        np.savetxt(d / f"weights_{i}.csv",
                   np.vstack([W, b[None, :]]), delimiter=",", fmt="%.17g")


def load_fml(directory) -> FlowMapNet:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    arch = MlpArchitecture(n_s=meta["n_s"], n_par=meta["n_par"],
                           hidden_layers=meta["hidden_layers"],
                           hidden_width=meta["hidden_width"])
    weights, biases = [], []
    for i in range(arch.hidden_layers + 1):
        blob = np.atleast_2d(np.loadtxt(d / f"weights_{i}.csv", delimiter=","))
        weights.append(blob[:-1])
        biases.append(blob[-1])
    loss = meta.get("final_loss")
    return FlowMapNet(arch=arch, weights=weights, biases=biases,
                      mu_in=np.asarray(meta["mu_in"], dtype=float),
                      sig_in=np.asarray(meta["sig_in"], dtype=float),
                      sig_out=np.asarray(meta["sig_out"], dtype=float),
                      frozen_layers=meta["frozen_layers"],
                      final_loss=math.nan if loss is None else loss)
