"""Training/test dataset construction and persistence.

Three generators cover the experiment families:

* :func:`gen_drips_dataset` — a Cartesian grid in coefficient space,
  a handful of uniformly drawn initial states per grid point;
* :func:`gen_uniform_dataset` — i.i.d. (state, coefficients) pairs
  drawn uniformly from box domains;
* :func:`gen_fml_dataset` — random cosine control signals, full
  trajectory rollouts, random one-step pairs picked from each.

Each generation unit draws from its own RNG stream seeded by
``(seed, unit_index)``, so serial and parallel runs agree bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory, integrate_step
from .localparam import BasisSpec, eval_local, fit_local

log = logging.getLogger(__name__)

MAX_GRID_POINTS = 2**20


class DatasetFormatError(ValueError):
    """Malformed dataset or experiment file."""


@dataclass(frozen=True)
class SamplingSpec:
    """Box domains and counts controlling dataset generation."""

    omega_s: np.ndarray  # (n_s, 2) [lo, hi] rows
    omega_p: np.ndarray  # (n_par, 2)
    n_sam_s: int = 1
    grid_points_per_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "omega_s", np.asarray(self.omega_s, dtype=float))
        object.__setattr__(self, "omega_p", np.asarray(self.omega_p, dtype=float))
        for box in (self.omega_s, self.omega_p):
            if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] > box[:, 1]):
                raise ValueError("box must be (dims, 2) with lo <= hi")
        if self.n_sam_s < 1:
            raise ValueError("n_sam_s must be >= 1")


@dataclass
class Dataset:
    """One-step training pairs ``s_in, p -> s_out`` stored column-wise."""

    model: str
    dt: float
    s_in: np.ndarray  # (N, n_s)
    p: np.ndarray  # (N, n_par)
    s_out: np.ndarray  # (N, n_s)
    group_id: np.ndarray  # (N,)
    basis: BasisSpec | None = None

    def __post_init__(self):
        n = len(self.s_in)
        if not (len(self.p) == len(self.s_out) == len(self.group_id) == n):
            raise ValueError("column length mismatch")

    def __len__(self) -> int:
        return len(self.s_in)


def cartesian_grid(omega_p, points_per_dim: int) -> np.ndarray:
    """Full tensor grid over the coefficient box, lexicographic order."""
    omega_p = np.asarray(omega_p, dtype=float)
    if points_per_dim not in (2, 3):
        raise ValueError("points_per_dim must be 2 or 3")
    n_dim = len(omega_p)
    if points_per_dim**n_dim > MAX_GRID_POINTS:
        raise ValueError(f"grid of {points_per_dim}^{n_dim} points is too large")
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in omega_p]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _control_from_coeffs(p, basis: BasisSpec, dt: float, control_map=None):
    """Control function of segment-local time from coefficient vector(s)."""

    def control_fn(tau):
        c = eval_local(p, min(max(tau, 0.0), dt), basis, dt)
        return c if control_map is None else control_map(c)

    return control_fn


def gen_drips_dataset(
    rhs, spec: SamplingSpec, basis: BasisSpec, model: str, dt: float,
    n_sub: int = 10, control_map=None,
) -> Dataset:
    """Grid-sampled dataset: ``points_per_dim**n_par`` groups of ``n_sam_s`` pairs."""
    grid = cartesian_grid(spec.omega_p, spec.grid_points_per_dim)
    lo, hi = spec.omega_s[:, 0], spec.omega_s[:, 1]
    s_in_all, p_all, s_out_all, gid_all = [], [], [], []
    for j, p_j in enumerate(grid):
        rng = np.random.default_rng([spec.seed, j])
        s_in = rng.uniform(lo, hi, size=(spec.n_sam_s, len(lo)))
        try:
            s_out = integrate_step(
                rhs, s_in, _control_from_coeffs(p_j, basis, dt, control_map), 0.0, dt, n_sub=n_sub
            )
        except Exception as exc:  # noqa: BLE001 - skip-and-log contract
            log.warning("grid point %d skipped: %s", j, exc)
            continue
        s_in_all.append(s_in)
        p_all.append(np.broadcast_to(p_j, (spec.n_sam_s, len(p_j))))
        s_out_all.append(s_out)
        gid_all.append(np.full(spec.n_sam_s, j))
    ds = Dataset(
        model=model, dt=dt,
        s_in=np.concatenate(s_in_all), p=np.concatenate(p_all),
        s_out=np.concatenate(s_out_all), group_id=np.concatenate(gid_all),
        basis=basis,
    )
    log.info("drips dataset: %d pairs over %d grid points", len(ds), len(grid))
    return ds


def gen_uniform_dataset(
    rhs, spec: SamplingSpec, basis: BasisSpec, model: str, dt: float,
    n_pairs: int, n_sub: int = 10, control_map=None,
) -> Dataset:
    """i.i.d. pairs with states and coefficients uniform over their boxes."""
    rng = np.random.default_rng([spec.seed, 0])
    s_in = rng.uniform(spec.omega_s[:, 0], spec.omega_s[:, 1], size=(n_pairs, len(spec.omega_s)))
    p = rng.uniform(spec.omega_p[:, 0], spec.omega_p[:, 1], size=(n_pairs, len(spec.omega_p)))
    s_out = integrate_step(
        rhs, s_in, _control_from_coeffs(p, basis, dt, control_map), 0.0, dt, n_sub=n_sub
    )
    return Dataset(
        model=model, dt=dt, s_in=s_in, p=p, s_out=s_out,
        group_id=np.arange(n_pairs), basis=basis,
    )


@dataclass(frozen=True)
class SignalSampler:
    """Per-channel cosine law ``a + A cos(w t + phi)`` with uniform ranges.

    ``ranges[ch]`` is a (4, 2) array of [lo, hi] rows for (a, A, w, phi).
    Draws are rejected until the signal's analytic envelope ``a +- A``
    fits inside ``clamp[ch]`` for the whole horizon.
    """

    ranges: np.ndarray  # (channels, 4, 2)
    clamp: np.ndarray  # (channels, 2)

    def __post_init__(self):
        object.__setattr__(self, "ranges", np.asarray(self.ranges, dtype=float))
        object.__setattr__(self, "clamp", np.asarray(self.clamp, dtype=float))

    @property
    def channels(self) -> int:
        return len(self.ranges)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One signal: (channels, 4) array of (a, A, w, phi)."""
        out = np.empty((self.channels, 4))
        for ch in range(self.channels):
            lo, hi = self.clamp[ch]
            for _ in range(10_000):
                a, A, w, phi = rng.uniform(self.ranges[ch, :, 0], self.ranges[ch, :, 1])
                if a - abs(A) >= lo and a + abs(A) <= hi:
                    out[ch] = (a, A, w, phi)
                    break
            else:
                raise RuntimeError("signal sampler: clamp rejection did not terminate")
        return out

    @staticmethod
    def evaluate(params: np.ndarray, t) -> np.ndarray:
        """Signal values; ``params`` may be batched ``(..., channels, 4)``."""
        a, A, w, phi = (params[..., i] for i in range(4))
        return a + A * np.cos(w * np.asarray(t, dtype=float) + phi)


def gen_fml_dataset(
    rhs, sampler: SignalSampler, n_traj: int, pairs_per_traj: int,
    T: float, dt: float, basis: BasisSpec, s0, model: str,
    validity_box, seed: int = 0, n_sub: int = 10, control_map=None,
    max_attempts: int = 50, batch: int = 256,
) -> Dataset:
    """Trajectory-sampled dataset: random one-step pairs from rollouts.

    Trajectories leaving ``validity_box`` are resampled from the same
    per-unit RNG stream, preserving determinism.
    """
    n_steps = int(round(T / dt))
    if pairs_per_traj > n_steps:
        raise ValueError("pairs_per_traj * dt must not exceed T")
    validity_box = np.asarray(validity_box, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    rngs = [np.random.default_rng([seed, i]) for i in range(n_traj)]
    sig_params = np.empty((n_traj, sampler.channels, 4))
    traj_states = np.empty((n_traj, n_steps + 1, len(s0)))
    pending = list(range(n_traj))
    n_resampled = 0
    for attempt in range(max_attempts):
        if not pending:
            break
        for start in range(0, len(pending), batch):
            idx = pending[start : start + batch]
            params = np.stack([sampler.sample(rngs[i]) for i in idx])

            def make_control(prm):
                def control_fn(t):
                    c = SignalSampler.evaluate(prm, t)
                    return c if control_map is None else control_map(c)

                return control_fn

            # Inline rollout: a diverging trajectory must not abort the
            # whole run, it just fails the validity check below.
            def rollout(s, control_fn):
                states = np.full(s.shape[:-1] + (n_steps + 1, len(s0)), np.nan)
                states[..., 0, :] = s
                try:
                    for k in range(n_steps):
                        s = integrate_step(rhs, s, control_fn, k * dt, dt, n_sub=n_sub)
                        states[..., k + 1, :] = s
                except Exception:  # noqa: BLE001 - NaN tail marks the failure
                    pass
                return states

            states = rollout(np.broadcast_to(s0, (len(idx), len(s0))).copy(), make_control(params))
            if not np.all(np.isfinite(states)):
                # One bad unit poisons a batched rollout; redo singly.
                for row in range(len(idx)):
                    states[row] = rollout(
                        np.asarray(s0, dtype=float)[None, :].copy(), make_control(params[row : row + 1])
                    )[0]
            sig_params[idx] = params
            traj_states[idx] = states
        lo, hi = validity_box[:, 0], validity_box[:, 1]
        still_bad = [
            i for i in pending
            if not (np.all(np.isfinite(traj_states[i]))
                    and np.all(traj_states[i] >= lo) and np.all(traj_states[i] <= hi))
        ]
        n_resampled += len(still_bad)
        pending = still_bad
    if pending:
        raise RuntimeError(f"{len(pending)} trajectories left validity box after {max_attempts} attempts")
    if n_resampled:
        log.info("fml dataset: resampled %d out-of-domain trajectories", n_resampled)

    n_s = len(s0)
    s_in = np.empty((n_traj * pairs_per_traj, n_s))
    s_out = np.empty_like(s_in)
    p = np.empty((n_traj * pairs_per_traj, basis.n_par))
    gid = np.repeat(np.arange(n_traj), pairs_per_traj)
    for i in range(n_traj):
        ks = np.sort(rngs[i].choice(n_steps, size=pairs_per_traj, replace=False))
        sl = slice(i * pairs_per_traj, (i + 1) * pairs_per_traj)
        s_in[sl] = traj_states[i, ks]
        s_out[sl] = traj_states[i, ks + 1]
        signal = lambda t, prm=sig_params[i]: SignalSampler.evaluate(prm, t)
        p[sl] = np.stack([fit_local(signal, k * dt, dt, basis) for k in ks])
    return Dataset(model=model, dt=dt, s_in=s_in, p=p, s_out=s_out, group_id=gid, basis=basis)


def write_dataset(ds: Dataset, path) -> None:
    """CSV: two metadata lines then one row per pair, 17 significant digits."""
    with open(path, "w") as f:
        f.write("model,n_s,n_par,delta_t\n")
        f.write(f"{ds.model},{ds.s_in.shape[1]},{ds.p.shape[1]},{ds.dt:.17g}\n")
        for gid, si, pi, so in zip(ds.group_id, ds.s_in, ds.p, ds.s_out):
            row = [str(int(gid))] + [f"{v:.17g}" for v in (*si, *pi, *so)]
            f.write(",".join(row) + "\n")


def read_dataset(path, basis: BasisSpec | None = None) -> Dataset:
    """Inverse of :func:`write_dataset`; raises with line number on bad rows."""
    with open(path) as f:
        lines = f.read().splitlines()
    if len(lines) < 2 or lines[0] != "model,n_s,n_par,delta_t":
        raise DatasetFormatError(f"{path}: missing dataset header")
    meta = lines[1].split(",")
    if len(meta) != 4:
        raise DatasetFormatError(f"{path}: line 2: expected 4 metadata fields")
    model, n_s, n_par, dt = meta[0], int(meta[1]), int(meta[2]), float(meta[3])
    width = 1 + 2 * n_s + n_par
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise DatasetFormatError(f"{path}: line {lineno}: expected {width} columns, got {len(parts)}")
        rows.append([float(v) for v in parts])
    data = np.array(rows, dtype=float).reshape(len(rows), width)
    return Dataset(
        model=model, dt=dt,
        s_in=data[:, 1 : 1 + n_s],
        p=data[:, 1 + n_s : 1 + n_s + n_par],
        s_out=data[:, 1 + n_s + n_par :],
        group_id=data[:, 0].astype(int),
        basis=basis,
    )


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = np.empty_like(x)
    half = window // 2
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = x[i - h : i + h + 1].mean(axis=0)
    return out


def ingest_experiment(path, window: int = 5, dt: float = 0.01) -> Trajectory:
    """Read a motion-capture CSV, smooth, rotate velocities to body frame.

    Expects header ``t,x,y,vX,vY,psi`` at uniform ``dt``; returns a
    trajectory with states ``[x, y, v_x, psi]`` where
    ``v_x = vX cos(psi) + vY sin(psi)``.
    """
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines or lines[0] != "t,x,y,vX,vY,psi":
        raise DatasetFormatError(f"{path}: expected header 't,x,y,vX,vY,psi'")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise DatasetFormatError(f"{path}: line {lineno}: expected 6 columns, got {len(parts)}")
        rows.append([float(v) for v in parts])
    data = np.asarray(rows, dtype=float)
    t = data[:, 0]
    if len(t) > 1 and np.any(np.abs(np.diff(t) - dt) > 1e-6):
        raise DatasetFormatError(f"{path}: non-uniform timestamps (expected dt={dt})")
    smooth = moving_average(data[:, 1:], window)
    x, y, vX, vY, psi = (smooth[:, i] for i in range(5))
    v_x = vX * np.cos(psi) + vY * np.sin(psi)
    return Trajectory(times=t - t[0], states=np.stack([x, y, v_x, psi], axis=-1))
