"""Per-step polynomial parameterization of control signals.

A control signal ``c(t)`` is replaced, on each interval
``[t_k, t_k + dt]``, by a low-degree polynomial described by a small
coefficient vector ``p_k``.  Two families are supported:

* ``interpolating-nodes``: ``p`` stores the control values at
  ``degree + 1`` equally spaced nodes on the interval (the midpoint for
  degree 0); evaluation is the Lagrange interpolant through them.
* ``legendre``: ``p`` stores Legendre coefficients of the fit on the
  interval mapped affinely to ``[-1, 1]``, sampled at Gauss nodes.

Coefficients are ordered channel-major, degree-ascending within each
channel, so ``N_par = channels * (degree + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg


@dataclass(frozen=True)
class BasisSpec:
    family: str = "interpolating-nodes"
    degree: int = 2
    channels: int = 2

    def __post_init__(self):
        if self.family not in ("interpolating-nodes", "legendre"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.degree < 0 or self.channels < 1:
            raise ValueError("degree must be >= 0 and channels >= 1")

    @property
    def n_par(self) -> int:
        return self.channels * (self.degree + 1)


@dataclass
class GlobalParams:
    """One coefficient vector per step: ``coeffs[k]`` covers ``[k*dt, (k+1)*dt]``."""

    coeffs: np.ndarray  # (N_T, n_par)
    dt: float
    basis: BasisSpec

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))

    def __len__(self) -> int:
        return len(self.coeffs)


def nodes(basis: BasisSpec, dt: float) -> np.ndarray:
    """Sampling nodes on [0, dt] used by :func:`fit_local`."""
    if basis.family == "interpolating-nodes":
        if basis.degree == 0:
            return np.array([dt / 2.0])
        return np.linspace(0.0, dt, basis.degree + 1)
    gauss, _ = npleg.leggauss(basis.degree + 1)
    return (gauss + 1.0) * (dt / 2.0)


def _lagrange_weights(taus: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Lagrange basis values, shape (len(query), len(taus))."""
    q = np.atleast_1d(np.asarray(query, dtype=float))
    n = len(taus)
    w = np.ones((len(q), n))
    for i in range(n):
        for j in range(n):
            if j != i:
                w[:, i] *= (q - taus[j]) / (taus[i] - taus[j])
    return w


def basis_matrix(basis: BasisSpec, dt: float, taus) -> np.ndarray:
    """Per-channel basis evaluation matrix, shape (len(taus), degree+1).

    Row ``i`` dotted with a channel's coefficients gives the channel
    value at ``taus[i]``.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if basis.family == "interpolating-nodes":
        return _lagrange_weights(nodes(basis, dt), taus)
    zeta = 2.0 * taus / dt - 1.0
    return npleg.legvander(zeta, basis.degree)


def fit_local(control_fn, t_k: float, dt: float, basis: BasisSpec) -> np.ndarray:
    """Coefficients of one control segment starting at ``t_k``."""
    taus = nodes(basis, dt)
    vals = np.stack([np.atleast_1d(np.asarray(control_fn(t_k + tau), dtype=float)) for tau in taus])
    if vals.shape[1] != basis.channels:
        raise ValueError(f"control_fn returned {vals.shape[1]} channels, basis has {basis.channels}")
    if basis.family == "interpolating-nodes":
        coeffs = vals.T  # (channels, degree+1) node values
    else:
        zeta = 2.0 * taus / dt - 1.0
        coeffs = npleg.legfit(zeta, vals, basis.degree).T
    return coeffs.reshape(-1)


def eval_local(p, tau, basis: BasisSpec, dt: float) -> np.ndarray:
    """Evaluate segment coefficients at offset ``tau`` in ``[0, dt]``.

    ``p`` may be a single coefficient vector or a batch ``(..., n_par)``;
    returns shape ``(..., channels)``.
    """
    tau = float(tau)
    if tau < -1e-12 or tau > dt + 1e-12:
        raise ValueError(f"tau={tau} outside [0, {dt}]")
    p = np.asarray(p, dtype=float)
    row = basis_matrix(basis, dt, [tau])[0]  # (degree+1,)
    per_channel = p.reshape(p.shape[:-1] + (basis.channels, basis.degree + 1))
    return per_channel @ row


def fit_global(control_fn, n_steps: int, dt: float, basis: BasisSpec) -> GlobalParams:
    """Fit every interval ``[k*dt, (k+1)*dt]`` for ``k < n_steps``."""
    coeffs = np.stack([fit_local(control_fn, k * dt, dt, basis) for k in range(n_steps)])
    return GlobalParams(coeffs=coeffs, dt=dt, basis=basis)


def reconstruct(params: GlobalParams, t) -> np.ndarray:
    """Evaluate the piecewise-polynomial reconstruction at time(s) ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((len(t), params.basis.channels))
    for i, ti in enumerate(t):
        k = min(int(ti / params.dt), len(params) - 1)
        out[i] = eval_local(params.coeffs[k], ti - k * params.dt, params.basis, params.dt)
    return out
