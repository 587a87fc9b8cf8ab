"""Lifted linear surrogates with manifold interpolation in coefficient space.

Offline, every grid point in coefficient space gets its own linear
one-step operator, fitted by exact DMD on lifted snapshots with an
appended constant-1 coordinate (the lifted dynamics are affine; the
homogeneous coordinate makes them strictly linear).  Online, the stored
reduced bases are blended on the Grassmann manifold and the reduced
operators after congruence alignment, both anchored at the grid node
nearest to the query.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DivergenceError, Trajectory
from .localparam import BasisSpec, GlobalParams


class RankDeficiencyError(ValueError):
    """Snapshot matrix cannot support the requested rank."""


class InterpolationError(ValueError):
    """Grid subspaces too far apart to map to one tangent space."""


@dataclass(frozen=True)
class LiftingMap:
    """Invertible observable map embedding the identity coordinates."""

    name: str
    n_s: int
    dim_g: int
    lift: callable  # (..., n_s) -> (..., dim_g)
    unlift: callable  # (..., dim_g) -> (..., n_s)


def _lift_unicycle(s):
    s = np.asarray(s, dtype=float)
    x, y, psi = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([x, y, psi, np.cos(psi), np.sin(psi)], axis=-1)


def _lift_slipfree(s):
    s = np.asarray(s, dtype=float)
    x, y, vx, psi = (s[..., i] for i in range(4))
    c, si = np.cos(psi), np.sin(psi)
    return np.stack(
        [x, y, vx, psi, c, si, vx * c, vx * si, vx**2, c**2, si**2, si * c], axis=-1
    )


def _identity_lift(n):
    return LiftingMap(
        name=f"identity-{n}", n_s=n, dim_g=n,
        lift=lambda s: np.asarray(s, dtype=float),
        unlift=lambda g: np.asarray(g, dtype=float),
    )


_LIFTINGS = {
    "unicycle": LiftingMap("unicycle", 3, 5, _lift_unicycle, lambda g: g[..., :3]),
    "slipfree": LiftingMap("slipfree", 4, 12, _lift_slipfree, lambda g: g[..., :4]),
}


def get_lifting(name: str) -> LiftingMap:
    if name.startswith("identity-"):
        return _identity_lift(int(name.split("-")[1]))
    try:
        return _LIFTINGS[name]
    except KeyError:
        raise KeyError(f"unknown lifting {name!r}; known: {sorted(_LIFTINGS)}") from None


def lift_homogeneous(lifting: LiftingMap, s) -> np.ndarray:
    """Lift and append the constant-1 coordinate."""
    g = lifting.lift(s)
    return np.concatenate([g, np.ones(g.shape[:-1] + (1,))], axis=-1)


def fit_local_operator(s_in, s_out, lifting: LiftingMap, rank: int | None = None,
                       rank_tol: float = 1e-10):
    """Exact DMD on lifted homogeneous snapshots.

    Returns ``(V, L_r)`` with orthonormal ``V`` spanning the dominant
    input subspace and ``L_r = V^T Y W S^{-1}`` the reduced operator.
    """
    X = lift_homogeneous(lifting, np.asarray(s_in, dtype=float)).T  # (dim_h, m)
    Y = lift_homogeneous(lifting, np.asarray(s_out, dtype=float)).T
    U, sig, Wt = np.linalg.svd(X, full_matrices=False)
    if rank is None:
        rank = int(np.sum(sig > rank_tol * sig[0]))
    if rank > len(sig) or sig[rank - 1] < 1e-12 * sig[0]:
        raise RankDeficiencyError(
            f"rank {rank} not supported by data (sigma ratio "
            f"{sig[min(rank, len(sig)) - 1] / sig[0]:.2e}); reduce the rank"
        )
    V = U[:, :rank]
    L_r = V.T @ Y @ Wt[:rank].T / sig[:rank]
    return V, L_r


def numerical_rank(s_in, lifting: LiftingMap, rank_tol: float = 1e-10) -> int:
    X = lift_homogeneous(lifting, np.asarray(s_in, dtype=float)).T
    sig = np.linalg.svd(X, compute_uv=False)
    return int(np.sum(sig > rank_tol * sig[0]))


@dataclass
class DripsModel:
    """Grid of (ROB, reduced operator) pairs plus interpolation metadata."""

    grid: np.ndarray  # (G, n_par), lexicographic over axes
    axes: list  # per-dim node arrays
    robs: list  # G orthonormal (dim_h, r) matrices
    proms: list  # G (r, r) matrices
    lifting: LiftingMap
    rank: int
    basis: BasisSpec
    dt: float

    def __post_init__(self):
        if not (len(self.grid) == len(self.robs) == len(self.proms)):
            raise ValueError("grid/robs/proms length mismatch")
        self._tangent_cache: dict[int, tuple] = {}

    @property
    def dim_h(self) -> int:
        return self.lifting.dim_g + 1


def train_drips(dataset, lifting: LiftingMap, rank: int | None = None) -> DripsModel:
    """Fit one operator per parameter group of a grid-sampled dataset.

    With ``rank=None`` the shared rank is the smallest numerical rank
    over the grid, keeping the manifold interpolation well posed.
    """
    gids = np.unique(dataset.group_id)
    groups = [np.flatnonzero(dataset.group_id == g) for g in gids]
    grid = np.stack([dataset.p[idx[0]] for idx in groups])
    if rank is None:
        rank = min(numerical_rank(dataset.s_in[idx], lifting) for idx in groups)
    robs, proms = [], []
    for idx in groups:
        V, L_r = fit_local_operator(dataset.s_in[idx], dataset.s_out[idx], lifting, rank)
        robs.append(V)
        proms.append(L_r)
    axes = [np.unique(grid[:, d]) for d in range(grid.shape[1])]
    if np.prod([len(a) for a in axes]) != len(grid):
        raise ValueError("dataset groups do not form a full tensor grid")
    return DripsModel(grid=grid, axes=axes, robs=robs, proms=proms,
                      lifting=lifting, rank=rank, basis=dataset.basis, dt=dataset.dt)


# ---------------------------------------------------------------------------
# Manifold interpolation


def _scaled(axes, p):
    """Coordinates scaled per dim to [0, 1] over the grid hull."""
    out = np.empty(len(axes))
    for d, ax in enumerate(axes):
        span = ax[-1] - ax[0]
        out[d] = 0.0 if span == 0 else (p[d] - ax[0]) / span
    return out


def _nearest_node(model: DripsModel, p) -> int:
    idx = []
    for d, ax in enumerate(model.axes):
        idx.append(int(np.argmin(np.abs(ax - p[d]))))
    return int(np.ravel_multi_index(idx, [len(a) for a in model.axes]))


def _interp_weights(model: DripsModel, p) -> np.ndarray:
    """Tensor-product Lagrange weights over the grid, flattened lexicographically."""
    per_dim = []
    for d, ax in enumerate(model.axes):
        w = np.ones(len(ax))
        for i in range(len(ax)):
            for j in range(len(ax)):
                if j != i:
                    w[i] *= (p[d] - ax[j]) / (ax[i] - ax[j])
        per_dim.append(w)
    full = per_dim[0]
    for w in per_dim[1:]:
        full = np.outer(full, w).reshape(-1)
    return full


def _procrustes(A: np.ndarray) -> np.ndarray:
    """Orthogonal factor of the polar decomposition of ``A``."""
    U, _, Wt = np.linalg.svd(A)
    return U @ Wt


def _tangent_data(model: DripsModel, j0: int):
    """Grassmann logs and aligned operators anchored at grid node ``j0``."""
    if j0 in model._tangent_cache:
        return model._tangent_cache[j0]
    V0 = model.robs[j0]
    gammas, aligned = [], []
    for j, (Vj, Lj) in enumerate(zip(model.robs, model.proms)):
        M = V0.T @ Vj
        if np.linalg.cond(M) > 1e12:
            raise InterpolationError(
                f"subspaces at grid nodes {j0} and {j} are near orthogonal; densify the grid"
            )
        T = Vj @ np.linalg.inv(M)
        T -= V0 @ (V0.T @ T)
        Q, sing, Zt = np.linalg.svd(T, full_matrices=False)
        gammas.append((Q * np.arctan(sing)) @ Zt)
        Qj = _procrustes(Vj.T @ V0)
        aligned.append(Qj.T @ Lj @ Qj)
    data = (V0, np.stack(gammas), np.stack(aligned))
    model._tangent_cache[j0] = data
    return data


def _check_hull(model: DripsModel, p) -> None:
    for d, ax in enumerate(model.axes):
        if p[d] < ax[0] - 1e-12 or p[d] > ax[-1] + 1e-12:
            warnings.warn(
                "query coefficients outside the training grid hull; extrapolating",
                stacklevel=3,
            )
            return


def _query(model: DripsModel, p):
    """Interpolated (ROB, reduced operator) at coefficient vector ``p``."""
    p = np.asarray(p, dtype=float)
    _check_hull(model, p)
    j0 = _nearest_node(model, p)
    V0, gammas, aligned = _tangent_data(model, j0)
    w = _interp_weights(model, p)
    gamma = np.tensordot(w, gammas, axes=1)
    L = np.tensordot(w, aligned, axes=1)
    Q, sing, Zt = np.linalg.svd(gamma, full_matrices=False)
    V = V0 @ (Zt.T * np.cos(sing)) @ Zt + (Q * np.sin(sing)) @ Zt
    V, _ = np.linalg.qr(V)
    # Re-anchor the basis to the reference frame so it matches the
    # congruence-aligned operators.
    V = V @ _procrustes(V.T @ V0)
    return V, L


def interp_rob(model: DripsModel, p) -> np.ndarray:
    """Grassmann-interpolated reduced basis at ``p``."""
    return _query(model, p)[0]


def interp_prom(model: DripsModel, p) -> np.ndarray:
    """Congruence-aligned, entrywise-interpolated reduced operator at ``p``."""
    return _query(model, p)[1]


def drips_predict(model: DripsModel, s0, segments: GlobalParams) -> Trajectory:
    """Advance the lifted state one segment at a time.

    After each linear step the derived observables are recomputed from
    the identity coordinates and the homogeneous coordinate is pinned
    back to 1; without this projection the redundant entries drift.
    """
    s = np.asarray(s0, dtype=float)
    n_steps = len(segments)
    states = np.empty((n_steps + 1, model.lifting.n_s))
    states[0] = s
    g = lift_homogeneous(model.lifting, s)
    for k in range(n_steps):
        V, L = _query(model, segments.coeffs[k])
        g = V @ (L @ (V.T @ g))
        s = model.lifting.unlift(g[: model.lifting.dim_g])
        if not np.all(np.isfinite(s)):
            raise DivergenceError(k + 1)
        g = lift_homogeneous(model.lifting, s)
        states[k + 1] = s
    return Trajectory(times=np.arange(n_steps + 1) * segments.dt, states=states)


# ---------------------------------------------------------------------------
# Model archive


def save_drips(model: DripsModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "grid.csv", model.grid, delimiter=",", fmt="%.17g")
    for j, (V, L) in enumerate(zip(model.robs, model.proms)):
        np.savetxt(d / f"rob_{j}.csv", V, delimiter=",", fmt="%.17g")
        np.savetxt(d / f"prom_{j}.csv", L, delimiter=",", fmt="%.17g")
    meta = {
        "lifting": model.lifting.name,
        "rank": model.rank,
        "dt": model.dt,
        "basis": {"family": model.basis.family, "degree": model.basis.degree,
                  "channels": model.basis.channels},
        "axes": [list(a) for a in model.axes],
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_drips(directory) -> DripsModel:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    grid = np.atleast_2d(np.loadtxt(d / "grid.csv", delimiter=","))
    robs = [np.atleast_2d(np.loadtxt(d / f"rob_{j}.csv", delimiter=",")) for j in range(len(grid))]
    proms = [np.atleast_2d(np.loadtxt(d / f"prom_{j}.csv", delimiter=",")) for j in range(len(grid))]
    basis = BasisSpec(**meta["basis"])
    return DripsModel(
        grid=grid, axes=[np.asarray(a, dtype=float) for a in meta["axes"]],
        robs=robs, proms=proms, lifting=get_lifting(meta["lifting"]),
        rank=meta["rank"], basis=basis, dt=meta["dt"],
    )
