"""Path generation under any agent's measure and the Monte Carlo price oracle.

Randomness comes from the counter-based Philox generator keyed by
(seed, path index), so every path owns an independent stream: batches are
bit-reproducible for a fixed (seed, mesh, path count) regardless of
execution order or thread count.  Beliefs tagged "ou" are sampled with
exact transition densities; anything else uses Euler-Maruyama.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .kernel import CostKernel, ratio, ratio_increment
from .model import BeliefSet

__all__ = ["SimulationBatch", "DomainExitError", "simulate", "feynman_kac_vi"]


class DomainExitError(RuntimeError):
    """Too many simulated paths left the price surface's spatial domain."""


@dataclass
class SimulationBatch:
    """Simulated state paths plus the metadata needed to reuse them."""

    measure: str                  # "agent-<i>" or "average"
    agent_index: Optional[int]
    x0: float
    t0: float
    ts: np.ndarray                # (nt+1,)
    paths: np.ndarray             # (npaths, nt+1)
    seed: int
    increments: Optional[np.ndarray] = None   # standard normals, if retained

    def __post_init__(self):
        self.ts.setflags(write=False)
        self.paths.setflags(write=False)

    @property
    def npaths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.paths.shape[1] - 1

    @property
    def dt(self) -> float:
        return float(self.ts[1] - self.ts[0])


def _path_normals(seed: int, npaths: int, nsteps: int) -> np.ndarray:
    """(npaths, nsteps) standard normals; row p comes from Philox key (seed, p)."""
    out = np.empty((npaths, nsteps))
    for p in range(npaths):
        bitgen = np.random.Philox(key=np.array([seed, p], dtype=np.uint64))
        out[p] = np.random.Generator(bitgen).standard_normal(nsteps)
    return out


def _measure_coeffs(beliefs: BeliefSet, measure: Union[int, str]):
    if measure == "average":
        return None, beliefs.drift_bar, lambda t, x: np.sqrt(beliefs.vol_sq_bar(t, x))
    i = int(measure)
    if not 0 <= i < beliefs.n_agents:
        raise ValueError(f"agent index {i} out of range")
    return i, beliefs.agents[i].drift, beliefs.agents[i].vol


def simulate(beliefs: BeliefSet, measure: Union[int, str], x0: float, t0: float,
             t_end: float, nt: int, npaths: int, seed: int,
             vol_scale: float = 1.0, keep_increments: bool = False) -> SimulationBatch:
    """Simulate ``npaths`` state paths on a uniform mesh from t0 to t_end.

    ``measure`` is an agent index or "average".  ``vol_scale = 0`` turns off
    the noise, leaving the deterministic drift flow (exact for ou-tagged
    beliefs).  Exact Ornstein-Uhlenbeck transitions are used when the
    beliefs carry the "ou" tag, Euler-Maruyama otherwise.
    """
    if nt < 2:
        raise ValueError("need at least 2 steps")
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    agent_index, drift, vol = _measure_coeffs(beliefs, measure)
    ts = np.linspace(t0, t_end, nt + 1)
    dt = ts[1] - ts[0]
    Z = _path_normals(seed, npaths, nt)
    X = np.empty((npaths, nt + 1))
    X[:, 0] = x0

    if beliefs.tag == "ou":
        p = beliefs.tag_params
        kap = float(np.mean(p["kappas"])) if agent_index is None else float(p["kappas"][agent_index])
        mean = float(p["mean_X"])
        sig = float(p["sigma"]) * vol_scale
        e = np.exp(-kap * dt)
        sd = sig * np.sqrt((1.0 - e * e) / (2.0 * kap))
        for k in range(nt):
            X[:, k + 1] = mean + (X[:, k] - mean) * e + sd * Z[:, k]
    else:
        sq = np.sqrt(dt)
        for k in range(nt):
            t = ts[k]
            b = np.asarray(drift(t, X[:, k]), dtype=float)
            s = vol_scale * np.asarray(vol(t, X[:, k]), dtype=float)
            X[:, k + 1] = X[:, k] + b * dt + s * sq * Z[:, k]

    label = "average" if agent_index is None else f"agent-{agent_index}"
    return SimulationBatch(measure=label, agent_index=agent_index, x0=x0, t0=t0,
                           ts=ts, paths=X, seed=seed,
                           increments=Z if keep_increments else None)


def feynman_kac_vi(beliefs: BeliefSet, i: int, v_surface, kernel: CostKernel,
                   t: float, x: float, npaths: int, seed: int, nt: int = 400,
                   max_exit_fraction: float = 0.01):
    """Monte Carlo estimate of agent i's value at (t, x) from the price surface.

    Estimates  E^i[f(X_T)]/G(t) - int_t^T (G'(u)/G(t)) E^i[v(u, X_u)] du
    by simulating under Q_i.  The u-quadrature is trapezoidal in the price
    with the kernel weight integrated exactly over each substep, so constant
    surfaces are reproduced exactly.  Paths leaving the surface domain are
    counted; more than ``max_exit_fraction`` of them aborts the call.

    Returns (estimate, standard_error).
    """
    T = kernel.horizon_T
    batch = simulate(beliefs, i, x, t, T, nt, npaths, seed)
    X = batch.paths
    ts = batch.ts

    lo, hi = v_surface.x_bounds
    exited = np.any((X < lo) | (X > hi), axis=1)
    n_exit = int(exited.sum())
    if n_exit > max_exit_fraction * npaths:
        raise DomainExitError(
            f"{n_exit}/{npaths} paths left the surface domain [{lo:g}, {hi:g}]")

    vals = np.empty((npaths, len(ts)))
    for k in range(len(ts)):
        vals[:, k] = np.asarray(v_surface.value(ts[k], X[:, k]), dtype=float)

    # exact per-interval weight: int_{u_k}^{u_{k+1}} -G'(u)/G(t) du
    w = np.array([ratio_increment(kernel, ts[k], ts[k + 1], t) for k in range(len(ts) - 1)])
    integral = 0.5 * ((vals[:, :-1] + vals[:, 1:]) * w[None, :]).sum(axis=1)

    terminal = np.asarray(v_surface.value(T, X[:, -1]), dtype=float)
    per_path = terminal / ratio(kernel, t, T) + integral
    est = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(npaths)) if npaths > 1 else float("nan")
    return est, se
