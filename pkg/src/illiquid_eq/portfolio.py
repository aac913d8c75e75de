"""Equilibrium trading strategies and verification of their optimality.

The optimal rate solves the random ODE  dphi/dt = (G'/G) phi + (v_i - v)/lam
along each state path; positions are its forward Euler integral starting
from the initial allocations.  The objective is evaluated in drift form
(int phi * L^i v dt), which drops a zero-mean martingale term and sharply
reduces Monte Carlo variance.  First-order optimality is certified against
a finite family of smooth deterministic test directions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import CostKernel, log_deriv
from .model import MarketSpec
from .simulate import SimulationBatch

__all__ = [
    "StrategyPath",
    "StrategyBatch",
    "ObjectiveEstimate",
    "GateauxResult",
    "equilibrium_rate",
    "integrate_strategies",
    "clearing_residual",
    "objective",
    "gateaux_residual",
    "bump_directions",
]


@dataclass
class StrategyPath:
    """Positions and trading rates of all agents along one state path."""

    ts: np.ndarray
    state: np.ndarray          # (nt+1,)
    positions: np.ndarray      # (N, nt+1)
    rates: np.ndarray          # (N, nt+1)


@dataclass
class StrategyBatch:
    """Strategies for a whole path batch; agent-major arrays."""

    ts: np.ndarray
    state: np.ndarray          # (npaths, nt+1)
    positions: list            # N arrays of shape (npaths, nt+1)
    rates: list
    spec: MarketSpec
    rate_scale: float = 1.0

    @property
    def n_agents(self) -> int:
        return len(self.positions)

    @property
    def npaths(self) -> int:
        return self.state.shape[0]

    def path(self, p: int) -> StrategyPath:
        return StrategyPath(
            ts=self.ts, state=self.state[p],
            positions=np.stack([phi[p] for phi in self.positions]),
            rates=np.stack([r[p] for r in self.rates]))

    def to_csv(self, path, p: int) -> None:
        """Debug dump of one path's strategies."""
        sp = self.path(p)
        n = self.n_agents
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"] + [f"phi{i+1}" for i in range(n)]
                       + [f"rate{i+1}" for i in range(n)])
            for k, t in enumerate(self.ts):
                row = [f"{t:.12g}", f"{sp.state[k]:.12g}"]
                row += [f"{sp.positions[i, k]:.12g}" for i in range(n)]
                row += [f"{sp.rates[i, k]:.12g}" for i in range(n)]
                w.writerow(row)


def equilibrium_rate(i: int, t: float, phi, vi_at, v_at, kernel: CostKernel):
    """Optimal trading rate (G'/G)(t) * phi + (v_i - v)/lam at one point."""
    return log_deriv(kernel, t) * phi + (np.asarray(vi_at) - np.asarray(v_at)) / kernel.lam


def _surface_rows(surface, ts, X, n_agents):
    """Aggregate and per-agent prices along the batch, row per time index."""
    nt1 = len(ts)
    v = np.empty_like(X)
    vi = [np.empty_like(X) for _ in range(n_agents)]
    for k in range(nt1):
        v[:, k] = np.asarray(surface.value(ts[k], X[:, k]), dtype=float)
        for i in range(n_agents):
            vi[i][:, k] = np.asarray(surface.agent_value(i, ts[k], X[:, k]), dtype=float)
    return v, vi


def integrate_strategies(surface, spec: MarketSpec, batch: SimulationBatch,
                         rate_scale: float = 1.0) -> StrategyBatch:
    """Forward Euler on the rate ODE along every path of the batch.

    Prices are interpolated from the surface (bilinear for grid surfaces,
    exact affine evaluation for ODE solutions).  ``rate_scale`` != 1
    deliberately misscales the rate, for optimality-detection tests.  Errors
    out if any path leaves the spatial domain of the surface.
    """
    kern = spec.kernel
    if kern.gamma <= 0 or kern.lam <= 0:
        raise ValueError("strategy integration needs gamma > 0 and lambda > 0")
    X = batch.paths
    ts = batch.ts
    lo, hi = surface.x_bounds
    if X.min() < lo or X.max() > hi:
        raise ValueError(
            f"path exits spatial grid: state range [{X.min():.6g}, {X.max():.6g}] "
            f"vs domain [{lo:.6g}, {hi:.6g}]")
    n = spec.n_agents
    dt = batch.dt
    v, vi = _surface_rows(surface, ts, X, n)
    c = log_deriv(kern, ts)
    positions = [np.empty_like(X) for _ in range(n)]
    rates = [np.empty_like(X) for _ in range(n)]
    for i in range(n):
        positions[i][:, 0] = spec.allocations[i]
    nt = len(ts) - 1
    for k in range(nt + 1):
        for i in range(n):
            rates[i][:, k] = rate_scale * (c[k] * positions[i][:, k]
                                           + (vi[i][:, k] - v[:, k]) / kern.lam)
        if k < nt:
            for i in range(n):
                positions[i][:, k + 1] = positions[i][:, k] + dt * rates[i][:, k]
    return StrategyBatch(ts=ts, state=X, positions=positions, rates=rates,
                         spec=spec, rate_scale=rate_scale)


def clearing_residual(strategies, a0: Optional[float] = None) -> float:
    """max over mesh (and paths) of |sum_i phi_i - a0|.

    For a bare StrategyPath the supply defaults to the initial position sum.
    """
    if isinstance(strategies, StrategyPath):
        total = strategies.positions.sum(axis=0)
        if a0 is None:
            a0 = float(total[0])
    else:
        total = sum(strategies.positions)
        if a0 is None:
            a0 = strategies.spec.supply_a0
    return float(np.max(np.abs(total - a0)))


@dataclass
class ObjectiveEstimate:
    mean: float
    se: float
    per_path: np.ndarray


def _trapz_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _agent_drift_rows(surface, i, ts, X):
    mu = np.empty_like(X)
    for k in range(len(ts)):
        mu[:, k] = np.asarray(surface.agent_drift(i, ts[k], X[:, k]), dtype=float)
    return mu


def objective(i: int, batch: SimulationBatch, strategies: StrategyBatch, surface,
              positions: Optional[np.ndarray] = None,
              rates: Optional[np.ndarray] = None) -> ObjectiveEstimate:
    """Monte Carlo estimate of agent i's penalized expected returns.

    Uses the drift form  int (phi mu_i - gamma/2 phi^2 - lam/2 rate^2) dt
    with trapezoidal quadrature on the batch mesh.  The batch must be
    simulated under agent i's measure.  ``positions``/``rates`` override the
    stored strategy (for evaluating perturbations on the same paths).
    """
    if batch.agent_index != i:
        raise ValueError(
            f"measure mismatch: batch is under '{batch.measure}', objective needs agent {i}")
    spec = strategies.spec
    kern = spec.kernel
    phi = strategies.positions[i] if positions is None else positions
    rate = strategies.rates[i] if rates is None else rates
    mu = _agent_drift_rows(surface, i, batch.ts, batch.paths)
    integrand = phi * mu - 0.5 * kern.gamma * phi**2 - 0.5 * kern.lam * rate**2
    w = _trapz_weights(len(batch.ts), batch.dt)
    per_path = integrand @ w
    return ObjectiveEstimate(mean=float(per_path.mean()),
                             se=float(per_path.std(ddof=1) / np.sqrt(len(per_path))),
                             per_path=per_path)


def bump_directions(ts: np.ndarray, n_directions: int, seed: int,
                    n_bumps: int = 6) -> np.ndarray:
    """Smooth random rate perturbations, unit norm in the mesh L^2.

    Each direction is a sum of Gaussian bumps with frozen random centers and
    amplitudes; returned array has shape (n_directions, len(ts)).  The
    associated position perturbation (cumulative integral) vanishes at t=0.
    """
    rng = np.random.default_rng(seed)
    T = ts[-1] - ts[0]
    dt = ts[1] - ts[0]
    width = T / 10.0
    out = np.empty((n_directions, len(ts)))
    for d in range(n_directions):
        centers = ts[0] + rng.uniform(0.0, T, n_bumps)
        amps = rng.standard_normal(n_bumps)
        vd = np.zeros_like(ts)
        for ck, ak in zip(centers, amps):
            vd += ak * np.exp(-((ts - ck) ** 2) / (2.0 * width**2))
        out[d] = vd / np.sqrt(np.sum(vd**2) * dt)
    return out


def cumulative_positions(ts: np.ndarray, rate_rows: np.ndarray) -> np.ndarray:
    """Euler cumulative integral of a rate perturbation, zero at t = 0."""
    dt = ts[1] - ts[0]
    theta = np.concatenate([np.zeros(rate_rows.shape[:-1] + (1,)),
                            np.cumsum(rate_rows[..., :-1], axis=-1) * dt], axis=-1)
    return theta


@dataclass
class GateauxResult:
    max_residual: float
    per_direction: np.ndarray

    def __float__(self):
        return self.max_residual


def gateaux_residual(i: int, batch: SimulationBatch, strategies: StrategyBatch,
                     surface, n_directions: int = 20, seed: int = 2024,
                     directions: Optional[np.ndarray] = None) -> GateauxResult:
    """First-order optimality residual in standard-error units.

    Estimates  E^i[ int_0^T ( int_t^T (mu_i - gamma phi) ds - lam rate_t )
    dtheta_t dt ]  for each test direction and returns the largest
    |estimate| / SE.  Values at or below ~3 are consistent with optimality
    at this Monte Carlo resolution.  ``directions`` overrides the default
    random bump family with explicit rate perturbations (rows over the mesh).
    """
    if batch.agent_index != i:
        raise ValueError(
            f"measure mismatch: batch is under '{batch.measure}', residual needs agent {i}")
    spec = strategies.spec
    kern = spec.kernel
    ts = batch.ts
    dt = batch.dt
    X = batch.paths
    phi = strategies.positions[i]
    rate = strategies.rates[i]
    mu = _agent_drift_rows(surface, i, ts, X)
    integrand = mu - kern.gamma * phi
    # R_k = int_{t_k}^T integrand ds, trapezoid, computed as a reversed cumsum
    wz = integrand * _trapz_weights(len(ts), dt)[None, :]
    tail = np.cumsum(wz[:, ::-1], axis=1)[:, ::-1]
    R = tail - 0.5 * dt * integrand
    R[:, -1] = 0.0
    g = R - kern.lam * rate
    dirs = bump_directions(ts, n_directions, seed) if directions is None else directions
    w = _trapz_weights(len(ts), dt)
    residuals = np.empty(dirs.shape[0])
    for d in range(dirs.shape[0]):
        est = g @ (dirs[d] * w)
        m = est.mean()
        se = est.std(ddof=1) / np.sqrt(len(est))
        residuals[d] = abs(m) / se if se > 0.0 else (0.0 if m == 0.0 else np.inf)
    return GateauxResult(max_residual=float(residuals.max()), per_direction=residuals)
