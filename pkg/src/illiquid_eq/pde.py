"""Theta-scheme finite-difference solver for the weakly coupled price system.

One spatial dimension, uniform grids.  Time stepping is Crank-Nicolson with
a Rannacher startup (two implicit-Euler steps); the zeroth-order coupling
through the cross-agent average is resolved by Picard iteration within each
time level, so every sweep costs N independent tridiagonal solves.  The
domain is truncated with zero second spatial derivative (linear
extrapolation) at both edges, which is exact for affine solutions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .kernel import CostKernel, log_deriv
from .model import BeliefSet, MarketSpec

__all__ = [
    "Grid1D",
    "GridSurface",
    "EquilibriumSolution",
    "CouplingIterationError",
    "DegenerateVolatilityError",
    "solve_equilibrium",
    "solve_frictionless",
    "solve_risk_neutral",
    "default_grid",
    "spec_fingerprint",
]


class CouplingIterationError(RuntimeError):
    """Picard iteration on the cross-agent coupling failed to converge."""

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


class DegenerateVolatilityError(RuntimeError):
    """A squared volatility is nonpositive somewhere on the grid."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform rectangular grid: nx spatial nodes, nt time levels on [0, T]."""

    x_min: float
    x_max: float
    nx: int
    nt: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if self.nx < 3:
            raise ValueError("need at least 3 spatial nodes")
        if self.nt < 2:
            raise ValueError("need at least 2 time levels")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    def ts(self, horizon_T: float) -> np.ndarray:
        return np.linspace(0.0, horizon_T, self.nt)

    def refined(self, factor: int) -> "Grid1D":
        return Grid1D(self.x_min, self.x_max,
                      factor * (self.nx - 1) + 1, factor * (self.nt - 1) + 1)


def default_grid(beliefs: BeliefSet, nx: int = 241, nt: int = 601,
                 widths: float = 6.0) -> Grid1D:
    """Mean +- `widths` stationary standard deviations for ou-tagged beliefs."""
    if beliefs.tag != "ou":
        raise ValueError("default grid sizing requires ou-tagged beliefs; size the domain explicitly")
    p = beliefs.tag_params
    kbar = float(np.mean(p["kappas"]))
    sd = p["sigma"] / np.sqrt(2.0 * kbar)
    return Grid1D(p["mean_X"] - widths * sd, p["mean_X"] + widths * sd, nx, nt)


def _interp2(ts, xs, F, tq, xq):
    """Bilinear interpolation on a uniform grid, F indexed (t, x).

    Clamps in t; extrapolates linearly in x beyond the edges, consistent
    with the zero-curvature boundary condition.
    """
    tq = np.asarray(tq, dtype=float)
    xq = np.asarray(xq, dtype=float)
    dt = ts[1] - ts[0] if len(ts) > 1 else 1.0
    h = xs[1] - xs[0]
    it = np.clip(((tq - ts[0]) / dt).astype(int), 0, len(ts) - 2) if len(ts) > 1 else np.zeros(tq.shape, int)
    wt = np.clip((tq - ts[it]) / dt, 0.0, 1.0) if len(ts) > 1 else np.zeros_like(tq)
    ix = np.clip(((xq - xs[0]) / h).astype(int), 0, len(xs) - 2)
    wx = (xq - xs[ix]) / h  # outside [0,1] beyond the edges -> linear extrapolation
    f00 = F[it, ix]
    f01 = F[it, ix + 1]
    f10 = F[it + 1, ix]
    f11 = F[it + 1, ix + 1]
    return (1 - wt) * ((1 - wx) * f00 + wx * f01) + wt * ((1 - wx) * f10 + wx * f11)


def _dv_dx(v: np.ndarray, h: float) -> np.ndarray:
    """Spatial slope: central interior, second-order one-sided at edges."""
    out = np.empty_like(v)
    out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * h)
    out[..., 0] = (-3 * v[..., 0] + 4 * v[..., 1] - v[..., 2]) / (2 * h)
    out[..., -1] = (3 * v[..., -1] - 4 * v[..., -2] + v[..., -3]) / (2 * h)
    return out


class _Operator:
    """Tridiagonal form of L = 0.5 sigma^2 d_xx + b d_x on one grid.

    Boundary rows use the linear-extrapolation ghost node: d_xx -> 0 and
    d_x -> one-sided first difference.
    """

    def __init__(self, xs, drift_fn, vol_fn):
        self.xs = xs
        self.h = xs[1] - xs[0]
        self.drift_fn = drift_fn
        self.vol_fn = vol_fn

    def bands(self, t: float):
        """(lower, diag, upper) of L at time t; raises on degenerate vol."""
        xs, h = self.xs, self.h
        b = np.asarray(self.drift_fn(t, xs), dtype=float)
        s2 = np.asarray(self.vol_fn(t, xs), dtype=float) ** 2
        if np.any(s2 <= 0.0) or not np.all(np.isfinite(s2)):
            raise DegenerateVolatilityError(f"nonpositive or non-finite sigma^2 at t={t:.6g}")
        lo = np.zeros_like(xs)
        di = np.zeros_like(xs)
        up = np.zeros_like(xs)
        lo[1:-1] = 0.5 * s2[1:-1] / h**2 - b[1:-1] / (2 * h)
        di[1:-1] = -s2[1:-1] / h**2
        up[1:-1] = 0.5 * s2[1:-1] / h**2 + b[1:-1] / (2 * h)
        di[0] = -b[0] / h
        up[0] = b[0] / h
        di[-1] = b[-1] / h
        lo[-1] = -b[-1] / h
        return lo, di, up

    @staticmethod
    def apply(bands, u):
        lo, di, up = bands
        out = di * u
        out[:-1] += up[:-1] * u[1:]
        out[1:] += lo[1:] * u[:-1]
        return out

    @staticmethod
    def implicit_banded(bands, shift: float, coef: float):
        """Banded matrix of I - coef * (L + shift*I) for solve_banded."""
        lo, di, up = bands
        n = len(di)
        ab = np.zeros((3, n))
        ab[0, 1:] = -coef * up[:-1]
        ab[1, :] = 1.0 - coef * (di + shift)
        ab[2, :-1] = -coef * lo[1:]
        return ab


def _march(ts, xs, operators, terminal, coupling=None, sources=None,
           rannacher: int = 2, picard_tol: float = 1e-10, picard_max: int = 50):
    """March d_t v_i + L_i v_i + c(t)(v_i - vbar) + g_i(t, x) = 0 backward.

    ``coupling`` is c(t) or None; ``sources`` a list of g_i(t, xs) callables
    or None.  Sources are evaluated at the time-step midpoint.  Returns
    (values array (n_eq, nt, nx), picard iteration counts).
    """
    n_eq = len(operators)
    nt, nx = len(ts), len(xs)
    out = np.empty((n_eq, nt, nx))
    out[:, -1] = terminal
    vi = np.array(terminal, dtype=float, copy=True)
    iters_used = []
    for m in range(nt - 2, -1, -1):
        t_new, t_old = ts[m], ts[m + 1]
        dt = t_old - t_new
        t_mid = 0.5 * (t_new + t_old)
        theta = 1.0 if (nt - 2 - m) < rannacher else 0.5
        c_new = coupling(t_new) if coupling is not None else 0.0
        c_old = coupling(t_old) if coupling is not None else 0.0
        bands_new = [op.bands(t_new) for op in operators]
        bands_old = [op.bands(t_old) for op in operators]
        vbar_old = vi.mean(axis=0)
        rhs = np.empty((n_eq, nx))
        for i in range(n_eq):
            expl = _Operator.apply(bands_old[i], vi[i])
            if coupling is not None:
                expl = expl + c_old * (vi[i] - vbar_old)
            rhs[i] = vi[i] + dt * (1.0 - theta) * expl
            if sources is not None and sources[i] is not None:
                rhs[i] += dt * np.asarray(sources[i](t_mid, xs), dtype=float)
        mats = [_Operator.implicit_banded(bands_new[i], c_new if coupling is not None else 0.0,
                                          dt * theta) for i in range(n_eq)]
        if coupling is None:
            for i in range(n_eq):
                vi[i] = solve_banded((1, 1), mats[i], rhs[i])
            iters_used.append(1)
        else:
            vbar = vbar_old.copy()
            prev = None
            residuals = []
            for it in range(picard_max):
                new = np.empty_like(vi)
                for i in range(n_eq):
                    new[i] = solve_banded((1, 1), mats[i], rhs[i] - dt * theta * c_new * vbar)
                if prev is not None:
                    change = float(np.max(np.abs(new - prev)))
                    residuals.append(change)
                    if change < picard_tol:
                        prev = new
                        break
                prev = new
                vbar = new.mean(axis=0)
            else:
                raise CouplingIterationError(
                    f"coupling iteration did not reach {picard_tol:g} within "
                    f"{picard_max} sweeps at t={t_new:.6g}", residuals)
            vi = prev
            iters_used.append(len(residuals) + 1)
        out[:, m] = vi
    return out, iters_used


@dataclass
class GridSurface:
    """A scalar price surface on a uniform grid with bilinear evaluation."""

    ts: np.ndarray
    xs: np.ndarray
    v: np.ndarray        # (nt, nx)
    dv_dx: np.ndarray    # (nt, nx)

    @property
    def x_bounds(self):
        return (float(self.xs[0]), float(self.xs[-1]))

    def value(self, t, x):
        out = _interp2(self.ts, self.xs, self.v, t, x)
        return float(out) if (np.isscalar(t) and np.isscalar(x)) else out

    def slope(self, t, x):
        out = _interp2(self.ts, self.xs, self.dv_dx, t, x)
        return float(out) if (np.isscalar(t) and np.isscalar(x)) else out

    def terminal(self) -> np.ndarray:
        return self.v[-1]


@dataclass
class EquilibriumSolution(GridSurface):
    """Discrete solution of the coupled equilibrium system.

    ``vi`` holds the per-agent value surfaces; ``v`` the aggregate price,
    which satisfies v = mean(vi) + (lam G'/(N G)) a0 exactly at every node.
    """

    vi: np.ndarray = None          # (N, nt, nx)
    spec: MarketSpec = None
    beliefs: BeliefSet = None
    metadata: dict = field(default_factory=dict)
    _deriv_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_agents(self) -> int:
        return self.vi.shape[0]

    def agent_value(self, i: int, t, x):
        out = _interp2(self.ts, self.xs, self.vi[i], t, x)
        return float(out) if (np.isscalar(t) and np.isscalar(x)) else out

    def _time_slope_grid(self) -> np.ndarray:
        if "dv_dt" not in self._deriv_cache:
            self._deriv_cache["dv_dt"] = np.gradient(self.v, self.ts, axis=0)
        return self._deriv_cache["dv_dt"]

    def _curvature_grid(self) -> np.ndarray:
        if "dv_dxx" not in self._deriv_cache:
            h = self.xs[1] - self.xs[0]
            g = np.empty_like(self.v)
            g[:, 1:-1] = (self.v[:, 2:] - 2 * self.v[:, 1:-1] + self.v[:, :-2]) / h**2
            g[:, 0] = g[:, 1]
            g[:, -1] = g[:, -2]
            self._deriv_cache["dv_dxx"] = g
        return self._deriv_cache["dv_dxx"]

    def agent_drift(self, i: int, t, x):
        """mu_i = L^i v from differenced grids (needs attached beliefs)."""
        if self.beliefs is None:
            raise ValueError("no beliefs attached to this solution")
        dv_dt = _interp2(self.ts, self.xs, self._time_slope_grid(), t, x)
        dv_dx = _interp2(self.ts, self.xs, self.dv_dx, t, x)
        dv_dxx = _interp2(self.ts, self.xs, self._curvature_grid(), t, x)
        tq = np.asarray(t, dtype=float)
        xq = np.asarray(x, dtype=float)
        b = np.empty_like(np.broadcast_arrays(tq, xq)[0], dtype=float)
        s = np.empty_like(b)
        tb, xb = np.broadcast_arrays(tq, xq)
        flat_t, flat_x = tb.ravel(), xb.ravel()
        bv = np.array([self.beliefs.drift(i, float(a), float(c)) for a, c in zip(flat_t, flat_x)])
        sv = np.array([self.beliefs.vol(i, float(a), float(c)) for a, c in zip(flat_t, flat_x)])
        b = bv.reshape(tb.shape)
        s = sv.reshape(tb.shape)
        out = dv_dt + b * dv_dx + 0.5 * s * s * dv_dxx
        return float(out) if (np.isscalar(t) and np.isscalar(x)) else out

    def to_csv(self, path) -> None:
        """One row per (t, x) node: t, x, v, v1..vN, dv_dx."""
        n = self.n_agents
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "v"] + [f"v{i+1}" for i in range(n)] + ["dv_dx"])
            for k, t in enumerate(self.ts):
                for j, x in enumerate(self.xs):
                    row = [f"{t:.12g}", f"{x:.12g}", f"{self.v[k, j]:.12g}"]
                    row += [f"{self.vi[i, k, j]:.12g}" for i in range(n)]
                    row.append(f"{self.dv_dx[k, j]:.12g}")
                    w.writerow(row)

    def cache_save(self, directory) -> str:
        """Compact binary cache keyed by the spec fingerprint."""
        os.makedirs(directory, exist_ok=True)
        key = self.metadata.get("fingerprint", "unkeyed")
        path = os.path.join(directory, f"equilibrium_{key}.npz")
        np.savez_compressed(path, ts=self.ts, xs=self.xs, v=self.v,
                            dv_dx=self.dv_dx, vi=self.vi,
                            metadata=json.dumps(self.metadata))
        return path


def cache_load(path) -> EquilibriumSolution:
    """Load a cached solution (arrays only; beliefs are not persisted)."""
    with np.load(path, allow_pickle=False) as z:
        return EquilibriumSolution(
            ts=z["ts"], xs=z["xs"], v=z["v"], dv_dx=z["dv_dx"], vi=z["vi"],
            metadata=json.loads(str(z["metadata"])))


def spec_fingerprint(spec: MarketSpec, beliefs: BeliefSet, grid: Grid1D) -> str:
    """Stable hash of costs, supply, allocations, payoff samples and coefficients."""
    xs = np.linspace(grid.x_min, grid.x_max, 17)
    ts = np.linspace(0.0, spec.horizon_T, 5)
    doc = {
        "gamma": spec.kernel.gamma,
        "lam": spec.kernel.lam,
        "T": spec.horizon_T,
        "a0": spec.supply_a0,
        "allocations": list(map(float, spec.allocations)),
        "grid": [grid.x_min, grid.x_max, grid.nx, grid.nt],
        "tag": beliefs.tag,
        "payoff": [float(v) for v in np.asarray(spec.payoff(xs), dtype=float)],
        "coeffs": [[float(np.mean(np.asarray(beliefs.drift(i, t, xs)))) for t in ts]
                   + [float(np.mean(np.asarray(beliefs.vol(i, t, xs)))) for t in ts]
                   for i in range(beliefs.n_agents)],
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require_match(spec: MarketSpec, beliefs: BeliefSet) -> None:
    if beliefs.n_agents != spec.n_agents:
        raise ValueError("belief set and allocations disagree on the number of agents")


def solve_equilibrium(spec: MarketSpec, beliefs: BeliefSet, grid: Grid1D,
                      picard_tol: float = 1e-10, picard_max: int = 50,
                      rannacher: int = 2) -> EquilibriumSolution:
    """Solve the coupled backward system for all agents plus the aggregate.

    d_t v_i + 0.5 sigma_i^2 d_xx v_i + b_i d_x v_i + (G'/G)(v_i - v) = 0 with
    v = mean(v_i) + (lam G'/(N G)) a0 and terminal payoff f.  Requires both
    costs positive.
    """
    _require_match(spec, beliefs)
    kern = spec.kernel
    if kern.gamma <= 0 or kern.lam <= 0:
        raise ValueError("coupled solve needs gamma > 0 and lambda > 0; "
                         "use the frictionless or risk-neutral solvers otherwise")
    n = beliefs.n_agents
    ts = grid.ts(spec.horizon_T)
    xs = grid.xs
    terminal = np.tile(np.asarray(spec.payoff(xs), dtype=float), (n, 1))
    ops = [_Operator(xs, beliefs.agents[i].drift, beliefs.agents[i].vol) for i in range(n)]
    coupling = lambda t: log_deriv(kern, t)
    a0 = spec.supply_a0
    if a0 != 0.0:
        src = lambda t, x: -(kern.lam * log_deriv(kern, t) ** 2 / n) * a0 * np.ones_like(x)
        sources = [src] * n
    else:
        sources = None
    vi, iters = _march(ts, xs, ops, terminal, coupling=coupling, sources=sources,
                       rannacher=rannacher, picard_tol=picard_tol, picard_max=picard_max)
    c_ts = log_deriv(kern, ts)
    v = vi.mean(axis=0) + (kern.lam / n) * c_ts[:, None] * a0
    sol = EquilibriumSolution(
        ts=ts, xs=xs, v=v, dv_dx=_dv_dx(v, grid.h), vi=vi, spec=spec, beliefs=beliefs,
        metadata={
            "fingerprint": spec_fingerprint(spec, beliefs, grid),
            "picard_tol": picard_tol,
            "picard_max": picard_max,
            "rannacher": rannacher,
            "max_picard_sweeps": int(max(iters)),
            "grid": [grid.x_min, grid.x_max, grid.nx, grid.nt],
        })
    return sol


def solve_frictionless(spec: MarketSpec, beliefs: BeliefSet, grid: Grid1D,
                       rannacher: int = 2) -> GridSurface:
    """Representative-agent price: d_t v + 0.5 sbar^2 d_xx v + bbar d_x v = gamma a0 / N.

    Averaged coefficients, terminal payoff f; requires gamma > 0 (lambda
    plays no role here).
    """
    _require_match(spec, beliefs)
    if spec.kernel.gamma <= 0:
        raise ValueError("frictionless equilibrium needs gamma > 0")
    ts = grid.ts(spec.horizon_T)
    xs = grid.xs
    terminal = np.asarray(spec.payoff(xs), dtype=float)[None, :]
    op = _Operator(xs, beliefs.drift_bar, lambda t, x: np.sqrt(beliefs.vol_sq_bar(t, x)))
    g = spec.kernel.gamma * spec.supply_a0 / beliefs.n_agents
    sources = [lambda t, x: -g * np.ones_like(x)] if g != 0.0 else None
    v, _ = _march(ts, xs, [op], terminal, coupling=None, sources=sources, rannacher=rannacher)
    v = v[0]
    return GridSurface(ts=ts, xs=xs, v=v, dv_dx=_dv_dx(v, grid.h))


def solve_risk_neutral(spec: MarketSpec, beliefs: BeliefSet, grid: Grid1D,
                       rannacher: int = 2):
    """Zero-holding-cost system: each v_i solves L^i v_i = 0; price is the mean.

    Returns (aggregate GridSurface, list of per-agent GridSurfaces).
    """
    _require_match(spec, beliefs)
    n = beliefs.n_agents
    ts = grid.ts(spec.horizon_T)
    xs = grid.xs
    terminal = np.tile(np.asarray(spec.payoff(xs), dtype=float), (n, 1))
    ops = [_Operator(xs, beliefs.agents[i].drift, beliefs.agents[i].vol) for i in range(n)]
    vi, _ = _march(ts, xs, ops, terminal, coupling=None, sources=None, rannacher=rannacher)
    v = vi.mean(axis=0)
    agg = GridSurface(ts=ts, xs=xs, v=v, dv_dx=_dv_dx(v, grid.h))
    per = [GridSurface(ts=ts, xs=xs, v=vi[i], dv_dx=_dv_dx(vi[i], grid.h)) for i in range(n)]
    return agg, per
