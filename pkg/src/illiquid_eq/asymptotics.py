"""Leading-order small-cost price corrections for general coefficients.

Both corrections are built from auxiliary inhomogeneous parabolic solves,
independent of any closed form.  The small-trading-cost correction divides
by sqrt(trading cost) and needs a fourth-order derivative chain of the
frictionless price, which is manufactured on a refined grid by repeated
central differencing with a single 3-point smoothing pass.  The
small-holding-cost correction uses only the risk-neutral value surfaces
themselves.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import BeliefSet, MarketSpec
from .pde import Grid1D, GridSurface, _Operator, _interp2, _march
from .util import max_threads

__all__ = ["CorrectionSurface", "SmoothnessError", "tc_correction", "hc_correction"]


class SmoothnessError(RuntimeError):
    """Payoff too rough for the derivative chain; smooth it or refine the grid."""


@dataclass
class CorrectionSurface(GridSurface):
    """First-order correction surface; vanishes identically at t = T."""

    which: str = ""    # "transaction" or "holding"

    def to_csv(self, path) -> None:
        from .util import write_csv
        rows = [(float(t), float(x), float(self.v[k, j]), float(self.dv_dx[k, j]))
                for k, t in enumerate(self.ts) for j, x in enumerate(self.xs)]
        write_csv(path, ["t", "x", "v_star", "dv_star_dx"], rows)


def _smooth_x(F: np.ndarray) -> np.ndarray:
    """One pass of the 3-point [1/4, 1/2, 1/4] filter along x."""
    out = F.copy()
    out[:, 1:-1] = 0.25 * F[:, :-2] + 0.5 * F[:, 1:-1] + 0.25 * F[:, 2:]
    return out


def _coeff_grid(fn, ts, xs) -> np.ndarray:
    return np.stack([np.asarray(fn(t, xs), dtype=float) for t in ts])


def _dv_dx_extract(v, h):
    from .pde import _dv_dx
    return _dv_dx(v, h)


def tc_correction(spec: MarketSpec, beliefs: BeliefSet, grid: Grid1D,
                  refine: int = 4, assembly: str = "generator") -> CorrectionSurface:
    """Price correction per sqrt(trading cost) around the frictionless limit.

    Solves the averaged-generator equation with source equal to the average
    of each agent's subjective drift of their frictionless portfolio
    feedback.  ``assembly`` picks how that source is built: "generator"
    applies each agent's full space-time generator to the feedback function;
    "spatial" uses the equivalent derivative form without the time slope
    (the two agree because the frictionless portfolios clear the market).
    """
    if assembly not in ("generator", "spatial"):
        raise ValueError("assembly must be 'generator' or 'spatial'")
    gamma = spec.kernel.gamma
    if gamma <= 0:
        raise ValueError("transaction-cost correction needs gamma > 0")
    from .pde import solve_frictionless

    n = beliefs.n_agents
    fine = grid.refined(refine)
    v0 = solve_frictionless(spec, beliefs, fine)
    fts, fxs = v0.ts, v0.xs
    h = fxs[1] - fxs[0]

    vx = np.gradient(v0.v, h, axis=1, edge_order=2)
    vxx = np.gradient(vx, h, axis=1, edge_order=2)

    bbar = _coeff_grid(beliefs.drift_bar, fts, fxs)
    s2bar = _coeff_grid(beliefs.vol_sq_bar, fts, fxs)
    source = np.zeros_like(v0.v)
    for i in range(n):
        b_i = _coeff_grid(beliefs.agents[i].drift, fts, fxs)
        s2_i = _coeff_grid(beliefs.agents[i].vol, fts, fxs) ** 2
        # L^i v0 via the frictionless equation: only coefficient differences survive
        li_v0 = (b_i - bbar) * vx + 0.5 * (s2_i - s2bar) * vxx \
            + gamma * spec.supply_a0 / n
        if assembly == "generator":
            phi_hat = li_v0 / gamma
            pt = np.gradient(phi_hat, fts, axis=0, edge_order=2)
            px = np.gradient(phi_hat, h, axis=1, edge_order=2)
            pxx = np.gradient(px, h, axis=1, edge_order=2)
            source += (np.sqrt(gamma) / n) * (pt + b_i * px + 0.5 * s2_i * pxx)
        else:
            gx = np.gradient(li_v0, h, axis=1, edge_order=2)
            gxx = np.gradient(gx, h, axis=1, edge_order=2)
            source += (b_i * gx + 0.5 * s2_i * gxx) / (np.sqrt(gamma) * n)

    smoothed = _smooth_x(source)
    if not np.all(np.isfinite(smoothed)):
        raise SmoothnessError(
            "non-finite derivative chain; payoff is too rough for the fourth-order "
            "expansion source - apply a smoothing filter to the payoff or refine the grid")
    scale = float(np.max(np.abs(smoothed)))
    rough = float(np.max(np.abs(source - smoothed)))
    if scale > 0 and rough > 0.5 * scale:
        raise SmoothnessError(
            "grid-scale oscillation dominates the expansion source; payoff appears "
            "insufficiently smooth - apply a smoothing filter or refine the grid")

    ts, xs = grid.ts(spec.horizon_T), grid.xs
    op = _Operator(xs, beliefs.drift_bar, lambda t, x: np.sqrt(beliefs.vol_sq_bar(t, x)))
    src_fn = lambda t, x: _interp2(fts, fxs, smoothed, np.full_like(x, t), x)
    w, _ = _march(ts, xs, [op], np.zeros((1, len(xs))), coupling=None, sources=[src_fn])
    w = w[0]
    return CorrectionSurface(ts=ts, xs=xs, v=w, dv_dx=_dv_dx_extract(w, grid.h),
                             which="transaction")


def hc_correction(spec: MarketSpec, beliefs: BeliefSet, grid: Grid1D) -> CorrectionSurface:
    """Price correction per unit holding cost around the risk-neutral limit.

    For each agent solves  L^i w_i + ((T-t)/lam)(v0 - v0_i) = 0, w_i(T) = 0,
    with the risk-neutral surfaces from the finite-difference solver, then
    averages and subtracts (T-t) a0 / N.  Per-agent solves run in parallel
    up to the thread cap.
    """
    lam = spec.kernel.lam
    if lam <= 0:
        raise ValueError("holding-cost correction needs lambda > 0")
    from .pde import solve_risk_neutral

    n = beliefs.n_agents
    v0, vis = solve_risk_neutral(spec, beliefs, grid)
    ts, xs = v0.ts, v0.xs
    T = spec.horizon_T

    def solve_one(i: int) -> np.ndarray:
        op = _Operator(xs, beliefs.agents[i].drift, beliefs.agents[i].vol)
        src = lambda t, x: (T - t) / lam * (
            _interp2(ts, xs, v0.v, np.full_like(x, t), x)
            - _interp2(ts, xs, vis[i].v, np.full_like(x, t), x))
        w, _ = _march(ts, xs, [op], np.zeros((1, len(xs))), coupling=None, sources=[src])
        return w[0]

    workers = min(max_threads(), n)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ws = list(pool.map(solve_one, range(n)))
    else:
        ws = [solve_one(i) for i in range(n)]

    v_star = sum(ws) / n - np.outer(T - ts, np.ones_like(xs)) * spec.supply_a0 / n
    return CorrectionSurface(ts=ts, xs=xs, v=v_star, dv_dx=_dv_dx_extract(v_star, grid.h),
                             which="holding")
