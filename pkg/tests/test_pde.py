"""Finite-difference solver: exact limits, oracle comparisons, invariants."""

import numpy as np
import pytest

from illiquid_eq.kernel import CostKernel, log_deriv
from illiquid_eq.model import AgentBelief, BeliefSet, MarketSpec, constant_beliefs
from illiquid_eq.ou import OuModel, ou_beliefs, solve_ab
from illiquid_eq.pde import (CouplingIterationError, DegenerateVolatilityError,
                             Grid1D, cache_load, default_grid, solve_equilibrium,
                             solve_frictionless, solve_risk_neutral,
                             spec_fingerprint)
from illiquid_eq.simulate import feynman_kac_vi, simulate

from conftest import interior_mask


def _const_spec(drifts, vols, allocations, a0, payoff, gamma=1e-3, lam=1e-2, T=1.0):
    beliefs = constant_beliefs(drifts, vols)
    spec = MarketSpec(kernel=CostKernel(gamma, lam, T), supply_a0=a0,
                      allocations=allocations, payoff=payoff)
    return spec, beliefs


class TestGrid:
    def test_validation(self):
        with pytest.raises(ValueError):
            Grid1D(1.0, 0.0, 11, 11)
        with pytest.raises(ValueError):
            Grid1D(0.0, 1.0, 2, 11)
        with pytest.raises(ValueError):
            Grid1D(0.0, 1.0, 11, 1)

    def test_default_grid_width(self, fx_beliefs):
        g = default_grid(fx_beliefs)
        sd = 0.128 / np.sqrt(2 * 0.575)
        assert g.x_min == pytest.approx(1.25 - 6 * sd)
        assert g.x_max == pytest.approx(1.25 + 6 * sd)

    def test_default_grid_needs_ou(self):
        with pytest.raises(ValueError):
            default_grid(constant_beliefs([0.0], [1.0]))


class TestSolveEquilibrium:
    def test_terminal_condition(self, fx_spec, fx_beliefs, small_grid):
        sol = solve_equilibrium(fx_spec, fx_beliefs, small_grid)
        assert np.allclose(sol.v[-1], small_grid.xs, atol=1e-14)
        assert np.allclose(sol.vi[:, -1], small_grid.xs, atol=1e-14)

    def test_aggregate_identity_zero_supply(self, fx_spec, fx_beliefs, small_grid):
        sol = solve_equilibrium(fx_spec, fx_beliefs, small_grid)
        gap = sol.v - sol.vi.mean(axis=0)
        assert np.max(np.abs(gap)) <= 1e-12

    def test_aggregate_identity_positive_supply(self, fx_beliefs, small_grid):
        kern = CostKernel(1e-8, 1e-7, 3.0)
        spec = MarketSpec(kernel=kern, supply_a0=2.0, allocations=(1.5, 0.5),
                          payoff=lambda x: np.asarray(x, dtype=float) + 0.0)
        sol = solve_equilibrium(spec, fx_beliefs, small_grid)
        c = log_deriv(kern, sol.ts)
        expect = sol.vi.mean(axis=0) + kern.lam / 2 * c[:, None] * 2.0
        assert np.max(np.abs(sol.v - expect)) <= 1e-12

    def test_matches_ode_oracle(self, fx_spec, fx_beliefs, fx_model, fx_kernel, fx_grid):
        sol = solve_equilibrium(fx_spec, fx_beliefs, fx_grid)
        ab = solve_ab(fx_model, fx_kernel, n_steps=6000)
        box = interior_mask(sol.xs)
        oracle = np.array([[ab.value(t, x) for x in sol.xs[box]] for t in sol.ts])
        assert np.max(np.abs(sol.v[:, box] - oracle)) <= 1e-4
        oracle_i = np.array([[ab.agent_value(0, t, x) for x in sol.xs[box]] for t in sol.ts])
        assert np.max(np.abs(sol.vi[0][:, box] - oracle_i)) <= 1e-4

    def test_homogeneous_beliefs_match_simulated_expectation(self):
        # identical agents: price is the common expectation less the supply drag
        payoff = lambda x: np.tanh(np.asarray(x, dtype=float))
        spec, beliefs = _const_spec([0.05, 0.05], [0.25, 0.25], (0.6, 0.4), 1.0,
                                    payoff, gamma=1e-3, lam=5e-3, T=1.0)
        grid = Grid1D(-2.5, 3.5, 241, 201)
        sol = solve_equilibrium(spec, beliefs, grid)
        batch = simulate(beliefs, 0, 0.4, 0.0, 1.0, 64, 40000, seed=9)
        fT = payoff(batch.paths[:, -1])
        est = fT.mean() - 1e-3 * 1.0 * 1.0 / 2
        se = fT.std(ddof=1) / np.sqrt(batch.npaths)
        assert abs(sol.value(0.0, 0.4) - est) <= 3 * se

    def test_zero_supply_scale_invariance(self, fx_spec, fx_beliefs, small_grid):
        base = solve_equilibrium(fx_spec, fx_beliefs, small_grid)
        for c in (10.0, 0.1):
            scaled_spec = MarketSpec(kernel=fx_spec.kernel.scaled(c), supply_a0=0.0,
                                     allocations=fx_spec.allocations,
                                     payoff=fx_spec.payoff)
            scaled = solve_equilibrium(scaled_spec, fx_beliefs, small_grid)
            assert np.max(np.abs(base.v - scaled.v)) <= 1e-10

    def test_supply_homogeneity(self, fx_beliefs, small_grid):
        payoff = lambda x: np.asarray(x, dtype=float) + 0.0
        a0 = 2.0
        base_spec = MarketSpec(kernel=CostKernel(1e-8, 1e-7, 3.0), supply_a0=a0,
                               allocations=(1.5, 0.5), payoff=payoff)
        base = solve_equilibrium(base_spec, fx_beliefs, small_grid)
        for c in (10.0, 0.1):
            spec_c = MarketSpec(kernel=base_spec.kernel.scaled(c), supply_a0=a0 / c,
                                allocations=(1.5 / c, 0.5 / c), payoff=payoff)
            scaled = solve_equilibrium(spec_c, fx_beliefs, small_grid)
            assert np.max(np.abs(base.v - scaled.v)) <= 1e-10

    def test_requires_both_costs(self, fx_beliefs, small_grid):
        payoff = lambda x: np.asarray(x, dtype=float) + 0.0
        spec = MarketSpec(kernel=CostKernel(0.0, 1e-7, 3.0), supply_a0=0.0,
                          allocations=(1.0, -1.0), payoff=payoff)
        with pytest.raises(ValueError):
            solve_equilibrium(spec, fx_beliefs, small_grid)

    def test_degenerate_vol_detected(self, small_grid):
        beliefs = BeliefSet(
            agents=constant_beliefs([0.0, 0.0], [0.3, 0.3]).agents[:1] + (
                AgentBelief(
                    drift=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                    vol=lambda t, x: np.zeros_like(np.asarray(x, dtype=float))),),
            parabolicity_floor=1e-4)
        spec = MarketSpec(kernel=CostKernel(1e-3, 1e-3, 3.0), supply_a0=0.0,
                          allocations=(1.0, -1.0),
                          payoff=lambda x: np.asarray(x, dtype=float) + 0.0)
        with pytest.raises(DegenerateVolatilityError):
            solve_equilibrium(spec, beliefs, small_grid)

    def test_picard_cap_raises_with_history(self, fx_spec, fx_beliefs, small_grid):
        with pytest.raises(CouplingIterationError) as err:
            solve_equilibrium(fx_spec, fx_beliefs, small_grid, picard_max=1)
        assert hasattr(err.value, "residuals")

    def test_grid_refinement_order(self, fx_kernel):
        # smooth non-affine payoff so the spatial error is visible
        m = OuModel(kappas=(0.8625, 0.2875), mean_X=1.25, sigma=0.128, horizon_T=3.0)
        beliefs = ou_beliefs(m)
        payoff = lambda x: np.exp(-8.0 * (np.asarray(x, dtype=float) - 1.25) ** 2)
        spec = MarketSpec(kernel=fx_kernel, supply_a0=0.0, allocations=(1.0, -1.0),
                          payoff=payoff)
        sd = 0.128 / np.sqrt(2 * 0.575)
        vals = []
        for f in (1, 2, 4):
            g = Grid1D(1.25 - 6 * sd, 1.25 + 6 * sd, 40 * f + 1, 40 * f + 1)
            sol = solve_equilibrium(spec, beliefs, g)
            vals.append(sol.value(0.0, 1.25))
        e1 = abs(vals[0] - vals[1])
        e2 = abs(vals[1] - vals[2])
        order = np.log2(e1 / e2)
        assert order >= 1.8

    def test_agent_drift_matches_affine_oracle(self, fx_spec, fx_beliefs, fx_model,
                                               fx_kernel, fx_grid):
        sol = solve_equilibrium(fx_spec, fx_beliefs, fx_grid)
        ab = solve_ab(fx_model, fx_kernel, n_steps=3000)
        for (t, x) in ((0.9, 1.2), (1.7, 1.35)):
            exact = ab.agent_drift(0, t, x)
            got = sol.agent_drift(0, t, x)
            assert got == pytest.approx(exact, abs=5e-4)


class TestSolveFrictionless:
    def test_constant_payoff_zero_supply(self):
        spec, beliefs = _const_spec([0.1, -0.1], [0.3, 0.4], (1.0, -1.0), 0.0,
                                    lambda x: np.full_like(np.asarray(x, float), 2.0))
        sol = solve_frictionless(spec, beliefs, Grid1D(-2.0, 2.0, 61, 41))
        assert np.max(np.abs(sol.v - 2.0)) <= 1e-12

    def test_constant_payoff_positive_supply(self):
        spec, beliefs = _const_spec([0.1, -0.1], [0.3, 0.4], (0.5, 0.5), 1.0,
                                    lambda x: np.full_like(np.asarray(x, float), 2.0),
                                    gamma=1e-2, T=1.0)
        sol = solve_frictionless(spec, beliefs, Grid1D(-2.0, 2.0, 61, 41))
        expect = 2.0 - 1e-2 * 1.0 * (1.0 - sol.ts) / 2
        assert np.max(np.abs(sol.v - expect[:, None])) <= 1e-12

    def test_calibrated_point(self, fx_spec, fx_beliefs, fx_grid, fx_model):
        sol = solve_frictionless(fx_spec, fx_beliefs, fx_grid)
        assert sol.value(0.0, 1.0) == pytest.approx(1.2054567370567755, abs=2e-5)


class TestSolveRiskNeutral:
    def test_constant_payoff(self):
        spec, beliefs = _const_spec([0.1, -0.1], [0.3, 0.4], (1.0, -1.0), 0.0,
                                    lambda x: np.full_like(np.asarray(x, float), 1.5))
        agg, per = solve_risk_neutral(spec, beliefs, Grid1D(-2.0, 2.0, 61, 41))
        assert np.max(np.abs(agg.v - 1.5)) <= 1e-12
        for surf in per:
            assert np.max(np.abs(surf.v - 1.5)) <= 1e-12

    def test_single_agent_is_expectation(self):
        payoff = lambda x: np.tanh(np.asarray(x, dtype=float))
        spec, beliefs = _const_spec([0.08], [0.3], (1.0,), 1.0, payoff, T=1.0)
        agg, per = solve_risk_neutral(spec, beliefs, Grid1D(-3.0, 3.5, 301, 101))
        batch = simulate(beliefs, 0, 0.2, 0.0, 1.0, 64, 40000, seed=21)
        fT = payoff(batch.paths[:, -1])
        se = fT.std(ddof=1) / np.sqrt(batch.npaths)
        assert abs(agg.value(0.0, 0.2) - fT.mean()) <= 3 * se

    def test_calibrated_point(self, fx_spec, fx_beliefs, fx_grid, fx_model):
        agg, per = solve_risk_neutral(fx_spec, fx_beliefs, fx_grid)
        assert agg.value(0.0, 1.0) == pytest.approx(1.1878358345986477, abs=2e-5)
        assert per[0].value(0.0, 1.0) == pytest.approx(
            1.25 - 0.25 * np.exp(-2.5875), abs=2e-5)


class TestFeynmanKacCrossCheck:
    def test_agent_value_within_mc_error(self):
        payoff = lambda x: np.tanh(np.asarray(x, dtype=float))
        spec, beliefs = _const_spec([0.12, -0.04], [0.25, 0.35], (1.0, -1.0), 0.0,
                                    payoff, gamma=2e-3, lam=4e-3, T=1.0)
        grid = Grid1D(-3.0, 3.5, 261, 161)
        sol = solve_equilibrium(spec, beliefs, grid)
        for i in range(2):
            est, se = feynman_kac_vi(beliefs, i, sol, spec.kernel, 0.0, 0.3,
                                     npaths=20000, seed=31 + i, nt=160)
            assert abs(est - sol.agent_value(i, 0.0, 0.3)) <= 3 * se


class TestExportAndCache:
    def test_csv_shape(self, fx_spec, fx_beliefs, tmp_path):
        g = Grid1D(1.0, 1.5, 5, 4)
        sol = solve_equilibrium(fx_spec, fx_beliefs, g)
        out = tmp_path / "eq.csv"
        sol.to_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "t,x,v,v1,v2,dv_dx"
        assert len(lines) == 1 + 4 * 5

    def test_cache_roundtrip(self, fx_spec, fx_beliefs, tmp_path):
        g = Grid1D(1.0, 1.5, 7, 5)
        sol = solve_equilibrium(fx_spec, fx_beliefs, g)
        path = sol.cache_save(tmp_path)
        back = cache_load(path)
        assert np.array_equal(back.v, sol.v)
        assert np.array_equal(back.vi, sol.vi)
        assert back.metadata["fingerprint"] == sol.metadata["fingerprint"]

    def test_fingerprint_sensitivity(self, fx_spec, fx_beliefs):
        g = Grid1D(1.0, 1.5, 7, 5)
        base = spec_fingerprint(fx_spec, fx_beliefs, g)
        other_spec = MarketSpec(kernel=fx_spec.kernel.scaled(2.0), supply_a0=0.0,
                                allocations=fx_spec.allocations, payoff=fx_spec.payoff)
        assert spec_fingerprint(other_spec, fx_beliefs, g) != base
