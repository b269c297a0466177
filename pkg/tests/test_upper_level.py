import numpy as np
import pytest

from koopbilevel import (
    BoundaryVariant,
    ConfigError,
    MixedBoundaryConstraint,
    NonConvergenceError,
    UpperConfig,
    make_periodic_amplitude_anchor,
    make_walker_gait,
    solve_general,
    solve_reduced,
    sweep_period,
    upper_objective,
)
from koopbilevel.errors import LowerLevelError

TWO_PI = 2.0 * np.pi
A_30 = np.deg2rad(30.0)

# continuous-limit minimum-energy optimum computed from the controllability
# Gramian of the benchmark oscillator (independent oracle, frozen)
ORACLE_T_STAR = 1.00503788 * TWO_PI
ORACLE_COST = 0.03351846


@pytest.fixture(scope="module")
def osc_config():
    return UpperConfig(
        T_min=0.7 * TWO_PI, T_max=5.0 * TWO_PI, grid_size=24,
        simplex_maxfev=150, simplex_xatol=1e-6,
    )


@pytest.fixture(scope="module")
def osc_solution(oscillator_model, osc_config):
    mbc = make_periodic_amplitude_anchor(A_30)
    return solve_reduced(
        oscillator_model, BoundaryVariant("b0"), mbc, osc_config, 101, workers=4
    )


class TestUpperObjective:
    def test_equilibrium_costs_nothing(self, oscillator_model):
        z = np.zeros(2)
        for kind in ("b0", "bT"):
            c = upper_objective(oscillator_model, BoundaryVariant(kind), z, z,
                                TWO_PI, 50)
            assert c <= 1e-18

    def test_failure_maps_to_infinite_cost(self, oscillator_model):
        c = upper_objective(
            oscillator_model, BoundaryVariant("b0"), np.zeros(2), np.zeros(2),
            -1.0, 50,
        )
        assert np.isinf(c)


class TestSolveReduced:
    def test_finds_global_basin(self, osc_solution):
        assert osc_solution.T == pytest.approx(ORACLE_T_STAR, rel=2e-3)
        assert osc_solution.cost == pytest.approx(ORACLE_COST, rel=5e-3)
        assert osc_solution.constraint_violation <= 1e-12

    def test_records_expose_local_basins(self, osc_solution):
        # the next-best basin one period up costs about twice the optimum
        costs = sorted(
            r["c_star"] for r in osc_solution.start_records
            if np.isfinite(r["c_star"])
        )
        second = min(
            (c for c in costs if c > 1.5 * osc_solution.cost), default=None
        )
        assert second is not None
        assert second == pytest.approx(2 * 0.0306649, rel=2e-2)

    def test_multistart_dominance(self, osc_solution):
        seeds = [r["c_seed"] for r in osc_solution.start_records]
        assert osc_solution.cost <= min(seeds) + 1e-15

    def test_cost_reproducible_from_lower_level(self, osc_solution,
                                                oscillator_model):
        c = upper_objective(
            oscillator_model, BoundaryVariant("b0"), osc_solution.x0,
            osc_solution.xT, osc_solution.T, 101,
        )
        assert abs(c - osc_solution.cost) <= 1e-10

    def test_single_start_at_optimum_stays_put(self, oscillator_model):
        mbc = make_periodic_amplitude_anchor(A_30)
        cfg = UpperConfig(
            T_min=ORACLE_T_STAR, T_max=ORACLE_T_STAR + 1e-9, grid_size=1,
            simplex_maxfev=200, simplex_xatol=1e-8,
        )
        sol = solve_reduced(oscillator_model, BoundaryVariant("b0"), mbc, cfg, 101)
        assert abs(sol.T - ORACLE_T_STAR) <= 1e-4

    def test_deterministic(self, oscillator_model, osc_config, osc_solution):
        mbc = make_periodic_amplitude_anchor(A_30)
        again = solve_reduced(
            oscillator_model, BoundaryVariant("b0"), mbc, osc_config, 101,
            workers=2,
        )
        assert again.T == osc_solution.T
        assert again.cost == osc_solution.cost

    def test_requires_reduction(self, oscillator_model, osc_config):
        mbc = MixedBoundaryConstraint(
            eval=lambda x0, xT, T: xT - x0, n_g=2, n_x=2
        )
        with pytest.raises(ConfigError):
            solve_reduced(oscillator_model, BoundaryVariant("b0"), mbc,
                          osc_config, 20)


class TestSweep:
    def test_single_point_grid(self, oscillator_model):
        mbc = make_periodic_amplitude_anchor(A_30)
        rows = sweep_period(
            oscillator_model, BoundaryVariant("b0"), mbc, [TWO_PI], 101
        )
        assert len(rows) == 1
        assert rows[0]["c_star"] > 0
        assert rows[0]["kkt_residual"] <= 1e-9 * 10

    def test_failed_points_are_nan(self, oscillator_model):
        base = make_periodic_amplitude_anchor(A_30)

        def guarded_reduction(p):
            if p[0] > 10.0:
                raise LowerLevelError("outside the trusted horizon")
            return base.reduction(p)

        mbc = MixedBoundaryConstraint(
            eval=base.eval, n_g=4, n_x=2, reduction=guarded_reduction,
            p_dim=1, p_seed=base.p_seed, p_scale=base.p_scale,
        )
        rows = sweep_period(
            oscillator_model, BoundaryVariant("b0"), mbc, [6.0, 11.0], 60,
            workers=2,
        )
        assert np.isfinite(rows[0]["c_star"])
        assert np.isnan(rows[1]["c_star"])

    def test_parallel_matches_serial(self, oscillator_model):
        mbc = make_periodic_amplitude_anchor(A_30)
        grid = np.linspace(5.0, 8.0, 7)
        serial = sweep_period(oscillator_model, BoundaryVariant("b0"), mbc,
                              grid, 60, workers=1)
        parallel = sweep_period(oscillator_model, BoundaryVariant("b0"), mbc,
                                grid, 60, workers=4)
        assert [r["c_star"] for r in serial] == [r["c_star"] for r in parallel]

    def test_needs_one_dimensional_reduction(self, oscillator_model, walker):
        mbc = make_walker_gait(walker, 0.05)
        with pytest.raises(ConfigError):
            sweep_period(oscillator_model, BoundaryVariant("b0"), mbc,
                         [2.0], 20)


class TestSolveGeneral:
    def test_matches_reduced_on_oscillator(self, oscillator_model, osc_solution):
        mbc = make_periodic_amplitude_anchor(A_30)
        cfg = UpperConfig(
            T_min=0.7 * TWO_PI, T_max=5.0 * TWO_PI, grid_size=1,
            simplex_maxfev=800, simplex_xatol=1e-8, simplex_fatol=1e-14,
            al_rho0=10.0, al_gamma=10.0, al_max_outer=12,
        )
        v0 = np.array([A_30 + 0.2, -0.1, A_30 - 0.15, 0.1, 6.6])
        sol = solve_general(
            oscillator_model, BoundaryVariant("b0"), mbc, cfg, 101, v0
        )
        assert sol.constraint_violation <= 1e-6
        assert abs(sol.T - osc_solution.T) <= 1e-3
        assert sol.cost == pytest.approx(osc_solution.cost, rel=1e-2)

    def test_feasibility_history_min_never_increases(self, oscillator_model):
        mbc = make_periodic_amplitude_anchor(A_30)
        cfg = UpperConfig(
            T_min=0.7 * TWO_PI, T_max=5.0 * TWO_PI, grid_size=1,
            simplex_maxfev=300, simplex_xatol=1e-7,
        )
        v0 = np.array([A_30, 0.0, A_30, 0.0, 6.4])
        sol = solve_general(
            oscillator_model, BoundaryVariant("b0"), mbc, cfg, 60, v0
        )
        hist = np.array(sol.feasibility_history)
        running = np.minimum.accumulate(hist)
        assert np.all(np.diff(running) <= 0.0 + 1e-18)

    def test_infeasible_constraints_fail_loudly(self, oscillator_model):
        mbc = MixedBoundaryConstraint(
            eval=lambda x0, xT, T: np.array([x0[0] - 1.0, x0[0] - 2.0]),
            n_g=2, n_x=2,
        )
        cfg = UpperConfig(
            T_min=5.0, T_max=8.0, grid_size=1, simplex_maxfev=60,
            al_max_outer=3,
        )
        with pytest.raises(NonConvergenceError) as err:
            solve_general(
                oscillator_model, BoundaryVariant("b0"), mbc, cfg, 30,
                np.array([0.0, 0.0, 0.0, 0.0, 6.0]),
            )
        assert err.value.best is not None


class TestWalkerConstraint:
    def test_reduction_parametrizes_constraint_manifold(self, walker):
        mbc = make_walker_gait(walker, 0.05)
        rng = np.random.default_rng(17)
        for _ in range(25):
            p = np.array([
                rng.uniform(1.5, 3.0),
                rng.uniform(-0.3, 0.0),
                rng.uniform(-0.4, 0.0),
            ])
            x0, xT, T = mbc.reduction(p)
            assert np.linalg.norm(mbc.eval(x0, xT, T)) <= 1e-10

    def test_infeasible_step_geometry_rejected(self, walker):
        mbc = make_walker_gait(walker, 0.9)  # needs sin(alpha) > 1 at T ~ 3
        with pytest.raises(LowerLevelError):
            mbc.reduction(np.array([3.0, -0.1, -0.1]))

    def test_trust_region_bounds_expose_limits(self, walker):
        mbc = make_walker_gait(walker, 0.05, rate_bound=0.15)
        assert mbc.p_bounds is not None
        assert np.all(mbc.p_bounds[1:, 0] == -0.15)
