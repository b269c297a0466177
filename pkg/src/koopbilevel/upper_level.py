"""Upper level: search over boundary states and period time.

The upper problem minimizes the original running cost, evaluated by solving
the convex lower level, over (x0, xT, T) subject to the mixed boundary
constraints b(x0, xT, T) = 0. Two strategies are provided:

* ``solve_reduced`` - when the constraint set admits an explicit
  parametrization p -> (x0, xT, T) of its solution manifold, multistart over a
  period grid refined with a derivative-free simplex. This is the workhorse:
  the landscape over T has several local minima, one basin per added period.
* ``solve_general`` - augmented Lagrangian over the raw (x0, xT, T) variables
  with a simplex inner loop, for constraints without a usable reduction.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import (
    ConfigError,
    KoopbilevelError,
    LowerLevelError,
    NonConvergenceError,
    NoSolutionError,
)
from .lifting import unlift
from .lower_level import LowerLevelProblem, solve_lower
from .systems import step_length

__all__ = [
    "MixedBoundaryConstraint",
    "UpperConfig",
    "BilevelSolution",
    "upper_objective",
    "solve_reduced",
    "solve_general",
    "sweep_period",
    "make_periodic_amplitude_anchor",
    "make_walker_gait",
]


@dataclass(frozen=True)
class MixedBoundaryConstraint:
    """Implicit boundary coupling b(x0, xT, T) = 0, optionally with an
    explicit parametrization of its solution set."""

    eval: Callable
    n_g: int
    n_x: int
    name: str = "custom"
    reduction: Optional[Callable] = None
    p_dim: int = 0
    p_seed: Optional[Callable] = None
    p_scale: Optional[np.ndarray] = None
    # optional trust region for p: keeps surrogate queries inside the region
    # the generator model was identified on (rows of (lo, hi))
    p_bounds: Optional[np.ndarray] = None


@dataclass(frozen=True)
class UpperConfig:
    """Search hyperparameters for the upper level."""

    T_min: float
    T_max: float
    grid_size: int = 20
    simplex_maxfev: int = 300
    simplex_xatol: float = 1e-6
    simplex_fatol: float = 1e-12
    simplex_radius: float = 1.0
    al_rho0: float = 10.0
    al_gamma: float = 10.0
    al_max_outer: int = 12
    al_tol_constraint: float = 1e-6

    def __post_init__(self):
        if not 0 < self.T_min < self.T_max:
            raise ConfigError(
                f"need 0 < T_min < T_max, got [{self.T_min}, {self.T_max}]"
            )
        if self.grid_size < 1:
            raise ConfigError("multistart grid needs at least one point")


@dataclass(frozen=True)
class BilevelSolution:
    """Optimal boundaries and period with the recovered trajectories."""

    variant: object
    x0: np.ndarray
    xT: np.ndarray
    T: float
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    z_traj: np.ndarray
    cost: float
    constraint_violation: float
    eval_count: int
    start_records: tuple
    lower: object
    N: int
    wall_time: float = 0.0
    feasibility_history: tuple = field(default=())


def _lower_eval(model, variant, x0, xT, T, N):
    """One inner evaluation; failures surface as +inf with a diagnostic."""
    try:
        problem = LowerLevelProblem(
            model=model, variant=variant, x0=x0, xT=xT, T=T, N=N
        )
        sol = solve_lower(problem)
        return sol.c, sol, None
    except KoopbilevelError as exc:
        return np.inf, None, str(exc)


def upper_objective(model, variant, x0, xT, T, N):
    """Original cost of the lower-level optimum; +inf if the solve fails."""
    cost, _, _ = _lower_eval(model, variant, x0, xT, T, N)
    return cost


def _initial_simplex(p0, scale):
    dim = p0.size
    simplex = np.tile(p0, (dim + 1, 1))
    for i in range(dim):
        simplex[i + 1, i] += scale[i]
    return simplex


def _build_solution(model, variant, mbc, x0, xT, T, N, eval_count, records,
                    wall_time, feas_history=()):
    cost, lower, err = _lower_eval(model, variant, x0, xT, T, N)
    if lower is None:
        raise NoSolutionError(f"final lower-level solve failed: {err}")
    dictionary = model.dictionary
    b = np.atleast_1d(np.asarray(mbc.eval(x0, xT, T), dtype=float))
    return BilevelSolution(
        variant=variant,
        x0=np.asarray(x0, dtype=float),
        xT=np.asarray(xT, dtype=float),
        T=float(T),
        times=lower.times,
        states=unlift(dictionary, lower.z_traj),
        inputs=lower.u_traj,
        z_traj=lower.z_traj,
        cost=cost,
        constraint_violation=float(np.linalg.norm(b)),
        eval_count=eval_count,
        start_records=tuple(records),
        lower=lower,
        N=N,
        wall_time=wall_time,
        feasibility_history=tuple(feas_history),
    )


def solve_reduced(model, variant, mbc, config, N, workers=1):
    """Multistart + simplex over the explicit constraint parametrization.

    Starts are seeded on a uniform period grid; each start is refined with
    Nelder-Mead on p. The best refined point wins, with ties broken by lower
    period and then lexicographic initial state.
    """
    if mbc.reduction is None:
        raise ConfigError(f"constraint '{mbc.name}' provides no reduction")
    t_start = time.perf_counter()
    scale = np.asarray(
        mbc.p_scale if mbc.p_scale is not None else np.full(mbc.p_dim, 0.1),
        dtype=float,
    ) * config.simplex_radius

    def objective(p, counter):
        counter[0] += 1
        if mbc.p_bounds is not None and (
            np.any(p < mbc.p_bounds[:, 0]) or np.any(p > mbc.p_bounds[:, 1])
        ):
            return np.inf
        try:
            x0, xT, T = mbc.reduction(p)
        except KoopbilevelError:
            return np.inf
        return upper_objective(model, variant, x0, xT, T, N)

    def refine(T_seed):
        p0 = np.asarray(
            mbc.p_seed(T_seed) if mbc.p_seed is not None else [T_seed],
            dtype=float,
        )
        counter = [0]
        f = lambda p: objective(p, counter)
        c0 = f(p0)
        res = minimize(
            f,
            p0,
            method="Nelder-Mead",
            options={
                "initial_simplex": _initial_simplex(p0, scale),
                "xatol": config.simplex_xatol,
                "fatol": config.simplex_fatol,
                "maxfev": config.simplex_maxfev,
            },
        )
        p_best, c_best = (res.x, float(res.fun))
        if c0 < c_best:
            p_best, c_best = p0, c0
        return {
            "T_seed": float(T_seed),
            "c_seed": float(c0),
            "p_star": p_best.tolist(),
            "c_star": c_best,
            "nfev": counter[0],
        }

    grid = np.linspace(config.T_min, config.T_max, config.grid_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(refine, grid))
    else:
        records = [refine(T) for T in grid]

    finite = [r for r in records if np.isfinite(r["c_star"])]
    if not finite:
        raise NoSolutionError(
            f"all {len(records)} multistart branches failed for '{mbc.name}'"
        )

    def sort_key(rec):
        x0, xT, T = mbc.reduction(np.asarray(rec["p_star"]))
        return (rec["c_star"], T, tuple(np.asarray(x0).tolist()))

    best = min(finite, key=sort_key)
    x0, xT, T = mbc.reduction(np.asarray(best["p_star"]))
    eval_count = sum(r["nfev"] for r in records)
    return _build_solution(
        model, variant, mbc, x0, xT, T, N, eval_count, records,
        time.perf_counter() - t_start,
    )


def solve_general(model, variant, mbc, config, N, v0, workers=1):
    """Augmented Lagrangian over raw v = (x0, xT, T) with a simplex inner loop.

    Multipliers are updated after every inner solve; the penalty grows when
    the constraint norm stalls. Fails with the best iterate attached if the
    feasibility tolerance is not reached within the outer budget.
    """
    t_start = time.perf_counter()
    n_x = mbc.n_x
    v = np.asarray(v0, dtype=float).copy()
    if v.shape != (2 * n_x + 1,):
        raise ConfigError(
            f"initial guess must have dim {2 * n_x + 1}, got {v.shape}"
        )
    lam = np.zeros(mbc.n_g)
    rho = config.al_rho0
    eval_count = [0]

    def split(v):
        return v[:n_x], v[n_x : 2 * n_x], float(v[2 * n_x])

    def constraint(v):
        x0, xT, T = split(v)
        return np.atleast_1d(np.asarray(mbc.eval(x0, xT, T), dtype=float))

    def auglag(v):
        eval_count[0] += 1
        x0, xT, T = split(v)
        if T <= 0:
            return np.inf
        c = upper_objective(model, variant, x0, xT, T, N)
        if not np.isfinite(c):
            return np.inf
        b = constraint(v)
        return c + float(lam @ b) + 0.5 * rho * float(b @ b)

    scale = config.simplex_radius * 0.1 * (1.0 + np.abs(v))
    best = None
    feas_prev = np.inf
    feas_history = []
    cost_prev = np.inf
    for outer in range(config.al_max_outer):
        res = minimize(
            auglag,
            v,
            method="Nelder-Mead",
            options={
                "initial_simplex": _initial_simplex(v, scale),
                "xatol": config.simplex_xatol,
                "fatol": config.simplex_fatol,
                "maxfev": config.simplex_maxfev,
            },
        )
        v = res.x
        b = constraint(v)
        feas = float(np.linalg.norm(b))
        feas_history.append(feas)
        x0, xT, T = split(v)
        cost = upper_objective(model, variant, x0, xT, T, N)
        if best is None or (feas, cost) < best[0]:
            best = ((feas, cost), v.copy())
        if feas <= config.al_tol_constraint:
            converged_cost = abs(cost - cost_prev) <= max(1e-12, 1e-8 * abs(cost))
            if outer > 0 and converged_cost:
                break
            cost_prev = cost
        lam = lam + rho * b
        if feas > 0.25 * feas_prev:
            rho *= config.al_gamma
        feas_prev = feas
        scale = np.maximum(scale * 0.5, 10.0 * config.simplex_xatol)
    else:
        (feas, _), v_best = best
        if feas > config.al_tol_constraint:
            raise NonConvergenceError(
                f"augmented Lagrangian stalled at ||b||={feas:.3e} "
                f"(tol {config.al_tol_constraint:g})",
                best=v_best,
                history=feas_history,
            )
        v = v_best

    x0, xT, T = split(v)
    return _build_solution(
        model, variant, mbc, x0, xT, T, N, eval_count[0], [],
        time.perf_counter() - t_start, feas_history,
    )


def sweep_period(model, variant, mbc, T_grid, N, workers=1):
    """Evaluate the upper objective on a period grid (no refinement).

    Returns one row per grid point with the lower-level diagnostics; failed
    points carry NaNs so a sweep never dies on an isolated degenerate period.
    """
    if mbc.reduction is None or mbc.p_dim != 1:
        raise ConfigError("period sweeps need a one-dimensional reduction")

    def evaluate(T):
        try:
            x0, xT, T_red = mbc.reduction(np.asarray([T], dtype=float))
        except KoopbilevelError:
            return {"T": float(T), "c_star": np.nan,
                    "kkt_residual": np.nan, "manifold_defect_max": np.nan}
        cost, sol, _ = _lower_eval(model, variant, x0, xT, T_red, N)
        if sol is None:
            return {"T": float(T), "c_star": np.nan,
                    "kkt_residual": np.nan, "manifold_defect_max": np.nan}
        return {
            "T": float(T),
            "c_star": cost,
            "kkt_residual": max(sol.kkt.stationarity_residual,
                                sol.kkt.feasibility_residual),
            "manifold_defect_max": float(np.max(sol.manifold_defects)),
        }

    T_grid = np.asarray(T_grid, dtype=float)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, T_grid))
    else:
        rows = [evaluate(T) for T in T_grid]
    return rows


# ---------------------------------------------------------------------------
# constraint presets
# ---------------------------------------------------------------------------


def make_periodic_amplitude_anchor(amplitude):
    """Periodic orbit at a prescribed amplitude, anchored at zero velocity.

    Rows: x(T) - x(0) = 0 (periodicity), x1(0) = amplitude, x2(0) = 0. The
    constraints fix both boundaries explicitly, so the solution manifold is
    parametrized by the period alone.
    """
    a = float(amplitude)
    anchor = np.array([a, 0.0])

    def b(x0, xT, T):
        return np.concatenate([xT - x0, x0 - anchor])

    def reduction(p):
        T = float(np.asarray(p).ravel()[0])
        if T <= 0:
            raise LowerLevelError(f"period must be positive, got T={T:.3g}")
        return anchor.copy(), anchor.copy(), T

    return MixedBoundaryConstraint(
        eval=b,
        n_g=4,
        n_x=2,
        name=f"periodic_amplitude_anchor(a={a:g})",
        reduction=reduction,
        p_dim=1,
        p_seed=lambda T: np.array([T]),
        p_scale=np.array([0.25]),
    )


def make_walker_gait(system, v_avg, rate_bound=None, T_bounds=(0.5, 6.0)):
    """Symmetric single-step gait at a prescribed average forward speed.

    Rows: x(0) - flip(jump(x(T))) = 0 (periodicity across the impact and
    relabel), step_length(x(T))/T - v_avg = 0 (operating speed), and
    th_st(T) + th_sw(T) = 0 (anchor: symmetric touchdown configuration).
    The reduction parametrizes the manifold by p = (T, terminal leg rates):
    the touchdown angles follow from the speed constraint. ``rate_bound``
    restricts the searched terminal rates, typically to the box the surrogate
    was identified on, so the search cannot wander into extrapolation.
    """
    if system.hybrid is None:
        raise ConfigError("walker gait constraint needs a hybrid system")
    extras = system.hybrid
    ell = system.params["leg_length"]
    v_avg = float(v_avg)
    p_bounds = None
    if rate_bound is not None:
        rb = float(rate_bound)
        p_bounds = np.array([list(T_bounds), [-rb, rb], [-rb, rb]])

    def reset(xT):
        return extras.flip_map(extras.jump_map(xT))

    def b(x0, xT, T):
        return np.concatenate([
            x0 - reset(xT),
            [step_length(system, xT) / T - v_avg],
            [xT[0] + xT[1]],
        ])

    def reduction(p):
        p = np.asarray(p, dtype=float).ravel()
        T = float(p[0])
        if T <= 0:
            raise LowerLevelError(f"period must be positive, got T={T:.3g}")
        arg = v_avg * T / (2.0 * ell)
        if not -1.0 < arg < 1.0:
            raise LowerLevelError(
                f"step geometry infeasible: v_avg*T/(2l) = {arg:.3g}"
            )
        alpha = float(np.arcsin(arg))
        xT = np.array([-alpha, alpha, p[1], p[2]])
        return reset(xT), xT, T

    def p_seed(T):
        arg = np.clip(v_avg * T / (2.0 * ell), -0.99, 0.99)
        alpha = float(np.arcsin(arg))
        rate = -2.0 * alpha / max(T, 1e-6)  # mean stance sweep rate
        return np.array([T, 2.0 * rate, 2.5 * rate])

    return MixedBoundaryConstraint(
        eval=b,
        n_g=6,
        n_x=4,
        name=f"walker_gait(v_avg={v_avg:g})",
        reduction=reduction,
        p_dim=3,
        p_seed=p_seed,
        p_scale=np.array([0.15, 0.05, 0.05]),
        p_bounds=p_bounds,
    )
