"""Dense numerical kernels.

Matrix exponential, exact zero-order-hold discretization, truncated-SVD
pseudo-inverse, equality-constrained QP solves via the KKT saddle system,
Pearson correlation, and common-grid trajectory resampling.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CorrelationError, DegenerateQpError, NumericError

__all__ = [
    "ZohPair",
    "KktResult",
    "expm",
    "zoh_discretize",
    "pinv_svd",
    "solve_kkt",
    "pearson",
    "resample_common_grid",
]


@dataclass(frozen=True)
class ZohPair:
    """Exact discretization of ``dz/dt = A z + B u`` under piecewise-constant u."""

    Ad: np.ndarray
    Bd: np.ndarray
    h: float


@dataclass(frozen=True)
class KktResult:
    """Solution of an equality-constrained QP with post-hoc residuals."""

    primal: np.ndarray
    dual: np.ndarray
    stationarity_residual: float
    feasibility_residual: float
    reg: float


def expm(M):
    """Matrix exponential via scaling-and-squaring with Pade approximants.

    Delegates to ``scipy.linalg.expm`` (degree-13 diagonal Pade with the
    standard norm thresholds), after validating the input.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericError(f"expm expects a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("expm received non-finite entries")
    return scipy.linalg.expm(M)


def zoh_discretize(A, B, h):
    """Exact zero-order-hold discretization of an LTI pair.

    Uses the augmented-matrix identity ``expm(h*[[A, B], [0, 0]])`` whose top
    blocks are ``(Ad, Bd)`` with ``Ad = exp(A h)`` and
    ``Bd = (int_0^h exp(A s) ds) B``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if h <= 0:
        raise NumericError(f"ZOH step must be positive, got h={h}")
    n = A.shape[0]
    m = B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(aug * h)
    return ZohPair(Ad=E[:n, :n], Bd=E[:n, n:], h=float(h))


def pinv_svd(M, rel_tol=1e-12):
    """Moore-Penrose pseudo-inverse with relative singular-value truncation.

    Singular values below ``rel_tol * sigma_max`` are dropped.

    Returns
    -------
    pinv : ndarray
        Pseudo-inverse of ``M`` on the retained subspace.
    rank : int
        Number of retained singular values.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NumericError("pinv_svd received non-finite entries")
    if M.size == 0:
        return M.T.copy(), 0
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cutoff = rel_tol * (s[0] if s.size else 0.0)
    keep = s > cutoff
    rank = int(np.count_nonzero(keep))
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T, rank


def default_kkt_regularization(H):
    """Tikhonov term 1e-9 * trace(H)/dim; keeps PSD-singular Hessians factorable."""
    n = H.shape[0]
    if n == 0:
        return 0.0
    return 1e-9 * float(np.trace(H)) / n


def solve_kkt(H, g, Aeq=None, beq=None, reg=None):
    """Solve ``min 1/2 v'Hv + g'v  s.t.  Aeq v = beq`` by direct factorization.

    The saddle system ``[[H + reg*I, Aeq'], [Aeq, 0]]`` is factorized with
    pivoted LU. Stationarity and feasibility residuals are recomputed from the
    returned primal/dual pair and must fall below ``1e-9 * scale``; otherwise
    the system is reported as degenerate.

    Parameters
    ----------
    H : (n, n) ndarray
        Symmetric positive semidefinite Hessian.
    g : (n,) ndarray
        Linear cost term.
    Aeq : (m, n) ndarray, optional
        Equality constraint matrix; omit for an unconstrained quadratic.
    beq : (m,) ndarray, optional
        Equality right-hand side.
    reg : float, optional
        Tikhonov regularization added to H. Defaults to 1e-9*trace(H)/n.

    Raises
    ------
    DegenerateQpError
        If the factorization is singular or residuals stay above tolerance.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = H.shape[0]
    if H.shape != (n, n) or g.shape != (n,):
        raise NumericError(f"inconsistent QP dimensions: H {H.shape}, g {g.shape}")
    sym_err = float(np.max(np.abs(H - H.T))) if n else 0.0
    if sym_err > 1e-12 * max(1.0, float(np.max(np.abs(H))) if n else 1.0):
        raise NumericError(f"H is not symmetric (max asymmetry {sym_err:.3e})")
    if Aeq is None:
        Aeq = np.zeros((0, n))
        beq = np.zeros(0)
    Aeq = np.asarray(Aeq, dtype=float)
    beq = np.asarray(beq, dtype=float)
    m = Aeq.shape[0]
    if Aeq.shape != (m, n) or beq.shape != (m,):
        raise NumericError(
            f"inconsistent constraint dimensions: Aeq {Aeq.shape}, beq {beq.shape}"
        )
    if reg is None:
        reg = default_kkt_regularization(H)

    Hr = H + reg * np.eye(n)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = Hr
    kkt[:n, n:] = Aeq.T
    kkt[n:, :n] = Aeq
    rhs = np.concatenate([-g, beq])

    lu, piv = scipy.linalg.lu_factor(kkt, check_finite=False)
    diag = np.abs(np.diag(lu))
    min_pivot = float(diag.min()) if diag.size else np.inf
    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    v, lam = sol[:n], sol[n:]

    stat = Hr @ v + g + Aeq.T @ lam
    feas = Aeq @ v - beq
    scale_stat = 1.0 + float(np.linalg.norm(g)) + float(np.linalg.norm(Hr @ v))
    scale_feas = 1.0 + float(np.linalg.norm(beq))
    stat_res = float(np.linalg.norm(stat))
    feas_res = float(np.linalg.norm(feas))
    if (
        not np.all(np.isfinite(sol))
        or stat_res > 1e-9 * scale_stat
        or feas_res > 1e-9 * scale_feas
    ):
        raise DegenerateQpError(
            "KKT system is singular or inconsistent after regularization "
            f"(stationarity {stat_res:.3e}, feasibility {feas_res:.3e}, "
            f"smallest pivot {min_pivot:.3e})",
            min_pivot=min_pivot,
        )
    return KktResult(
        primal=v,
        dual=lam,
        stationarity_residual=stat_res,
        feasibility_residual=feas_res,
        reg=float(reg),
    )


def pearson(a, b):
    """Pearson correlation coefficient of two equally long series."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size or a.size < 2:
        raise NumericError(
            f"pearson needs two equal-length series of length >= 2, "
            f"got {a.size} and {b.size}"
        )
    da = a - a.mean()
    db = b - b.mean()
    na = float(np.linalg.norm(da))
    nb = float(np.linalg.norm(db))
    if na == 0.0 or nb == 0.0:
        raise CorrelationError("correlation undefined for zero-variance series")
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def resample_common_grid(traj_a, traj_b, n=101):
    """Resample two trajectories onto a shared normalized-time grid.

    Each trajectory is an object with ``times`` (k+1,) and ``states``
    (k+1, n_x) attributes (or a plain ``(times, states)`` pair). Time is
    normalized to tau in [0, 1] so trajectories with different periods can be
    compared; states are linearly interpolated onto ``n`` grid points.

    Returns the pair of (n, n_x) arrays.
    """
    out = []
    for traj in (traj_a, traj_b):
        times, states = (
            (traj.times, traj.states) if hasattr(traj, "times") else traj
        )
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        span = times[-1] - times[0]
        if span <= 0:
            raise NumericError("cannot normalize a trajectory with zero duration")
        tau = (times - times[0]) / span
        grid = np.linspace(0.0, 1.0, n)
        out.append(
            np.column_stack([np.interp(grid, tau, states[:, j])
                             for j in range(states.shape[1])])
        )
    return out[0], out[1]


def mean_pearson(series_a, series_b):
    """Mean Pearson correlation over the columns of two (n, d) arrays.

    The aggregation over state dimensions is an unweighted mean; a single
    scalar is reported per signal group.
    """
    series_a = np.atleast_2d(np.asarray(series_a, dtype=float))
    series_b = np.atleast_2d(np.asarray(series_b, dtype=float))
    vals = [pearson(series_a[:, j], series_b[:, j])
            for j in range(series_a.shape[1])]
    return float(np.mean(vals))
