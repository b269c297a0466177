"""Bilinear Koopman generator identification from sampled Lie-derivative data.

For each input channel the generator restricted to the dictionary span is fit
by least squares: ``L = dPsi @ pinv(Psi)`` where the columns of ``Psi`` are
lifted sample states and the columns of ``dPsi`` are their Lie derivatives
along the drift (index 0) or along the drift plus one canonical input channel
(index i). The identified matrices give the bilinear surrogate

    dz/dt = L0 z + sum_i u_i (Li - L0) z,

which is linearized about a lifted reference point to get LTI dynamics for
the convex lower level.
"""

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .lifting import ObservableDictionary
from .numerics import pinv_svd
from .systems import eval_rhs, simulate

__all__ = [
    "SampleSet",
    "GeneratorModel",
    "LiftedLTI",
    "sample_states",
    "assemble_data",
    "fit_generator",
    "identify",
    "linearize",
    "bilinear_rhs",
    "integrate_bilinear",
    "prediction_error",
    "save_model",
    "load_model",
    "model_to_config",
    "model_from_config",
]


@dataclass(frozen=True)
class SampleSet:
    """Uniform i.i.d. samples inside a box, reproducible from the seed."""

    states: np.ndarray
    seed: int
    box: np.ndarray


@dataclass(frozen=True)
class GeneratorModel:
    """Identified generator matrices plus fit provenance."""

    L0: np.ndarray
    Li: Tuple[np.ndarray, ...]
    dictionary: ObservableDictionary
    residuals: Tuple[float, ...]
    ranks: Tuple[int, ...]
    svd_tol: float
    seed: int
    n_s: int
    box: np.ndarray
    system_name: str

    @property
    def n_z(self):
        return self.L0.shape[0]

    @property
    def n_u(self):
        return len(self.Li)

    @property
    def rank_deficient(self):
        return any(r < self.n_z for r in self.ranks)


@dataclass(frozen=True)
class LiftedLTI:
    """LTI dynamics dz/dt = A z + B u from linearizing the bilinear model."""

    A: np.ndarray
    B: np.ndarray
    z_bar: np.ndarray


def sample_states(box, n_s, seed):
    """Draw n_s i.i.d. uniform samples in the box, deterministic in the seed."""
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ConfigError(f"sampling box must have shape (n_x, 2), got {box.shape}")
    if np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError("sampling box is degenerate (lower >= upper)")
    if n_s < 1:
        raise ConfigError(f"need at least one sample, got n_s={n_s}")
    rng = np.random.default_rng(seed)
    states = rng.uniform(box[:, 0], box[:, 1], size=(int(n_s), box.shape[0]))
    return SampleSet(states=states, seed=int(seed), box=box)


def _canonical_input(system, input_index):
    u = np.zeros(system.n_u)
    if input_index > 0:
        u[input_index - 1] = 1.0
    return u


def assemble_data(system, dictionary, samples, input_index):
    """Lift samples and compute their Lie derivatives for one input channel.

    ``input_index`` 0 uses u = 0; index i in 1..n_u uses the canonical basis
    input u = e_i. Returns (Psi, dPsi), both with one column per sample.
    """
    if not 0 <= input_index <= system.n_u:
        raise ConfigError(
            f"input_index must be in 0..{system.n_u}, got {input_index}"
        )
    X = samples.states
    u = _canonical_input(system, input_index)
    rhs = eval_rhs(system, X, u)
    Psi = dictionary.eval(X)
    dPsi = np.einsum("szx,sx->sz", dictionary.grad(X), rhs)
    bad = ~(np.all(np.isfinite(Psi), axis=1) & np.all(np.isfinite(dPsi), axis=1))
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise DataError(
            f"non-finite lift or Lie derivative at sample {idx}: x={X[idx]}"
        )
    return Psi.T, dPsi.T


@dataclass(frozen=True)
class FitResult:
    matrix: np.ndarray
    residual: float
    rank: int
    rank_deficient: bool


def fit_generator(Psi, dPsi, svd_tol=1e-10):
    """Least-squares generator fit ``L = dPsi @ pinv(Psi)``.

    The pseudo-inverse truncates singular values below ``svd_tol`` relative to
    the largest. A rank-deficient regression is not fatal: the fit proceeds on
    the retained subspace and the deficiency is recorded on the result.
    """
    Psi = np.asarray(Psi, dtype=float)
    dPsi = np.asarray(dPsi, dtype=float)
    n_z = Psi.shape[0]
    if Psi.shape[1] < n_z:
        rank_warn = True
    else:
        rank_warn = False
    pinv, rank = pinv_svd(Psi, rel_tol=svd_tol)
    L = dPsi @ pinv
    denom = np.linalg.norm(dPsi)
    residual = float(np.linalg.norm(L @ Psi - dPsi) / denom) if denom > 0 else 0.0
    return FitResult(
        matrix=L,
        residual=residual,
        rank=rank,
        rank_deficient=rank_warn or rank < n_z,
    )


def identify(system, dictionary, n_s, seed, svd_tol=1e-10, box=None):
    """Identify (L0, L1..Ln_u) from uniform samples of the state box."""
    if box is None:
        box = system.state_box
    samples = sample_states(box, n_s, seed)
    fits = []
    for i in range(system.n_u + 1):
        Psi, dPsi = assemble_data(system, dictionary, samples, i)
        fits.append(fit_generator(Psi, dPsi, svd_tol=svd_tol))
    return GeneratorModel(
        L0=fits[0].matrix,
        Li=tuple(f.matrix for f in fits[1:]),
        dictionary=dictionary,
        residuals=tuple(f.residual for f in fits),
        ranks=tuple(f.rank for f in fits),
        svd_tol=float(svd_tol),
        seed=int(seed),
        n_s=int(n_s),
        box=np.asarray(box, dtype=float),
        system_name=system.name,
    )


def linearize(model, z_bar):
    """LTI pair at a lifted reference: A = L0, B column i = (Li - L0) z_bar."""
    z_bar = np.asarray(z_bar, dtype=float)
    if z_bar.shape != (model.n_z,):
        raise ConfigError(
            f"linearization point has dim {z_bar.shape}, expected ({model.n_z},)"
        )
    B = np.column_stack([(Li - model.L0) @ z_bar for Li in model.Li])
    return LiftedLTI(A=model.L0.copy(), B=B, z_bar=z_bar.copy())


def bilinear_rhs(model, z, u):
    """dz/dt = L0 z + sum_i u_i (Li - L0) z."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    dz = model.L0 @ z
    for i, Li in enumerate(model.Li):
        if u[i] != 0.0:
            dz = dz + u[i] * ((Li - model.L0) @ z)
    return dz


def integrate_bilinear(model, z0, signal, substeps=16):
    """RK4 integration of the bilinear surrogate under a piecewise-constant u."""
    N = signal.N
    h = signal.T / N / substeps
    Z = np.empty((N + 1, model.n_z))
    Z[0] = z0
    z = np.asarray(z0, dtype=float)
    for k in range(N):
        u = signal.knots[k]
        for _ in range(substeps):
            k1 = bilinear_rhs(model, z, u)
            k2 = bilinear_rhs(model, z + 0.5 * h * k1, u)
            k3 = bilinear_rhs(model, z + 0.5 * h * k2, u)
            k4 = bilinear_rhs(model, z + h * k3, u)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Z[k + 1] = z
    return Z


def prediction_error(model, system, dictionary, x0, signal, substeps=16):
    """Per-state RMS gap between the bilinear surrogate and the true flow.

    Integrates the bilinear model (not its linearization) so identification
    error is measured separately from linearization error.
    """
    truth = simulate(system, x0, signal, substeps=substeps)
    Z = integrate_bilinear(model, dictionary.eval(x0), signal, substeps=substeps)
    err = Z[:, : system.n_x] - truth.states
    return np.sqrt(np.mean(err**2, axis=0))


def model_to_config(model):
    """JSON-ready representation; floats survive a round trip exactly."""
    return {
        "system_name": model.system_name,
        "dictionary": model.dictionary.to_config(),
        "L0": model.L0.tolist(),
        "Li": [Li.tolist() for Li in model.Li],
        "residuals": list(model.residuals),
        "ranks": list(model.ranks),
        "svd_tol": model.svd_tol,
        "seed": model.seed,
        "n_s": model.n_s,
        "box": model.box.tolist(),
    }


def model_from_config(cfg):
    return GeneratorModel(
        L0=np.asarray(cfg["L0"], dtype=float),
        Li=tuple(np.asarray(Li, dtype=float) for Li in cfg["Li"]),
        dictionary=ObservableDictionary.from_config(cfg["dictionary"]),
        residuals=tuple(float(r) for r in cfg["residuals"]),
        ranks=tuple(int(r) for r in cfg["ranks"]),
        svd_tol=float(cfg["svd_tol"]),
        seed=int(cfg["seed"]),
        n_s=int(cfg["n_s"]),
        box=np.asarray(cfg["box"], dtype=float),
        system_name=str(cfg["system_name"]),
    )


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_config(model), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_config(json.load(fh))
