"""Result persistence: deterministic CSV/JSON artifacts and comparison reports.

Trajectories go to CSV (header ``t,x1..xn,u1..um``), everything else to JSON
with sorted keys. All floats are written with shortest round-trip ``repr`` so
identical runs produce byte-identical files and every reported number can be
recomputed exactly from what is on disk.
"""

import hashlib
import json
import os

import numpy as np

from .errors import ConfigError
from .numerics import mean_pearson, resample_common_grid

__all__ = [
    "write_json",
    "read_json",
    "sha256_file",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "comparison_entry",
]


def _fmt(x):
    return repr(float(x))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def write_trajectory_csv(path, times, states, inputs):
    """Write a sampled trajectory with its piecewise-constant inputs.

    States have N+1 rows and inputs N; the final input row repeats the last
    knot (step-plot convention), which cost recomputation must ignore.
    """
    times = np.asarray(times, dtype=float)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    n_pts, n_x = states.shape
    if inputs.shape[0] != n_pts - 1:
        raise ConfigError(
            f"expected {n_pts - 1} input rows for {n_pts} states, got {inputs.shape[0]}"
        )
    u_full = np.vstack([inputs, inputs[-1:]])
    header = ["t"] + [f"x{i + 1}" for i in range(n_x)] + [
        f"u{i + 1}" for i in range(inputs.shape[1])
    ]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(n_pts):
            row = [times[k], *states[k], *u_full[k]]
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`, trimming the repeated input row."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.array(
            [[float(tok) for tok in line.strip().split(",")] for line in fh]
        )
    n_x = sum(1 for name in header if name.startswith("x"))
    n_u = sum(1 for name in header if name.startswith("u"))
    times = data[:, 0]
    states = data[:, 1 : 1 + n_x]
    inputs = data[:-1, 1 + n_x : 1 + n_x + n_u]
    return times, states, inputs


def trajectory_pcc(times_a, values_a, times_b, values_b, n_points=101):
    """Mean Pearson correlation of two signals on a shared normalized grid."""
    ga, gb = resample_common_grid(
        (times_a, values_a), (times_b, values_b), n=n_points
    )
    return mean_pearson(ga, gb)


def comparison_entry(bilevel, baseline, n_points=101):
    """Per-variant comparison block between a bilevel and a baseline solution."""
    pcc_state = trajectory_pcc(
        bilevel.times, bilevel.states, baseline.times, baseline.states, n_points
    )
    # inputs are knot-valued; compare them on the knot grid
    tu_a = bilevel.times[:-1]
    tu_b = baseline.times[:-1]
    ga, gb = resample_common_grid(
        (tu_a - tu_a[0], bilevel.inputs), (tu_b - tu_b[0], baseline.inputs),
        n=n_points,
    )
    pcc_input = mean_pearson(ga, gb)
    return {
        "variant": bilevel.variant.label,
        "T_star": bilevel.T,
        "T_star_baseline": baseline.T,
        "pcc_state": pcc_state,
        "pcc_input": pcc_input,
        "c": bilevel.cost,
        "c_baseline": baseline.cost,
        "c_hat_lower": bilevel.lower.c_hat,
        "mbc_violation": bilevel.constraint_violation,
        "baseline_converged": bool(baseline.converged),
        "baseline_max_defect": baseline.max_defect,
        "baseline_max_mbc_violation": baseline.max_mbc_violation,
    }
