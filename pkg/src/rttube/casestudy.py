"""Benchmark double-integrator system: constrained second-order plant with
an additive infinity-norm-bounded disturbance."""

import numpy as np

from .geometry import HPolytope
from .synthesis import PlantModel


def case_study_model() -> PlantModel:
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    X = HPolytope([[0.0, 1.0]], [2.0])              # [0 1] x <= 2
    U = HPolytope([[1.0], [-1.0]], [1.0, 1.0])      # |u| <= 1
    W = HPolytope.box(0.1, 2)                       # ||w||_inf <= 0.1
    Q = np.eye(2)
    R = np.array([[0.1]])
    return PlantModel(A=A, B=B, X=X, U=U, W=W, Q=Q, R=R)


def default_config() -> dict:
    """CLI config document reproducing the benchmark scenario."""
    m = case_study_model()
    return {
        "A": m.A.tolist(),
        "B": m.B.tolist(),
        "Q": m.Q.tolist(),
        "R": m.R.tolist(),
        "X": m.X.to_json_dict(),
        "U": m.U.to_json_dict(),
        "W": m.W.to_json_dict(),
        "N": 20,
        "mbar": 5,
        "eps_rpi": 1e-4,
        "gamma_safety": 1.1,
    }


X0_BENCHMARK = np.array([-7.0, -2.0])
