"""Input checks shared by the estimators and evaluator."""
from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError


def check_spec(spec):
    from .problem import ProblemSpec

    if not isinstance(spec, ProblemSpec):
        raise TypeError(f"expected a ProblemSpec, got {type(spec).__name__}")
    spec.validate()
    return spec


def check_densities(rho, n_elements: int | None = None, lower: float = 0.0) -> np.ndarray:
    """Flatten ``rho`` to a float vector and check length, finiteness and bounds."""
    rho = np.asarray(rho, dtype=float).ravel()
    if n_elements is not None and rho.size != n_elements:
        raise ValueError(f"expected {n_elements} densities, got {rho.size}")
    if not np.all(np.isfinite(rho)):
        raise ValueError("densities must be finite")
    if rho.size and (rho.min() < lower - 1e-12 or rho.max() > 1 + 1e-12):
        raise ValueError(f"densities must lie in [{lower}, 1]")
    return rho


def check_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
