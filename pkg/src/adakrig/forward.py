"""Forward models, the Bastos test function and synthetic datasets."""

from __future__ import annotations

import csv
import subprocess
import tempfile
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .doe import Domain
from .errors import ArgumentError, BudgetError, DegenerateDomainError
from .prior import PriorHyper, Theta, elicit_prior

__all__ = [
    "BastosModel",
    "BoundaryWarning",
    "BudgetedEvaluator",
    "CallableModel",
    "ForwardModel",
    "IdentityModel",
    "SubprocessModel",
    "SyntheticDataset",
    "ToyProblem",
    "bastos_h",
    "eval_forward_batch",
    "generate_synthetic_data",
    "sample_truncated_gaussian",
    "toy_problem",
]


class BoundaryWarning(UserWarning):
    pass


class ForwardModel(Protocol):
    input_dim: int
    output_dim: int
    cost_class: str

    def evaluate(self, points) -> np.ndarray:
        """Map (N, Q) inputs to (N, p) outputs."""
        ...


def bastos_h(x1, x2):
    """Two-input test function used for the toy inverse problem.

    At ``x2 = 0`` the exponential factor is replaced by its limit 1 and a
    :class:`BoundaryWarning` is issued.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    at_zero = x2 == 0
    if np.any(at_zero):
        warnings.warn("x2 = 0: using the limiting value of the exponential factor", BoundaryWarning, stacklevel=2)
    with np.errstate(divide="ignore"):
        damping = np.where(at_zero, 1.0, 1.0 - np.exp(-1.0 / (2.0 * np.where(at_zero, 1.0, x2))))
    num = 2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    den = 100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    out = damping * num / den
    return float(out) if out.ndim == 0 else out


class BastosModel:
    input_dim = 2
    output_dim = 1
    cost_class = "cheap"
    name = "bastos"

    def evaluate(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(bastos_h(P[:, 0], P[:, 1])).reshape(-1, 1)


class IdentityModel:
    """``H(x) = x``; handy for conjugate checks."""

    cost_class = "cheap"
    name = "identity"

    def __init__(self, dim: int):
        self.input_dim = self.output_dim = int(dim)

    def evaluate(self, points) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=float)).copy()


class CallableModel:
    def __init__(self, func: Callable, input_dim: int, output_dim: int, cost_class="cheap", name="callable"):
        self.func = func
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.cost_class = cost_class
        self.name = name

    def evaluate(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(self.func(P), dtype=float).reshape(P.shape[0], self.output_dim)


class SubprocessModel:
    """Forward model run by an external executable.

    The executable is called as ``<command...> INPUT_CSV OUTPUT_CSV``. The
    input CSV has a header ``z1,...,zQ`` and one row per point; the program
    must write an output CSV with a header row and one row of ``p`` values
    per input row, in the same order.
    """

    cost_class = "expensive"
    name = "subprocess"

    def __init__(self, command, input_dim: int, output_dim: int, timeout=None):
        self.command = [command] if isinstance(command, str) else list(command)
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.timeout = timeout

    def evaluate(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        with tempfile.TemporaryDirectory() as tmp:
            src, dst = Path(tmp, "input.csv"), Path(tmp, "output.csv")
            with src.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"z{k + 1}" for k in range(self.input_dim)])
                writer.writerows([[repr(float(v)) for v in row] for row in P])
            subprocess.run(
                self.command + [str(src), str(dst)], check=True, timeout=self.timeout
            )
            with dst.open(newline="") as fh:
                rows = list(csv.reader(fh))[1:]
        out = np.array([[float(v) for v in r] for r in rows], dtype=float)
        if out.shape != (P.shape[0], self.output_dim):
            raise ArgumentError(
                f"simulator returned shape {out.shape}, expected {(P.shape[0], self.output_dim)}"
            )
        return out


class BudgetedEvaluator:
    """Counts true-model runs and refuses to exceed a budget."""

    def __init__(self, model: ForwardModel, budget: int | None = None):
        self.model = model
        self.budget = budget
        self.count = 0
        self._lock = threading.Lock()

    def remaining(self):
        return None if self.budget is None else self.budget - self.count

    def __call__(self, points) -> np.ndarray:
        return eval_forward_batch(self, points)


def eval_forward_batch(evaluator: BudgetedEvaluator, points) -> np.ndarray:
    """Evaluate a batch, charging it against the evaluator's budget."""
    P = np.asarray(points, dtype=float).reshape(-1, evaluator.model.input_dim)
    with evaluator._lock:
        if evaluator.budget is not None and evaluator.count + P.shape[0] > evaluator.budget:
            raise BudgetError(
                f"{P.shape[0]} runs requested with {evaluator.count}/{evaluator.budget} used"
            )
        evaluator.count += P.shape[0]
    if P.shape[0] == 0:
        return np.zeros((0, evaluator.model.output_dim))
    return evaluator.model.evaluate(P)


def sample_truncated_gaussian(mean, cov, domain: Domain, size: int, rng, min_acceptance=1e-4):
    """Rejection sampling of ``N(mean, cov)`` restricted to ``domain``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = np.linalg.cholesky(np.atleast_2d(cov))
    out = np.empty((size, mean.size))
    filled, drawn = 0, 0
    batch = max(2 * size, 64)
    while filled < size:
        Z = mean + rng.standard_normal((batch, mean.size)) @ chol.T
        ok = Z[domain.contains(Z)]
        drawn += batch
        take = min(ok.shape[0], size - filled)
        out[filled : filled + take] = ok[:take]
        filled += take
        if filled < size and drawn >= 10.0 / min_acceptance and filled / drawn < min_acceptance:
            raise DegenerateDomainError(
                f"truncated Gaussian acceptance {filled / drawn:.2g} below {min_acceptance}"
            )
    return out


@dataclass
class SyntheticDataset:
    theta: Theta
    X: np.ndarray
    y: np.ndarray
    d: np.ndarray | None
    R: np.ndarray


def generate_synthetic_data(
    theta_true: Theta,
    n: int,
    R,
    x_domain: Domain,
    rng,
    model: ForwardModel,
    d_domain: Domain | None = None,
) -> SyntheticDataset:
    """Simulate ``y_i = H(X_i, d_i) + U_i`` with ``X_i`` truncated to the domain."""
    R = np.atleast_1d(np.asarray(R, dtype=float))
    if np.any(R < 0):
        raise ArgumentError("noise variances must be >= 0")
    X = sample_truncated_gaussian(theta_true.m, theta_true.C, x_domain, n, rng)
    if d_domain is not None:
        d = d_domain.lo + rng.random((n, d_domain.dim)) * d_domain.width
        Z = np.hstack([X, d])
    else:
        d, Z = None, X
    H = model.evaluate(Z)
    if R.size != H.shape[1]:
        raise ArgumentError(f"R has {R.size} entries for {H.shape[1]} outputs")
    y = H + rng.standard_normal(H.shape) * np.sqrt(R)
    return SyntheticDataset(theta_true, X, y, d, R)


@dataclass(frozen=True)
class ToyProblem:
    domain: Domain
    theta_true: Theta
    R: np.ndarray
    n: int
    prior: PriorHyper
    model: ForwardModel


def toy_problem() -> ToyProblem:
    """The two-input Bastos calibration problem with its reference settings."""
    theta = Theta([0.52, 0.59], np.diag([0.19**2, 0.25**2]))
    prior = elicit_prior([0.0, 0.0], np.diag([0.18**2, 0.4**2]), a=1.0)
    return ToyProblem(Domain.unit(2), theta, np.array([1e-5]), 30, prior, BastosModel())
