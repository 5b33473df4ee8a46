"""Kriging metamodels.

Universal kriging with a stationary kernel, plug-in maximum-likelihood
hyperparameters and a GLS trend estimate.  Inputs are rescaled to the unit
hypercube of the domain bounds before the kernel sees them, and outputs are
centred/scaled by their training moments when fitted by :func:`fit_kriging`.

Every solve goes through the Cholesky factor of the training covariance;
nothing is inverted explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist, pdist

from .errors import (
    ArgumentError,
    DegenerateDesignError,
    FitError,
    NumericalError,
    SingularTrendError,
    UndefinedQ2Error,
)

__all__ = [
    "Kernel",
    "KrigingModel",
    "Prediction",
    "conditional_sample",
    "fit_kriging",
    "gls_beta",
    "kernel_eval",
    "kriging_cov",
    "loo_predictions",
    "predict",
    "q2_from_predictions",
    "q2_loocv",
    "trend_matrix",
    "virtual_update",
]

KERNEL_FAMILIES = ("sqexp", "matern52")
TRENDS = ("none", "constant", "linear")

# distance (unit-scaled) below which two design points are coincident
COINCIDENCE_TOL = 1e-9
MAX_NUGGET_REL = 1e-4
DEFAULT_NUGGET_REL = 1e-8


@dataclass(frozen=True)
class Kernel:
    """Stationary covariance ``variance * corr(z - w) + nugget * [z == w]``.

    Parameters
    ----------
    variance : float
        Process variance sigma^2.
    lengthscales : sequence of float
        One positive length-scale per input dimension.
    nugget : float
        Diagonal regularisation tau^2 added to the training covariance.
    family : {"sqexp", "matern52"}
        Correlation family.
    """

    variance: float = 1.0
    lengthscales: tuple = (1.0,)
    nugget: float = 0.0
    family: str = "sqexp"

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "nugget", float(self.nugget))
        if not self.variance > 0:
            raise ArgumentError("kernel variance must be > 0")
        if len(ls) == 0 or any(not v > 0 for v in ls):
            raise ArgumentError("kernel length-scales must all be > 0")
        if not self.nugget >= 0:
            raise ArgumentError("kernel nugget must be >= 0")
        if self.family not in KERNEL_FAMILIES:
            raise ArgumentError(f"unknown kernel family {self.family!r}")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def corr(self, Z, W):
        """Correlation matrix between the rows of ``Z`` and ``W`` (no nugget)."""
        ls = np.asarray(self.lengthscales)
        Z = np.atleast_2d(Z) / ls
        W = np.atleast_2d(W) / ls
        d2 = cdist(Z, W, "sqeuclidean")
        if self.family == "sqexp":
            return np.exp(-0.5 * d2)
        r = np.sqrt(5.0 * d2)
        return (1.0 + r + r * r / 3.0) * np.exp(-r)

    def cov(self, Z, W):
        return self.variance * self.corr(Z, W)


def kernel_eval(kernel: Kernel, z, w) -> float:
    """Evaluate ``kernel`` at a single pair of points.

    The nugget contributes only when ``z`` and ``w`` are identical.

    >>> round(kernel_eval(Kernel(1.0, (1.0,)), [0.0], [1.0]), 5)
    0.60653
    """
    z = np.asarray(z, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if z.shape != w.shape or z.size != kernel.dim:
        raise ArgumentError(
            f"points of dimension {z.size} and {w.size} for a "
            f"{kernel.dim}-dimensional kernel"
        )
    value = float(kernel.cov(z[None, :], w[None, :])[0, 0])
    if np.array_equal(z, w):
        value += kernel.nugget
    return value


def trend_matrix(trend: str, Z) -> np.ndarray:
    """Regression matrix F whose rows are the basis functions at ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if trend == "none":
        return np.zeros((Z.shape[0], 0))
    if trend == "constant":
        return np.ones((Z.shape[0], 1))
    if trend == "linear":
        return np.hstack([np.ones((Z.shape[0], 1)), Z])
    raise ArgumentError(f"unknown trend {trend!r}; expected one of {TRENDS}")


def _cholesky(K, variance, nugget):
    """Lower Cholesky factor of ``K + nugget*I`` with nugget escalation.

    Returns the factor and the nugget actually used.
    """
    n = K.shape[0]
    tau2 = nugget
    ceiling = MAX_NUGGET_REL * variance
    while True:
        try:
            L = linalg.cholesky(K + tau2 * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, tau2
        except linalg.LinAlgError:
            pass
        if tau2 >= ceiling:
            raise NumericalError(
                f"covariance not positive definite with nugget {tau2:.3g}"
            )
        tau2 = min(max(10.0 * tau2, DEFAULT_NUGGET_REL * variance), ceiling)


def gls_beta(F, K_chol, h) -> np.ndarray:
    """Generalised least-squares trend coefficients.

    Solves ``(F' K^-1 F) beta = F' K^-1 h`` through the Cholesky factor of K.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[1] == 0:
        return np.zeros(0)
    if np.linalg.matrix_rank(F) < F.shape[1]:
        raise SingularTrendError(
            f"trend matrix of shape {F.shape} is rank deficient"
        )
    Kinv_F = linalg.cho_solve((K_chol, True), F, check_finite=False)
    Kinv_h = linalg.cho_solve((K_chol, True), h, check_finite=False)
    A = F.T @ Kinv_F
    return linalg.solve(A, F.T @ Kinv_h, assume_a="pos")


class Prediction(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray


class KrigingModel:
    """Kriging predictor conditioned on a design with a fixed kernel.

    The kernel acts on unit-scaled inputs ``(z - lower) / width`` and
    standardized outputs ``(h - y_shift) / y_scale``; predictions are returned
    in the original output units. A model is never mutated after
    construction.

    Parameters
    ----------
    design : (N, Q) array
        Design points in input units.
    observations : (N,) array
        Scalar model outputs at the design points.
    kernel : Kernel
        Covariance in scaled units.
    trend : {"none", "constant", "linear"}
    bounds : (lower, upper) or None
        Input-domain bounds for scaling; ``None`` uses the raw inputs.
    y_shift, y_scale : float
        Output standardization constants.
    """

    def __init__(
        self,
        design,
        observations,
        kernel: Kernel,
        trend: str = "constant",
        bounds=None,
        y_shift: float = 0.0,
        y_scale: float = 1.0,
    ):
        design = np.atleast_2d(np.asarray(design, dtype=float))
        obs = np.asarray(observations, dtype=float).ravel()
        if design.shape[0] != obs.size:
            raise ArgumentError(
                f"{design.shape[0]} design points but {obs.size} observations"
            )
        if design.shape[1] != kernel.dim:
            raise ArgumentError(
                f"design has {design.shape[1]} columns, kernel expects {kernel.dim}"
            )
        if trend not in TRENDS:
            raise ArgumentError(f"unknown trend {trend!r}")
        if bounds is None:
            lower = np.zeros(design.shape[1])
            width = np.ones(design.shape[1])
        else:
            lower = np.asarray(bounds[0], dtype=float)
            width = np.asarray(bounds[1], dtype=float) - lower
            if np.any(width <= 0):
                raise ArgumentError("bounds must satisfy lower < upper")
        self.design = design
        self.observations = obs
        self.kernel = kernel
        self.trend = trend
        self.lower = lower
        self.width = width
        self.y_shift = float(y_shift)
        self.y_scale = float(y_scale)
        self.fit_info: dict = {}

        Z = self.scale_inputs(design)
        n_basis = trend_matrix(trend, Z[:1]).shape[1]
        if obs.size < max(n_basis, 1):
            raise ArgumentError(
                f"{obs.size} points cannot support a trend with {n_basis} terms"
            )
        self._Z = Z
        self._y = (obs - self.y_shift) / self.y_scale
        self._F = trend_matrix(trend, Z)
        K = kernel.cov(Z, Z)
        self._L, self.nugget_used = _cholesky(K, kernel.variance, kernel.nugget)
        self.beta = gls_beta(self._F, self._L, self._y)
        resid = self._y - self._F @ self.beta
        self._alpha = linalg.cho_solve((self._L, True), resid, check_finite=False)
        if n_basis:
            self._Kinv_F = linalg.cho_solve((self._L, True), self._F, check_finite=False)
            self._A_chol = linalg.cho_factor(self._F.T @ self._Kinv_F, lower=True)
        else:
            self._Kinv_F = np.zeros((obs.size, 0))
            self._A_chol = None

    # -- geometry -----------------------------------------------------------
    @property
    def n_points(self) -> int:
        return self.design.shape[0]

    @property
    def input_dim(self) -> int:
        return self.design.shape[1]

    @property
    def bounds(self):
        return self.lower, self.lower + self.width

    def scale_inputs(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.input_dim:
            raise ArgumentError(
                f"points of dimension {Z.shape[1]}, model expects {self.input_dim}"
            )
        return (Z - self.lower) / self.width

    def is_design_point(self, z) -> bool:
        zs = self.scale_inputs(z)
        return bool(np.min(cdist(zs, self._Z)) <= COINCIDENCE_TOL)

    # -- prediction ---------------------------------------------------------
    def _terms(self, Zs):
        """Cross-covariances, whitened cross terms and trend residual terms."""
        k = self.kernel.cov(Zs, self._Z)
        v = linalg.solve_triangular(self._L, k.T, lower=True, check_finite=False)
        if self._A_chol is None:
            u = None
        else:
            u = trend_matrix(self.trend, Zs).T - self._Kinv_F.T @ k.T
        return k, v, u

    def predict(self, Z) -> Prediction:
        Zs = self.scale_inputs(Z)
        k, v, u = self._terms(Zs)
        mean = trend_matrix(self.trend, Zs) @ self.beta + k @ self._alpha
        var = self.kernel.variance - np.sum(v * v, axis=0)
        if u is not None:
            var = var + np.sum(u * linalg.cho_solve(self._A_chol, u), axis=0)
        var = np.maximum(var, 0.0)
        return Prediction(
            self.y_shift + self.y_scale * mean, self.y_scale**2 * var
        )

    def cov(self, Z, W) -> np.ndarray:
        Zs = self.scale_inputs(Z)
        Ws = self.scale_inputs(W)
        _, vz, uz = self._terms(Zs)
        _, vw, uw = self._terms(Ws)
        c = self.kernel.cov(Zs, Ws) - vz.T @ vw
        if uz is not None:
            c = c + uz.T @ linalg.cho_solve(self._A_chol, uw)
        return self.y_scale**2 * c

    def log_likelihood(self) -> float:
        """Gaussian log marginal likelihood with beta at its GLS value.

        Expressed in the original output units, so models fitted with
        different standardizations compare directly.
        """
        n = self.n_points
        resid = self._y - self._F @ self.beta
        quad = float(resid @ self._alpha)
        logdet = 2.0 * np.sum(np.log(np.diag(self._L)))
        ll = -0.5 * (quad + logdet + n * np.log(2.0 * np.pi))
        return ll - n * np.log(self.y_scale)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "design": self.design.tolist(),
            "observations": self.observations.tolist(),
            "kernel": {
                "variance": self.kernel.variance,
                "lengthscales": list(self.kernel.lengthscales),
                "nugget": self.kernel.nugget,
                "family": self.kernel.family,
            },
            "trend": self.trend,
            "lower": self.lower.tolist(),
            "upper": (self.lower + self.width).tolist(),
            "y_shift": self.y_shift,
            "y_scale": self.y_scale,
            "beta": self.beta.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "KrigingModel":
        model = cls(
            doc["design"],
            doc["observations"],
            Kernel(**doc["kernel"]),
            trend=doc["trend"],
            bounds=(doc["lower"], doc["upper"]),
            y_shift=doc["y_shift"],
            y_scale=doc["y_scale"],
        )
        if "beta" in doc and not np.allclose(model.beta, doc["beta"], rtol=1e-6, atol=1e-9):
            raise NumericalError("stored beta disagrees with the re-solved GLS estimate")
        return model

    @classmethod
    def from_json(cls, text: str) -> "KrigingModel":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return (
            f"KrigingModel(N={self.n_points}, Q={self.input_dim}, "
            f"trend={self.trend!r}, kernel={self.kernel})"
        )


def predict(model: KrigingModel, Z) -> Prediction:
    return model.predict(Z)


def kriging_cov(model: KrigingModel, Z, W) -> np.ndarray:
    """Universal-kriging covariance matrix between point sets ``Z`` and ``W``."""
    return model.cov(Z, W)


def conditional_sample(model: KrigingModel, points, rng, size=None) -> np.ndarray:
    """Joint draw(s) of the conditioned process at ``points``.

    Uses a symmetric eigendecomposition so that degenerate (rank-deficient)
    covariances, e.g. at design points or repeated locations, are sampled
    exactly. Returns shape ``(M,)``, or ``(size, M)`` when ``size`` is given.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mean = model.predict(points).mean
    C = model.cov(points, points)
    C = 0.5 * (C + C.T)
    evals, evecs = np.linalg.eigh(C)
    floor = -1e-8 * model.kernel.variance * model.y_scale**2
    if evals.size and evals.min() < floor:
        raise NumericalError(
            f"kriging covariance has eigenvalue {evals.min():.3g} below {floor:.3g}"
        )
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    n_draws = 1 if size is None else int(size)
    xi = rng.standard_normal((n_draws, points.shape[0]))
    draws = mean + xi @ root.T
    return draws[0] if size is None else draws


def virtual_update(model: KrigingModel, z_new, value) -> KrigingModel:
    """Model conditioned on one extra (possibly hypothetical) observation.

    The kernel, trend and scaling are kept; only the GLS coefficients and the
    factorization are recomputed.
    """
    z_new = np.atleast_2d(np.asarray(z_new, dtype=float))
    if z_new.shape[0] != 1:
        raise ArgumentError("virtual_update takes exactly one point")
    if model.is_design_point(z_new):
        raise DegenerateDesignError(
            f"point {z_new.ravel().tolist()} coincides with an existing design point"
        )
    updated = KrigingModel(
        np.vstack([model.design, z_new]),
        np.append(model.observations, float(value)),
        model.kernel,
        trend=model.trend,
        bounds=model.bounds,
        y_shift=model.y_shift,
        y_scale=model.y_scale,
    )
    updated.fit_info = dict(model.fit_info, virtual=True)
    return updated


@dataclass
class _Objective:
    """Profiled negative log-likelihood over log length-scales."""

    Z: np.ndarray
    y: np.ndarray
    F: np.ndarray
    family: str
    nugget_rel: float
    evaluations: list = field(default_factory=list)

    def parts(self, log_ls):
        kern = Kernel(1.0, np.exp(log_ls), 0.0, self.family)
        R = kern.corr(self.Z, self.Z)
        L, tau2 = _cholesky(R, 1.0, self.nugget_rel)
        beta = gls_beta(self.F, L, self.y)
        resid = self.y - self.F @ beta
        w = linalg.solve_triangular(L, resid, lower=True, check_finite=False)
        n = self.y.size
        sigma2 = max(float(w @ w) / n, 1e-12)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        nll = 0.5 * (n * np.log(sigma2) + logdet + n * (1.0 + np.log(2.0 * np.pi)))
        return nll, sigma2, tau2

    def __call__(self, log_ls):
        try:
            nll = self.parts(log_ls)[0]
        except (NumericalError, SingularTrendError, linalg.LinAlgError):
            return 1e10
        return nll if np.isfinite(nll) else 1e10


def fit_kriging(
    design,
    observations,
    trend: str = "constant",
    family: str = "sqexp",
    bounds=None,
    n_starts: int = 8,
    rng=None,
    nugget_rel: float = DEFAULT_NUGGET_REL,
    lengthscale_bounds=(1e-2, 1e2),
) -> KrigingModel:
    """Fit a kriging model by maximum likelihood.

    The process variance and trend coefficients are profiled out analytically
    (GLS and the closed-form variance estimate); the length-scales are found
    by bounded L-BFGS-B from ``n_starts`` log-uniform starting points. Outputs
    are centred (unless ``trend="none"``) and scaled to unit variance.
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    obs = np.asarray(observations, dtype=float).ravel()
    n, Q = design.shape
    if obs.size != n:
        raise ArgumentError(f"{n} design points but {obs.size} observations")
    n_basis = trend_matrix(trend, design[:1]).shape[1]
    if n < n_basis + 1:
        raise ArgumentError(f"need at least {n_basis + 1} points, got {n}")
    if bounds is None:
        bounds = (design.min(axis=0), design.max(axis=0))
        span = bounds[1] - bounds[0]
        bounds = (bounds[0], bounds[0] + np.where(span > 0, span, 1.0))
    lower = np.asarray(bounds[0], dtype=float)
    width = np.asarray(bounds[1], dtype=float) - lower
    Z = (design - lower) / width
    if n > 1 and pdist(Z).min() <= COINCIDENCE_TOL:
        raise DegenerateDesignError("design contains coincident points")

    y_shift = float(np.mean(obs)) if trend != "none" else 0.0
    spread = float(np.std(obs - y_shift)) if trend != "none" else float(np.sqrt(np.mean(obs**2)))
    y_scale = spread if spread > 0 else 1.0
    y = (obs - y_shift) / y_scale

    rng = np.random.default_rng(0) if rng is None else rng
    objective = _Objective(Z, y, trend_matrix(trend, Z), family, nugget_rel)
    box = [(np.log(lengthscale_bounds[0]), np.log(lengthscale_bounds[1]))] * Q
    starts = [np.full(Q, np.log(0.3))]
    starts += [rng.uniform(np.log(0.05), np.log(2.0), Q) for _ in range(n_starts - 1)]

    best, diagnostics = None, []
    for x0 in starts:
        try:
            res = optimize.minimize(objective, x0, method="L-BFGS-B", bounds=box)
        except (ValueError, FloatingPointError) as exc:
            diagnostics.append({"start": x0.tolist(), "error": repr(exc)})
            continue
        diagnostics.append(
            {"start": x0.tolist(), "nll": float(res.fun), "message": str(res.message)}
        )
        if res.fun < 1e10 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FitError("likelihood optimization failed at every start", diagnostics)

    nll, sigma2, tau2 = objective.parts(best.x)
    kernel = Kernel(sigma2, np.exp(best.x), max(tau2, nugget_rel) * sigma2, family)
    model = KrigingModel(
        design, obs, kernel, trend=trend, bounds=(lower, lower + width),
        y_shift=y_shift, y_scale=y_scale,
    )
    model.fit_info = {"nll": float(nll), "starts": diagnostics}
    return model


def loo_predictions(model: KrigingModel) -> np.ndarray:
    """Leave-one-out predictions with the kernel held at its fitted value."""
    n = model.n_points
    out = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        sub = KrigingModel(
            model.design[keep],
            model.observations[keep],
            model.kernel,
            trend=model.trend,
            bounds=model.bounds,
            y_shift=model.y_shift,
            y_scale=model.y_scale,
        )
        out[i] = sub.predict(model.design[i : i + 1]).mean[0]
    return out


def q2_from_predictions(observed, predicted) -> float:
    """``1 - PRESS / sum ||h_i - mean(h)||^2`` for (N,) or (N, p) arrays."""
    h = np.asarray(observed, dtype=float).reshape(len(observed), -1)
    hp = np.asarray(predicted, dtype=float).reshape(h.shape)
    denom = float(np.sum((h - h.mean(axis=0)) ** 2))
    if denom == 0.0:
        raise UndefinedQ2Error("observations are constant; Q2 is undefined")
    press = float(np.sum((h - hp) ** 2))
    return 1.0 - press / denom


def q2_loocv(models: KrigingModel | Sequence[KrigingModel]) -> float:
    """Leave-one-out predictivity coefficient of one or several output models.

    All models must share the same design (one model per output component).
    """
    if isinstance(models, KrigingModel):
        models = [models]
    if models[0].n_points < trend_matrix(models[0].trend, models[0].design[:1]).shape[1] + 2:
        raise ArgumentError("Q2 needs at least K + 2 design points")
    observed = np.column_stack([m.observations for m in models])
    predicted = np.column_stack([loo_predictions(m) for m in models])
    return q2_from_predictions(observed, predicted)
