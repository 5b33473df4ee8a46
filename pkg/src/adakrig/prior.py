"""Gaussian-Inverse-Wishart prior on the latent input distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ElicitationError

__all__ = [
    "PriorHyper",
    "Theta",
    "conditional_C_posterior",
    "elicit_prior",
    "inverse_wishart_mean",
    "manning_variance_transfer",
    "prior_predictive_params",
    "sample_inverse_wishart",
    "sample_normal_inverse_wishart",
    "sample_prior",
]


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=1e-10, atol=1e-14):
        raise ArgumentError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ArgumentError(f"{name} must be positive definite")
    return M


@dataclass(frozen=True)
class Theta:
    """Mean ``m`` and covariance ``C`` of the latent inputs."""

    m: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape != (m.size, m.size):
            raise ArgumentError(f"C has shape {C.shape}, expected {(m.size, m.size)}")
        _check_spd(C, "C")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "C", C)

    @property
    def q(self) -> int:
        return self.m.size

    def vector(self, diagonal_only=False) -> np.ndarray:
        """Flattened parameter: ``m`` then ``diag(C)`` or the upper triangle."""
        if diagonal_only:
            return np.concatenate([self.m, np.diag(self.C)])
        return np.concatenate([self.m, self.C[np.triu_indices(self.q)]])


@dataclass(frozen=True)
class PriorHyper:
    """Hyperparameters of ``m | C ~ N(mu, C/a)``, ``C ~ IW(Lambda, nu)``."""

    mu: np.ndarray
    a: float
    Lambda: np.ndarray
    nu: float
    C_e: np.ndarray | None = None

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        Lam = _check_spd(self.Lambda, "Lambda")
        q = mu.size
        if Lam.shape != (q, q):
            raise ArgumentError(f"Lambda has shape {Lam.shape}, expected {(q, q)}")
        if not self.a > 0:
            raise ArgumentError("virtual sample size a must be > 0")
        if not self.nu > q + 1:
            raise ArgumentError(f"nu must exceed q + 1 = {q + 1}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Lambda", Lam)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "nu", float(self.nu))
        if self.C_e is not None:
            object.__setattr__(self, "C_e", _check_spd(self.C_e, "C_e"))

    @property
    def q(self) -> int:
        return self.mu.size

    def to_dict(self) -> dict:
        doc = {
            "mu": self.mu.tolist(),
            "a": self.a,
            "Lambda": self.Lambda.tolist(),
            "nu": self.nu,
        }
        if self.C_e is not None:
            doc["C_e"] = self.C_e.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PriorHyper":
        if "C_e" in doc and "Lambda" not in doc:
            return elicit_prior(doc["mu"], doc["C_e"], doc["a"])
        return cls(doc["mu"], doc["a"], doc["Lambda"], doc["nu"], doc.get("C_e"))


def elicit_prior(mu, C_e, a: float, q: int | None = None) -> PriorHyper:
    """Prior from a predictive guess: ``Lambda = (a+1) C_e``, ``nu = a+q+2``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    q = mu.size if q is None else int(q)
    if mu.size != q:
        raise ArgumentError(f"mu has {mu.size} entries, q = {q}")
    C_e = _check_spd(C_e, "C_e")
    if not a > 0:
        raise ArgumentError("virtual sample size a must be > 0")
    return PriorHyper(mu, a, (a + 1.0) * C_e, a + q + 2.0, C_e)


def sample_inverse_wishart(scale, dof: float, rng, size: int | None = None):
    """Draw from ``IW(scale, dof)`` (mean ``scale / (dof - q - 1)``).

    Bartlett decomposition: with ``scale = U U'`` and ``A`` the lower
    triangular Bartlett factor of a standard Wishart, ``W = U^-T A A' U^-1``
    is Wishart with scale ``scale^-1`` and ``W^-1 = B' B`` for
    ``B = A^-1 U'``.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    q = scale.shape[0]
    if dof <= q - 1:
        raise ArgumentError(f"IW degrees of freedom {dof} must exceed q - 1 = {q - 1}")
    n = 1 if size is None else int(size)
    U = np.linalg.cholesky(scale)
    A = np.zeros((n, q, q))
    A[:, np.arange(q), np.arange(q)] = np.sqrt(
        rng.chisquare(dof - np.arange(q), size=(n, q))
    )
    rows, cols = np.tril_indices(q, -1)
    A[:, rows, cols] = rng.standard_normal((n, rows.size))
    B = np.linalg.solve(A, np.broadcast_to(U.T, (n, q, q)))
    C = np.swapaxes(B, 1, 2) @ B
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    return C[0] if size is None else C


def inverse_wishart_mean(scale, dof: float) -> np.ndarray:
    q = np.atleast_2d(scale).shape[0]
    if dof <= q + 1:
        raise ArgumentError("IW mean requires dof > q + 1")
    return np.asarray(scale, dtype=float) / (dof - q - 1.0)


def sample_prior(hyper: PriorHyper, rng) -> Theta:
    C = sample_inverse_wishart(hyper.Lambda, hyper.nu, rng)
    m = rng.multivariate_normal(hyper.mu, C / hyper.a)
    return Theta(m, C)


def sample_normal_inverse_wishart(hyper: PriorHyper, X, rng, size: int):
    """Draws of ``(m, C)`` from their joint conditional given complete data ``X``.

    With ``X`` (n, q) known, the Gaussian-Inverse-Wishart prior is conjugate:
    ``C | X ~ IW(Lambda + S + n a/(n+a) (xbar-mu)(xbar-mu)', nu + n)`` and
    ``m | C, X ~ N((a mu + n xbar)/(n+a), C/(n+a))``. Returns arrays of shape
    (size, q) and (size, q, q).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, q = X.shape
    a = hyper.a
    xbar = X.mean(axis=0)
    dev = X - xbar
    shift = xbar - hyper.mu
    scale = hyper.Lambda + dev.T @ dev + (n * a / (n + a)) * np.outer(shift, shift)
    C = sample_inverse_wishart(scale, hyper.nu + n, rng, size=size)
    loc = (a * hyper.mu + n * xbar) / (n + a)
    chol = np.linalg.cholesky(C / (n + a))
    m = loc + np.einsum("lij,lj->li", chol, rng.standard_normal((size, q)))
    return m, C


def conditional_C_posterior(hyper: PriorHyper, m, X):
    """``C | m, X`` written through the elicitation surface.

    Returns ``((a+1) C_e + (n+1) C_n, nu + n + 1)`` with
    ``C_n = (1/n) sum (m - x_i)(m - x_i)'``, the form whose mean reads as a
    weighted average of ``C_e`` and ``C_n``. Sampling uses the scale
    ``Lambda + sum (m-x_i)(m-x_i)' + a (m-mu)(m-mu)'`` instead (see
    :mod:`adakrig.mcmc`); both agree when ``a (m-mu)(m-mu)' = C_n``.
    """
    if hyper.C_e is None:
        raise ElicitationError("prior was not built from an elicitation surface C_e")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    dev = np.asarray(m, dtype=float) - X
    C_n = dev.T @ dev / n
    return (hyper.a + 1.0) * hyper.C_e + (n + 1.0) * C_n, hyper.nu + n + 1.0


def prior_predictive_params(hyper: PriorHyper):
    """Student-t predictive of X: ``(location, scale matrix, dof)``.

    The covariance of this law is ``(a+1)/a * C_e``.
    """
    if hyper.C_e is None:
        raise ElicitationError("prior was not built from an elicitation surface C_e")
    a = hyper.a
    return hyper.mu.copy(), (a + 1.0) ** 2 / (a * (a + 3.0)) * hyper.C_e, a + 3.0


def manning_variance_transfer(mu_strickler: float, sigma_manning: float) -> float:
    """Variance of a Strickler coefficient from the spread of Manning's ``1/X``.

    Delta method through ``X = 1/M``: ``sigma^2 ~= mu^4 * sigma_M^2``.
    """
    if not mu_strickler > 0:
        raise ArgumentError("Strickler mean must be positive")
    if sigma_manning < 0:
        raise ArgumentError("Manning standard deviation must be >= 0")
    return float(mu_strickler) ** 4 * float(sigma_manning) ** 2
