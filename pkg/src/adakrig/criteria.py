"""Design-enrichment criteria and the tools they are built from.

The sequential criteria are

* MMSE: add the point of largest kriging variance;
* WIMSE: minimize a posterior-weighted integrated kriging variance after a
  hypothetical addition;
* ECD: maximize the expected Kullback-Leibler divergence between the
  conditional posterior of ``theta`` before and after a fantasy addition.

All three are optimized by :func:`simulated_annealing`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import gammaln, logsumexp, ndtr, ndtri

from .doe import Domain
from .errors import (
    ArgumentError,
    BudgetError,
    DegenerateDesignError,
    DegenerateSampleError,
    DegenerateWeightError,
)
from .gp import KrigingModel, conditional_sample, virtual_update
from .mcmc import (
    ChainState,
    MHDraws,
    ObservationSet,
    _apply_choice,
    _obs_loglik,
    _prior_quad,
    _sequential_accept,
    draw_mh_randomness,
    mh_update_missing,
)
from .prior import PriorHyper, Theta, prior_predictive_params, sample_normal_inverse_wishart

__all__ = [
    "AuditLog",
    "ECDConfig",
    "ECDSnapshot",
    "SAConfig",
    "SAResult",
    "WIMSEConfig",
    "WIMSEPoints",
    "design_domain",
    "draw_wimse_points",
    "ecd_score",
    "ecd_select",
    "ecd_snapshot",
    "imse_estimate",
    "knn_kl_estimate",
    "knn_kl_estimate_independent",
    "max_mse_grid_point",
    "mmse_select",
    "simulated_annealing",
    "total_mse",
    "wimse_score",
    "wimse_select",
    "wimse_points",
    "wimse_weight",
]

SCAN_LIMIT = 2000
TIE_JITTER = 1e-12


# -- audit log ----------------------------------------------------------------
class AuditLog:
    """Append-only JSONL trace of criterion evaluations.

    With ``path=None`` records are kept in memory only (``records``).
    """

    def __init__(self, path=None):
        self.path = None if path is None else Path(path)
        self.records: list[dict] = []

    def record(self, criterion: str, candidate, score, accepted: bool, **extra):
        rec = {
            "criterion": criterion,
            "candidate": [float(v) for v in np.ravel(candidate)],
            "score": float(score),
            "accepted": bool(accepted),
        }
        rec.update(extra)
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")


# -- k-NN divergence estimator -----------------------------------------------
def _nn_distances(points, reference, exclude_self: bool) -> np.ndarray:
    """Distance from each row of ``points`` to its nearest row in ``reference``."""
    k = 2 if exclude_self else 1
    if max(points.shape[0], reference.shape[0]) <= SCAN_LIMIT:
        D = cdist(points, reference)
        if exclude_self:
            np.fill_diagonal(D, np.inf)
        return D.min(axis=1)
    dist, _ = cKDTree(reference).query(points, k=k)
    return dist[:, -1] if exclude_self else dist


def knn_kl_estimate(sample_p, sample_q) -> float:
    """Nearest-neighbour estimate of ``KL(P || Q)`` in nats.

    ``(d / L1) sum_j log(nu_j / rho_j) + log(L2 / (L1 - 1))`` where ``rho_j``
    is the distance from the j-th point of ``sample_p`` to its nearest other
    point of ``sample_p`` and ``nu_j`` the distance to the nearest point of
    ``sample_q``. The estimate is not clipped and can be negative.

    Points of ``sample_p`` at zero distance from a neighbour are moved by a
    deterministic jitter of relative size 1e-12 before the estimate is formed.
    """
    P = np.asarray(sample_p, dtype=float)
    Q = np.asarray(sample_q, dtype=float)
    P = P.reshape(-1, 1) if P.ndim == 1 else P
    Q = Q.reshape(-1, 1) if Q.ndim == 1 else Q
    L1, d = P.shape
    L2 = Q.shape[0]
    if L1 < 2 or L2 < 1:
        raise ArgumentError("need at least 2 points from P and 1 from Q")
    if Q.shape[1] != d:
        raise ArgumentError(f"samples have dimensions {d} and {Q.shape[1]}")
    rho = _nn_distances(P, P, True)
    nu = _nn_distances(P, Q, False)
    tied = (rho == 0) | (nu == 0)
    if np.any(tied):
        scale = np.maximum(np.abs(np.vstack([P, Q])).max(axis=0), 1.0)
        P = P.copy()
        P[tied] += TIE_JITTER * scale * np.random.default_rng(0).standard_normal((tied.sum(), d))
        rho = _nn_distances(P, P, True)
        nu = _nn_distances(P, Q, False)
    if np.any(rho == 0) or np.any(nu == 0):
        raise DegenerateSampleError("zero nearest-neighbour distance after jitter")
    return float(d * np.mean(np.log(nu / rho)) + math.log(L2 / (L1 - 1.0)))


def knn_kl_estimate_independent(sample_p, sample_q) -> float:
    """Sum of one-dimensional estimates, treating components as independent."""
    P = np.atleast_2d(np.asarray(sample_p, dtype=float))
    Q = np.atleast_2d(np.asarray(sample_q, dtype=float))
    return float(sum(knn_kl_estimate(P[:, k], Q[:, k]) for k in range(P.shape[1])))


# -- simulated annealing ---------------------------------------------------
@dataclass(frozen=True)
class SAConfig:
    """Annealing schedule; ``proposal_sd`` is in unit-scaled coordinates."""

    initial_temperature: float = 100.0
    proposal_sd: float = 100.0
    iterations: int = 1000
    decay: float = 0.99

    def __post_init__(self):
        if not (self.initial_temperature > 0 and self.proposal_sd > 0):
            raise ArgumentError("temperature and proposal sd must be > 0")
        if self.iterations < 0:
            raise ArgumentError("iteration count must be >= 0")
        if not 0 < self.decay < 1:
            raise ArgumentError("decay must lie in (0, 1)")


class SAResult(NamedTuple):
    point: np.ndarray
    value: float
    current_values: np.ndarray
    best_values: np.ndarray
    temperatures: np.ndarray
    accepted: np.ndarray


def _truncated_standard_normal(lo, hi, rng) -> np.ndarray:
    """Inverse-CDF draw of N(0, 1) restricted to ``[lo, hi]`` per coordinate.

    Intervals lying above zero are mirrored so the CDF is always evaluated
    in the lower tail, where it keeps full relative precision.
    """
    flip = lo > 0
    a, b = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
    pa, pb = ndtr(a), ndtr(b)
    x = np.clip(ndtri(pa + rng.random(np.shape(a)) * (pb - pa)), a, b)
    return np.where(flip, -x, x)


def simulated_annealing(
    objective: Callable,
    domain: Domain,
    config: SAConfig,
    rng,
    initial=None,
    callback: Callable | None = None,
    full_output: bool = False,
):
    """Minimize ``objective`` over ``domain`` by simulated annealing.

    Proposals are Gaussian around the current point, independently per
    unit-scaled coordinate, and redrawn until they fall inside the domain
    (i.e. truncated normals). A move is accepted with probability
    ``min(1, exp((f_current - f_proposal) / beta))`` and the temperature
    decays geometrically after every step. The best point visited is
    returned, not the last one.

    ``callback(candidate, value, accepted)`` is called for every proposal.
    """
    u = np.full(domain.dim, 0.5) if initial is None else domain.to_unit(np.ravel(initial))
    u = np.clip(u, 0.0, 1.0)
    f = float(objective(domain.from_unit(u)))
    best_u, best_f = u.copy(), f
    beta = config.initial_temperature
    sd = config.proposal_sd
    n = config.iterations
    current_values, best_values = np.empty(n + 1), np.empty(n + 1)
    temperatures, accepted = np.empty(n), np.zeros(n, dtype=bool)
    current_values[0] = best_values[0] = f
    for k in range(n):
        lo, hi = (0.0 - u) / sd, (1.0 - u) / sd
        u_new = u + sd * _truncated_standard_normal(lo, hi, rng)
        u_new = np.clip(u_new, 0.0, 1.0)
        f_new = float(objective(domain.from_unit(u_new)))
        temperatures[k] = beta
        log_lambda = min(0.0, (f - f_new) / beta) if np.isfinite(f_new) else -np.inf
        if np.log(rng.random()) < log_lambda:
            u, f = u_new, f_new
            accepted[k] = True
        if callback is not None:
            callback(domain.from_unit(u_new), f_new, accepted[k])
        if f < best_f:
            best_u, best_f = u.copy(), f
        current_values[k + 1], best_values[k + 1] = f, best_f
        beta *= config.decay
    point = domain.from_unit(best_u)
    if full_output:
        return SAResult(point, best_f, current_values, best_values, temperatures, accepted)
    return point


# -- shared helpers -----------------------------------------------------------
def _as_models(models) -> list[KrigingModel]:
    return [models] if isinstance(models, KrigingModel) else list(models)


def design_domain(models) -> Domain:
    """Input box of the emulators (latent inputs and covariates)."""
    return Domain(*_as_models(models)[0].bounds)


def total_mse(models, Z) -> np.ndarray:
    """Kriging variance summed over output components."""
    return sum(m.predict(Z).variance for m in _as_models(models))


def _grid(domain: Domain, per_dim: int | None = None) -> np.ndarray:
    per_dim = per_dim or max(2, int(round(4096 ** (1.0 / domain.dim))))
    axes = [np.linspace(0.0, 1.0, per_dim)] * domain.dim
    U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    return domain.from_unit(U)


def max_mse_grid_point(models, domain: Domain | None = None, per_dim: int | None = None):
    """Grid point of largest current kriging variance (annealing start)."""
    domain = design_domain(models) if domain is None else domain
    G = _grid(domain, per_dim)
    return G[int(np.argmax(total_mse(models, G)))]


def _updated(models, z, values=None):
    """Models augmented at ``z``; coincident points leave a model unchanged."""
    out = []
    for j, m in enumerate(models):
        value = m.predict(z).mean[0] if values is None else values[j]
        try:
            out.append(virtual_update(m, z, value))
        except DegenerateDesignError:
            out.append(m)
    return out


# -- MMSE ----------------------------------------------------------------------
def mmse_select(
    models,
    domain: Domain | None = None,
    sa_config: SAConfig = SAConfig(),
    rng=None,
    minimax: bool = False,
    audit: AuditLog | None = None,
    grid_per_dim: int | None = None,
):
    """Next design point by the maximum-MSE rule.

    By default the current summed kriging variance is maximized. With
    ``minimax=True`` the point minimizing the largest variance (over a grid)
    left after adding it is chosen instead.
    """
    models = _as_models(models)
    domain = design_domain(models) if domain is None else domain
    rng = np.random.default_rng() if rng is None else rng
    if minimax:
        G = _grid(domain, grid_per_dim or max(2, int(round(400 ** (1.0 / domain.dim)))))

        def objective(z):
            return float(np.max(total_mse(_updated(models, z), G)))
    else:

        def objective(z):
            return -float(total_mse(models, z)[0])

    callback = None if audit is None else (
        lambda z, f, acc: audit.record("MMSE", z, f, acc)
    )
    start = max_mse_grid_point(models, domain)
    return simulated_annealing(objective, domain, sa_config, rng, start, callback)


# -- WIMSE ---------------------------------------------------------------------
@dataclass(frozen=True)
class WIMSEConfig:
    alpha: float = 0.8
    mc_size: int = 1000
    normalize: bool = True
    literal_delta: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError("alpha must lie in [0, 1]")
        if self.mc_size < 1:
            raise ArgumentError("Monte Carlo size must be >= 1")


def wimse_weight(z, theta: Theta, context, observations: ObservationSet, literal_delta=False):
    """Log of the posterior weight of candidate input(s) ``z = (x, d)``.

    ``sum_i [-1/2 log|R + MSE(z)| - 1/2 (x-m)'C^-1(x-m) - 1/2 r_i'(R + MSE(z))^-1 r_i]``
    with ``r_i = y_i - H(z)``. ``literal_delta`` flips the sign of the
    data quadratic. Accepts (Q,) or (K, Q) and returns a float or (K,) array.
    """
    Z = np.asarray(z, dtype=float)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    q = theta.q
    mean, var = context.moments(Z)
    sign = -1.0 if literal_delta else 1.0
    # (K, n) per-observation data terms
    data = _obs_loglik(
        observations.y[None], observations.R, mean[:, None, :], var[:, None, :], sign
    )
    prior = -0.5 * _prior_quad(Z[:, :q], theta)
    logw = data.sum(axis=1) + observations.n * prior
    return float(logw[0]) if single else logw


class WIMSEPoints(NamedTuple):
    """Monte Carlo points with their proposal log-density and log weight."""

    points: np.ndarray
    log_proposal: np.ndarray
    log_weight: np.ndarray


def _student_logpdf(X, loc, shape, dof):
    d = loc.size
    L = np.linalg.cholesky(shape)
    w = np.linalg.solve(L, (X - loc).T)
    maha = np.sum(w * w, axis=0)
    return (
        gammaln((dof + d) / 2) - gammaln(dof / 2) - 0.5 * d * np.log(dof * np.pi)
        - np.sum(np.log(np.diag(L))) - 0.5 * (dof + d) * np.log1p(maha / dof)
    )


def draw_wimse_points(
    domain: Domain, q: int, size: int, rng, prior: PriorHyper | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Integration points and proposal log-density for the WIMSE integral.

    The latent part is drawn from an equal mixture of the prior predictive
    Student law and the uniform law on the latent box (a defensive mixture
    that keeps every part of the domain covered); covariates are uniform.
    Points falling outside the domain are kept and carry zero integrand.
    Without a prior the proposal is uniform on the domain.
    """
    lo, width = domain.lo, domain.width
    U = lo + rng.random((size, domain.dim)) * width
    log_g = np.full(size, -np.sum(np.log(width)))
    if prior is None or prior.C_e is None:
        return U, log_g
    loc, shape, dof = prior_predictive_params(prior)
    from_t = rng.random(size) < 0.5
    T = stats.multivariate_t(loc, shape, dof).rvs(size=size, random_state=rng).reshape(size, q)
    X = np.where(from_t[:, None], T, U[:, :q])
    Z = np.hstack([X, U[:, q:]])
    log_unif_x = -np.sum(np.log(width[:q]))
    inside_x = np.all((X >= lo[:q]) & (X <= lo[:q] + width[:q]), axis=1)
    log_g_x = np.logaddexp(
        np.log(0.5) + _student_logpdf(X, loc, shape, dof),
        np.where(inside_x, np.log(0.5) + log_unif_x, -np.inf),
    )
    return Z, log_g_x - np.sum(np.log(width[q:]))


def wimse_points(
    theta: Theta,
    context,
    observations: ObservationSet,
    config: WIMSEConfig,
    rng,
    prior: PriorHyper | None = None,
    domain: Domain | None = None,
) -> WIMSEPoints:
    """Draw the common integration points and evaluate their log weights."""
    domain = design_domain(context.models) if domain is None else domain
    Z, log_g = draw_wimse_points(domain, theta.q, config.mc_size, rng, prior)
    inside = domain.contains(Z)
    log_w = np.full(Z.shape[0], -np.inf)
    if np.any(inside):
        log_w[inside] = wimse_weight(
            Z[inside], theta, context, observations, config.literal_delta
        )
    return WIMSEPoints(Z, log_g, log_w)


def _log_mean(log_terms) -> float:
    """``log(mean(exp(log_terms)))`` with ``-inf`` entries counting as zeros."""
    return float(logsumexp(log_terms) - np.log(log_terms.size))


def _post_update_mse(models, z_candidate, mc: WIMSEPoints) -> np.ndarray:
    """Kriging variance after adding the candidate, zero outside the domain."""
    inside = np.isfinite(mc.log_weight)
    mse = np.zeros(mc.points.shape[0])
    if np.any(inside):
        mse[inside] = total_mse(_updated(models, np.atleast_2d(z_candidate)), mc.points[inside])
    return mse


def imse_estimate(models, z_candidate, mc: WIMSEPoints) -> float:
    """Importance-sampling estimate of the integrated post-update kriging variance."""
    mse = _post_update_mse(_as_models(models), z_candidate, mc)
    return float(np.mean(mse * np.exp(-mc.log_proposal)))


def wimse_score(z_candidate, alpha: float, models, mc: WIMSEPoints, normalize=True) -> float:
    """Weighted IMSE of the design augmented at ``z_candidate``.

    Estimates ``int MSE^alpha(z | D + z*) w~^(1-alpha)(z) dz`` by importance
    sampling over ``mc``, where ``w~ = w / int w`` and the normalizing
    integral is estimated from the same points. With ``normalize=False`` the
    raw weight is used. The post-update variance uses the predicted mean as
    fantasy value (the variance does not depend on it). Everything is
    accumulated in the log domain.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError("alpha must lie in [0, 1]")
    mse = _post_update_mse(_as_models(models), z_candidate, mc)
    if alpha == 1.0:
        return float(np.mean(mse * np.exp(-mc.log_proposal)))
    log_w = mc.log_weight
    if not np.any(np.isfinite(log_w)):
        raise DegenerateWeightError("all importance weights are zero")
    inside = np.isfinite(log_w)
    log_w = np.where(inside, log_w, 0.0)
    if alpha == 0.0:
        log_terms = log_w - mc.log_proposal
    else:
        with np.errstate(divide="ignore"):
            log_terms = alpha * np.log(mse) + (1.0 - alpha) * log_w - mc.log_proposal
    log_terms = np.where(inside, log_terms, -np.inf)
    log_score = _log_mean(log_terms)
    if normalize:
        log_norm = _log_mean(np.where(inside, log_w - mc.log_proposal, -np.inf))
        log_score -= (1.0 - alpha) * log_norm
    return float(np.exp(log_score))


def wimse_select(
    context,
    theta: Theta,
    observations: ObservationSet,
    config: WIMSEConfig = WIMSEConfig(),
    sa_config: SAConfig = SAConfig(),
    rng=None,
    prior: PriorHyper | None = None,
    audit: AuditLog | None = None,
):
    """Next design point minimizing the WIMSE criterion."""
    rng = np.random.default_rng() if rng is None else rng
    domain = design_domain(context.models)
    mc = wimse_points(theta, context, observations, config, rng, prior, domain)
    models = context.models

    def objective(z):
        return wimse_score(z, config.alpha, models, mc, config.normalize)

    callback = None if audit is None else (
        lambda z, f, acc: audit.record("WIMSE", z, f, acc, alpha=config.alpha)
    )
    start = max_mse_grid_point(models, domain)
    return simulated_annealing(objective, domain, sa_config, rng, start, callback)


# -- ECD -----------------------------------------------------------------------
@dataclass(frozen=True)
class ECDConfig:
    n_fantasies: int = 100
    l1: int = 1000
    l2: int = 1000
    k: int = 200
    independent: bool = False
    mh_sweeps: int = 1

    def __post_init__(self):
        if self.n_fantasies < 1:
            raise ArgumentError("at least one fantasy is required")
        if self.l1 < 2 or self.l2 < 2:
            raise ArgumentError("sample sizes L1 and L2 must be >= 2")
        if self.k < 0 or self.mh_sweeps < 1:
            raise ArgumentError("k must be >= 0 and mh_sweeps >= 1")


@dataclass(frozen=True)
class ECDSnapshot:
    """Candidate-independent part of the ECD computation.

    ``X_prev`` are the latent inputs before the last MH update, ``draws`` the
    randomness of that update, ``X_next`` its result under the current
    emulator and ``upsilon`` the reference sample of ``(m, diag C)``.
    """

    theta: Theta
    X_prev: np.ndarray
    draws: MHDraws
    X_next: np.ndarray
    upsilon: np.ndarray
    prior: PriorHyper


def _theta_vectors(m, C) -> np.ndarray:
    return np.hstack([m, np.diagonal(C, axis1=1, axis2=2)])


def ecd_snapshot(
    state: ChainState,
    prior: PriorHyper,
    context,
    observations: ObservationSet,
    config: ECDConfig,
    rng,
) -> ECDSnapshot:
    """Sample ``X(r+1)`` given the current ``theta`` and the reference sample."""
    draws = draw_mh_randomness(
        state.theta, observations.n, context.x_domain, rng, config.mh_sweeps
    )
    X_next, _ = mh_update_missing(state.X, state.theta, context, observations, draws=draws)
    m, C = sample_normal_inverse_wishart(prior, X_next, rng, config.l2)
    return ECDSnapshot(state.theta, np.array(state.X), draws, X_next, _theta_vectors(m, C), prior)


def _fantasy_inputs(snapshot: ECDSnapshot, context, observations, z, fantasies):
    """Replay the snapshot's MH update under each fantasy emulator.

    The kriging mean is affine in the added observation for a fixed kernel,
    so the fantasy means follow from two virtual updates; the variance is
    common to all fantasies. Returns an (M, n, q) array.
    """
    X, draws = snapshot.X_prev, snapshot.draws
    S, n = draws.log_u.shape
    pts = observations.inputs(np.concatenate([X[None], draws.proposals]).reshape(-1, X.shape[1]))
    means, variances = [], []
    for j, model in enumerate(context.models):
        mu_z = model.predict(z).mean[0]
        try:
            base = virtual_update(model, z, mu_z)
            unit = virtual_update(model, z, mu_z + 1.0)
        except DegenerateDesignError:
            pr = model.predict(pts)
            means.append(np.broadcast_to(pr.mean, (fantasies.shape[0], pr.mean.size)))
            variances.append(pr.variance)
            continue
        p0 = base.predict(pts)
        gain = unit.predict(pts).mean - p0.mean
        means.append(p0.mean + np.outer(fantasies[:, j] - mu_z, gain))
        variances.append(p0.variance)
    mean = np.stack(means, axis=-1).reshape(fantasies.shape[0], S + 1, n, -1)
    var = np.stack(variances, axis=-1).reshape(S + 1, n, -1)
    ll = _obs_loglik(observations.y, observations.R, mean, var)
    choice, _ = _sequential_accept(ll[:, 0], ll[:, 1:], draws.log_u)
    return np.stack([_apply_choice(X, draws.proposals, c) for c in choice])


def ecd_score(
    z_candidate,
    snapshot: ECDSnapshot,
    context,
    observations: ObservationSet,
    config: ECDConfig,
    rng,
) -> float:
    """Expected conditional divergence of adding ``z_candidate`` (nats).

    Averages ``KL(Theta_i || Upsilon)`` over ``M`` kriging fantasies at the
    candidate, where ``Theta_i`` is drawn from the explicit conditional of
    ``(m, C)`` given the latent inputs resampled under fantasy ``i``.
    """
    if context.full_mse:
        raise ArgumentError("ECD fantasies require diagonal emulator error")
    z = np.atleast_2d(np.asarray(z_candidate, dtype=float))
    M = config.n_fantasies
    coincident = all(m.is_design_point(z) for m in context.models)
    if coincident:
        X_tilde = np.broadcast_to(snapshot.X_next, (M,) + snapshot.X_next.shape)
    else:
        fantasies = np.column_stack(
            [conditional_sample(m, z, rng, size=M)[:, 0] for m in context.models]
        )
        X_tilde = _fantasy_inputs(snapshot, context, observations, z, fantasies)
    estimate = knn_kl_estimate_independent if config.independent else knn_kl_estimate
    total = 0.0
    for i in range(M):
        m, C = sample_normal_inverse_wishart(snapshot.prior, X_tilde[i], rng, config.l1)
        total += estimate(_theta_vectors(m, C), snapshot.upsilon)
    return total / M


def ecd_select(
    state: ChainState,
    prior: PriorHyper,
    context,
    observations: ObservationSet,
    config: ECDConfig = ECDConfig(),
    sa_config: SAConfig = SAConfig(),
    rng=None,
    design_size: int | None = None,
    max_design_size: int | None = None,
    audit: AuditLog | None = None,
):
    """Next design point maximizing ECD from a frozen chain snapshot.

    ``state`` should have run ``config.k`` Gibbs iterations since the last
    addition. The snapshot (latent update and reference sample) is built
    once and shared by all candidates.
    """
    if max_design_size is not None:
        size = context.models[0].n_points if design_size is None else design_size
        if size >= max_design_size:
            raise BudgetError(f"design already holds {size} of {max_design_size} runs")
    rng = np.random.default_rng() if rng is None else rng
    snapshot = ecd_snapshot(state, prior, context, observations, config, rng)
    domain = design_domain(context.models)

    def objective(z):
        return -ecd_score(z, snapshot, context, observations, config, rng)

    callback = None if audit is None else (
        lambda z, f, acc: audit.record("ECD", z, -f, acc)
    )
    start = max_mse_grid_point(context.models, domain)
    return simulated_annealing(objective, domain, sa_config, rng, start, callback)
