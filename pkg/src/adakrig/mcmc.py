"""Metropolis-Hastings-within-Gibbs sampling of (m, C, X).

The latent inputs ``X_i`` are updated by an independent MH step whose target
accounts for the metamodel uncertainty: the noise covariance ``R`` is
inflated by the kriging MSE at the current inputs.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .doe import Domain
from .errors import (
    ArgumentError,
    DegenerateDiagnosticError,
    DegenerateDomainError,
    NumericalError,
)
from .forward import sample_truncated_gaussian
from .gp import KrigingModel
from .prior import PriorHyper, Theta, sample_inverse_wishart, sample_prior

__all__ = [
    "BrooksGelmanMonitor",
    "ChainResult",
    "ChainState",
    "ExactContext",
    "LikelihoodContext",
    "MCMCConfig",
    "MHDraws",
    "ObservationSet",
    "brooks_gelman",
    "draw_mh_randomness",
    "gibbs_step",
    "initial_state",
    "log_missing_conditional",
    "mh_update_missing",
    "mse_block_matrix",
    "noise_block_matrix",
    "posterior_to_csv",
    "run_chain",
    "sample_C_full_conditional",
    "sample_m_full_conditional",
]


@dataclass(frozen=True)
class ObservationSet:
    """Field data ``y`` (n, p), covariates ``d`` (n, q2) or None, noise variances ``R`` (p,)."""

    y: np.ndarray
    R: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        y = y.reshape(-1, 1) if y.ndim == 1 else y
        R = np.atleast_1d(np.asarray(self.R, dtype=float))
        if R.size != y.shape[1]:
            raise ArgumentError(f"R has {R.size} entries for {y.shape[1]} outputs")
        if np.any(R <= 0):
            raise ArgumentError("noise variances must be strictly positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "R", R)
        if self.d is not None:
            d = np.asarray(self.d, dtype=float).reshape(y.shape[0], -1)
            object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def inputs(self, X) -> np.ndarray:
        """Full forward-model inputs ``(X_i, d_i)``; X may carry leading axes."""
        X = np.asarray(X, dtype=float)
        if self.d is None:
            return X
        d = np.broadcast_to(self.d, X.shape[:-1] + (self.d.shape[1],))
        return np.concatenate([X, d], axis=-1)


class LikelihoodContext:
    """Per-output kriging models seen as one vector-valued emulator.

    Parameters
    ----------
    models : sequence of KrigingModel
        One fitted model per output component, all on the same inputs.
    x_domain : Domain
        Support of the latent inputs (truncation region).
    full_mse : bool
        Use the full kriging covariance between the n inputs instead of its
        diagonal when assembling the MSE blocks.
    """

    def __init__(self, models: Sequence[KrigingModel], x_domain: Domain, full_mse=False):
        self.models = list(models)
        self.x_domain = x_domain
        self.full_mse = full_mse

    @property
    def q(self) -> int:
        return self.x_domain.dim

    @property
    def p(self) -> int:
        return len(self.models)

    def moments(self, Z):
        """Predictive means and variances, each of shape (N, p)."""
        Z = np.atleast_2d(Z)
        preds = [m.predict(Z) for m in self.models]
        return (
            np.column_stack([pr.mean for pr in preds]),
            np.column_stack([pr.variance for pr in preds]),
        )

    def cov_blocks(self, Z):
        """Kriging covariance matrices, one (N, N) block per output."""
        return [m.cov(Z, Z) for m in self.models]

    def with_models(self, models) -> "LikelihoodContext":
        return LikelihoodContext(models, self.x_domain, self.full_mse)


class ExactContext:
    """A known forward model with zero emulator error."""

    def __init__(self, func: Callable, x_domain: Domain, output_dim: int, full_mse=False):
        self.func = func
        self.x_domain = x_domain
        self.output_dim = output_dim
        self.full_mse = full_mse
        self.models = []

    @property
    def q(self) -> int:
        return self.x_domain.dim

    @property
    def p(self) -> int:
        return self.output_dim

    def moments(self, Z):
        Z = np.atleast_2d(Z)
        mean = np.asarray(self.func(Z), dtype=float).reshape(Z.shape[0], self.output_dim)
        return mean, np.zeros_like(mean)

    def cov_blocks(self, Z):
        n = np.atleast_2d(Z).shape[0]
        return [np.zeros((n, n)) for _ in range(self.output_dim)]


def noise_block_matrix(R, n: int) -> np.ndarray:
    """``diag(R_1 I_n, ..., R_p I_n)`` ordered block-by-output."""
    return np.diag(np.repeat(np.asarray(R, dtype=float), n))


def mse_block_matrix(context, Z, full=None) -> np.ndarray:
    """Block-diagonal (np, np) emulator-error matrix, blocks ordered by output."""
    full = context.full_mse if full is None else full
    blocks = context.cov_blocks(Z)
    if not full:
        blocks = [np.diag(np.diag(b)) for b in blocks]
    return linalg.block_diag(*blocks)


def _prior_quad(X, theta: Theta):
    """``(x - m)' C^-1 (x - m)`` along the last axis."""
    chol = np.linalg.cholesky(theta.C)
    dev = np.asarray(X) - theta.m
    w = linalg.solve_triangular(chol, dev.reshape(-1, theta.q).T, lower=True)
    return np.sum(w * w, axis=0).reshape(dev.shape[:-1])


def _obs_loglik(y, R, mean, var, sign=1.0):
    """``-1/2 log|R + MSE| - sign/2 (y - H)' (R + MSE)^-1 (y - H)`` per input.

    Diagonal emulator error; reduces over the last (output) axis.
    """
    s = R + var
    return -0.5 * np.sum(np.log(s), axis=-1) - 0.5 * sign * np.sum((y - mean) ** 2 / s, axis=-1)


def log_missing_conditional(X, theta: Theta, context, observations: ObservationSet) -> float:
    """Unnormalized log full conditional of the missing data ``X`` (n, q)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape != (observations.n, theta.q):
        raise ArgumentError(f"X has shape {X.shape}, expected {(observations.n, theta.q)}")
    if not np.all(context.x_domain.contains(X)):
        return -np.inf
    Z = observations.inputs(X)
    prior_term = -0.5 * float(np.sum(_prior_quad(X, theta)))
    mean, var = context.moments(Z)
    if not context.full_mse:
        return prior_term + float(np.sum(_obs_loglik(observations.y, observations.R, mean, var)))
    n = observations.n
    S = noise_block_matrix(observations.R, n) + mse_block_matrix(context, Z, full=True)
    resid = (observations.y - mean).T.ravel()
    try:
        L = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("R + MSE is not positive definite") from exc
    w = linalg.solve_triangular(L, resid, lower=True)
    return prior_term - float(np.sum(np.log(np.diag(L)))) - 0.5 * float(w @ w)


class MHDraws(NamedTuple):
    """Randomness consumed by ``sweeps`` MH passes over the missing data.

    ``order`` and ``log_u`` are (sweeps, n); ``proposals`` is (sweeps, n, q).
    """

    order: np.ndarray
    proposals: np.ndarray
    log_u: np.ndarray

    @property
    def sweeps(self) -> int:
        return self.order.shape[0]


def draw_mh_randomness(theta: Theta, n: int, x_domain: Domain, rng, sweeps: int = 1) -> MHDraws:
    """Visit orders, independent ``N(m, C)`` proposals truncated to the domain, and uniforms."""
    if sweeps < 1:
        raise ArgumentError("sweeps must be >= 1")
    order = np.stack([rng.permutation(n) for _ in range(sweeps)])
    proposals = sample_truncated_gaussian(theta.m, theta.C, x_domain, sweeps * n, rng)
    log_u = np.log(rng.random((sweeps, n)))
    return MHDraws(order, proposals.reshape(sweeps, n, theta.q), log_u)


def _sequential_accept(ll_cur, ll_prop, log_u):
    """Run the independent-MH chain of each coordinate through its proposals.

    In the diagonal-error case the full conditional factorizes over
    observations and the Gaussian proposal density cancels the prior factor,
    so the log acceptance ratio is the difference of the likelihood terms.
    ``ll_cur`` is (..., n), ``ll_prop`` and ``log_u`` are (..., sweeps, n).
    Returns the index of the retained proposal (-1 for none) and the number
    of accepted moves, both (..., n).
    """
    cur = np.array(ll_cur, dtype=float)
    choice = np.full(cur.shape, -1)
    n_acc = np.zeros(cur.shape, dtype=int)
    for k in range(ll_prop.shape[-2]):
        acc = log_u[..., k, :] < ll_prop[..., k, :] - cur
        cur = np.where(acc, ll_prop[..., k, :], cur)
        choice = np.where(acc, k, choice)
        n_acc += acc
    return choice, n_acc


def _diag_loglik_terms(X, draws: MHDraws, observations: ObservationSet, mean, var):
    """Split batched predictions into current and proposal likelihood terms."""
    n = observations.n
    S = draws.sweeps
    ll = _obs_loglik(
        observations.y, observations.R,
        mean.reshape(S + 1, n, -1), var.reshape(S + 1, n, -1),
    )
    return ll[0], ll[1:]


def _apply_choice(X, proposals, choice):
    X = np.array(X, dtype=float)
    moved = choice >= 0
    X[moved] = proposals[choice[moved], np.flatnonzero(moved)]
    return X


def mh_update_missing(
    X, theta: Theta, context, observations: ObservationSet, rng=None, draws=None, sweeps=1
):
    """Independent-MH sweeps over ``X_1..X_n``, each in random order.

    Returns the new (n, q) array and the number of accepted moves per
    observation. Supplying ``draws`` replays previous randomness.
    """
    X = np.array(X, dtype=float)
    n = observations.n
    if draws is None:
        draws = draw_mh_randomness(theta, n, context.x_domain, rng, sweeps)
    if not context.full_mse:
        pts = np.concatenate([X[None], draws.proposals]).reshape(-1, X.shape[1])
        mean, var = context.moments(observations.inputs(pts))
        ll_cur, ll_prop = _diag_loglik_terms(X, draws, observations, mean, var)
        choice, n_acc = _sequential_accept(ll_cur, ll_prop, draws.log_u)
        return _apply_choice(X, draws.proposals, choice), n_acc
    n_acc = np.zeros(n, dtype=int)
    log_pi = log_missing_conditional(X, theta, context, observations)
    for s in range(draws.sweeps):
        for i in draws.order[s]:
            trial = X.copy()
            trial[i] = draws.proposals[s, i]
            log_pi_trial = log_missing_conditional(trial, theta, context, observations)
            log_j = -0.5 * _prior_quad(np.stack([X[i], trial[i]]), theta)
            log_alpha = (log_pi_trial - log_pi) - (log_j[1] - log_j[0])
            if draws.log_u[s, i] < log_alpha:
                X, log_pi = trial, log_pi_trial
                n_acc[i] += 1
    return X, n_acc


@dataclass
class ChainState:
    theta: Theta
    X: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    n_accepted: int = 0
    n_proposed: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")

    def to_json(self) -> str:
        return json.dumps(
            {
                "m": self.theta.m.tolist(),
                "C": self.theta.C.tolist(),
                "X": self.X.tolist(),
                "iteration": self.iteration,
                "n_accepted": self.n_accepted,
                "n_proposed": self.n_proposed,
                "rng": self.rng.bit_generator.state,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ChainState":
        doc = json.loads(text)
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng"]
        return cls(
            Theta(doc["m"], doc["C"]), np.asarray(doc["X"], dtype=float), rng,
            doc["iteration"], doc["n_accepted"], doc["n_proposed"],
        )


def sample_C_full_conditional(state: ChainState, prior: PriorHyper, rng=None) -> np.ndarray:
    """``C | m, X ~ IW(Lambda + sum (m-X_i)(m-X_i)' + a (m-mu)(m-mu)', nu + n + 1)``."""
    rng = state.rng if rng is None else rng
    m = state.theta.m
    dev = m - state.X
    shift = m - prior.mu
    scale = prior.Lambda + dev.T @ dev + prior.a * np.outer(shift, shift)
    scale = 0.5 * (scale + scale.T)
    n = state.X.shape[0]
    try:
        return sample_inverse_wishart(scale, prior.nu + n + 1, rng)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(scale) / prior.q
        try:
            return sample_inverse_wishart(scale + jitter * np.eye(prior.q), prior.nu + n + 1, rng)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("IW scale matrix is not positive definite") from exc


def sample_m_full_conditional(state: ChainState, C, prior: PriorHyper, rng=None) -> np.ndarray:
    """``m | C, X ~ N(a/(n+a) mu + n/(n+a) xbar, C/(n+a))``."""
    rng = state.rng if rng is None else rng
    n = state.X.shape[0]
    a = prior.a
    xbar = state.X.mean(axis=0) if n else np.zeros(prior.q)
    loc = (a * prior.mu + n * xbar) / (n + a)
    chol = np.linalg.cholesky(np.asarray(C) / (n + a))
    return loc + chol @ rng.standard_normal(prior.q)


def _draw_theta(state: ChainState, prior: PriorHyper, rng) -> Theta:
    C = sample_C_full_conditional(state, prior, rng)
    m = sample_m_full_conditional(state, C, prior, rng)
    return Theta(m, C)


def _advanced(state, theta, X, n_acc, sweeps):
    return replace(
        state,
        theta=theta,
        X=X,
        iteration=state.iteration + 1,
        n_accepted=state.n_accepted + int(np.sum(n_acc)),
        n_proposed=state.n_proposed + (sweeps * state.X.shape[0] if n_acc.size else 0),
    )


def gibbs_step(
    state: ChainState, prior: PriorHyper, context, observations, rng=None, update_x=True, sweeps=1
):
    """One sweep: C, then m, then X by MH. Returns a new state."""
    rng = state.rng if rng is None else rng
    theta = _draw_theta(state, prior, rng)
    X, n_acc = state.X, np.zeros(0, dtype=int)
    if update_x:
        X, n_acc = mh_update_missing(state.X, theta, context, observations, rng, sweeps=sweeps)
    return _advanced(state, theta, X, n_acc, sweeps)


def _gibbs_step_batched(states, prior, context, observations, sweeps):
    """:func:`gibbs_step` on several chains sharing one emulator call.

    Each chain consumes its own generator in the same order as
    :func:`gibbs_step`, so the trajectories are the same as stepping the
    chains one at a time.
    """
    n = observations.n
    thetas, draws = [], []
    for st in states:
        theta = _draw_theta(st, prior, st.rng)
        thetas.append(theta)
        draws.append(draw_mh_randomness(theta, n, context.x_domain, st.rng, sweeps))
    pts = np.concatenate(
        [np.concatenate([st.X[None], d.proposals]) for st, d in zip(states, draws)]
    ).reshape(-1, prior.q)
    mean, var = context.moments(observations.inputs(pts))
    block = (sweeps + 1) * n
    out = []
    for c, (st, theta, d) in enumerate(zip(states, thetas, draws)):
        sl = slice(c * block, (c + 1) * block)
        ll_cur, ll_prop = _diag_loglik_terms(st.X, d, observations, mean[sl], var[sl])
        choice, n_acc = _sequential_accept(ll_cur, ll_prop, d.log_u)
        X = _apply_choice(st.X, d.proposals, choice)
        out.append(_advanced(st, theta, X, n_acc, sweeps))
    return out


def initial_state(prior: PriorHyper, observations: ObservationSet, x_domain: Domain, rng, max_tries=100):
    """Start from a prior draw of theta and prior-predictive X truncated to the domain."""
    for _ in range(max_tries):
        theta = sample_prior(prior, rng)
        try:
            X = sample_truncated_gaussian(theta.m, theta.C, x_domain, observations.n, rng)
        except DegenerateDomainError:
            continue
        return ChainState(theta, X, rng)
    raise DegenerateDomainError("no prior draw puts enough mass on the domain")


def brooks_gelman(chains) -> float:
    """Potential scale reduction factor of equal-length chains.

    ``chains`` is (m, n) for a scalar or (m, n, k) for k components; the
    maximum over components is returned. The statistic is
    ``sqrt((W + B) / W)`` with W the mean within-chain variance and B the
    variance of the chain means (both with divisor count, so that W + B is
    the pooled variance); it is never below 1.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[..., None]
    m, n = chains.shape[:2]
    if m < 2 or n < 10:
        raise ArgumentError("need at least 2 chains of length >= 10")
    within = chains.var(axis=1).mean(axis=0)
    between = chains.mean(axis=1).var(axis=0)
    if np.any(within <= 0):
        raise DegenerateDiagnosticError("zero within-chain variance")
    return float(np.max(np.sqrt((within + between) / within)))


@dataclass
class BrooksGelmanMonitor:
    """Burn-in gate: R-hat below ``threshold`` over ``stable`` successive iterations."""

    threshold: float = 1.05
    stable: int = 3000
    history: list = field(default_factory=list)
    streak_start: int | None = None
    converged_at: int | None = None

    def update(self, iteration: int, rhat: float) -> bool:
        self.history.append((iteration, rhat))
        if rhat < self.threshold:
            if self.streak_start is None:
                self.streak_start = iteration
            if self.converged_at is None and iteration - self.streak_start >= self.stable:
                self.converged_at = iteration
        else:
            self.streak_start = None
        return self.converged_at is not None


@dataclass
class MCMCConfig:
    n_chains: int = 3
    max_iterations: int = 20000
    check_every: int = 50
    rhat_threshold: float = 1.05
    stable_iterations: int = 3000
    thin: int = 1
    threads: int = 1
    mh_sweeps: int = 1

    def __post_init__(self):
        if self.n_chains < 2:
            raise ArgumentError("at least two chains are needed for the diagnostic")
        if self.thin < 1 or self.check_every < 1 or self.mh_sweeps < 1:
            raise ArgumentError("thin, check_every and mh_sweeps must be >= 1")


@dataclass
class ChainResult:
    draws: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    q: int
    converged: bool
    burn_in: int
    rhat_history: list
    acceptance_rate: float
    degenerate: bool
    states: list

    def columns(self):
        q = self.q
        iu = zip(*np.triu_indices(q))
        return [f"m{k + 1}" for k in range(q)] + [f"C{i + 1}{j + 1}" for i, j in iu]

    def theta_samples(self, diagonal_only=True) -> np.ndarray:
        """Draws as ``(m_1..m_q, C_11..C_qq)`` (or with the full upper triangle)."""
        if not diagonal_only:
            return self.draws
        q = self.q
        iu = np.triu_indices(q)
        diag_cols = [q + k for k, (i, j) in enumerate(zip(*iu)) if i == j]
        return self.draws[:, list(range(q)) + diag_cols]


def _advance(state, prior, context, observations, steps, trace, start, sweeps):
    for t in range(steps):
        state = gibbs_step(state, prior, context, observations, sweeps=sweeps)
        trace[start + t] = state.theta.vector()
    return state


def _advance_batched(states, prior, context, observations, steps, traces, start, sweeps):
    for t in range(steps):
        states = _gibbs_step_batched(states, prior, context, observations, sweeps)
        for c, st in enumerate(states):
            traces[c, start + t] = st.theta.vector()
    return states


def run_chain(
    config: MCMCConfig,
    prior: PriorHyper,
    context,
    observations: ObservationSet,
    seed=None,
    seeds=None,
    initial_states=None,
) -> ChainResult:
    """Run parallel chains until the Brooks-Gelman gate opens or the budget ends.

    R-hat is computed every ``check_every`` iterations on the second half of
    the traces. Burn-in ends at the first check of a run of checks below the
    threshold spanning ``stable_iterations``; the pooled draws are those after
    it. Without convergence the second halves are returned and the result is
    flagged ``converged=False``.
    """
    if seeds is None:
        seeds = np.random.SeedSequence(seed).spawn(config.n_chains)
    rngs = [np.random.default_rng(s) for s in seeds]
    if initial_states is None:
        states = [initial_state(prior, observations, context.x_domain, r) for r in rngs]
    else:
        states = [replace(s, rng=r) for s, r in zip(initial_states, rngs)]
    q = prior.q
    dim = q + q * (q + 1) // 2
    traces = np.empty((config.n_chains, config.max_iterations, dim))
    monitor = BrooksGelmanMonitor(config.rhat_threshold, config.stable_iterations)
    degenerate = False
    batched = not context.full_mse and config.threads <= 1
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    t = 0
    try:
        while t < config.max_iterations:
            steps = min(config.check_every, config.max_iterations - t)
            if batched:
                states = _advance_batched(
                    states, prior, context, observations, steps, traces, t, config.mh_sweeps
                )
            else:
                jobs = [
                    (s, prior, context, observations, steps, traces[c], t, config.mh_sweeps)
                    for c, s in enumerate(states)
                ]
                if pool is None:
                    states = [_advance(*job) for job in jobs]
                else:
                    states = list(pool.map(lambda job: _advance(*job), jobs))
            t += steps
            if t < 20:
                continue
            window = traces[:, t // 2 : t]
            if all(np.array_equal(window[0], w) for w in window[1:]):
                degenerate = True
                rhat = 1.0
            else:
                try:
                    rhat = brooks_gelman(window)
                except DegenerateDiagnosticError:
                    degenerate, rhat = True, float("inf")
            if monitor.update(t, rhat):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    converged = monitor.converged_at is not None and not degenerate
    burn_in = monitor.streak_start if converged else t // 2
    idx = np.arange(burn_in, t, config.thin)
    draws = traces[:, idx].reshape(-1, dim)
    chain = np.repeat(np.arange(config.n_chains), idx.size)
    iteration = np.tile(idx + 1, config.n_chains)
    acc = sum(s.n_accepted for s in states) / max(sum(s.n_proposed for s in states), 1)
    return ChainResult(
        draws, chain, iteration, q, converged, int(burn_in), monitor.history, acc, degenerate, states
    )


def posterior_to_csv(result: ChainResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns() + ["iteration", "chain"])
    for row, it, ch in zip(result.draws, result.iteration, result.chain):
        writer.writerow([repr(float(v)) for v in row] + [int(it), int(ch)])
    return buf.getvalue()
