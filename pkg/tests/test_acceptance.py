"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4 and 6 are long end-to-end statistical checks and are marked
``slow``; deselect them with ``-m "not slow"`` for a quick pass.
"""

import time
import warnings

import numpy as np
import pytest

from adakrig.criteria import (
    SAConfig,
    WIMSEConfig,
    imse_estimate,
    knn_kl_estimate,
    simulated_annealing,
    wimse_points,
    wimse_score,
)
from adakrig.doe import Domain, is_latin, maximin_lhd, min_intersite_distance
from adakrig.experiment import build_observations, load_config, posterior_divergence, run_adaptive
from adakrig.forward import generate_synthetic_data, toy_problem
from adakrig.gp import Kernel, KrigingModel, fit_kriging, trend_matrix, virtual_update
from adakrig.mcmc import (
    ChainState,
    ExactContext,
    LikelihoodContext,
    MCMCConfig,
    ObservationSet,
    brooks_gelman,
    gibbs_step,
    posterior_to_csv,
    run_chain,
)
from adakrig.prior import Theta, elicit_prior, inverse_wishart_mean

TOY_PRIOR = elicit_prior([0.0, 0.0], np.diag([0.18**2, 0.4**2]), 1.0)
TOY_M = [0.52, 0.59]
TOY_C = [[0.19**2, 0.0], [0.0, 0.25**2]]


def toy_config(seed, data_seed, **sections):
    doc = {
        "seed": seed,
        "observations": {"synthetic": {"m": TOY_M, "C": TOY_C, "n": 30, "seed": data_seed}, "R": [1e-5]},
    }
    doc.update(sections)
    return load_config(doc)


# -- 1: kriging against Gaussian conditioning ------------------------------------
def joint_gaussian_conditioning(Z, h, Zs, kernel):
    """Condition the joint law of ``(h(Z), h(Zs))`` on the observed block."""
    allz = np.vstack([Z, Zs])
    joint = kernel.cov(allz, allz) + kernel.nugget * np.diag(np.r_[np.ones(len(Z)), np.zeros(len(Zs))])
    n = len(Z)
    Koo, Kso, Kss = joint[:n, :n], joint[n:, :n], joint[n:, n:]
    gain = np.linalg.solve(Koo, Kso.T).T
    return gain @ h, Kss - gain @ Kso.T


def bordered_system(Z, h, Zs, kernel, trend):
    """Universal kriging through the saddle-point system with an unknown mean."""
    K = kernel.cov(Z, Z) + kernel.nugget * np.eye(len(Z))
    F, Fs = trend_matrix(trend, Z), trend_matrix(trend, Zs)
    p = F.shape[1]
    A = np.block([[K, F], [F.T, np.zeros((p, p))]])
    B = np.hstack([kernel.cov(Zs, Z), Fs])
    W = np.linalg.solve(A, B.T)
    return W[: len(Z)].T @ h, kernel.cov(Zs, Zs) - B @ W


def test_criterion_1_kriging_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    interpolation_ok = monotone_ok = True
    instances = 0
    for trend in ("none", "constant"):
        for _ in range(30):
            N, Q = int(rng.integers(2, 6)), int(rng.integers(1, 3))
            Z, h, Zs = rng.random((N, Q)), rng.standard_normal(N), rng.random((4, Q))
            variance = float(rng.uniform(0.5, 2.0))
            kernel = Kernel(variance, tuple(rng.uniform(0.1, 0.6, Q)), 1e-6 * variance,
                            rng.choice(["sqexp", "matern52"]))
            model = KrigingModel(Z, h, kernel, trend=trend)
            if trend == "none":
                mean_ref, cov_ref = joint_gaussian_conditioning(Z, h, Zs, kernel)
            else:
                mean_ref, cov_ref = bordered_system(Z, h, Zs, kernel, trend)
            mean_err = np.abs(model.predict(Zs).mean - mean_ref).max() / np.abs(mean_ref).max()
            cov_err = np.abs(model.cov(Zs, Zs) - cov_ref).max() / variance
            worst = max(worst, mean_err, cov_err)
            instances += 1

            exact = KrigingModel(Z, h, Kernel(variance, kernel.lengthscales, 0.0, kernel.family), trend=trend)
            at_design = exact.predict(Z)
            scale = max(1.0, np.abs(h).max())
            interpolation_ok &= bool(np.abs(at_design.mean - h).max() < 1e-6 * scale)
            interpolation_ok &= bool(at_design.variance.max() < 1e-6 * variance)
            z_new = rng.random((1, Q))
            if not model.is_design_point(z_new):
                grid = rng.random((40, Q))
                updated = virtual_update(model, z_new, 0.0)
                monotone_ok &= bool(np.all(updated.predict(grid).variance <= model.predict(grid).variance + 1e-12))
    elapsed = time.perf_counter() - start
    ok = verdict(1, "kriging oracle", worst < 1e-10 and interpolation_ok and monotone_ok and elapsed < 10,
                 f"{instances} instances, worst relative error {worst:.1e}, interpolation {interpolation_ok}, "
                 f"variance monotone {monotone_ok}, {elapsed:.1f}s")
    assert ok


# -- 2: conjugate posterior --------------------------------------------------------
def batch_means_se(x, batches=50):
    size = len(x) // batches
    means = x[: size * batches].reshape(batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def test_criterion_2_conjugate_mcmc(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    y = np.clip(rng.normal([0.5, 0.6], [0.15, 0.2], size=(30, 2)), 0.02, 0.98)
    obs = ObservationSet(y, [1e-10, 1e-10])
    context = ExactContext(lambda Z: Z, Domain.unit(2), 2)
    state = ChainState(Theta([0.5, 0.5], np.eye(2) * 0.05), y.copy(), np.random.default_rng(1))
    trace = np.empty((20_000, 5))
    for t in range(len(trace)):
        state = gibbs_step(state, TOY_PRIOR, context, obs)
        trace[t] = state.theta.vector()

    n, a, mu = len(y), TOY_PRIOR.a, TOY_PRIOR.mu
    xbar = y.mean(axis=0)
    dev = y - xbar
    scale = TOY_PRIOR.Lambda + dev.T @ dev + n * a / (n + a) * np.outer(xbar - mu, xbar - mu)
    C_mean = inverse_wishart_mean(scale, TOY_PRIOR.nu + n)
    expected = np.concatenate([(a * mu + n * xbar) / (n + a), C_mean[np.triu_indices(2)]])
    z_scores = np.abs(trace.mean(axis=0) - expected) / batch_means_se(trace)
    elapsed = time.perf_counter() - start
    ok = verdict(2, "conjugate MCMC oracle", bool(np.all(z_scores < 4)) and elapsed < 60,
                 f"max |error|/SE {z_scores.max():.2f} over 2e4 iterations, {elapsed:.1f}s")
    assert ok


# -- 3: k-NN KL --------------------------------------------------------------------
GAUSSIAN_PAIRS = [
    # (mean_p, sd_p, mean_q, sd_q) per coordinate; KL is additive across coordinates
    ([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]),
    ([0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [1.0, 1.0]),
    ([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.5]),
    ([0.0, 0.5], [0.5, 1.0], [0.3, 0.0], [1.0, 0.8]),
]


def gaussian_kl(mp, sp, mq, sq):
    mp, sp, mq, sq = map(np.asarray, (mp, sp, mq, sq))
    return float(np.sum(np.log(sq / sp) + (sp**2 + (mp - mq) ** 2) / (2 * sq**2) - 0.5))


def median_kl_error(pair, size, reps=20):
    mp, sp, mq, sq = pair
    oracle = gaussian_kl(mp, sp, mq, sq)
    errs = []
    for seed in range(reps):
        rng = np.random.default_rng(seed)
        P = mp + sp * rng.standard_normal((size, 2))
        Q = mq + sq * rng.standard_normal((size, 2))
        errs.append(abs(knn_kl_estimate(P, Q) - oracle))
    return float(np.median(errs))


def test_criterion_3_knn_kl(verdict):
    start = time.perf_counter()
    at_5000 = [median_kl_error(pair, 5000) for pair in GAUSSIAN_PAIRS]
    trend = [median_kl_error(GAUSSIAN_PAIRS[2], size) for size in (100, 1000, 10_000)]
    elapsed = time.perf_counter() - start
    decreasing = trend[0] > trend[1] > trend[2]
    ok = verdict(3, "k-NN KL estimator", max(at_5000) < 0.1 and decreasing and elapsed < 60,
                 f"median errors at L=5000 {np.round(at_5000, 3).tolist()}, "
                 f"L=100/1000/10000 {np.round(trend, 3).tolist()}, {elapsed:.1f}s")
    assert ok


# -- 4: toy experiment majority check ---------------------------------------------
DESK = {
    "mcmc": {"max_iterations": 6000, "stable_iterations": 1000, "mh_sweeps": 10},
    "sa": {"iterations": 200},
    "ecd": {"n_fantasies": 20, "l1": 300, "l2": 300, "k": 200},
    "wimse": {"mc_size": 1000, "alpha": 0.8},
}
ARMS = {
    "benchmark": {"strategy": "lhd", "budget": 100, "design.initial_size": 100},
    "lhd10": {"strategy": "lhd", "budget": 10},
    "ecd": {"strategy": "ecd", "budget": 10, "design.initial_size": 5},
    "wimse": {"strategy": "wimse", "budget": 10, "design.initial_size": 5, "sa.iterations": 1000},
}


@pytest.mark.slow
def test_criterion_4_toy_experiment(verdict):
    start = time.perf_counter()
    wins = {"ecd": 0, "wimse": 0}
    rows = []
    for rep in range(10):
        base = toy_config(rep, 1000 + rep, **DESK)
        obs, _ = build_observations(base)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            samples = {
                name: run_adaptive(base.with_overrides(**over), observations=obs).chains.theta_samples()
                for name, over in ARMS.items()
            }
        kl = {k: posterior_divergence(v, samples["benchmark"], 3000) for k, v in samples.items() if k != "benchmark"}
        for k in wins:
            wins[k] += kl[k] < kl["lhd10"]
        rows.append({k: round(v, 2) for k, v in kl.items()})
    elapsed = time.perf_counter() - start
    ok = verdict(4, "toy-experiment majority", wins["ecd"] >= 7 and wins["wimse"] >= 7 and elapsed <= 1800,
                 f"ECD beats 10-LHD {wins['ecd']}/10, WIMSE beats 10-LHD {wins['wimse']}/10, "
                 f"{elapsed:.0f}s; KL per replicate {rows}")
    assert ok


# -- 5: WIMSE endpoints -------------------------------------------------------------
@pytest.fixture(scope="module")
def toy_emulator():
    problem = toy_problem()
    design = maximin_lhd(10, problem.domain, np.random.default_rng(0))
    h = problem.model.evaluate(design.points)[:, 0]
    model = fit_kriging(design.points, h, bounds=problem.domain.bounds, rng=np.random.default_rng(1))
    data = generate_synthetic_data(
        problem.theta_true, problem.n, problem.R, problem.domain, np.random.default_rng(2), problem.model
    )
    return problem, design, LikelihoodContext([model], problem.domain), ObservationSet(data.y, problem.R)


def test_criterion_5_wimse_endpoints(verdict, toy_emulator):
    start = time.perf_counter()
    problem, design, context, obs = toy_emulator
    mc = wimse_points(problem.theta_true, context, obs, WIMSEConfig(mc_size=1000),
                      np.random.default_rng(3), prior=problem.prior)
    noise = np.random.default_rng(4).normal(size=mc.points.shape[0])
    reweighted = mc._replace(log_weight=np.where(np.isfinite(mc.log_weight), noise, -np.inf))
    candidates = np.vstack([np.random.default_rng(5).random((8, 2)), design.points[:2]])

    imse_gap = weight_gap = 0.0
    for z in candidates:
        score = wimse_score(z, 1.0, context.models, mc)
        imse_gap = max(imse_gap, abs(score - imse_estimate(context.models, z, mc)) / abs(score))
        weight_gap = max(weight_gap, abs(wimse_score(z, 1.0, context.models, reweighted) - score) / abs(score))
    zero = np.array([wimse_score(z, 0.0, context.models, mc) for z in candidates])
    spread = float(np.ptp(zero) / np.abs(zero).max())
    elapsed = time.perf_counter() - start
    ok = verdict(5, "WIMSE endpoints", imse_gap <= 1e-12 and weight_gap <= 1e-12 and spread <= 1e-12 and elapsed < 60,
                 f"alpha=1 vs IMSE {imse_gap:.1e}, alpha=1 weight change {weight_gap:.1e}, "
                 f"alpha=0 spread over candidates {spread:.1e}, {elapsed:.1f}s")
    assert ok


# -- 6: Q2 after adaptive enrichment --------------------------------------------------
@pytest.mark.slow
def test_criterion_6_q2_trend(verdict):
    start = time.perf_counter()
    wins, rows = 0, []
    for rep in range(10):
        base = toy_config(
            rep, 2000 + rep,
            sa={"iterations": 100}, ecd={"n_fantasies": 20, "l1": 300, "l2": 300, "k": 50},
            design={"initial_size": 10, "lhd_iterations": 1000}, budget=20,
        )
        obs, _ = build_observations(base)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ecd = run_adaptive(base.with_overrides(strategy="ecd"), observations=obs, final_calibration=False)
            lhd = run_adaptive(base.with_overrides(strategy="lhd"), observations=obs, final_calibration=False)
        wins += ecd.q2 > lhd.q2
        rows.append((round(ecd.q2, 4), round(lhd.q2, 4)))
    elapsed = time.perf_counter() - start
    ok = verdict(6, "Q2 trend on Bastos", wins >= 7 and elapsed < 600,
                 f"10+10 ECD beats 20-LHD on {wins}/10 seeds, {elapsed:.0f}s; (ECD, LHD) Q2 {rows}")
    assert ok


# -- 7: simulated annealing ------------------------------------------------------------
def test_criterion_7_simulated_annealing(verdict):
    start = time.perf_counter()
    domain = Domain([0.0], [10.0])
    hits, best_so_far = 0, True
    for seed in range(20):
        run = simulated_annealing(lambda z: (z[0] - 3.0) ** 2, domain, SAConfig(), np.random.default_rng(seed),
                                  full_output=True)
        hits += abs(run.point[0] - 3.0) < 0.1
        best_so_far &= bool(
            np.all(np.diff(run.best_values) <= 0)
            and run.value == run.current_values.min()
            and np.all(run.best_values == np.minimum.accumulate(run.current_values))
        )
    elapsed = time.perf_counter() - start
    ok = verdict(7, "simulated annealing", hits >= 18 and best_so_far and elapsed < 10,
                 f"minimum within 0.1 on {hits}/20 seeds, best-so-far {best_so_far}, {elapsed:.1f}s")
    assert ok


# -- 8: maximin LHD --------------------------------------------------------------------
def test_criterion_8_maximin_lhd(verdict):
    start = time.perf_counter()
    domain = Domain([0.0, 0.0], [1.0, 1.0])
    latin = improved = True
    for seed in range(20):
        design, history = maximin_lhd(10, domain, np.random.default_rng(seed), return_history=True)
        latin &= bool(is_latin(design.unit_points))
        improved &= bool(min_intersite_distance(design) >= history[0] - 1e-15)
    elapsed = time.perf_counter() - start
    ok = verdict(8, "maximin LHD", latin and improved and elapsed < 10,
                 f"Latin on 20/20 {latin}, optimized >= initial on 20/20 {improved}, {elapsed:.1f}s")
    assert ok


# -- 9: Brooks-Gelman gating ----------------------------------------------------------
def test_criterion_9_brooks_gelman(verdict):
    start = time.perf_counter()
    rhat_iid = brooks_gelman(np.random.default_rng(6).standard_normal((3, 2000, 5)))
    rng = np.random.default_rng(0)
    y = np.clip(rng.normal([0.5, 0.6], [0.15, 0.2], size=(10, 2)), 0.02, 0.98)
    config = MCMCConfig(n_chains=3, max_iterations=8000, check_every=50, stable_iterations=3000, mh_sweeps=3)
    result = run_chain(config, TOY_PRIOR, ExactContext(lambda Z: Z, Domain.unit(2), 2),
                       ObservationSet(y, [0.01, 0.01]), seed=16)
    checks = [t for t, _ in result.rhat_history]
    schedule = (
        all(t % 50 == 0 for t in checks)
        and result.converged
        and checks[-1] - result.burn_in >= 3000
        and all(r < 1.05 for t, r in result.rhat_history if t >= result.burn_in)
    )
    elapsed = time.perf_counter() - start
    ok = verdict(9, "Brooks-Gelman gating", rhat_iid < 1.05 and schedule and elapsed < 30,
                 f"iid R-hat {rhat_iid:.4f}, schedule exercised {schedule} "
                 f"(stopped at {checks[-1]}, burn-in {result.burn_in}), {elapsed:.1f}s")
    assert ok


# -- 10: reproducibility ------------------------------------------------------------------
def test_criterion_10_reproducibility(verdict):
    config = toy_config(
        7, 7,
        design={"initial_size": 6, "lhd_iterations": 200}, budget=8, strategy="ecd",
        mcmc={"n_chains": 2, "max_iterations": 1000, "stable_iterations": 300},
        sa={"iterations": 20}, ecd={"n_fantasies": 5, "l1": 100, "l2": 100, "k": 20},
    )
    texts = {}
    for strategy in ("ecd", "wimse", "lhd"):
        cfg = config.with_overrides(strategy=strategy)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            texts[strategy] = [posterior_to_csv(run_adaptive(cfg).chains) for _ in range(2)]
    same = {k: v[0] == v[1] for k, v in texts.items()}
    ok = verdict(10, "reproducibility", all(same.values()),
                 f"byte-identical posterior CSVs per strategy {same}")
    assert ok
