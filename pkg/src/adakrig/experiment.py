"""End-to-end experiments: configuration, calibration and adaptive design runs.

A run directory holds ``design.csv``, ``posterior.csv``, ``audit.jsonl``
and ``diagnostics.json``. Everything is derived from the configuration and
its seed, so repeating a run reproduces its files byte for byte.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .criteria import (
    AuditLog,
    ECDConfig,
    SAConfig,
    WIMSEConfig,
    ecd_select,
    knn_kl_estimate,
    mmse_select,
    wimse_select,
)
from .doe import Design, Domain, augment_design, maximin_lhd, min_intersite_distance
from .errors import (
    AdakrigError,
    ArgumentError,
    BudgetError,
    ConfigError,
    DegenerateDesignError,
    UndefinedQ2Error,
)
from .forward import (
    BastosModel,
    BudgetedEvaluator,
    IdentityModel,
    SubprocessModel,
    generate_synthetic_data,
)
from .gp import KrigingModel, fit_kriging, q2_loocv, virtual_update
from .mcmc import (
    ChainResult,
    LikelihoodContext,
    MCMCConfig,
    ObservationSet,
    gibbs_step,
    initial_state,
    posterior_to_csv,
    run_chain,
)
from .prior import PriorHyper, Theta, elicit_prior

__all__ = [
    "CalibrationResult",
    "ExperimentConfig",
    "SCHEMA_VERSION",
    "STRATEGIES",
    "build_forward_model",
    "build_observations",
    "calibrate",
    "compare_runs",
    "default_config_dict",
    "fit_models",
    "initial_design",
    "load_config",
    "posterior_divergence",
    "read_posterior_csv",
    "read_run",
    "run_adaptive",
    "write_run",
]

SCHEMA_VERSION = 1
STRATEGIES = ("lhd", "mmse", "wimse", "ecd")
_TAGS = {"mmse": "MMSE", "wimse": "WIMSE", "ecd": "ECD"}


def default_config_dict() -> dict:
    """The two-input toy problem with the reference criterion settings."""
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "domain": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        "latent_dim": 2,
        "prior": {"mu": [0.0, 0.0], "C_e": [[0.18**2, 0.0], [0.0, 0.4**2]], "a": 1.0},
        "forward": {"builtin": "bastos"},
        "observations": {
            "synthetic": {
                "m": [0.52, 0.59],
                "C": [[0.19**2, 0.0], [0.0, 0.25**2]],
                "n": 30,
                "seed": 0,
            },
            "R": [1e-5],
        },
        "design": {"initial_size": 10, "lhd_iterations": 1000},
        "budget": 10,
        "strategy": "lhd",
        "refit_every": 5,
        "kriging": {"trend": "constant", "family": "sqexp", "n_starts": 8},
        "mcmc": {
            "n_chains": 3,
            "max_iterations": 20000,
            "check_every": 50,
            "rhat_threshold": 1.05,
            "stable_iterations": 3000,
            "thin": 1,
            "threads": 1,
            "mh_sweeps": 1,
        },
        "sa": {"initial_temperature": 100.0, "proposal_sd": 100.0, "iterations": 1000},
        "ecd": {"n_fantasies": 100, "l1": 1000, "l2": 1000, "k": 200, "independent": False},
        "wimse": {"alpha": 0.8, "mc_size": 1000, "normalize": True, "literal_delta": False},
        "mmse": {"minimax": False},
        "compare": {"sample_size": 1000},
    }


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown field")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in (
            "observations", "forward", "prior",
        ):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``raw`` keeps the merged JSON document."""

    raw: dict
    domain: Domain
    latent_dim: int
    prior: PriorHyper
    initial_size: int
    budget: int
    strategy: str
    seed: int
    mcmc: MCMCConfig
    sa: SAConfig
    ecd: ECDConfig
    wimse: WIMSEConfig
    minimax: bool
    refit_every: int
    base_dir: Path = field(default=Path("."))

    @property
    def x_domain(self) -> Domain:
        return self.domain.subdomain(range(self.latent_dim))

    @property
    def d_domain(self) -> Domain | None:
        Q = self.domain.dim
        return None if Q == self.latent_dim else self.domain.subdomain(range(self.latent_dim, Q))

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=1, sort_keys=True)

    def fingerprint(self, *sections) -> str:
        doc = {k: self.raw[k] for k in sections} if sections else self.raw
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with top-level or dotted fields replaced (``mcmc.threads=2``)."""
        doc = copy.deepcopy(self.raw)
        for key, value in overrides.items():
            if value is None:
                continue
            parts = key.split(".")
            node = doc
            for part in parts[:-1]:
                node = node[part]
            node[parts[-1]] = value
        return load_config(doc, self.base_dir)

    def rng(self, stream: int, *extra: int) -> np.random.Generator:
        """Independent generator for one named stream of the run."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(stream,) + extra))


def _section(doc, key, cls, path):
    try:
        return cls(**doc[key])
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from exc
    except AdakrigError as exc:
        raise ConfigError(path, str(exc)) from exc


def load_config(source, base_dir=None) -> ExperimentConfig:
    """Parse a JSON file path, JSON text or dict into a validated config."""
    if isinstance(source, dict):
        doc = source
        base = Path(base_dir or ".")
    else:
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
        base = path.parent
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    raw = _merge(default_config_dict(), doc)
    try:
        domain = Domain(raw["domain"]["lower"], raw["domain"]["upper"])
    except (AdakrigError, TypeError, KeyError) as exc:
        raise ConfigError("domain", str(exc)) from exc
    q = int(raw["latent_dim"])
    if not 1 <= q <= domain.dim:
        raise ConfigError("latent_dim", f"must lie in [1, {domain.dim}]")
    p = raw["prior"]
    try:
        if "Lambda" in p:
            prior = PriorHyper(p["mu"], p["a"], p["Lambda"], p["nu"], p.get("C_e"))
        else:
            prior = elicit_prior(p["mu"], p["C_e"], p["a"])
    except (AdakrigError, KeyError, TypeError) as exc:
        raise ConfigError("prior", str(exc)) from exc
    if prior.q != q:
        raise ConfigError("prior.mu", f"prior dimension {prior.q} differs from latent_dim {q}")
    strategy = raw["strategy"]
    if strategy not in STRATEGIES:
        raise ConfigError("strategy", f"must be one of {STRATEGIES}")
    initial = int(raw["design"]["initial_size"])
    budget = int(raw["budget"])
    if initial < 2:
        raise ConfigError("design.initial_size", "must be >= 2")
    if budget < initial:
        raise ConfigError("budget", f"budget {budget} is below the initial design size {initial}")
    if int(raw["refit_every"]) < 1:
        raise ConfigError("refit_every", "must be >= 1")
    if raw["kriging"]["trend"] not in ("none", "constant", "linear"):
        raise ConfigError("kriging.trend", "must be none, constant or linear")
    if raw["kriging"]["family"] not in ("sqexp", "matern52"):
        raise ConfigError("kriging.family", "must be sqexp or matern52")
    obs = raw["observations"]
    if not isinstance(obs, dict) or ("synthetic" in obs) == ("csv" in obs):
        raise ConfigError("observations", "give exactly one of 'synthetic' or 'csv'")
    if "R" not in obs:
        raise ConfigError("observations.R", "noise variances are required")
    fwd = raw["forward"]
    if not isinstance(fwd, dict) or ("builtin" in fwd) == ("command" in fwd):
        raise ConfigError("forward", "give exactly one of 'builtin' or 'command'")
    if "builtin" in fwd and fwd["builtin"] not in ("bastos", "identity"):
        raise ConfigError("forward.builtin", "must be 'bastos' or 'identity'")
    mcmc = _section(raw, "mcmc", MCMCConfig, "mcmc")
    sa = _section(raw, "sa", SAConfig, "sa")
    ecd = _section({"ecd": {**raw["ecd"], "mh_sweeps": mcmc.mh_sweeps}}, "ecd", ECDConfig, "ecd")
    wimse = _section(raw, "wimse", WIMSEConfig, "wimse")
    return ExperimentConfig(
        raw, domain, q, prior, initial, budget, strategy, int(raw["seed"]),
        mcmc, sa, ecd, wimse, bool(raw["mmse"]["minimax"]), int(raw["refit_every"]), base,
    )


# -- building blocks -------------------------------------------------------------
def build_forward_model(config: ExperimentConfig):
    fwd = config.raw["forward"]
    if "command" in fwd:
        return SubprocessModel(fwd["command"], config.domain.dim, int(fwd.get("output_dim", 1)))
    if fwd["builtin"] == "bastos":
        if config.domain.dim != 2:
            raise ConfigError("forward.builtin", "the Bastos function takes two inputs")
        return BastosModel()
    return IdentityModel(config.domain.dim)


def build_observations(config: ExperimentConfig, model=None) -> tuple[ObservationSet, Any]:
    """Field data from the synthetic generator or a CSV file.

    Returns the observation set and, for synthetic data, the hidden inputs.
    """
    source = config.raw["observations"]
    R = source["R"]
    if "synthetic" in source:
        syn = source["synthetic"]
        model = build_forward_model(config) if model is None else model
        try:
            theta = Theta(syn["m"], syn["C"])
            data = generate_synthetic_data(
                theta, int(syn["n"]), R, config.x_domain,
                np.random.default_rng(int(syn.get("seed", 0))), model, config.d_domain,
            )
        except (AdakrigError, KeyError) as exc:
            raise ConfigError("observations.synthetic", str(exc)) from exc
        return ObservationSet(data.y, data.R, data.d), data.X
    path = config.base_dir / source["csv"]
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("observations.csv", f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [h.strip() for h in lines[0].split(",")]
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
    d_cols = [i for i, h in enumerate(header) if h.startswith("d")]
    if not y_cols:
        raise ConfigError("observations.csv", f"{path} has no y columns")
    d = body[:, d_cols] if d_cols else None
    return ObservationSet(body[:, y_cols], R, d), None


def initial_design(config: ExperimentConfig, size: int | None = None) -> Design:
    size = config.initial_size if size is None else size
    return maximin_lhd(size, config.domain, config.rng(1), config.raw["design"]["lhd_iterations"])


def fit_models(design: Design, config: ExperimentConfig, rng) -> list[KrigingModel]:
    """One kriging model per output component of the evaluated design."""
    if not design.has_evaluations:
        raise ArgumentError("design has no evaluations")
    kr = config.raw["kriging"]
    return [
        fit_kriging(
            design.points, design.evaluations[:, j], trend=kr["trend"], family=kr["family"],
            bounds=config.domain.bounds, n_starts=int(kr["n_starts"]), rng=rng,
        )
        for j in range(design.evaluations.shape[1])
    ]


def _safe_q2(models) -> float | None:
    try:
        return float(q2_loocv(models))
    except (UndefinedQ2Error, AdakrigError):
        return None


# -- calibration -----------------------------------------------------------------
@dataclass
class CalibrationResult:
    design: Design
    models: list
    chains: ChainResult | None
    q2: float | None
    q2_history: list = field(default_factory=list)
    evaluations: int = 0
    audit: AuditLog | None = None

    def diagnostics(self, config: ExperimentConfig, strategy: str) -> dict:
        ch = self.chains
        if ch is None:
            raise ArgumentError("no posterior sample: the run skipped the final calibration")
        return {
            "strategy": strategy,
            "seed": config.seed,
            "converged": bool(ch.converged),
            "degenerate": bool(ch.degenerate),
            "burn_in": ch.burn_in,
            "iterations": int(ch.iteration.max()) if ch.iteration.size else 0,
            "rhat_history": [[int(t), float(r)] for t, r in ch.rhat_history],
            "acceptance_rate": float(ch.acceptance_rate),
            "q2": self.q2,
            "q2_history": self.q2_history,
            "design_size": len(self.design),
            "evaluations": self.evaluations,
            "delta": min_intersite_distance(self.design) if len(self.design) > 1 else None,
            "config_fingerprint": config.fingerprint(),
            "problem_fingerprint": config.fingerprint(
                "domain", "latent_dim", "prior", "forward", "observations"
            ),
        }


def calibrate(config: ExperimentConfig, design: Design, observations: ObservationSet,
              evaluations: int = 0) -> CalibrationResult:
    """Fit the emulators on an evaluated design and sample the posterior."""
    models = fit_models(design, config, config.rng(4))
    context = LikelihoodContext(models, config.x_domain)
    chains = run_chain(config.mcmc, config.prior, context, observations, seeds=_chain_seeds(config))
    q2 = _safe_q2(models)
    return CalibrationResult(design, models, chains, q2, [[len(design), q2]], evaluations)


def _chain_seeds(config: ExperimentConfig):
    return np.random.SeedSequence(config.seed, spawn_key=(2,)).spawn(config.mcmc.n_chains)


# -- adaptive loop --------------------------------------------------------------
def run_adaptive(config: ExperimentConfig, audit: AuditLog | None = None,
                 observations: ObservationSet | None = None, checkpoint_dir=None,
                 final_calibration: bool = True) -> CalibrationResult:
    """Sequential design enrichment followed by a final calibration.

    The initial maximin LHD is evaluated, then until the budget is used:
    the single sequential chain advances ``k`` Gibbs iterations, the
    strategy proposes a point, the true model is run there, and the
    emulators are refit every ``refit_every`` additions (otherwise they are
    conditioned on the new run with the kernel kept fixed). With strategy
    ``lhd`` the whole budget goes to one maximin LHD.

    Parameters
    ----------
    checkpoint_dir : path, optional
        If the loop fails, the evaluated design, the audit trail and the
        sequential chain state are written here before the error is re-raised.
    final_calibration : bool
        Run the multi-chain posterior sampler at the end. Without it the
        result carries ``chains=None`` (useful when only the design matters).
    """
    audit = AuditLog() if audit is None else audit
    model = build_forward_model(config)
    if observations is None:
        observations, _ = build_observations(config, model)
    evaluator = BudgetedEvaluator(model, config.budget)
    strategy = config.strategy
    size0 = config.budget if strategy == "lhd" else config.initial_size
    design = initial_design(config, size0)
    design = design.with_evaluations(evaluator(design.points))
    for z, h in zip(design.points, design.evaluations):
        audit.record("initial-LHD", z, float(h[0]), True, event="evaluation",
                     outputs=h.tolist(), evaluations=evaluator.count)
    models = fit_models(design, config, config.rng(4))
    q2_history = [[len(design), _safe_q2(models)]]
    progress = {"design": design, "state": None}
    try:
        if strategy != "lhd" and config.budget > len(design):
            design, models, q2_history = _enrich(
                config, design, models, q2_history, observations, evaluator, audit, progress
            )
    except (AdakrigError, np.linalg.LinAlgError):
        if checkpoint_dir is not None:
            _write_checkpoint(checkpoint_dir, config, progress["design"], audit, progress["state"])
        raise
    chains = None
    if final_calibration:
        context = LikelihoodContext(models, config.x_domain)
        chains = run_chain(config.mcmc, config.prior, context, observations, seeds=_chain_seeds(config))
    return CalibrationResult(
        design, models, chains, q2_history[-1][1], q2_history, evaluator.count, audit
    )


def _enrich(config, design, models, q2_history, observations, evaluator, audit, progress):
    """The sequential part of :func:`run_adaptive`.

    ``progress`` always holds the latest evaluated design and chain state.
    """
    strategy = config.strategy
    chain_rng = config.rng(5)
    context = LikelihoodContext(models, config.x_domain)
    state = initial_state(config.prior, observations, config.x_domain, chain_rng)
    progress["state"] = state
    n_added = 0
    while len(design) < config.budget:
        context = LikelihoodContext(models, config.x_domain)
        for _ in range(config.ecd.k):
            state = gibbs_step(state, config.prior, context, observations,
                               sweeps=config.mcmc.mh_sweeps)
        progress["state"] = state
        crit_rng = config.rng(3, n_added)
        z = _select(strategy, config, state, context, observations, crit_rng, audit, len(design))
        h = evaluator(z[None])[0]
        design = augment_design(design, z, h, _TAGS[strategy])
        progress["design"] = design
        n_added += 1
        audit.record(_TAGS[strategy], z, float(h[0]), True, event="evaluation",
                     outputs=h.tolist(), evaluations=evaluator.count)
        if n_added % config.refit_every == 0 or len(design) >= config.budget:
            models = fit_models(design, config, config.rng(4, n_added))
        else:
            try:
                models = [virtual_update(m, z, hj) for m, hj in zip(models, h)]
            except DegenerateDesignError:
                models = fit_models(design, config, config.rng(4, n_added))
        q2_history.append([len(design), _safe_q2(models)])
    return design, models, q2_history


def _write_checkpoint(out_dir, config, design, audit, state):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "design.csv").write_text(design.to_csv())
    (out / "audit.jsonl").write_text("".join(json.dumps(r) + "\n" for r in audit.records))
    (out / "config.json").write_text(config.to_json())
    if state is not None:
        (out / "chain_state.json").write_text(state.to_json())


def _select(strategy, config, state, context, observations, rng, audit, size):
    if size >= config.budget:
        raise BudgetError(f"design already holds {size} of {config.budget} runs")
    if strategy == "ecd":
        return ecd_select(state, config.prior, context, observations, config.ecd, config.sa,
                          rng, size, config.budget, audit)
    if strategy == "wimse":
        return wimse_select(context, state.theta, observations, config.wimse, config.sa,
                            rng, config.prior, audit)
    return mmse_select(context.models, config.domain, config.sa, rng, config.minimax, audit)


# -- run directories ------------------------------------------------------------
def write_run(out_dir, config: ExperimentConfig, result: CalibrationResult, strategy: str) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "design.csv").write_text(result.design.to_csv())
    (out / "posterior.csv").write_text(posterior_to_csv(result.chains))
    audit_path = out / "audit.jsonl"
    records = result.audit.records if result.audit is not None else []
    audit_path.write_text("".join(json.dumps(r) + "\n" for r in records))
    diag = result.diagnostics(config, strategy)
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=1))
    (out / "config.json").write_text(config.to_json())
    return diag


def read_posterior_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except (OSError, IndexError, ValueError) as exc:
        raise ArgumentError(f"cannot parse {path}: {exc}") from exc
    return header, data.reshape(len(lines) - 1, len(header))


def read_run(run_dir) -> dict:
    """Load a run's diagnostics and posterior draws of ``(m, diag C)``."""
    run = Path(run_dir)
    if not run.is_dir():
        raise ArgumentError(f"{run} is not a run directory")
    diag_path = run / "diagnostics.json"
    try:
        diag = json.loads(diag_path.read_text())
    except OSError as exc:
        raise ArgumentError(f"missing {diag_path}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"cannot parse {diag_path}: {exc}") from exc
    header, data = read_posterior_csv(run / "posterior.csv")
    keep = [i for i, h in enumerate(header) if h.startswith("m") or (
        h.startswith("C") and len(h) == 3 and h[1] == h[2]
    )]
    return {"dir": run, "diagnostics": diag, "theta": data[:, keep], "columns": [header[i] for i in keep]}


def _subsample(draws: np.ndarray, size: int, offset: int = 0) -> np.ndarray:
    """Every other point (starting at ``offset``) of an evenly spaced thinning.

    The two offsets give disjoint subsamples, so a posterior compared with
    itself is estimated from distinct draws instead of coincident ones.
    """
    n = draws.shape[0]
    idx = np.unique(np.linspace(0, n - 1, min(2 * size, n)).round().astype(int))
    return draws[idx[offset::2]]


def posterior_divergence(run_theta, benchmark_theta, size=1000) -> float:
    """k-NN estimate of ``KL(benchmark || run)`` on evenly spaced draws."""
    return knn_kl_estimate(_subsample(benchmark_theta, size, 0), _subsample(run_theta, size, 1))


def compare_runs(run_dirs, benchmark_dir, sample_size=1000) -> list[dict]:
    """KL to the benchmark posterior, Q2 and budget used, one row per run."""
    bench = read_run(benchmark_dir)
    fp = bench["diagnostics"].get("problem_fingerprint")
    rows = []
    for d in run_dirs:
        run = read_run(d)
        if run["diagnostics"].get("problem_fingerprint") != fp:
            raise ConfigError(str(d), "run does not share the benchmark's prior and observations")
        diag = run["diagnostics"]
        rows.append({
            "run": str(run["dir"]),
            "strategy": diag.get("strategy"),
            "kl_to_benchmark": posterior_divergence(run["theta"], bench["theta"], sample_size),
            "q2": diag.get("q2"),
            "evaluations": diag.get("evaluations"),
            "converged": diag.get("converged"),
        })
    return rows
