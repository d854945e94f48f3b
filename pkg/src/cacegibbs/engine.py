"""Data-augmentation Gibbs sampler for complier average causal effects.

Each iteration alternates: stratum membership draws for the two mixture
patterns, imputation of missing observed outcomes, imputation of complier
counterfactual outcomes, a stratum-parameter update, an outcome-parameter
update, and the causal-effect computation over currently labeled compliers.

Model variants
--------------
A      probit stratum model, per-group covariate slopes
Astar  probit stratum model, one covariate slope shared by all groups
B      probit stratum model, no covariate in the outcome model
Cstar  multinomial-logit stratum model, shared covariate slope
D      covariate-free stratum proportions, no covariate in the outcome model
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import Dataset, ObservedPattern
from .distributions import RngStream, sample_dirichlet
from .errors import ChainAbortError, SingularPosteriorError, ValidationError
from .outcomes import (
    GROUP_ALWAYS,
    GROUP_COMPLIER_CTRL,
    GROUP_COMPLIER_TRT,
    GROUP_NEVER,
    OutcomeParams,
    OutcomePriors,
    impute_outcomes,
    outcome_groups,
    update_outcome_params,
)
from .strata import (
    ALWAYS_TAKER,
    COMPLIER,
    NEVER_TAKER,
    MlogitProposal,
    MlogitStratumParams,
    ProbitStratumParams,
    StratumProportions,
    log_stratum_probs,
    sample_latent_utilities,
    update_mlogit_gamma,
    update_probit_beta,
    update_proportions,
)

VARIANTS = ("A", "Astar", "B", "Cstar", "D")

_VARIANT_ALIASES = {"A*": "Astar", "C*": "Cstar"}

PROBIT_PARAM_NAMES = (
    "never_probit_intercept",
    "never_probit_slope",
    "always_probit_intercept",
    "always_probit_slope",
)
MLOGIT_PARAM_NAMES = (
    "never_logit_intercept",
    "never_logit_slope",
    "always_logit_intercept",
    "always_logit_slope",
)
PROPORTION_PARAM_NAMES = ("prop_complier", "prop_never", "prop_always")
OUTCOME_PARAM_NAMES = (
    "y_n_intercept",
    "y_n_slope",
    "y_a_intercept",
    "y_a_slope",
    "y_c0_intercept",
    "y_c0_slope",
    "y_c1_intercept",
    "y_c1_slope",
    "sigma2",
)

# how many iterations between mlogit proposal adaptations during burn-in
_ADAPT_EVERY = 50


def normalize_variant(variant: str) -> str:
    v = _VARIANT_ALIASES.get(variant, variant)
    if v not in VARIANTS:
        raise ValidationError(
            f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}"
        )
    return v


def default_param_names(variant: str) -> tuple[str, ...]:
    """Scalar parameter names, in saved-draw column order, for a variant."""
    variant = normalize_variant(variant)
    if variant in ("A", "Astar", "B"):
        stratum = PROBIT_PARAM_NAMES
    elif variant == "Cstar":
        stratum = MLOGIT_PARAM_NAMES
    else:
        stratum = PROPORTION_PARAM_NAMES
    return stratum + OUTCOME_PARAM_NAMES


@dataclass(frozen=True)
class PriorConfig:
    """All prior hyperparameters, with the conventional defaults.

    ``precision_rate`` is read under ``gamma_convention``: with
    ``"shape-rate"`` (default) the prior precision mean is shape/rate = 1;
    with ``"shape-scale"`` the value is a scale, i.e. rate = 1/value, giving
    prior mean shape*value = 1e-4.  ``outcome_center`` of None means "use
    the overall mean of the observed outcomes", frozen when a fit starts.
    """

    beta_variance: float = 5.0
    mlogit_variance: float = 5.0
    intercept_variance: float = 100.0
    slope_variance: float = 100.0
    outcome_center: float | None = None
    precision_shape: float = 0.01
    precision_rate: float = 0.01
    gamma_convention: str = "shape-rate"
    dirichlet_concentration: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def effective_precision_rate(self) -> float:
        if self.gamma_convention == "shape-rate":
            return self.precision_rate
        if self.gamma_convention == "shape-scale":
            return 1.0 / self.precision_rate
        raise ValidationError(
            f"gamma_convention must be 'shape-rate' or 'shape-scale', "
            f"got {self.gamma_convention!r}"
        )


@dataclass(frozen=True)
class ModelConfig:
    """Everything that determines a fit besides the dataset itself."""

    variant: str = "Astar"
    burn_in: int = 5000
    kept: int = 5000
    thin: int = 10
    n_chains: int = 3
    seed: int = 0
    marginal_missing_y: bool = False
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.burn_in < 0 or self.kept < 0:
            raise ValidationError("burn_in and kept must be nonnegative")
        if self.thin < 1:
            raise ValidationError("thin must be at least 1")
        if self.n_chains < 1:
            raise ValidationError("n_chains must be at least 1")
        self.priors.effective_precision_rate()

    @property
    def n_saved_per_chain(self) -> int:
        return self.kept // self.thin


@dataclass
class ParameterState:
    """Current stratum and outcome parameters of one chain."""

    stratum: object
    outcome: OutcomeParams

    def to_vector(self) -> np.ndarray:
        s = self.stratum
        if isinstance(s, ProbitStratumParams):
            head = s.beta
        elif isinstance(s, MlogitStratumParams):
            head = np.concatenate([s.gamma_n, s.gamma_a])
        elif isinstance(s, StratumProportions):
            head = s.pi
        else:
            raise TypeError(f"unknown stratum params {type(s)!r}")
        return np.concatenate(
            [head, self.outcome.alpha.ravel(), [self.outcome.sigma2]]
        )


@dataclass
class StratumState:
    """Per-patient latent state of one chain."""

    labels: np.ndarray  # stratum codes, known patients fixed
    y_fill: np.ndarray  # observed outcome, or current imputation
    y_cf: np.ndarray  # complier counterfactual outcome, NaN elsewhere
    cf_from_trt: np.ndarray  # counterfactual drawn from treated complier group
    u_never: np.ndarray | None = None
    u_split: np.ndarray | None = None


@dataclass(frozen=True)
class Chain:
    """Saved draws of one chain."""

    chain_index: int
    variant: str
    seed: int
    stream_id: int
    burn_in: int
    kept: int
    thin: int
    n_patients: int
    param_names: tuple[str, ...]
    params: np.ndarray  # (n_saved, n_params)
    cace: np.ndarray  # (n_saved,), NaN where no compliers were labeled
    n_compliers: np.ndarray  # (n_saved,)
    complier_bits: np.ndarray  # (n_saved, ceil(n/8)) packed complier indicators
    cf_trt_bits: np.ndarray  # same packing; set where counterfactual came from arm 1

    @property
    def n_saved(self) -> int:
        return self.params.shape[0]

    @property
    def saved_iterations(self) -> np.ndarray:
        return np.arange(1, self.n_saved + 1) * self.thin

    @property
    def n_undefined_cace(self) -> int:
        return int(np.isnan(self.cace).sum())

    def complier_indicators(self) -> np.ndarray:
        """Unpacked (n_saved, n_patients) boolean complier indicators."""
        return np.unpackbits(self.complier_bits, axis=1, count=self.n_patients).astype(
            bool
        )

    def cf_trt_indicators(self) -> np.ndarray:
        return np.unpackbits(self.cf_trt_bits, axis=1, count=self.n_patients).astype(
            bool
        )


@dataclass(frozen=True)
class ChainFailure:
    """Why a chain produced no draws."""

    chain_index: int
    error_type: str
    message: str


@dataclass(frozen=True)
class ModelFit:
    """Result of running all chains of one configuration."""

    config: ModelConfig
    chains: tuple[Chain, ...]
    failures: tuple[ChainFailure, ...]

    @property
    def param_names(self) -> tuple[str, ...]:
        return default_param_names(self.config.variant)

    def pooled_params(self) -> dict[str, np.ndarray]:
        """Concatenate saved scalar parameters over chains, in chain order."""
        stacked = np.concatenate([c.params for c in self.chains], axis=0)
        return {name: stacked[:, j] for j, name in enumerate(self.param_names)}

    def pooled_cace(self) -> np.ndarray:
        return np.concatenate([c.cace for c in self.chains])

    def pooled_n_compliers(self) -> np.ndarray:
        return np.concatenate([c.n_compliers for c in self.chains])


def covariate_center(dataset: Dataset) -> float:
    """Covariate origin of the internal model design, frozen per fit.

    Every design matrix uses x minus this sample mean, so intercepts are
    interpretable at a typical patient: outcome intercepts are comparable
    to the observed outcome mean (where their prior is centered) and
    membership intercepts to the marginal stratum shares.  Without this,
    a steep outcome slope would put the true intercept far from the
    data-centered prior and bias the fit.
    """
    return float(dataset.x.mean())


def resolve_outcome_priors(dataset: Dataset, priors: PriorConfig) -> OutcomePriors:
    """Freeze the data-dependent intercept prior center for a fit."""
    if priors.outcome_center is not None:
        center = float(priors.outcome_center)
    else:
        observed = dataset.y[~dataset.y_missing]
        if observed.size == 0:
            raise ValidationError(
                "cannot center outcome priors: no observed outcomes"
            )
        center = float(observed.mean())
    return OutcomePriors(
        center=center,
        intercept_variance=priors.intercept_variance,
        slope_variance=priors.slope_variance,
        precision_shape=priors.precision_shape,
        precision_rate=priors.effective_precision_rate(),
    )


def _log_density_at(y, x, group, outcome: OutcomeParams):
    mean = outcome.alpha[group, 0] + outcome.alpha[group, 1] * x
    r = y - mean
    return -0.5 * (np.log(2.0 * np.pi * outcome.sigma2) + r * r / outcome.sigma2)


def _complier_prob_core(log_psi_c, log_psi_t, log_g_c, log_g_t):
    """Stable Bernoulli probability for the mixture membership draw.

    Works entirely in log space; when both strata are impossible under the
    current parameters (both log membership probabilities -inf) the draw
    degrades to an even split.
    """
    log_num = log_psi_c + log_g_c
    log_alt = log_psi_t + log_g_t
    with np.errstate(invalid="ignore"):
        diff = log_num - log_alt
    p = expit(diff)
    return np.where(np.isnan(diff), 0.5, p)


def complier_probability(x, y, z, state: ParameterState):
    """Posterior probability that a mixture patient is a complier.

    For a control-arm patient (z=0) the alternative stratum is never-taker;
    for a treated-arm patient (z=1) it is always-taker.  ``y`` may be the
    observed or currently imputed outcome; pass ``y=None`` to drop the
    outcome-density factor and use the membership probabilities alone.
    """
    x = np.asarray(x, dtype=float)
    log_psi_c, log_psi_n, log_psi_a = log_stratum_probs(x, state.stratum)
    if z == 0:
        log_psi_t, t_group, c_group = log_psi_n, GROUP_NEVER, GROUP_COMPLIER_CTRL
    else:
        log_psi_t, t_group, c_group = log_psi_a, GROUP_ALWAYS, GROUP_COMPLIER_TRT
    if y is None:
        with np.errstate(invalid="ignore"):
            diff = log_psi_c - log_psi_t
        return np.where(np.isnan(diff), 0.5, expit(diff))
    y = np.asarray(y, dtype=float)
    log_g_c = _log_density_at(y, x, c_group, state.outcome)
    log_g_t = _log_density_at(y, x, t_group, state.outcome)
    return _complier_prob_core(log_psi_c, log_psi_t, log_g_c, log_g_t)


class _ChainContext:
    """Immutable per-fit data shared by all iterations of a chain."""

    def __init__(self, dataset: Dataset, config: ModelConfig):
        self.config = config
        self.variant = config.variant
        self.z = dataset.z.astype(np.int8)
        self.x = dataset.x - covariate_center(dataset)
        self.y = dataset.y
        self.y_missing = dataset.y_missing
        self.n = dataset.n
        pat = dataset.pattern
        self.ctrl_mix = np.nonzero(pat == ObservedPattern.MIXTURE_CONTROL_ARM.value)[0]
        self.trt_mix = np.nonzero(pat == ObservedPattern.MIXTURE_TREATED_ARM.value)[0]
        self.base_labels = np.empty(self.n, dtype=np.int8)
        self.base_labels[pat == ObservedPattern.KNOWN_NEVER_TAKER.value] = NEVER_TAKER
        self.base_labels[pat == ObservedPattern.KNOWN_ALWAYS_TAKER.value] = (
            ALWAYS_TAKER
        )
        self.base_labels[self.ctrl_mix] = COMPLIER
        self.base_labels[self.trt_mix] = COMPLIER
        self.outcome_priors = resolve_outcome_priors(dataset, config.priors)
        observed = dataset.y[~dataset.y_missing]
        if observed.size < 2:
            raise ValidationError(
                "fitting requires at least two observed outcomes"
            )
        self.sigma2_init = float(observed.var(ddof=1))
        if self.sigma2_init <= 0:
            raise ValidationError("observed outcomes are constant")
        self.missing_idx = np.nonzero(self.y_missing)[0]
        self.ctrl_mix_missing = self.y_missing[self.ctrl_mix]
        self.trt_mix_missing = self.y_missing[self.trt_mix]


def _sample_memberships(ctx: _ChainContext, state, params: ParameterState, rng):
    """Redraw the latent stratum of every mixture patient."""
    marginal = ctx.config.marginal_missing_y
    for idx, alt_label, arm, miss_mask in (
        (ctx.ctrl_mix, NEVER_TAKER, 0, ctx.ctrl_mix_missing),
        (ctx.trt_mix, ALWAYS_TAKER, 1, ctx.trt_mix_missing),
    ):
        if idx.size == 0:
            continue
        x = ctx.x[idx]
        y = state.y_fill[idx]
        p = complier_probability(x, y, arm, params)
        if marginal and miss_mask.any():
            p_marg = complier_probability(x[miss_mask], None, arm, params)
            p = p.copy()
            p[miss_mask] = p_marg
        draws = rng.uniform(size=idx.size)
        state.labels[idx] = np.where(draws < p, COMPLIER, alt_label)


def _impute_missing(ctx: _ChainContext, state, params: ParameterState, rng):
    idx = ctx.missing_idx
    if idx.size == 0:
        return
    groups = outcome_groups(state.labels[idx], ctx.z[idx])
    state.y_fill[idx] = impute_outcomes(ctx.x[idx], groups, params.outcome, rng)


def _impute_counterfactuals(ctx: _ChainContext, state, params: ParameterState, rng):
    compl = state.labels == COMPLIER
    state.y_cf.fill(np.nan)
    state.cf_from_trt.fill(False)
    idx = np.nonzero(compl)[0]
    if idx.size == 0:
        return
    cf_groups = np.where(
        ctx.z[idx] == 1, GROUP_COMPLIER_CTRL, GROUP_COMPLIER_TRT
    ).astype(np.int8)
    state.y_cf[idx] = impute_outcomes(ctx.x[idx], cf_groups, params.outcome, rng)
    state.cf_from_trt[idx] = cf_groups == GROUP_COMPLIER_TRT


def compute_cace(state: StratumState, z) -> tuple[float, int]:
    """Mean complier treatment-minus-control difference at the current draw.

    Returns (value, n_compliers); the value is NaN when no patient is
    currently labeled a complier.
    """
    compl = state.labels == COMPLIER
    n_c = int(compl.sum())
    if n_c == 0:
        return math.nan, 0
    z = np.asarray(z)
    y1 = np.where(z[compl] == 1, state.y_fill[compl], state.y_cf[compl])
    y0 = np.where(z[compl] == 1, state.y_cf[compl], state.y_fill[compl])
    return float(np.mean(y1 - y0)), n_c


def gibbs_iteration(
    ctx: _ChainContext,
    state: StratumState,
    params: ParameterState,
    rng,
    proposal: MlogitProposal | None,
    chain_index: int,
    iteration: int,
) -> tuple[ParameterState, float, int]:
    """One full systematic-scan update.  Mutates ``state`` in place."""
    _sample_memberships(ctx, state, params, rng)
    _impute_missing(ctx, state, params, rng)
    _impute_counterfactuals(ctx, state, params, rng)

    try:
        if ctx.variant in ("A", "Astar", "B"):
            state.u_never, state.u_split = sample_latent_utilities(
                state.labels, ctx.x, params.stratum, rng
            )
            stratum = update_probit_beta(
                state.u_never,
                state.u_split,
                ctx.x,
                ctx.config.priors.beta_variance,
                rng,
            )
        elif ctx.variant == "Cstar":
            stratum = update_mlogit_gamma(
                params.stratum,
                state.labels,
                ctx.x,
                ctx.config.priors.mlogit_variance,
                rng,
                proposal,
            )
        else:
            stratum = update_proportions(
                state.labels,
                np.asarray(ctx.config.priors.dirichlet_concentration, float),
                rng,
            )
    except SingularPosteriorError as exc:
        raise ChainAbortError(str(exc), chain_index, iteration, "stratum update")

    try:
        groups = outcome_groups(state.labels, ctx.z)
        outcome = update_outcome_params(
            state.y_fill,
            ctx.x,
            groups,
            params.outcome.sigma2,
            ctx.outcome_priors,
            ctx.variant,
            rng,
        )
    except SingularPosteriorError as exc:
        raise ChainAbortError(str(exc), chain_index, iteration, "outcome update")

    cace, n_c = compute_cace(state, ctx.z)
    return ParameterState(stratum, outcome), cace, n_c


def _initial_params(ctx: _ChainContext, chain_index: int, rng) -> ParameterState:
    """Overdispersed start: prior means offset by one prior SD, sign by chain.

    Only intercepts are offset; slopes start at their prior mean.  A slope
    offset of a full prior SD puts linear predictors tens of units into a
    probit tail at typical covariate magnitudes, and a chain started there
    can shed all compliers before the always-split equation relaxes, leaving
    it frozen by inactive truncations for practical purposes.  Intercept
    offsets still separate the chains (one mixture arm starts flooded with
    compliers, the other starved) while keeping every predictor moderate.
    For the logit the two score equations take opposite signs, since shared
    extreme scores starve the reference stratum in both arms.
    """
    delta = 1.0 if chain_index % 2 == 0 else -1.0
    pr = ctx.config.priors
    if ctx.variant in ("A", "Astar", "B"):
        off = delta * np.sqrt(pr.beta_variance)
        stratum = ProbitStratumParams(np.array([off, 0.0, off, 0.0]))
    elif ctx.variant == "Cstar":
        off = delta * np.sqrt(pr.mlogit_variance)
        stratum = MlogitStratumParams(
            np.array([off, 0.0]), np.array([-off, 0.0])
        )
    else:
        stratum = StratumProportions(
            sample_dirichlet(
                np.zeros(3), np.asarray(pr.dirichlet_concentration, float), rng
            )
        )
    op = ctx.outcome_priors
    intercept = op.center + delta * np.sqrt(op.intercept_variance)
    alpha = np.column_stack([np.full(4, intercept), np.zeros(4)])
    outcome = OutcomeParams(alpha, ctx.sigma2_init, ctx.variant)
    return ParameterState(stratum, outcome)


def _initial_state(ctx: _ChainContext, params: ParameterState, rng) -> StratumState:
    labels = ctx.base_labels.copy()
    for idx, alt in ((ctx.ctrl_mix, NEVER_TAKER), (ctx.trt_mix, ALWAYS_TAKER)):
        if idx.size:
            labels[idx] = np.where(
                rng.uniform(size=idx.size) < 0.5, COMPLIER, alt
            )
    y_fill = ctx.y.copy()
    state = StratumState(
        labels=labels,
        y_fill=y_fill,
        y_cf=np.full(ctx.n, np.nan),
        cf_from_trt=np.zeros(ctx.n, dtype=bool),
    )
    _impute_missing(ctx, state, params, rng)
    return state


def run_chain(
    dataset: Dataset, config: ModelConfig, chain_index: int, progress=None
) -> Chain:
    """Run one chain to completion and return its saved draws.

    ``progress`` is an optional callable(chain_index, iteration,
    total_iterations, n_compliers) invoked every few hundred iterations.
    """
    ctx = _ChainContext(dataset, config)
    rng = RngStream(seed=config.seed, stream_id=chain_index).generator()
    params = _initial_params(ctx, chain_index, rng)
    state = _initial_state(ctx, params, rng)
    proposal = MlogitProposal.default() if ctx.variant == "Cstar" else None

    n_saved = config.n_saved_per_chain
    n_params = len(default_param_names(ctx.variant))
    saved_params = np.empty((n_saved, n_params))
    saved_cace = np.empty(n_saved)
    saved_n_c = np.empty(n_saved, dtype=np.int32)
    n_bytes = (ctx.n + 7) // 8
    complier_bits = np.zeros((n_saved, n_bytes), dtype=np.uint8)
    cf_trt_bits = np.zeros((n_saved, n_bytes), dtype=np.uint8)

    total = config.burn_in + config.kept
    save_slot = 0
    last_n_c = 0
    for it in range(1, total + 1):
        adapting = proposal is not None and it <= config.burn_in
        params, cace, n_c = gibbs_iteration(
            ctx, state, params, rng, proposal, chain_index, it
        )
        last_n_c = n_c
        if adapting and it % _ADAPT_EVERY == 0:
            proposal.adapt()
        post = it - config.burn_in
        if post > 0 and post % config.thin == 0:
            saved_params[save_slot] = params.to_vector()
            saved_cace[save_slot] = cace
            saved_n_c[save_slot] = n_c
            compl = state.labels == COMPLIER
            complier_bits[save_slot] = np.packbits(compl)
            cf_trt_bits[save_slot] = np.packbits(state.cf_from_trt)
            save_slot += 1
        if progress is not None and (it % 500 == 0 or it == total):
            progress(chain_index, it, total, n_c)

    assert save_slot == n_saved
    return Chain(
        chain_index=chain_index,
        variant=ctx.variant,
        seed=config.seed,
        stream_id=chain_index,
        burn_in=config.burn_in,
        kept=config.kept,
        thin=config.thin,
        n_patients=ctx.n,
        param_names=default_param_names(ctx.variant),
        params=saved_params,
        cace=saved_cace,
        n_compliers=saved_n_c,
        complier_bits=complier_bits,
        cf_trt_bits=cf_trt_bits,
    )


def run_model(
    dataset: Dataset, config: ModelConfig, n_workers: int = 1, progress=None
) -> ModelFit:
    """Run all chains, optionally concurrently, and pool the survivors.

    Chains own independent random streams, so the combined draws are
    identical whatever ``n_workers`` is.  A chain that aborts is reported in
    ``failures`` while the remaining chains still return their draws.
    """
    indices = list(range(config.n_chains))
    results: dict[int, Chain] = {}
    failures: list[ChainFailure] = []

    def _one(k):
        return run_chain(dataset, config, k, progress=progress)

    if n_workers > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = {k: pool.submit(_one, k) for k in indices}
            for k in indices:
                try:
                    results[k] = futures[k].result()
                except ChainAbortError as exc:
                    failures.append(
                        ChainFailure(k, type(exc).__name__, str(exc))
                    )
    else:
        for k in indices:
            try:
                results[k] = _one(k)
            except ChainAbortError as exc:
                failures.append(ChainFailure(k, type(exc).__name__, str(exc)))

    chains = tuple(results[k] for k in sorted(results))
    return ModelFit(config=config, chains=chains, failures=tuple(failures))


def config_with(config: ModelConfig, **kwargs) -> ModelConfig:
    """Convenience copy-with-overrides for ModelConfig."""
    return replace(config, **kwargs)
