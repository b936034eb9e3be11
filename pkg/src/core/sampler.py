"""
Collapsed Gibbs Sampler

Inference for the latent factor model: random initialization, per-unit factor
resampling with every multinomial integrated out, fold-in of held-out
trajectories against frozen global counts, and a burn-in monitor.

The sweep itself runs in a numba kernel; uniforms are drawn up front from a
PCG64 generator so a (corpus, config, seed) triple fixes the chain bit for bit.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .corpus import Corpus, TrajectoryUnits, UNKNOWN_OBJECT, UnitArrays
from .exceptions import ConfigError, DataError
from .model import CountTables, ModelConfig, ModelParams, average_params, estimate_params, log_joint

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """The generator every randomized path uses (numpy PCG64)"""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(eq=False)
class SamplerState:
    """Counts, assignments and trace of one chain"""

    counts: CountTables
    cfg: ModelConfig
    rng: np.random.Generator
    units: UnitArrays
    iteration: int = 0
    log_joint_trace: List[float] = field(default_factory=list)

    def remove_unit(self, unit: int) -> None:
        """Decrement unit ``unit``'s current assignment from every table"""
        c, u = self.counts, self.units
        k, m = c.z[unit], u.trajectories[unit]
        c.n_mk[m, k] -= 1
        c.n_ks[k, u.sequences[unit]] -= 1
        c.n_ko[k, u.objects[unit]] -= 1
        c.n_kt[k, u.bins[unit]] -= 1
        c.n_k[k] -= 1
        c.n_m[m] -= 1

    def add_unit(self, unit: int, factor: int) -> None:
        """Assign ``factor`` to a removed unit and increment every table"""
        c, u = self.counts, self.units
        m = u.trajectories[unit]
        c.z[unit] = factor
        c.n_mk[m, factor] += 1
        c.n_ks[factor, u.sequences[unit]] += 1
        c.n_ko[factor, u.objects[unit]] += 1
        c.n_kt[factor, u.bins[unit]] += 1
        c.n_k[factor] += 1
        c.n_m[m] += 1

    def params(self) -> ModelParams:
        return estimate_params(self.counts, self.cfg)


def init(corpus: Corpus, cfg: ModelConfig, seed: int) -> SamplerState:
    """
    Assign every unit a uniformly random factor and tabulate the counts

    Args:
        corpus: Non-empty training corpus
        cfg: Model configuration; ``cfg.r`` must match the corpus order
        seed: Chain seed

    Returns:
        SamplerState at iteration 0
    """
    if not isinstance(corpus, Corpus):
        raise DataError("expected a Corpus (units together with their vocabularies)")
    if corpus.num_trajectories == 0 or corpus.num_units == 0:
        raise DataError("cannot train on an empty corpus")
    if cfg.r != corpus.order:
        raise ConfigError(f"model order r={cfg.r} does not match corpus order {corpus.order}")
    corpus.validate()

    units = corpus.flatten()
    rng = make_rng(seed)
    z = rng.integers(0, cfg.K, size=units.num_units, dtype=np.int64)
    counts = CountTables.from_assignments(
        units, z, cfg.K, corpus.num_sequences, corpus.num_objects, corpus.num_bins
    )
    logger.debug(
        "initialized %d units over %d trajectories (K=%d, S=%d, O=%d, B=%d)",
        units.num_units, units.num_trajectories, cfg.K,
        counts.num_sequences, counts.num_objects, counts.num_bins,
    )
    return SamplerState(counts=counts, cfg=cfg, rng=rng, units=units)


def conditional(state: SamplerState, unit: int) -> np.ndarray:
    """
    Full conditional of a removed unit's factor

    The unit must already have been taken out with ``state.remove_unit``.

    Returns:
        Probability vector over the K factors
    """
    c, cfg, u = state.counts, state.cfg, state.units
    m = u.trajectories[unit]
    assert c.n_m[m] == u.trajectory_length(m) - 1, "unit must be removed before computing its conditional"

    S, O, B = c.num_sequences, c.num_objects, c.num_bins
    n_k = c.n_k.astype(np.float64)
    weights = (c.n_ks[:, u.sequences[unit]] + cfg.beta) / (n_k + S * cfg.beta)
    if cfg.uses_object:
        weights = weights * (c.n_ko[:, u.objects[unit]] + cfg.eta) / (n_k + O * cfg.eta)
    if cfg.uses_time:
        weights = weights * (c.n_kt[:, u.bins[unit]] + cfg.gamma) / (n_k + B * cfg.gamma)
    weights = weights * (c.n_mk[m] + cfg.alpha) / (c.n_m[m] + cfg.K * cfg.alpha)
    return weights / weights.sum()


@njit(cache=True)
def _gibbs_sweep(
    trajectories, sequences, objects, bins, z,
    n_mk, n_ks, n_ko, n_kt, n_k,
    alpha, beta, eta, gamma, use_object, use_time, uniforms,
):
    K, S = n_ks.shape
    O = n_ko.shape[1]  # noqa: E741
    B = n_kt.shape[1]
    s_beta = S * beta
    o_eta = O * eta
    b_gamma = B * gamma
    cumulative = np.empty(K, dtype=np.float64)

    for i in range(z.shape[0]):
        m = trajectories[i]
        s = sequences[i]
        o = objects[i]
        t = bins[i]
        k_old = z[i]

        n_mk[m, k_old] -= 1
        n_ks[k_old, s] -= 1
        n_ko[k_old, o] -= 1
        n_kt[k_old, t] -= 1
        n_k[k_old] -= 1

        # theta's denominator is the same for every k
        total = 0.0
        for k in range(K):
            w = (n_ks[k, s] + beta) / (n_k[k] + s_beta)
            if use_object:
                w *= (n_ko[k, o] + eta) / (n_k[k] + o_eta)
            if use_time:
                w *= (n_kt[k, t] + gamma) / (n_k[k] + b_gamma)
            w *= n_mk[m, k] + alpha
            total += w
            cumulative[k] = total

        target = uniforms[i] * total
        k_new = K - 1
        for k in range(K):
            if target < cumulative[k]:
                k_new = k
                break

        z[i] = k_new
        n_mk[m, k_new] += 1
        n_ks[k_new, s] += 1
        n_ko[k_new, o] += 1
        n_kt[k_new, t] += 1
        n_k[k_new] += 1


def iterate(state: SamplerState) -> SamplerState:
    """
    One sweep over all units in (trajectory, unit) order

    Each unit is removed, its factor redrawn from the full conditional by
    inverse CDF with one uniform, and re-added. The log joint after the sweep
    is appended to the trace.
    """
    c, cfg, u = state.counts, state.cfg, state.units
    uniforms = state.rng.random(c.num_units)
    _gibbs_sweep(
        u.trajectories, u.sequences, u.objects, u.bins, c.z,
        c.n_mk, c.n_ks, c.n_ko, c.n_kt, c.n_k,
        float(cfg.alpha), float(cfg.beta), float(cfg.eta), float(cfg.gamma),
        cfg.uses_object, cfg.uses_time, uniforms,
    )
    state.iteration += 1
    state.log_joint_trace.append(log_joint(c, cfg))
    logger.debug("iteration %d: log joint %.6f", state.iteration, state.log_joint_trace[-1])
    return state


def train(
    corpus: Corpus,
    cfg: ModelConfig,
    iterations: int = 100,
    seed: int = 0,
    average_last: int = 1,
) -> Tuple[ModelParams, SamplerState]:
    """
    Initialize and run ``iterations`` sweeps

    Args:
        corpus: Training corpus
        cfg: Model configuration
        iterations: Number of sweeps
        seed: Chain seed
        average_last: Average the estimates of the last A sweeps (1 = final sample only)

    Returns:
        (estimated params, final sampler state)
    """
    if iterations < 0:
        raise ConfigError(f"iterations must be >= 0, got {iterations}")
    if average_last < 1:
        raise ConfigError(f"average_last must be >= 1, got {average_last}")

    state = init(corpus, cfg, seed)
    if iterations == 0:
        return state.params(), state

    samples: deque = deque(maxlen=min(average_last, iterations))
    for sweep in range(iterations):
        iterate(state)
        if iterations - sweep <= samples.maxlen:
            samples.append(state.params())

    logger.info(
        "trained K=%d on %d units: %d sweeps, final log joint %.3f",
        cfg.K, state.counts.num_units, iterations, state.log_joint_trace[-1],
    )
    check_burn_in(state.log_joint_trace)
    return average_params(samples), state


def check_burn_in(trace: Sequence[float], window: int = 10, burn_in: Optional[int] = None) -> bool:
    """
    Heuristic burn-in monitor

    Splits the first ``burn_in`` iterations (default: half the trace) into
    windows and checks that the window medians of the log joint never drop.
    Only warns; the chain is never stopped.

    Returns:
        True when the medians are non-decreasing (or there are too few windows to tell)
    """
    values = np.asarray(trace, dtype=np.float64)
    span = len(values) // 2 if burn_in is None else min(burn_in, len(values))
    num_windows = span // window
    if num_windows < 2:
        return True

    medians = np.median(values[:num_windows * window].reshape(num_windows, window), axis=1)
    drops = np.flatnonzero(np.diff(medians) < 0)
    if drops.size:
        logger.warning(
            "log joint median dropped between windows %s during burn-in; the chain may not be mixing",
            (drops + 1).tolist(),
        )
        return False
    return True


@dataclass(frozen=True, eq=False)
class FoldInResult:
    """Folded-in factor mixture of a held-out prefix"""

    theta: np.ndarray
    prior_fallback: bool
    known_units: int
    assignments: np.ndarray


def emission_matrices(counts: CountTables, cfg: ModelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-factor emission probabilities implied by frozen global counts

    For counts that never change these are exactly the sequence, object and time
    factors of the full conditional.
    """
    n_k = counts.n_k[:, None].astype(np.float64)
    phi = (counts.n_ks + cfg.beta) / (n_k + counts.num_sequences * cfg.beta)
    psi = (counts.n_ko + cfg.eta) / (n_k + counts.num_objects * cfg.eta)
    phi_time = (counts.n_kt + cfg.gamma) / (n_k + counts.num_bins * cfg.gamma)
    return phi, psi, phi_time


@njit(cache=True)
def _fold_in_sweeps(emission, alpha, z, uniforms):
    num_units, K = emission.shape
    local = np.zeros(K, dtype=np.int64)
    for i in range(num_units):
        local[z[i]] += 1
    cumulative = np.empty(K, dtype=np.float64)

    for sweep in range(uniforms.shape[0]):
        for i in range(num_units):
            local[z[i]] -= 1
            total = 0.0
            for k in range(K):
                total += emission[i, k] * (local[k] + alpha)
                cumulative[k] = total
            target = uniforms[sweep, i] * total
            k_new = K - 1
            for k in range(K):
                if target < cumulative[k]:
                    k_new = k
                    break
            z[i] = k_new
            local[k_new] += 1
    return local


def _fold_in(
    prefix: TrajectoryUnits,
    phi: np.ndarray,
    psi: np.ndarray,
    phi_time: np.ndarray,
    cfg: ModelConfig,
    iterations: int,
    seed: int,
) -> FoldInResult:
    if iterations < 1:
        raise ConfigError(f"fold-in iterations must be >= 1, got {iterations}")
    K, S = phi.shape
    known = (prefix.sequences >= 0) & (prefix.sequences < S)
    sequences = prefix.sequences[known]
    objects = prefix.objects[known]
    bins = prefix.bins[known]

    if not len(sequences):
        logger.debug("fold-in of trajectory %d has no known units, using the prior mean", prefix.index)
        return FoldInResult(np.full(K, 1.0 / K), True, 0, np.empty(0, dtype=np.int64))
    if bins.min() < 0 or bins.max() >= phi_time.shape[1]:
        raise DataError(f"trajectory {prefix.index}: time bin outside [0, {phi_time.shape[1]})")

    emission = phi[:, sequences].T.copy()
    if cfg.uses_object:
        seen = (objects != UNKNOWN_OBJECT) & (objects < psi.shape[1])
        emission[seen] *= psi[:, objects[seen]].T
    if cfg.uses_time:
        emission *= phi_time[:, bins].T

    rng = make_rng(seed)
    z = rng.integers(0, K, size=len(sequences), dtype=np.int64)
    uniforms = rng.random((iterations, len(sequences)))
    local = _fold_in_sweeps(np.ascontiguousarray(emission), float(cfg.alpha), z, uniforms)
    theta = (local + cfg.alpha) / (len(sequences) + K * cfg.alpha)
    return FoldInResult(theta, False, int(len(sequences)), z)


def fold_in(
    prefix: TrajectoryUnits,
    counts: CountTables,
    cfg: ModelConfig,
    iterations: int = 20,
    seed: int = 0,
) -> FoldInResult:
    """
    Estimate a held-out prefix's theta with the global counts held fixed

    Only the prefix's local factor counts evolve. Units whose sequence is the
    unknown sentinel are skipped; an unknown object drops the object factor for
    that unit. Global tables are only read.

    Args:
        prefix: Held-out units encoded against the training vocabulary
        counts: Frozen global counts
        cfg: Model configuration
        iterations: Fold-in sweeps
        seed: Seed of the private generator

    Returns:
        FoldInResult; ``prior_fallback`` is set when no unit was known
    """
    phi, psi, phi_time = emission_matrices(counts, cfg)
    return _fold_in(prefix, phi, psi, phi_time, cfg, iterations, seed)


def fold_in_params(
    prefix: TrajectoryUnits,
    params: ModelParams,
    cfg: ModelConfig,
    iterations: int = 20,
    seed: int = 0,
) -> FoldInResult:
    """:func:`fold_in` against persisted parameter estimates instead of raw counts"""
    return _fold_in(prefix, params.phi, params.psi, params.phi_time, cfg, iterations, seed)

