"""
Latent Factor Model

Configuration, Gibbs count tables and estimated distributions of the joint
sequence/object/time latent factor model, plus a simulator that samples corpora
from its generative process.
"""

import logging
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from ..config.settings import Settings
from .corpus import Corpus, TimeBinScheme, UnitArrays, TrajectoryUnits, synthetic_vocabulary
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

COMPONENTS = ("sequence", "object", "time")
ROW_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ModelConfig:
    """
    Model size, symmetric Dirichlet priors and the enabled emission components

    Component sets select the sub-model: {sequence}, {sequence, object},
    {sequence, time} or all three (the full model).
    """

    K: int = Settings.DEFAULT_K
    r: int = Settings.DEFAULT_ORDER
    alpha: Optional[float] = None
    beta: float = Settings.DEFAULT_PRIOR
    eta: float = Settings.DEFAULT_PRIOR
    gamma: float = Settings.DEFAULT_PRIOR
    components: FrozenSet[str] = frozenset(COMPONENTS)

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K}")
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", Settings.default_alpha(self.K))
        for name in ("alpha", "beta", "eta", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"prior {name} must be positive and finite, got {value}")
        components = frozenset(self.components)
        unknown = components - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown components: {sorted(unknown)}")
        if "sequence" not in components:
            raise ConfigError("the sequence component is always required")
        object.__setattr__(self, "components", components)

    @property
    def uses_object(self) -> bool:
        return "object" in self.components

    @property
    def uses_time(self) -> bool:
        return "time" in self.components

    @property
    def component_list(self) -> Tuple[str, ...]:
        """Enabled components in canonical order"""
        return tuple(c for c in COMPONENTS if c in self.components)


@dataclass(eq=False)
class CountTables:
    """
    Mutable state of the collapsed sampler

    ``n_k`` is the shared row sum of ``n_ks``, ``n_ko`` and ``n_kt`` (every unit
    contributes one sequence, one object and one bin to its factor).
    """

    n_mk: np.ndarray
    n_ks: np.ndarray
    n_ko: np.ndarray
    n_kt: np.ndarray
    n_m: np.ndarray
    n_k: np.ndarray
    z: np.ndarray

    @classmethod
    def from_assignments(
        cls, units: UnitArrays, z: np.ndarray, K: int, S: int, O: int, B: int
    ) -> "CountTables":
        """Tabulate the counts implied by per-unit assignments ``z``"""
        z = np.asarray(z, dtype=np.int64)
        if len(z) != units.num_units:
            raise DataError(f"{len(z)} assignments for {units.num_units} units")
        if len(z) and (z.min() < 0 or z.max() >= K):
            raise DataError(f"assignments outside [0, {K})")

        n_mk = np.zeros((units.num_trajectories, K), dtype=np.int64)
        n_ks = np.zeros((K, S), dtype=np.int64)
        n_ko = np.zeros((K, O), dtype=np.int64)
        n_kt = np.zeros((K, B), dtype=np.int64)
        np.add.at(n_mk, (units.trajectories, z), 1)
        np.add.at(n_ks, (z, units.sequences), 1)
        np.add.at(n_ko, (z, units.objects), 1)
        np.add.at(n_kt, (z, units.bins), 1)
        return cls(
            n_mk=n_mk,
            n_ks=n_ks,
            n_ko=n_ko,
            n_kt=n_kt,
            n_m=n_mk.sum(axis=1),
            n_k=np.bincount(z, minlength=K).astype(np.int64),
            z=z.copy(),
        )

    @property
    def num_trajectories(self) -> int:
        return self.n_mk.shape[0]

    @property
    def num_factors(self) -> int:
        return self.n_mk.shape[1]

    @property
    def num_sequences(self) -> int:
        return self.n_ks.shape[1]

    @property
    def num_objects(self) -> int:
        return self.n_ko.shape[1]

    @property
    def num_bins(self) -> int:
        return self.n_kt.shape[1]

    @property
    def num_units(self) -> int:
        return len(self.z)

    def grand_totals(self) -> Tuple[int, int, int, int]:
        return (int(self.n_mk.sum()), int(self.n_ks.sum()), int(self.n_ko.sum()), int(self.n_kt.sum()))

    def copy(self) -> "CountTables":
        return CountTables(
            self.n_mk.copy(), self.n_ks.copy(), self.n_ko.copy(), self.n_kt.copy(),
            self.n_m.copy(), self.n_k.copy(), self.z.copy(),
        )

    def check_invariants(self, units: Optional[UnitArrays] = None) -> None:
        """
        Verify non-negativity, row sums and grand totals

        Args:
            units: When given, also require the tables to equal a fresh tabulation of ``z``

        Raises:
            DataError: On the first violated invariant
        """
        for name in ("n_mk", "n_ks", "n_ko", "n_kt"):
            if (getattr(self, name) < 0).any():
                raise DataError(f"{name} has negative entries")
        if not np.array_equal(self.n_mk.sum(axis=1), self.n_m):
            raise DataError("n_mk row sums disagree with n_m")
        for name in ("n_ks", "n_ko", "n_kt"):
            if not np.array_equal(getattr(self, name).sum(axis=1), self.n_k):
                raise DataError(f"{name} row sums disagree with n_k")
        if not np.array_equal(self.n_mk.sum(axis=0), self.n_k):
            raise DataError("n_mk column sums disagree with n_k")
        if len(set(self.grand_totals())) != 1 or self.grand_totals()[0] != self.num_units:
            raise DataError(f"grand totals {self.grand_totals()} differ from {self.num_units} units")

        if units is not None:
            expected = CountTables.from_assignments(
                units, self.z, self.num_factors, self.num_sequences, self.num_objects, self.num_bins
            )
            if not np.array_equal(units.offsets[1:] - units.offsets[:-1], self.n_m):
                raise DataError("n_m differs from the trajectory lengths")
            for name in ("n_mk", "n_ks", "n_ko", "n_kt"):
                if not np.array_equal(getattr(self, name), getattr(expected, name)):
                    raise DataError(f"{name} is inconsistent with the assignments")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Row-stochastic theta (M x K), phi (K x S), psi (K x O) and phi_time (K x B); read-only"""

    theta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    phi_time: np.ndarray

    def __post_init__(self):
        for name in ("theta", "phi", "psi", "phi_time"):
            matrix = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if matrix.ndim != 2:
                raise DataError(f"{name} must be a matrix, got shape {matrix.shape}")
            if not np.isfinite(matrix).all() or (matrix < 0).any():
                raise DataError(f"{name} has negative or non-finite entries")
            if matrix.shape[0] and np.abs(matrix.sum(axis=1) - 1.0).max() > ROW_SUM_TOLERANCE:
                raise DataError(f"{name} rows do not sum to 1")
            matrix.setflags(write=False)
            object.__setattr__(self, name, matrix)

        K = self.phi.shape[0]
        if self.theta.shape[1] != K or self.psi.shape[0] != K or self.phi_time.shape[0] != K:
            raise DataError(
                f"inconsistent factor counts: theta {self.theta.shape}, phi {self.phi.shape}, "
                f"psi {self.psi.shape}, phi_time {self.phi_time.shape}"
            )

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def S(self) -> int:
        return self.phi.shape[1]

    @property
    def O(self) -> int:  # noqa: E743
        return self.psi.shape[1]

    @property
    def B(self) -> int:
        return self.phi_time.shape[1]

    @property
    def M(self) -> int:
        return self.theta.shape[0]

    def is_strictly_positive(self) -> bool:
        return all((matrix > 0).all() for matrix in (self.theta, self.phi, self.psi, self.phi_time))


def estimate_params(counts: CountTables, cfg: ModelConfig) -> ModelParams:
    """
    Posterior-mean (Dirichlet expectation) estimates of all four distributions

    Args:
        counts: Count tables satisfying their invariants
        cfg: Priors

    Returns:
        ModelParams with every entry strictly positive
    """
    K, S, O, B = counts.num_factors, counts.num_sequences, counts.num_objects, counts.num_bins
    n_k = counts.n_k[:, None].astype(np.float64)
    return ModelParams(
        theta=(counts.n_mk + cfg.alpha) / (counts.n_m[:, None] + K * cfg.alpha),
        phi=(counts.n_ks + cfg.beta) / (n_k + S * cfg.beta),
        psi=(counts.n_ko + cfg.eta) / (n_k + O * cfg.eta),
        phi_time=(counts.n_kt + cfg.gamma) / (n_k + B * cfg.gamma),
    )


def average_params(samples: Iterable[ModelParams]) -> ModelParams:
    """Element-wise mean of several estimates of the same shape"""
    samples = list(samples)
    if not samples:
        raise DataError("no parameter samples to average")
    if len(samples) == 1:
        return samples[0]
    return ModelParams(
        theta=np.mean([p.theta for p in samples], axis=0),
        phi=np.mean([p.phi for p in samples], axis=0),
        psi=np.mean([p.psi for p in samples], axis=0),
        phi_time=np.mean([p.phi_time for p in samples], axis=0),
    )


def log_delta_ratio(table: np.ndarray, prior: float) -> float:
    """
    Sum over rows of log Delta(n_row + prior) / Delta(prior) for a symmetric prior

    Zero cells and empty rows contribute nothing, so only nonzero entries are visited.
    """
    if table.size == 0:
        return 0.0
    dim = table.shape[1]
    cells = table[table > 0]
    rows = table.sum(axis=1)
    rows = rows[rows > 0]
    return float(
        (gammaln(cells + prior) - gammaln(prior)).sum()
        - (gammaln(rows + dim * prior) - gammaln(dim * prior)).sum()
    )


def log_joint(counts: CountTables, cfg: ModelConfig) -> float:
    """
    Collapsed log p(z, s, o, t)

    Product of Dirichlet-delta ratios for the factor mixture and each enabled
    emission component; disabled components are left out.
    """
    total = log_delta_ratio(counts.n_mk, cfg.alpha)
    total += log_delta_ratio(counts.n_ks, cfg.beta)
    if cfg.uses_object:
        total += log_delta_ratio(counts.n_ko, cfg.eta)
    if cfg.uses_time:
        total += log_delta_ratio(counts.n_kt, cfg.gamma)
    return total


@dataclass(eq=False)
class SimulationResult:
    """Sampled corpus with the ground truth that generated it"""

    corpus: Corpus
    truth: ModelParams
    assignments: np.ndarray

    @property
    def num_units(self) -> int:
        return len(self.assignments)


def sample_dirichlet(rng: np.random.Generator, concentration: float, size: int, rows: int) -> np.ndarray:
    """
    Draw ``rows`` symmetric Dirichlet vectors of length ``size``

    Gamma variates are drawn in log space (Gamma(a) = Gamma(a+1) * U**(1/a)) so
    tiny concentrations never produce all-zero rows.
    """
    shape = (rows, size)
    log_gamma = np.log(rng.standard_gamma(concentration + 1.0, shape)) + np.log1p(-rng.random(shape)) / concentration
    log_gamma -= log_gamma.max(axis=1, keepdims=True)
    weights = np.exp(log_gamma)
    return weights / weights.sum(axis=1, keepdims=True)


def _inverse_cdf(cumulative: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    draws = np.searchsorted(cumulative, uniforms * cumulative[-1], side="right")
    return np.minimum(draws, len(cumulative) - 1)


def _draw_by_factor(rows: np.ndarray, z: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(rows, axis=1)
    draws = np.empty(len(z), dtype=np.int64)
    for k in range(rows.shape[0]):
        mask = z == k
        if mask.any():
            draws[mask] = _inverse_cdf(cumulative[k], uniforms[mask])
    return draws


def simulate(
    cfg: ModelConfig,
    S: int,
    O: int,  # noqa: E741
    B: int,
    M: int,
    units_per_traj: int,
    seed: int,
) -> SimulationResult:
    """
    Sample a corpus from the generative process

    For each factor draw phi, psi and phi_time rows from their Dirichlet priors.
    For each trajectory draw theta_m, then for every unit a factor z and, from
    that factor, a sequence, an object and a time bin. Objects are drawn per unit.
    A disabled component collapses its dimension to a single dummy value.

    Args:
        cfg: Model size and priors
        S: Number of sequences
        O: Number of objects
        B: Number of time bins
        M: Number of trajectories
        units_per_traj: Units per trajectory
        seed: Generator seed

    Returns:
        SimulationResult with the corpus, ground-truth params and flat assignments
    """
    if min(S, O, B, M, units_per_traj) < 1:
        raise ConfigError("simulation sizes must all be >= 1")
    O_eff = O if cfg.uses_object else 1
    B_eff = B if cfg.uses_time else 1
    rng = np.random.Generator(np.random.PCG64(seed))

    phi = sample_dirichlet(rng, cfg.beta, S, cfg.K)
    psi = sample_dirichlet(rng, cfg.eta, O_eff, cfg.K)
    phi_time = sample_dirichlet(rng, cfg.gamma, B_eff, cfg.K)
    theta = sample_dirichlet(rng, cfg.alpha, cfg.K, M)

    total = M * units_per_traj
    u_z = rng.random(total)
    u_s = rng.random(total)
    u_o = rng.random(total)
    u_t = rng.random(total)

    z = np.empty(total, dtype=np.int64)
    cumulative_theta = np.cumsum(theta, axis=1)
    for m in range(M):
        block = slice(m * units_per_traj, (m + 1) * units_per_traj)
        z[block] = _inverse_cdf(cumulative_theta[m], u_z[block])
    sequences = _draw_by_factor(phi, z, u_s)
    objects = _draw_by_factor(psi, z, u_o)
    bins = _draw_by_factor(phi_time, z, u_t)

    trajectories = [
        TrajectoryUnits(
            m,
            objects[m * units_per_traj:(m + 1) * units_per_traj],
            sequences[m * units_per_traj:(m + 1) * units_per_traj],
            bins[m * units_per_traj:(m + 1) * units_per_traj],
        )
        for m in range(M)
    ]
    try:
        scheme = TimeBinScheme.from_total_bins(B_eff)
    except ConfigError:
        scheme = None
    corpus = Corpus(trajectories, synthetic_vocabulary(S, O_eff, cfg.r), B_eff, scheme)

    logger.info(
        "simulated %d trajectories x %d units (K=%d, S=%d, O=%d, B=%d, seed=%d)",
        M, units_per_traj, cfg.K, S, O_eff, B_eff, seed,
    )
    return SimulationResult(corpus, ModelParams(theta, phi, psi, phi_time), z)
