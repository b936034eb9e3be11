"""
Evaluation

Latent factor coherence (PMI over each factor's top sequences), factor
inspection, next-location prediction, average precision, factor matching
against simulator ground truth and the cross-validation driver.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from ..config.settings import Settings
from ..utils.format_utils import bin_hours_for, display_bin_index, format_bin_label, format_sequence
from .corpus import Corpus, TrajectoryUnits, UNKNOWN_OBJECT, Vocabularies, split_corpus
from .exceptions import ConfigError, DataError
from .model import ModelConfig, ModelParams
from .sampler import fold_in_params, make_rng, train

logger = logging.getLogger(__name__)

AGGREGATIONS = ("max", "sum")


def top_indices(row: np.ndarray, q: int) -> np.ndarray:
    """Indices of the q largest entries, ties broken by ascending index"""
    row = np.asarray(row)
    order = np.lexsort((np.arange(len(row)), -row))
    return order[:q]


@dataclass(frozen=True, eq=False)
class FactorCoherence:
    factor: int
    top_sequences: np.ndarray
    probabilities: np.ndarray
    pair_scores: np.ndarray

    @property
    def pmi(self) -> float:
        return float(self.pair_scores.mean())


@dataclass(frozen=True, eq=False)
class CoherenceReport:
    """Per-factor PMI of the top-q sequences and their average over factors"""

    factors: List[FactorCoherence]
    q: int
    epsilon: float

    @property
    def average(self) -> float:
        return float(np.mean([f.pmi for f in self.factors]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "factor": [f.factor for f in self.factors],
                "pmi": [f.pmi for f in self.factors],
                "top_sequences": [" ".join(map(str, f.top_sequences.tolist())) for f in self.factors],
            }
        )


def pmi_coherence(params: ModelParams, corpus: Corpus, q: int = 10, epsilon: float = 1.0) -> CoherenceReport:
    """
    PMI coherence of every factor against a reference corpus

    P(s) is the fraction of trajectories containing s; the joint
    P(s_i, s_j) = (D(s_i, s_j) + eps) / (M + eps). A sequence that never occurs in
    the reference corpus gets the smoothed marginal eps / (M + eps).

    Args:
        params: Estimated parameters (phi is ranked)
        corpus: Reference collection for document frequencies
        q: Top sequences per factor
        epsilon: Add-eps smoothing of the joint count

    Returns:
        CoherenceReport with q(q-1)/2 pair scores per factor
    """
    if q < 2:
        raise ConfigError(f"coherence needs q >= 2, got {q}")
    if q > params.S:
        raise DataError(f"q={q} exceeds the {params.S} sequences of the model")
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    M = corpus.num_trajectories
    if M == 0:
        raise DataError("reference corpus is empty")

    tops = [top_indices(params.phi[k], q) for k in range(params.K)]
    vocabulary = np.unique(np.concatenate(tops))
    column = np.full(max(params.S, corpus.num_sequences), -1, dtype=np.int64)
    column[vocabulary] = np.arange(len(vocabulary))

    units = corpus.flatten()
    columns = column[units.sequences]
    kept = columns >= 0
    incidence = sparse.csr_matrix(
        (np.ones(int(kept.sum())), (units.trajectories[kept], columns[kept])),
        shape=(M, len(vocabulary)),
    )
    incidence.sum_duplicates()
    incidence.data[:] = 1.0
    co_counts = (incidence.T @ incidence).toarray()
    doc_counts = np.diag(co_counts)

    marginal = np.where(doc_counts > 0, doc_counts / M, epsilon / (M + epsilon))
    i_idx, j_idx = np.triu_indices(q, k=1)
    factors = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, top in enumerate(tops):
            cols = column[top]
            joint = (co_counts[cols[i_idx], cols[j_idx]] + epsilon) / (M + epsilon)
            scores = np.log(joint / (marginal[cols[i_idx]] * marginal[cols[j_idx]]))
            # eps = 0: pairs that never co-occur (including unseen sequences) score -inf
            scores[joint == 0] = -np.inf
            factors.append(FactorCoherence(k, top, params.phi[k, top].copy(), scores))

    return CoherenceReport(factors, q, epsilon)


@dataclass(frozen=True)
class RankedItem:
    id: int
    probability: float
    label: str


@dataclass(frozen=True)
class FactorListing:
    """Top sequences, objects and time bins of one factor"""

    factor: int
    sequences: List[RankedItem]
    objects: List[RankedItem]
    bins: List[RankedItem]


def inspect_factor(
    params: ModelParams,
    factor: int,
    q: int = 10,
    vocab: Optional[Vocabularies] = None,
    bin_hours: Optional[int] = None,
) -> FactorListing:
    """
    Rank a factor's sequences, objects and time bins

    Args:
        params: Estimated parameters
        factor: Factor index in [0, K)
        q: Entries per list (capped at the list's dimension)
        vocab: Vocabulary used to label sequences and objects
        bin_hours: Bin width; inferred from B when omitted

    Returns:
        FactorListing; bins are labelled like "5 [8:00-10:00@weekday]"
    """
    if not 0 <= factor < params.K:
        raise DataError(f"factor {factor} outside [0, {params.K})")
    if q < 1:
        raise ConfigError(f"q must be >= 1, got {q}")
    hours = bin_hours or bin_hours_for(params.B)

    def _sequence_label(seq_id: int) -> str:
        if vocab is not None and seq_id < vocab.num_sequences:
            return format_sequence(vocab.decode_sequence(seq_id))
        return str(seq_id)

    def _object_label(obj_id: int) -> str:
        if vocab is not None and obj_id < vocab.num_objects:
            return vocab.decode_object(obj_id)
        return str(obj_id)

    def _bin_label(bin_id: int) -> str:
        if hours is None:
            return str(display_bin_index(bin_id))
        return f"{display_bin_index(bin_id)} [{format_bin_label(bin_id, hours)}]"

    def _ranked(row: np.ndarray, labeller) -> List[RankedItem]:
        return [RankedItem(int(i), float(row[i]), labeller(int(i))) for i in top_indices(row, min(q, len(row)))]

    return FactorListing(
        factor=factor,
        sequences=_ranked(params.phi[factor], _sequence_label),
        objects=_ranked(params.psi[factor], _object_label),
        bins=_ranked(params.phi_time[factor], _bin_label),
    )


@dataclass(frozen=True, eq=False)
class PredictionInstance:
    """A held-out query with its ranked candidate locations"""

    prefix: TrajectoryUnits
    context: Tuple[str, ...]
    target: str
    ranking: List[Tuple[str, float]]
    fallback: bool = False

    def __post_init__(self):
        scores = [score for _, score in self.ranking]
        if any(later > earlier for earlier, later in zip(scores, scores[1:])):
            raise DataError("ranking scores must be non-increasing")
        locations = [location for location, _ in self.ranking]
        if len(set(locations)) != len(locations):
            raise DataError("ranking contains duplicate locations")

    def rank_of_target(self, top_n: Optional[int] = None) -> Optional[int]:
        """1-based rank of the target inside the first ``top_n`` entries, else None"""
        ranking = self.ranking if top_n is None else self.ranking[:top_n]
        for rank, (location, _) in enumerate(ranking, 1):
            if location == self.target:
                return rank
        return None


def average_precision(instances: Sequence[PredictionInstance], top_n: int) -> float:
    """
    Mean reciprocal rank of the true next location over a truncated list

    Instances whose target falls outside the top ``top_n`` contribute 0.
    """
    if not instances:
        raise DataError("average precision of an empty instance list")
    if top_n < 1:
        raise ConfigError(f"top_n must be >= 1, got {top_n}")
    total = 0.0
    for instance in instances:
        rank = instance.rank_of_target(top_n)
        if rank is not None:
            total += 1.0 / rank
    return total / len(instances)


def location_frequencies(corpus: Corpus) -> Dict[str, int]:
    """Number of units whose sequence ends at each location"""
    units = corpus.flatten()
    per_sequence = np.bincount(units.sequences, minlength=corpus.num_sequences)
    counts: Dict[str, int] = {}
    for seq_id, count in enumerate(per_sequence.tolist()):
        location = corpus.vocab.decode_sequence(seq_id)[-1]
        counts[location] = counts.get(location, 0) + count
    return counts


def _rank_by_frequency(location_counts: Dict[str, int], top_n: Optional[int]) -> List[Tuple[str, float]]:
    ranking = sorted(location_counts.items(), key=lambda item: (-item[1], item[0]))
    if top_n is not None:
        ranking = ranking[:top_n]
    return [(location, float(count)) for location, count in ranking]


class FrequencyBaseline:
    """Popularity ranking: locations by how many training units end there"""

    def __init__(self, location_counts: Dict[str, int]):
        self.location_counts = dict(location_counts)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "FrequencyBaseline":
        return cls(location_frequencies(corpus))

    def rank(self, top_n: Optional[int] = None) -> List[Tuple[str, float]]:
        return _rank_by_frequency(self.location_counts, top_n)

    def instance(self, prefix: TrajectoryUnits, context: Sequence[str], target: str, top_n: int) -> PredictionInstance:
        return PredictionInstance(prefix, tuple(context), target, self.rank(top_n))


@dataclass(frozen=True, eq=False)
class Prediction:
    ranking: List[Tuple[str, float]]
    fallback: bool
    theta: np.ndarray
    prior_fallback: bool = False


class NextLocationPredictor:
    """
    Ranks next locations by the model's sequence probabilities

    Each candidate sequence extending the context scores
    sum_k theta_k * phi[k, s] * psi[k, o] * phi_time[k, t]; disabled components
    and unknown objects drop their factor. Candidates are grouped by their last
    location with ``max`` or ``sum`` aggregation.
    """

    def __init__(
        self,
        params: ModelParams,
        cfg: ModelConfig,
        vocab: Vocabularies,
        location_counts: Optional[Dict[str, int]] = None,
        aggregation: str = Settings.DEFAULT_AGGREGATION,
        fold_in_iterations: int = Settings.DEFAULT_FOLD_IN_ITERATIONS,
    ):
        if aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
        if params.S != vocab.num_sequences:
            raise DataError(f"model has {params.S} sequences, vocabulary has {vocab.num_sequences}")
        self.params = params
        self.cfg = cfg
        self.vocab = vocab
        self.location_counts = dict(location_counts or {})
        self.aggregation = aggregation
        self.fold_in_iterations = fold_in_iterations
        self._final_locations = [sequence[-1] for sequence in vocab.sequences()]

    @classmethod
    def from_training(
        cls,
        params: ModelParams,
        cfg: ModelConfig,
        corpus: Corpus,
        aggregation: str = Settings.DEFAULT_AGGREGATION,
        fold_in_iterations: int = Settings.DEFAULT_FOLD_IN_ITERATIONS,
    ) -> "NextLocationPredictor":
        return cls(params, cfg, corpus.vocab, location_frequencies(corpus), aggregation, fold_in_iterations)

    def score_sequences(self, theta: np.ndarray, obj: int, time_bin: int, candidates: np.ndarray) -> np.ndarray:
        """Score of every candidate sequence id"""
        weights = np.asarray(theta, dtype=np.float64).copy()
        if self.cfg.uses_object and obj != UNKNOWN_OBJECT and 0 <= obj < self.params.O:
            weights *= self.params.psi[:, obj]
        if self.cfg.uses_time:
            if not 0 <= time_bin < self.params.B:
                raise DataError(f"time bin {time_bin} outside [0, {self.params.B})")
            weights *= self.params.phi_time[:, time_bin]
        return weights @ self.params.phi[:, candidates]

    def rank(
        self, theta: np.ndarray, context: Sequence[str], obj: int, time_bin: int, top_n: Optional[int] = None
    ) -> Tuple[List[Tuple[str, float]], bool]:
        """
        Rank next locations for a context

        Returns:
            (ranking, fallback) where fallback marks a frequency ranking used
            because no sequence extends the context
        """
        if len(context) < self.vocab.order:
            raise DataError(f"context needs {self.vocab.order} known locations, got {len(context)}")
        candidates = self.vocab.candidates(tuple(context)[-self.vocab.order:])
        if not len(candidates):
            return _rank_by_frequency(self.location_counts, top_n), True

        scores = self.score_sequences(theta, obj, time_bin, candidates)
        grouped: Dict[str, float] = {}
        for seq_id, score in zip(candidates.tolist(), scores.tolist()):
            location = self._final_locations[seq_id]
            if location not in grouped:
                grouped[location] = score
            elif self.aggregation == "max":
                grouped[location] = max(grouped[location], score)
            else:
                grouped[location] += score
        ranking = sorted(grouped.items(), key=lambda item: (-item[1], item[0]))
        if top_n is not None:
            ranking = ranking[:top_n]
        return ranking, False

    def predict(
        self,
        prefix: TrajectoryUnits,
        context: Sequence[str],
        obj: int,
        time_bin: int,
        top_n: Optional[int] = None,
        seed: int = 0,
    ) -> Prediction:
        """Fold in theta from the prefix units, then rank the context's continuations"""
        folded = fold_in_params(prefix, self.params, self.cfg, self.fold_in_iterations, seed)
        ranking, fallback = self.rank(folded.theta, context, obj, time_bin, top_n)
        return Prediction(ranking, fallback, folded.theta, folded.prior_fallback)


def predict_next(
    predictor: NextLocationPredictor,
    prefix: TrajectoryUnits,
    context: Sequence[str],
    obj: int,
    time_bin: int,
    top_n: int = 5,
    seed: int = 0,
) -> List[Tuple[str, float]]:
    """Ranked next locations (top ``top_n``) for a prefix and its last r locations"""
    return predictor.predict(prefix, context, obj, time_bin, top_n, seed).ranking


@dataclass(frozen=True, eq=False)
class FactorMatching:
    """Greedy pairing of estimated factors with ground-truth factors"""

    mapping: np.ndarray
    distances: np.ndarray

    @property
    def cost(self) -> float:
        return float(self.distances.sum())


def total_variation(rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    """Pairwise total-variation distance between the rows of two matrices"""
    return np.stack([0.5 * np.abs(rows_b - row).sum(axis=1) for row in rows_a])


def match_factors(estimated: ModelParams, truth: ModelParams) -> FactorMatching:
    """
    Match estimated phi rows to ground-truth phi rows

    Pairs are taken greedily by smallest total-variation distance, each factor
    used once.

    Returns:
        FactorMatching where ``mapping[j]`` is the estimated factor paired with
        true factor j and ``distances[j]`` their distance
    """
    if estimated.phi.shape != truth.phi.shape:
        raise DataError(f"cannot match phi of shape {estimated.phi.shape} against {truth.phi.shape}")
    K = truth.K
    distances = total_variation(estimated.phi, truth.phi)
    est_idx, true_idx = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    order = np.lexsort((true_idx.ravel(), est_idx.ravel(), distances.ravel()))

    mapping = np.full(K, -1, dtype=np.int64)
    matched = np.zeros(K, dtype=np.float64)
    used = np.zeros(K, dtype=bool)
    for flat in order:
        i, j = divmod(int(flat), K)
        if used[i] or mapping[j] >= 0:
            continue
        used[i] = True
        mapping[j] = i
        matched[j] = distances[i, j]
    return FactorMatching(mapping, matched)


@dataclass(eq=False)
class EvaluationResult:
    """Per-fold metrics, their summary and the fold models"""

    folds: pd.DataFrame
    summary: pd.DataFrame
    models: List[Tuple[ModelParams, Corpus]] = field(default_factory=list, repr=False)

    def to_report(self) -> pd.DataFrame:
        """One row per fold followed by ``mean`` and ``std`` rows"""
        report = self.folds.drop(columns="fold")
        report.insert(0, "row", [f"fold{fold}" for fold in self.folds["fold"]])
        summary_rows = []
        for label in ("mean", "std"):
            values = dict(zip(self.summary["metric"], self.summary[label]))
            summary_rows.append({**{column: values.get(column, "") for column in report.columns}, "row": label})
        return pd.concat([report, pd.DataFrame(summary_rows, columns=report.columns)], ignore_index=True)


def fold_assignment(num_trajectories: int, folds: int, seed: int) -> List[np.ndarray]:
    """Seeded split of trajectory indices into ``folds`` near-equal parts"""
    permutation = make_rng(seed).permutation(num_trajectories)
    return [np.sort(part) for part in np.array_split(permutation, folds)]


def build_instances(
    corpus: Corpus, test_indices: Sequence[int], test_units: Sequence[TrajectoryUnits]
) -> List[Tuple[TrajectoryUnits, Tuple[str, ...], str, int, int]]:
    """
    Prediction queries from held-out trajectories

    The target is the last location of the final unit and the context that
    unit's first r locations; earlier units form the prefix. Object and time bin
    come from the last prefix unit, or from the final unit when there is no prefix.
    """
    queries = []
    for original, units in zip(test_indices, test_units):
        if len(units) == 0:
            continue
        last = corpus.vocab.decode_sequence(int(corpus.trajectories[original].sequences[-1]))
        prefix = units.head(len(units) - 1)
        anchor = len(units) - 2 if len(prefix) else len(units) - 1
        queries.append((prefix, tuple(last[:-1]), last[-1], int(units.objects[anchor]), int(units.bins[anchor])))
    return queries


def evaluate(
    corpus: Corpus,
    cfg: ModelConfig,
    folds: int = Settings.DEFAULT_FOLDS,
    seed: int = 0,
    iterations: int = Settings.DEFAULT_ITERATIONS,
    top_ns: Sequence[int] = Settings.DEFAULT_TOPN,
    q: int = Settings.DEFAULT_Q,
    epsilon: float = Settings.DEFAULT_PMI_EPSILON,
    aggregation: str = Settings.DEFAULT_AGGREGATION,
    fold_in_iterations: int = Settings.DEFAULT_FOLD_IN_ITERATIONS,
    average_last: int = Settings.DEFAULT_AVERAGE_LAST,
) -> EvaluationResult:
    """
    K-fold cross-validation at trajectory granularity

    Each fold trains on the other folds, scores next-location prediction on its
    held-out trajectories (model and frequency baseline) and computes the PMI
    coherence of the trained model against its training corpus.

    Args:
        corpus: Full corpus
        cfg: Model configuration
        folds: Number of folds (>= 2)
        seed: Master seed; fold split, training chains and fold-ins derive from it
        iterations: Sweeps per fold
        top_ns: List lengths at which average precision is reported
        q: Top sequences per factor for PMI
        epsilon: PMI smoothing
        aggregation: Candidate aggregation, ``max`` or ``sum``
        fold_in_iterations: Fold-in sweeps per query
        average_last: Sweeps averaged into the fold's estimate

    Returns:
        EvaluationResult with one row per fold and a mean/std summary
    """
    if folds < 2:
        raise ConfigError(f"cross-validation needs at least 2 folds, got {folds}")
    if corpus.num_trajectories < folds:
        raise DataError(f"{corpus.num_trajectories} trajectories cannot be split into {folds} folds")
    top_ns = sorted(set(int(n) for n in top_ns))
    if not top_ns or top_ns[0] < 1:
        raise ConfigError(f"top-N values must be >= 1, got {top_ns}")

    parts = fold_assignment(corpus.num_trajectories, folds, seed)
    fold_seeds = [child.generate_state(2) for child in np.random.SeedSequence(seed).spawn(folds)]
    rows = []
    models = []

    for fold, test_idx in enumerate(parts):
        train_idx = np.sort(np.concatenate([part for other, part in enumerate(parts) if other != fold]))
        train_corpus, test_units = split_corpus(corpus, train_idx.tolist(), test_idx.tolist())
        train_seed, query_seed = (int(value) for value in fold_seeds[fold])

        params, _ = train(train_corpus, cfg, iterations, train_seed, average_last)
        predictor = NextLocationPredictor.from_training(params, cfg, train_corpus, aggregation, fold_in_iterations)
        baseline = FrequencyBaseline(predictor.location_counts)

        instances, baseline_instances = [], []
        fallbacks = prior_only = 0
        for n, (prefix, context, target, obj, time_bin) in enumerate(build_instances(corpus, test_idx, test_units)):
            prediction = predictor.predict(prefix, context, obj, time_bin, max(top_ns), query_seed + n)
            fallbacks += prediction.fallback
            prior_only += prediction.prior_fallback
            instances.append(PredictionInstance(prefix, context, target, prediction.ranking, prediction.fallback))
            baseline_instances.append(baseline.instance(prefix, context, target, max(top_ns)))

        row = {"fold": fold, "train_trajectories": len(train_idx), "test_instances": len(instances)}
        for n in top_ns:
            row[f"top{n}_ap"] = average_precision(instances, n)
        for n in top_ns:
            row[f"baseline_top{n}_ap"] = average_precision(baseline_instances, n)
        if params.S < 2:
            logger.warning("fold %d: training fold has %d distinct sequence(s), PMI is undefined", fold, params.S)
            row["pmi"] = float("nan")
        else:
            row["pmi"] = pmi_coherence(params, train_corpus, min(q, params.S), epsilon).average
        row["fallback_rankings"] = fallbacks
        row["prior_fold_ins"] = prior_only
        rows.append(row)
        models.append((params, train_corpus))

        if fallbacks or prior_only:
            logger.warning(
                "fold %d: %d of %d queries fell back to frequency ranking, %d folded in with the prior only",
                fold, fallbacks, len(instances), prior_only,
            )
        scores = ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k.endswith("ap"))
        logger.info("fold %d/%d: %s", fold + 1, folds, scores)

    table = pd.DataFrame(rows)
    metrics = [column for column in table.columns if column.endswith("_ap") or column == "pmi"]
    summary = pd.DataFrame(
        {
            "metric": metrics,
            "mean": [float(table[m].mean()) for m in metrics],
            "std": [float(table[m].std(ddof=1)) for m in metrics],
        }
    )
    return EvaluationResult(table, summary, models)
