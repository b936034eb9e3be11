"""
Parameter Tuning

Sweeps one setting (number of factors, sequence order or bin width) while the
others stay fixed, running a full cross-validated evaluation per value.
"""

import logging
import time
from multiprocessing import Pool
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from ..config.run_config import SWEEP_PARAMS
from ..config.settings import Settings
from ..utils.file_utils import save_report, write_manifest
from .corpus import Corpus, TimeBinScheme, Trajectory, build_corpus
from .evaluation import evaluate
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)


def parse_sweep_values(param: str, values: Sequence) -> List[int]:
    """
    Validate sweep values before any run starts

    Args:
        param: One of ``k``, ``order``, ``bin-hours``
        values: Candidate values (ints or numeric strings)

    Returns:
        Values as ints, in the given order
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEP_PARAMS)}")
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")

    parsed = []
    for value in values:
        try:
            number = int(str(value).strip())
        except ValueError:
            raise ConfigError(f"sweep value {value!r} is not an integer") from None
        if number < 1:
            raise ConfigError(f"sweep value for {param} must be >= 1, got {number}")
        if param == "bin-hours" and 24 % number:
            raise ConfigError(f"bin-hours {number} does not divide 24")
        parsed.append(number)
    if len(set(parsed)) != len(parsed):
        raise ConfigError(f"duplicate sweep values: {parsed}")
    return parsed


def _run_config_for(param: str, value: int, base):
    if param == "k":
        return base.with_values(k=value)
    if param == "order":
        return base.with_values(order=value)
    return base.with_values(bin_hours=value)


def _run_one(job: Tuple) -> dict:
    param, value, config, corpus, trajectories, out_dir = job
    if corpus is None:
        corpus = build_corpus(trajectories, config.order, TimeBinScheme(config.bin_hours), config.tz_offset)

    started = time.perf_counter()
    result = evaluate(
        corpus,
        config.to_model_config(),
        folds=config.folds,
        seed=config.seed,
        iterations=config.iterations,
        top_ns=config.topn,
        q=config.q,
        epsilon=config.pmi_epsilon,
        aggregation=config.aggregation,
        fold_in_iterations=config.fold_in_iterations,
        average_last=config.average_last,
    )
    wall_time = time.perf_counter() - started

    if out_dir is not None:
        run_dir = Settings.get_run_directory(out_dir, param, str(value))
        save_report(result.folds, run_dir / "report.tsv")
        save_report(result.summary, run_dir / "summary.tsv")
        write_manifest(config, run_dir)

    means = dict(zip(result.summary["metric"], result.summary["mean"]))
    row = {"value": value}
    for n in sorted(set(config.topn)):
        row[f"top{n}_ap"] = means[f"top{n}_ap"]
    row["pmi"] = means["pmi"]
    row["wall_time_s"] = wall_time
    logger.info("sweep %s=%s done in %.1fs", param, value, wall_time)
    return row


def sweep(
    param: str,
    values: Sequence,
    base,
    corpus: Optional[Corpus] = None,
    trajectories: Optional[Sequence[Trajectory]] = None,
    out_dir: Optional[Path] = None,
    jobs: int = 1,
) -> pd.DataFrame:
    """
    Run one evaluation per value of ``param``

    Args:
        param: ``k``, ``order`` or ``bin-hours``
        values: Values to try; all are validated before the first run
        base: RunConfig holding every other setting
        corpus: Encoded corpus, used as-is by a ``k`` sweep
        trajectories: Segmented raw trajectories, required for ``order`` and ``bin-hours``
        out_dir: When given, each run writes its report and manifest to its own subdirectory
        jobs: Runs executed concurrently

    Returns:
        Table with value, top-N average precisions, PMI and wall time per run
    """
    parsed = parse_sweep_values(param, values)
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    if param == "k":
        if corpus is None:
            if trajectories is None:
                raise DataError("a k sweep needs a corpus or raw trajectories")
            corpus = build_corpus(trajectories, base.order, TimeBinScheme(base.bin_hours), base.tz_offset)
    elif trajectories is None:
        raise DataError(f"sweeping {param} rebuilds the corpus and needs raw records (--input)")

    configs = [_run_config_for(param, value, base) for value in parsed]
    jobs_list = [
        (param, value, config, corpus if param == "k" else None, None if param == "k" else list(trajectories), out_dir)
        for value, config in zip(parsed, configs)
    ]

    if jobs == 1 or len(jobs_list) == 1:
        rows = [_run_one(job) for job in jobs_list]
    else:
        with Pool(processes=min(jobs, len(jobs_list))) as pool:
            rows = pool.map(_run_one, jobs_list)

    return pd.DataFrame(rows)


def check_sensitivity_shape(table: pd.DataFrame, true_value: int, metric: str = "top1_ap") -> bool:
    """
    Monitored check that performance peaks near the true value

    The metric at ``true_value`` must be at least its value at the smallest and
    the largest value tried. Logs a warning when it is not.
    """
    if true_value not in set(table["value"]):
        raise DataError(f"value {true_value} was not part of the sweep")
    by_value = table.set_index("value")[metric]
    at_true = by_value[true_value]
    lowest, highest = by_value[by_value.index.min()], by_value[by_value.index.max()]
    ok = at_true >= lowest and at_true >= highest
    if not ok:
        logger.warning(
            "%s at %s is %.4f, below the edges of the sweep (%.4f, %.4f)",
            metric, true_value, at_true, lowest, highest,
        )
    return bool(ok)
