"""
trajfactors - Trajectory Latent Factor Models
Main Application Entry Point

Complete pipeline: Passage Records -> Trajectories -> Sequence Units -> Gibbs Sampling -> Evaluation
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import pandas as pd

# Add the project root to the system path to enable module imports
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.append(str(PROJECT_ROOT))

from src.config.run_config import RunConfig  # noqa: E402
from src.config.settings import Settings  # noqa: E402
from src.core.corpus import (  # noqa: E402
    UNKNOWN_OBJECT,
    TimeBinScheme,
    Trajectory,
    TrajectoryUnits,
    build_corpus,
    extract_units,
    parse_timestamp,
    segment,
    time_bin,
)
from src.core.evaluation import NextLocationPredictor, evaluate, inspect_factor, location_frequencies  # noqa: E402
from src.core.exceptions import ConfigError, DataError  # noqa: E402
from src.core.model import simulate  # noqa: E402
from src.core.sampler import train  # noqa: E402
from src.core.tuning import sweep  # noqa: E402
from src.utils.file_utils import (  # noqa: E402
    get_safe_filename,
    load_corpus,
    load_model,
    load_records,
    save_assignments,
    save_corpus,
    save_listing,
    save_model,
    save_report,
    save_trace,
    validate_input_file,
    write_manifest,
)
from src.utils.format_utils import describe_factor, format_duration, format_ranked_items, parse_list  # noqa: E402

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

COMMON_KEYS = {"command", "config", "verbose"}
KINDS = ("sequence", "object", "time_bin")


class CLIArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_ingest_flags(parser):
    parser.add_argument("--input", "-i", type=str, help="Records file or directory of record files")
    parser.add_argument(
        "--gap-seconds", type=float,
        help=f"Split trajectories at larger gaps (default: {Settings.DEFAULT_GAP_SECONDS:.0f})",
    )
    parser.add_argument("--min-len", type=int, help=f"Shortest trajectory kept (default: {Settings.DEFAULT_MIN_LEN})")
    parser.add_argument("--order", "-r", type=int, help=f"Sequence order r (default: {Settings.DEFAULT_ORDER})")
    parser.add_argument(
        "--bin-hours", type=int, help=f"Hours per time bin, must divide 24 (default: {Settings.DEFAULT_BIN_HOURS})"
    )
    parser.add_argument("--tz-offset", type=float, help="Local time offset from UTC in hours (default: 0)")
    parser.add_argument("--delimiter", type=str, help="Field separator of the records (default: ',')")


def _add_model_flags(parser):
    parser.add_argument("--k", "-k", type=int, help=f"Number of latent factors (default: {Settings.DEFAULT_K})")
    parser.add_argument("--alpha", type=float, help="Factor prior (default: 50/K)")
    parser.add_argument("--beta", type=float, help=f"Sequence prior (default: {Settings.DEFAULT_PRIOR})")
    parser.add_argument("--eta", type=float, help=f"Object prior (default: {Settings.DEFAULT_PRIOR})")
    parser.add_argument("--gamma", type=float, help=f"Time bin prior (default: {Settings.DEFAULT_PRIOR})")
    parser.add_argument("--components", type=str, help="Emission components seq[,obj][,time] (default: all)")


def _add_training_flags(parser):
    _add_model_flags(parser)
    parser.add_argument("--iterations", type=int, help=f"Gibbs sweeps (default: {Settings.DEFAULT_ITERATIONS})")
    parser.add_argument("--average-last", type=int, help="Average estimates over the last N sweeps (default: 1)")


def _add_evaluation_flags(parser):
    parser.add_argument("--corpus", "-c", type=str, help="Corpus file written by ingest or simulate")
    _add_training_flags(parser)
    parser.add_argument("--folds", type=int, help=f"Cross-validation folds (default: {Settings.DEFAULT_FOLDS})")
    parser.add_argument("--topn", type=str, help="Average precision cut-offs (default: 1,5)")
    parser.add_argument("--q", type=int, help=f"Top sequences per factor for PMI (default: {Settings.DEFAULT_Q})")
    parser.add_argument("--pmi-epsilon", type=float, help="PMI smoothing of joint counts (default: 1)")
    parser.add_argument("--aggregation", choices=["max", "sum"], help="Score aggregation per location (default: max)")
    parser.add_argument("--fold-in-iterations", type=int, help="Fold-in sweeps per query (default: 20)")


def build_parser():
    """Build the command line parser with one subparser per pipeline step"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Flat key=value settings file (a run manifest works too)")
    common.add_argument("--seed", type=int, help="Seed of every randomized step (default: generated and recorded)")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose output")

    parser = CLIArgumentParser(
        prog="trajfactors",
        description="trajfactors - latent factor models of trajectories",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python src/main.py ingest --input data/input/sample_records.csv --out data/output/sample.corpus
  python src/main.py train --corpus data/output/sample.corpus --k 10 --seed 7
  python src/main.py evaluate --corpus data/output/sample.corpus --k 10 --folds 5 --seed 7
  python src/main.py simulate --k 5 --out data/output/simulated.corpus --seed 1
  python src/main.py inspect --model data/output/sample.model --factor 0
  python src/main.py predict --model data/output/sample.model --locations A,B,C --timestamps 1700000000,1700000300,1700000600
  python src/main.py sweep --param k --values 5,10,20 --corpus data/output/sample.corpus --seed 7
        """,
    )
    subparsers = parser.add_subparsers(dest="command", parser_class=CLIArgumentParser)

    ingest = subparsers.add_parser("ingest", parents=[common], help="Turn passage records into a corpus file")
    _add_ingest_flags(ingest)
    ingest.add_argument("--out", "-o", type=str, help="Corpus file to write")

    train_cmd = subparsers.add_parser("train", parents=[common], help="Fit the model with collapsed Gibbs sampling")
    train_cmd.add_argument("--corpus", "-c", type=str, help="Corpus file written by ingest or simulate")
    _add_training_flags(train_cmd)
    train_cmd.add_argument("--model-encoding", choices=["text", "binary"], help="Model file encoding (default: binary)")
    train_cmd.add_argument("--out", "-o", type=str, help="Model file to write")
    train_cmd.add_argument("--trace", type=str, help="Write the per-iteration log joint here")

    evaluate_cmd = subparsers.add_parser("evaluate", parents=[common], help="Cross-validated prediction and coherence")
    _add_evaluation_flags(evaluate_cmd)
    evaluate_cmd.add_argument("--out", "-o", type=str, help="Report file to write")
    evaluate_cmd.add_argument("--inspect-out", type=str, help="Also dump the first fold's factors here")

    predict = subparsers.add_parser("predict", parents=[common], help="Rank next locations for a partial trajectory")
    predict.add_argument("--model", "-m", type=str, help="Model file written by train")
    predict.add_argument("--corpus", "-c", type=str, help="Training corpus, used for the frequency fallback")
    predict.add_argument("--locations", type=str, help="Observed locations, comma separated")
    predict.add_argument("--timestamps", type=str, help="Their timestamps (epoch seconds or ISO-8601), comma separated")
    predict.add_argument("--object", dest="obj", type=str, help="Object id of the trajectory")
    predict.add_argument("--topn", type=str, help="Length of the ranked list (largest value is used)")
    predict.add_argument("--tz-offset", type=float, help="Local time offset from UTC in hours")
    predict.add_argument("--aggregation", choices=["max", "sum"], help="Score aggregation per location")
    predict.add_argument("--fold-in-iterations", type=int, help="Fold-in sweeps")
    predict.add_argument("--out", "-o", type=str, help="Report file to write")

    simulate_cmd = subparsers.add_parser("simulate", parents=[common], help="Sample a corpus from the generative model")
    _add_model_flags(simulate_cmd)
    simulate_cmd.add_argument("--order", "-r", type=int, help="Order of the generated sequence names")
    sizes = [
        ("--sim-sequences", "Number of sequences S", Settings.DEFAULT_SIM_SEQUENCES),
        ("--sim-objects", "Number of objects O", Settings.DEFAULT_SIM_OBJECTS),
        ("--sim-bins", "Number of time bins B", Settings.DEFAULT_SIM_BINS),
        ("--sim-trajectories", "Number of trajectories M", Settings.DEFAULT_SIM_TRAJECTORIES),
        ("--sim-units", "Units per trajectory", Settings.DEFAULT_SIM_UNITS),
    ]
    for flag, description, default in sizes:
        simulate_cmd.add_argument(flag, type=int, help=f"{description} (default: {default})")
    simulate_cmd.add_argument("--model-encoding", choices=["text", "binary"], help="Ground-truth model encoding")
    simulate_cmd.add_argument("--out", "-o", type=str, help="Corpus file to write")

    inspect = subparsers.add_parser("inspect", parents=[common], help="List the top items of latent factors")
    inspect.add_argument("--model", "-m", type=str, help="Model file written by train")
    inspect.add_argument("--factor", type=int, help="Factor to list (default: all)")
    inspect.add_argument("--q", type=int, help="Entries per list (default: 10)")
    inspect.add_argument("--out", "-o", type=str, help="Write the listing as a report")

    sweep_cmd = subparsers.add_parser("sweep", parents=[common], help="Evaluate over a range of one parameter")
    sweep_cmd.add_argument("--param", choices=["k", "order", "bin-hours"], help="Parameter to sweep")
    sweep_cmd.add_argument("--values", type=str, help="Comma separated values")
    _add_evaluation_flags(sweep_cmd)
    _add_ingest_flags(sweep_cmd)
    sweep_cmd.add_argument("--jobs", "-j", type=int, help="Runs executed concurrently (default: 1)")
    sweep_cmd.add_argument("--out", "-o", type=str, help="Directory for the sweep table and per-run outputs")

    return parser


def print_banner():
    """Print application banner"""
    print("🚗" + "=" * 68 + "🚗")
    print("   TRAJFACTORS - Latent Factor Models of Trajectories")
    print("   Mine sequence, object and time patterns; predict next locations")
    print("🚗" + "=" * 68 + "🚗")


def configure_logging(verbose: bool) -> None:
    """Configure library logging once for the whole run"""
    level = logging.DEBUG if verbose else getattr(logging, str(Settings.LOG_LEVEL).upper(), logging.INFO)
    logging.basicConfig(level=level, format=Settings.LOG_FORMAT, stream=sys.stderr)


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _default_output(name: str) -> Path:
    Settings.ensure_directories()
    return Settings.get_output_path(name)


def _write_manifest(config, output_path, inputs=None):
    """Write ``<output>.manifest.cfg`` beside an output file"""
    output_path = Path(output_path)
    path = write_manifest(config, output_path.parent, inputs, output_path.name)
    if path:
        print(f"   📝 Manifest saved: {path}")
    return path


def _model_bin_hours(corpus):
    return corpus.scheme.bin_hours if corpus.scheme else None


def run_ingest(config: RunConfig) -> int:
    """Records -> trajectories -> corpus file"""
    input_path = _require(config.input, "--input")
    if not validate_input_file(input_path):
        raise DataError(f"cannot ingest {input_path}")
    config.out = config.out or str(_default_output(f"{get_safe_filename(input_path)}.corpus"))

    print(f"\n📥 Step 1: Reading records from {Path(input_path).name}...")
    records = load_records(input_path, config.delimiter, config.tz_offset)
    print(f"   ✅ {len(records)} records")

    print("\n✂️  Step 2: Segmenting trajectories...")
    trajectories = segment(records, config.gap_seconds, config.min_len)
    print(f"   ✅ {len(trajectories)} trajectories (gap {config.gap_seconds:.0f}s, min length {config.min_len})")

    print(f"\n🔗 Step 3: Extracting order-{config.order} sequence units...")
    corpus = build_corpus(trajectories, config.order, TimeBinScheme(config.bin_hours), config.tz_offset)
    print(f"   ✅ {corpus.num_units} units, {corpus.num_sequences} sequences, {corpus.num_objects} objects")
    print(f"   ✅ {corpus.num_bins} time bins of {config.bin_hours}h")

    print("\n💾 Step 4: Saving corpus...")
    if not save_corpus(corpus, config.out):
        raise DataError(f"could not write {config.out}")
    print(f"   ✅ Corpus saved: {config.out}")

    _write_manifest(config, config.out, {"input": input_path})
    return EXIT_OK


def run_train(config: RunConfig) -> int:
    """Corpus file -> model file (+ trace)"""
    corpus_path = _require(config.corpus, "--corpus")
    print(f"\n📂 Step 1: Loading corpus {Path(corpus_path).name}...")
    corpus = load_corpus(corpus_path)
    config.order = corpus.order
    config.out = config.out or str(_default_output(f"{get_safe_filename(corpus_path)}.model"))
    print(f"   ✅ {corpus.num_trajectories} trajectories, {corpus.num_units} units")

    cfg = config.to_model_config()
    print(f"\n🎲 Step 2: Gibbs sampling (K={cfg.K}, {config.iterations} sweeps, seed {config.seed})...")
    started = time.perf_counter()
    params, state = train(corpus, cfg, config.iterations, config.seed, config.average_last)
    print(f"   ✅ Done in {format_duration(time.perf_counter() - started)}")
    if state.log_joint_trace:
        print(f"   • Final log joint: {state.log_joint_trace[-1]:.3f}")

    print("\n💾 Step 3: Saving model...")
    if not save_model(params, cfg, corpus.vocab, config.out, config.model_encoding, _model_bin_hours(corpus)):
        raise DataError(f"could not write {config.out}")
    print(f"   ✅ Model saved: {config.out}")
    if config.trace:
        if save_trace(state.log_joint_trace, config.trace):
            print(f"   ✅ Trace saved: {config.trace}")

    _write_manifest(config, config.out, {"corpus": corpus_path})
    return EXIT_OK


def run_evaluate(config: RunConfig) -> int:
    """Cross-validated prediction and coherence report"""
    corpus_path = _require(config.corpus, "--corpus")
    print(f"\n📂 Step 1: Loading corpus {Path(corpus_path).name}...")
    corpus = load_corpus(corpus_path)
    config.order = corpus.order
    config.out = config.out or str(_default_output(f"{get_safe_filename(corpus_path)}_evaluation.tsv"))

    print(f"\n🧪 Step 2: {config.folds}-fold cross-validation (K={config.k}, seed {config.seed})...")
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

    print("\n📊 Summary:")
    for metric, mean, std in result.summary.itertuples(index=False):
        print(f"   • {metric}: {mean:.4f} ± {std:.4f}")

    print("\n💾 Step 3: Saving report...")
    if not save_report(result.to_report(), config.out):
        raise DataError(f"could not write {config.out}")
    print(f"   ✅ Report saved: {config.out}")

    if config.inspect_out and result.models:
        params, train_corpus = result.models[0]
        listing = "\n\n".join(
            describe_factor(inspect_factor(params, k, config.q, train_corpus.vocab, _model_bin_hours(train_corpus)))
            for k in range(params.K)
        )
        if save_listing(listing, config.inspect_out, corpus_path):
            print(f"   ✅ Factor listing saved: {config.inspect_out}")

    _write_manifest(config, config.out, {"corpus": corpus_path})
    return EXIT_OK


def _parse_timestamps(texts, tz_offset: float):
    stamps = []
    for text in texts:
        try:
            stamps.append(float(text))
        except ValueError:
            stamps.append(parse_timestamp(text, tz_offset, "--timestamps"))
    return stamps


def run_predict(config: RunConfig) -> int:
    """Rank the next location of one partial trajectory"""
    model_path = _require(config.model, "--model")
    locations = parse_list(config.locations)
    stamps = _parse_timestamps(parse_list(config.timestamps), config.tz_offset)
    if len(stamps) != len(locations):
        raise DataError(f"{len(locations)} locations but {len(stamps)} timestamps")

    print(f"\n📂 Step 1: Loading model {Path(model_path).name}...")
    model = load_model(model_path)
    cfg, vocab = model.cfg, model.vocab
    if len(locations) < cfg.r:
        raise DataError(f"prediction needs at least {cfg.r} observed locations, got {len(locations)}")
    if model.bin_hours:
        scheme = TimeBinScheme(model.bin_hours)
    elif cfg.uses_time:
        scheme = TimeBinScheme.from_total_bins(model.params.B)
    else:
        scheme = TimeBinScheme(Settings.DEFAULT_BIN_HOURS)

    traj = Trajectory(config.obj or "", tuple(zip(locations, stamps)))
    if len(traj) >= cfg.r + 1:
        prefix = extract_units(traj, cfg.r, scheme, vocab, freeze_vocab=True, tz_offset=config.tz_offset)
        query_bin = int(prefix.bins[-1])
    else:
        prefix = TrajectoryUnits(0, [], [], [])
        query_bin = time_bin(stamps[-1], scheme, config.tz_offset)
    bins = prefix.bins
    if not cfg.uses_time:
        bins, query_bin = bins * 0, 0
    obj = vocab.encode_object(config.obj, freeze_vocab=True) if config.obj else UNKNOWN_OBJECT
    prefix = TrajectoryUnits(0, [obj] * len(prefix), prefix.sequences, bins)

    frequencies = location_frequencies(load_corpus(config.corpus)) if config.corpus else {}
    predictor = NextLocationPredictor(
        model.params, cfg, vocab, frequencies, config.aggregation, config.fold_in_iterations
    )
    top_n = max(config.topn)

    print(f"\n🔮 Step 2: Ranking next locations after {'→'.join(locations[-cfg.r:])}...")
    prediction = predictor.predict(prefix, locations[-cfg.r:], obj, query_bin, top_n, config.seed)
    if prediction.fallback:
        print("   ⚠️  No known sequence extends this context - ranking by location frequency")
    if prediction.prior_fallback:
        print("   ⚠️  No known units in the prefix - using the prior factor mixture")
    if prediction.ranking:
        print(f"   ✅ {format_ranked_items(prediction.ranking, top_n)}")
    else:
        print("   📭 No candidates (pass --corpus to enable the frequency fallback)")

    if config.out:
        table = pd.DataFrame(
            {
                "rank": range(1, len(prediction.ranking) + 1),
                "location": [location for location, _ in prediction.ranking],
                "score": [score for _, score in prediction.ranking],
            }
        )
        if save_report(table, config.out):
            print(f"\n✅ Ranking saved: {config.out}")
        _write_manifest(config, config.out, {"model": model_path})
    else:
        _write_manifest(config, _default_output("predict"), {"model": model_path})
    return EXIT_OK


def run_simulate(config: RunConfig) -> int:
    """Sample a corpus plus its ground truth"""
    config.out = config.out or str(_default_output("simulated.corpus"))
    cfg = config.to_model_config()
    out = Path(config.out)

    print(f"\n🎲 Step 1: Sampling {config.sim_trajectories} trajectories (K={cfg.K}, seed {config.seed})...")
    result = simulate(
        cfg, config.sim_sequences, config.sim_objects, config.sim_bins,
        config.sim_trajectories, config.sim_units, config.seed,
    )
    print(f"   ✅ {result.num_units} units")

    print("\n💾 Step 2: Saving corpus and ground truth...")
    truth_path = out.with_name(f"{out.stem}.truth.model")
    assignments_path = out.with_name(f"{out.stem}.assignments.tsv")
    if not save_corpus(result.corpus, out):
        raise DataError(f"could not write {out}")
    bin_hours = _model_bin_hours(result.corpus)
    if not save_model(result.truth, cfg, result.corpus.vocab, truth_path, config.model_encoding, bin_hours):
        raise DataError(f"could not write {truth_path}")
    if not save_assignments(result.assignments, result.corpus, assignments_path):
        raise DataError(f"could not write {assignments_path}")
    print(f"   ✅ Corpus saved: {out}")
    print(f"   ✅ Ground truth saved: {truth_path}")
    print(f"   ✅ Assignments saved: {assignments_path}")

    _write_manifest(config, out)
    return EXIT_OK


def run_inspect(config: RunConfig) -> int:
    """Table-style listings of latent factors"""
    model_path = _require(config.model, "--model")
    model = load_model(model_path)
    factors = [config.factor] if config.factor is not None else list(range(model.params.K))

    listings = [inspect_factor(model.params, k, config.q, model.vocab, model.bin_hours) for k in factors]
    for listing in listings:
        print()
        print(describe_factor(listing))

    if config.out:
        rows = [
            {
                "factor": listing.factor,
                "kind": kind,
                "rank": rank,
                "id": item.id,
                "label": item.label,
                "probability": item.probability,
            }
            for listing in listings
            for kind, items in zip(KINDS, (listing.sequences, listing.objects, listing.bins))
            for rank, item in enumerate(items, 1)
        ]
        if save_report(pd.DataFrame(rows), config.out):
            print(f"\n✅ Listing saved: {config.out}")
        _write_manifest(config, config.out, {"model": model_path})
    else:
        _write_manifest(config, _default_output("inspect"), {"model": model_path})
    return EXIT_OK


def run_sweep(config: RunConfig) -> int:
    """One evaluation per parameter value"""
    param = _require(config.param, "--param")
    values = _require(config.values, "--values")
    out_dir = Path(config.out or _default_output(f"sweep_{param}"))
    config.out = str(out_dir)

    corpus = trajectories = None
    inputs = {}
    if config.input:
        if not validate_input_file(config.input):
            raise DataError(f"cannot read {config.input}")
        records = load_records(config.input, config.delimiter, config.tz_offset)
        trajectories = segment(records, config.gap_seconds, config.min_len)
        inputs["input"] = config.input
    if config.corpus:
        corpus = load_corpus(config.corpus)
        config.order = corpus.order
        inputs["corpus"] = config.corpus
    if corpus is None and trajectories is None:
        raise ConfigError("--corpus or --input is required")

    print(f"\n📈 Sweeping {param} over {values} ({config.jobs} job(s))...")
    table = sweep(param, values, config, corpus=corpus, trajectories=trajectories, out_dir=out_dir, jobs=config.jobs)
    for row in table.itertuples(index=False):
        print(f"   • {param}={row.value}: pmi {row.pmi:.4f}, {format_duration(row.wall_time_s)}")

    table_path = out_dir / "sweep.tsv"
    if not save_report(table, table_path):
        raise DataError(f"could not write {table_path}")
    print(f"\n✅ Sweep table saved: {table_path}")
    write_manifest(config, out_dir, inputs)
    return EXIT_OK


HANDLERS = {
    "ingest": run_ingest,
    "train": run_train,
    "evaluate": run_evaluate,
    "predict": run_predict,
    "simulate": run_simulate,
    "inspect": run_inspect,
    "sweep": run_sweep,
}


def dispatch(argv) -> int:
    """
    Parse ``argv`` and run the selected subcommand

    Returns:
        0 on success, 1 on usage or configuration errors, 2 on data errors
    """
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if args.command not in HANDLERS:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    configure_logging(args.verbose)
    flags = {key: value for key, value in vars(args).items() if key not in COMMON_KEYS}
    print_banner()

    try:
        config = RunConfig.from_sources(args.command, flags, args.config)
        return HANDLERS[args.command](config)
    except ConfigError as e:
        print(f"\n❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"\n❌ {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"\n❌ {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    """Main application entry point"""
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
