"""
File Utilities

Helper functions for input discovery, validation and the versioned artifact
formats: corpus files, model files, reports, traces and run manifests.
"""

import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numba
import numpy as np
import pandas as pd
import scipy

from .. import __version__
from ..config.settings import Settings
from ..core.corpus import Corpus, PassageRecord, TimeBinScheme, TrajectoryUnits, Vocabularies, read_records
from ..core.exceptions import DataError
from ..core.model import COMPONENTS, ModelConfig, ModelParams

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

END_HEADER = "END_HEADER"
FLOAT_DTYPE = np.dtype("<f8")


def validate_input_file(file_path: PathLike) -> bool:
    """
    Validate that a records path exists and has a supported format

    Args:
        file_path: Records file or a directory of record files

    Returns:
        True if valid, False otherwise
    """
    path = Path(file_path)

    if not path.exists():
        logger.error("File '%s' does not exist", file_path)
        return False

    if path.is_dir():
        if not find_record_files(path):
            formats = ", ".join(sorted(Settings.SUPPORTED_RECORD_FORMATS))
            logger.error("Directory '%s' holds no record files (%s)", file_path, formats)
            return False
        return True

    if path.suffix.lower() not in Settings.SUPPORTED_RECORD_FORMATS:
        logger.error(
            "Unsupported file format '%s'; supported formats: %s",
            path.suffix, ", ".join(sorted(Settings.SUPPORTED_RECORD_FORMATS)),
        )
        return False

    return True


def find_record_files(directory: PathLike) -> List[str]:
    """
    Find all record files in a directory

    Args:
        directory: Directory path to search

    Returns:
        Sorted list of record file paths
    """
    record_files = []
    dir_path = Path(directory)

    if not dir_path.exists():
        return record_files

    for file_path in dir_path.iterdir():
        if file_path.is_file() and file_path.suffix.lower() in Settings.SUPPORTED_RECORD_FORMATS:
            record_files.append(str(file_path))

    return sorted(record_files)


def load_records(path: PathLike, delimiter: str = ",", tz_offset: float = 0.0) -> List[PassageRecord]:
    """Read one records file, or every record file of a directory in sorted order"""
    path = Path(path)
    files = find_record_files(path) if path.is_dir() else [str(path)]
    records: List[PassageRecord] = []
    for file_path in files:
        records.extend(read_records(file_path, delimiter=delimiter, tz_offset=tz_offset))
    return records


def _ensure_parent(output_path: PathLike) -> Path:
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _ids(values: np.ndarray) -> str:
    return " ".join(str(v) for v in values.tolist())


def _parse_ids(text: str, where: str) -> List[int]:
    try:
        return [int(v) for v in text.split()]
    except ValueError:
        raise DataError(f"{where}: malformed id list {text!r}") from None


def _check_magic(line: str, magic: str, path: PathLike) -> int:
    parts = line.strip().split()
    if len(parts) != 3 or parts[0] != "#" or parts[1] != magic:
        raise DataError(f"{path}: not a {magic} file")
    try:
        version = int(parts[2])
    except ValueError:
        raise DataError(f"{path}: bad format version {parts[2]!r}") from None
    if version != Settings.FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version} (expected {Settings.FORMAT_VERSION})")
    return version


def _read_header(lines: Iterable[str], stop: str, path: PathLike) -> Dict[str, str]:
    header = {}
    for line in lines:
        line = line.rstrip("\n")
        if line == stop:
            return header
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: malformed header line {line!r}")
        header[key.strip()] = value.strip()
    raise DataError(f"{path}: header ends without {stop}")


def _header_int(header: Dict[str, str], key: str, path: PathLike) -> int:
    try:
        return int(header[key])
    except (KeyError, ValueError):
        raise DataError(f"{path}: header field {key} missing or not an integer") from None


def _header_float(header: Dict[str, str], key: str, path: PathLike) -> float:
    try:
        return float(header[key])
    except (KeyError, ValueError):
        raise DataError(f"{path}: header field {key} missing or not a number") from None


def _vocabulary_lines(vocab: Vocabularies) -> List[str]:
    lines = ["[sequences]"]
    lines.extend(json.dumps(list(sequence), ensure_ascii=False) for sequence in vocab.sequences())
    lines.append("[objects]")
    lines.extend(json.dumps(obj, ensure_ascii=False) for obj in vocab.objects())
    return lines


def _read_vocabulary(
    lines: List[str], order: int, num_sequences: int, num_objects: int, path: PathLike
) -> Vocabularies:
    expected = 2 + num_sequences + num_objects
    if len(lines) < expected or lines[0] != "[sequences]" or lines[1 + num_sequences] != "[objects]":
        raise DataError(f"{path}: vocabulary tables do not match the header counts")
    try:
        sequences = [json.loads(line) for line in lines[1:1 + num_sequences]]
        objects = [json.loads(line) for line in lines[2 + num_sequences:expected]]
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed vocabulary entry ({e})") from None
    return Vocabularies.from_tables(order, sequences, objects)


def save_corpus(corpus: Corpus, output_path: PathLike) -> bool:
    """
    Save an encoded corpus in the line-oriented corpus format

    Args:
        corpus: Corpus to save
        output_path: Destination file

    Returns:
        True if successful, False otherwise
    """
    try:
        path = _ensure_parent(output_path)
        lines = [
            f"# {Settings.CORPUS_MAGIC} {Settings.FORMAT_VERSION}",
            f"order={corpus.order}",
            f"bin_hours={corpus.scheme.bin_hours if corpus.scheme else ''}",
            f"tz_offset={corpus.tz_offset!r}",
            f"num_bins={corpus.num_bins}",
            f"num_sequences={corpus.num_sequences}",
            f"num_objects={corpus.num_objects}",
            f"num_trajectories={corpus.num_trajectories}",
        ]
        lines.extend(_vocabulary_lines(corpus.vocab))
        lines.append("[trajectories]")
        for traj in corpus.trajectories:
            lines.append("\t".join([str(traj.index), _ids(traj.objects), _ids(traj.sequences), _ids(traj.bins)]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info("corpus saved to %s", path)
        return True

    except OSError as e:
        logger.error("Error saving corpus: %s", e)
        return False


def load_corpus(file_path: PathLike) -> Corpus:
    """
    Load a corpus file

    Raises:
        DataError: On a missing, corrupt or wrong-version file
    """
    path = Path(file_path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read corpus {file_path}: {e}") from None
    if not lines:
        raise DataError(f"{path}: empty corpus file")
    _check_magic(lines[0], Settings.CORPUS_MAGIC, path)

    try:
        start = lines.index("[sequences]")
        traj_start = lines.index("[trajectories]")
    except ValueError:
        raise DataError(f"{path}: missing [sequences] or [trajectories] section") from None
    header = _read_header(lines[1:start] + ["[sequences]"], "[sequences]", path)
    order = _header_int(header, "order", path)
    num_sequences = _header_int(header, "num_sequences", path)
    num_objects = _header_int(header, "num_objects", path)
    num_trajectories = _header_int(header, "num_trajectories", path)
    num_bins = _header_int(header, "num_bins", path)
    tz_offset = _header_float(header, "tz_offset", path)
    scheme = TimeBinScheme(int(header["bin_hours"])) if header.get("bin_hours") else None

    vocab = _read_vocabulary(lines[start:traj_start], order, num_sequences, num_objects, path)

    trajectories = []
    for line_number, line in enumerate(lines[traj_start + 1:], traj_start + 2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{line_number}: expected 4 tab-separated fields")
        where = f"{path}:{line_number}"
        trajectories.append(
            TrajectoryUnits(
                len(trajectories),
                _parse_ids(fields[1], where),
                _parse_ids(fields[2], where),
                _parse_ids(fields[3], where),
            )
        )
    if len(trajectories) != num_trajectories:
        raise DataError(f"{path}: header promises {num_trajectories} trajectories, found {len(trajectories)}")

    corpus = Corpus(trajectories, vocab, num_bins, scheme, tz_offset)
    corpus.validate()
    logger.info("loaded corpus %s: %d trajectories, %d units", path, corpus.num_trajectories, corpus.num_units)
    return corpus


@dataclass(frozen=True, eq=False)
class LoadedModel:
    params: ModelParams
    cfg: ModelConfig
    vocab: Vocabularies
    bin_hours: Optional[int]
    encoding: str


def save_model(
    params: ModelParams,
    cfg: ModelConfig,
    vocab: Vocabularies,
    output_path: PathLike,
    encoding: str = Settings.DEFAULT_MODEL_ENCODING,
    bin_hours: Optional[int] = None,
) -> bool:
    """
    Save estimated parameters with their configuration and vocabularies

    The textual header ends with END_HEADER; theta, phi, psi and phi_time follow
    in row-major order, as tab-separated decimals (``text``) or raw little-endian
    float64 (``binary``).

    Returns:
        True if successful, False otherwise
    """
    if encoding not in ("text", "binary"):
        raise DataError(f"unknown model encoding {encoding!r}")
    try:
        path = _ensure_parent(output_path)
        lines = [
            f"# {Settings.MODEL_MAGIC} {Settings.FORMAT_VERSION}",
            f"encoding={encoding}",
            f"K={params.K}",
            f"S={params.S}",
            f"O={params.O}",
            f"B={params.B}",
            f"M={params.M}",
            f"r={cfg.r}",
            f"bin_hours={bin_hours if bin_hours else ''}",
            f"alpha={cfg.alpha!r}",
            f"beta={cfg.beta!r}",
            f"eta={cfg.eta!r}",
            f"gamma={cfg.gamma!r}",
            f"components={','.join(cfg.component_list)}",
            f"num_sequences={vocab.num_sequences}",
            f"num_objects={vocab.num_objects}",
        ]
        lines.extend(_vocabulary_lines(vocab))
        lines.append(END_HEADER)
        header = ("\n".join(lines) + "\n").encode("utf-8")

        matrices = (params.theta, params.phi, params.psi, params.phi_time)
        if encoding == "binary":
            payload = b"".join(np.ascontiguousarray(m, dtype=FLOAT_DTYPE).tobytes() for m in matrices)
        else:
            rows = ["\t".join(repr(float(v)) for v in row) for m in matrices for row in m]
            payload = ("\n".join(rows) + "\n").encode("utf-8")

        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
        logger.info("model saved to %s (%s)", path, encoding)
        return True

    except OSError as e:
        logger.error("Error saving model: %s", e)
        return False


def load_model(file_path: PathLike) -> LoadedModel:
    """
    Load a model file written by :func:`save_model`

    Raises:
        DataError: On a missing, corrupt or wrong-version file
    """
    path = Path(file_path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read model {file_path}: {e}") from None

    marker = f"\n{END_HEADER}\n".encode("utf-8")
    split = data.find(marker)
    if split < 0:
        raise DataError(f"{path}: missing {END_HEADER}")
    try:
        lines = data[:split].decode("utf-8").split("\n")
    except UnicodeDecodeError:
        raise DataError(f"{path}: header is not UTF-8") from None
    payload = data[split + len(marker):]
    _check_magic(lines[0], Settings.MODEL_MAGIC, path)

    try:
        start = lines.index("[sequences]")
    except ValueError:
        raise DataError(f"{path}: missing vocabulary tables") from None
    header = _read_header(lines[1:start] + ["[sequences]"], "[sequences]", path)
    K, S, O, B, M = (_header_int(header, key, path) for key in ("K", "S", "O", "B", "M"))  # noqa: E741
    r = _header_int(header, "r", path)
    encoding = header.get("encoding", "")
    cfg = ModelConfig(
        K=K,
        r=r,
        alpha=_header_float(header, "alpha", path),
        beta=_header_float(header, "beta", path),
        eta=_header_float(header, "eta", path),
        gamma=_header_float(header, "gamma", path),
        components=frozenset(c for c in header.get("components", ",".join(COMPONENTS)).split(",") if c),
    )
    vocab = _read_vocabulary(
        lines[start:], r, _header_int(header, "num_sequences", path), _header_int(header, "num_objects", path), path
    )

    shapes = [(M, K), (K, S), (K, O), (K, B)]
    sizes = [rows * cols for rows, cols in shapes]
    if encoding == "binary":
        values = np.frombuffer(payload, dtype=FLOAT_DTYPE)
    elif encoding == "text":
        try:
            text = payload.decode("utf-8")
            values = np.array([float(v) for line in text.splitlines() if line for v in line.split("\t")])
        except (UnicodeDecodeError, ValueError):
            raise DataError(f"{path}: malformed text payload") from None
    else:
        raise DataError(f"{path}: unknown encoding {encoding!r}")
    if len(values) != sum(sizes):
        raise DataError(f"{path}: payload holds {len(values)} values, header promises {sum(sizes)}")

    matrices = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        matrices.append(values[offset:offset + size].reshape(shape))
        offset += size
    params = ModelParams(*matrices)

    bin_hours = int(header["bin_hours"]) if header.get("bin_hours") else None
    logger.info("loaded model %s: K=%d, S=%d, O=%d, B=%d", path, K, S, O, B)
    return LoadedModel(params, cfg, vocab, bin_hours, encoding)


def save_report(table: pd.DataFrame, output_path: PathLike) -> bool:
    """
    Save a tab-separated report with a magic comment line and a header row

    Returns:
        True if successful, False otherwise
    """
    try:
        path = _ensure_parent(output_path)
        body = table.to_csv(sep="\t", index=False, lineterminator="\n")
        path.write_text(f"# {Settings.REPORT_MAGIC} {Settings.FORMAT_VERSION}\n{body}", encoding="utf-8")
        logger.info("report saved to %s", path)
        return True

    except OSError as e:
        logger.error("Error saving report: %s", e)
        return False


def load_report(file_path: PathLike) -> pd.DataFrame:
    """Read a report back into a DataFrame"""
    path = Path(file_path)
    try:
        with open(path, encoding="utf-8") as f:
            _check_magic(f.readline(), Settings.REPORT_MAGIC, path)
        return pd.read_csv(path, sep="\t", comment="#")
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read report {file_path}: {e}") from None


def save_listing(listing: str, output_path: PathLike, source: str) -> bool:
    """
    Save a human-readable factor listing to a text file

    Args:
        listing: Text produced by format_utils.describe_factor
        output_path: Path to save the text file
        source: Model or corpus the listing was produced from

    Returns:
        True if successful, False otherwise
    """
    try:
        path = _ensure_parent(output_path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"Latent factors of {Path(source).name}\n")
            f.write("=" * 50 + "\n\n")
            f.write(listing)
            f.write("\n")
        logger.info("listing saved to %s", path)
        return True

    except OSError as e:
        logger.error("Error saving listing: %s", e)
        return False


def save_trace(trace: Sequence[float], output_path: PathLike) -> bool:
    """Save the per-iteration log joint as a two-column report"""
    table = pd.DataFrame({"iteration": np.arange(1, len(trace) + 1), "log_joint": np.asarray(trace, dtype=np.float64)})
    return save_report(table, output_path)


def save_assignments(assignments: np.ndarray, corpus: Corpus, output_path: PathLike) -> bool:
    """Save per-unit ground-truth factors of a simulated corpus"""
    units = corpus.flatten()
    positions = np.arange(units.num_units) - units.offsets[units.trajectories]
    table = pd.DataFrame({"trajectory": units.trajectories, "unit": positions, "factor": np.asarray(assignments)})
    return save_report(table, output_path)


def file_checksum(file_path: PathLike) -> str:
    """
    SHA-256 of a file, or of every record file of a directory in sorted order

    Args:
        file_path: File or directory

    Returns:
        Hex digest
    """
    path = Path(file_path)
    files = find_record_files(path) if path.is_dir() else [str(path)]
    digest = hashlib.sha256()
    for name in files:
        with open(name, "rb") as f:
            for block in iter(lambda: f.read(1 << 20), b""):
                digest.update(block)
    return digest.hexdigest()


def _quote(value: str) -> str:
    escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\t", "\\t").replace("\n", "\\n")
    return f'"{escaped}"'


def manifest_path_for(output_dir: PathLike, name: Optional[str] = None) -> Path:
    """Manifest path of a run: ``<name>.manifest.cfg`` or plain ``manifest.cfg`` in its own directory"""
    filename = f"{name}.{Settings.MANIFEST_FILE}" if name else Settings.MANIFEST_FILE
    return Path(output_dir) / filename


def write_manifest(
    config,
    output_dir: PathLike,
    inputs: Optional[Dict[str, PathLike]] = None,
    name: Optional[str] = None,
) -> Optional[Path]:
    """
    Write the run manifest beside a run's outputs

    The manifest is a flat ``key="value"`` file holding every effective
    setting, input checksums, library versions and the RNG algorithm. It can be
    passed back with ``--config`` to repeat the run.

    Args:
        config: RunConfig of the run
        output_dir: Directory the outputs were written to
        inputs: Named input files to checksum
        name: Output file the manifest belongs to; runs sharing a directory keep separate manifests

    Returns:
        Manifest path, or None if it could not be written
    """
    items = list(config.to_items())
    items.append(("format_version", str(Settings.FORMAT_VERSION)))
    items.append(("rng_algorithm", Settings.RNG_ALGORITHM))
    for name, input_path in sorted((inputs or {}).items()):
        items.append((f"checksum_{name}", file_checksum(input_path)))
    items.extend(
        [
            ("version_trajfactors", __version__),
            ("version_python", platform.python_version()),
            ("version_numpy", np.__version__),
            ("version_scipy", scipy.__version__),
            ("version_numba", numba.__version__),
            ("version_pandas", pd.__version__),
        ]
    )

    try:
        path = _ensure_parent(manifest_path_for(output_dir, name))
        lines = [f"# {Settings.MANIFEST_MAGIC} {Settings.FORMAT_VERSION}"]
        lines.extend(f"{key}={_quote(value)}" for key, value in items)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    except OSError as e:
        logger.error("Error writing manifest: %s", e)
        return None


def get_safe_filename(original_name: str) -> str:
    """
    Convert filename to safe format for output files

    Args:
        original_name: Original filename

    Returns:
        Safe filename for output
    """
    name = Path(original_name).stem
    safe_name = "".join(c if c.isalnum() or c in "._-" else "_" for c in name)
    return safe_name
