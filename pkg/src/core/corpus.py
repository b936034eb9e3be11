"""
Trajectory Corpus Module

Turns raw passage records (object, location, time-stamp) into trajectories,
and trajectories into units of r-th-order location sequences with their object
and weekday/weekend time bin. Vocabularies map raw sequences and objects onto
dense integer ids.
"""

import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

UNKNOWN_SEQUENCE = -1
UNKNOWN_OBJECT = -1

SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400
HOURS_PER_DAY = 24
# 1970-01-01 was a Thursday (Monday = 0)
EPOCH_WEEKDAY = 3
FIRST_WEEKEND_DAY = 5

RECORD_FIELDS = ("object", "location", "timestamp")

_UNIX_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
# Last second representable as a calendar date (9999-12-31T23:59:59Z)
MAX_TIMESTAMP = (datetime.max.replace(microsecond=0, tzinfo=timezone.utc) - _UNIX_EPOCH).total_seconds()


def _check_timestamp(timestamp: float, positive: bool = True) -> None:
    low_ok = timestamp > 0 if positive else timestamp >= -MAX_TIMESTAMP
    if not (np.isfinite(timestamp) and low_ok and timestamp <= MAX_TIMESTAMP):
        kind = "a positive epoch time" if positive else "an epoch time"
        raise DataError(f"timestamp {timestamp!r} is not {kind} within the calendar range")


@dataclass(frozen=True)
class PassageRecord:
    """One observation of an object passing a location"""

    obj: str
    location: str
    timestamp: float

    def __post_init__(self):
        if not self.obj or not self.location:
            raise DataError(f"record has an empty object or location: {self!r}")
        try:
            _check_timestamp(self.timestamp)
        except DataError as e:
            raise DataError(f"{e}: {self!r}") from None


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered location-time pairs of a single object"""

    obj: str
    points: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        timestamps = [point[1] for point in self.points]
        if any(later < earlier for earlier, later in zip(timestamps, timestamps[1:])):
            raise DataError(f"trajectory of {self.obj!r} is not time-ordered")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def locations(self) -> List[str]:
        return [point[0] for point in self.points]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([point[1] for point in self.points], dtype=np.float64)


@dataclass(frozen=True)
class TimeBinScheme:
    """Equal-width bins of the day, duplicated for weekdays and weekends"""

    bin_hours: int = 2

    def __post_init__(self):
        if int(self.bin_hours) != self.bin_hours or self.bin_hours < 1 or HOURS_PER_DAY % self.bin_hours:
            raise ConfigError(f"bin_hours must be an integer divisor of 24, got {self.bin_hours}")

    @property
    def bins_per_day(self) -> int:
        return HOURS_PER_DAY // int(self.bin_hours)

    @property
    def total_bins(self) -> int:
        return 2 * self.bins_per_day

    @classmethod
    def from_total_bins(cls, total_bins: int) -> "TimeBinScheme":
        """Recover the scheme whose bin count is ``total_bins``"""
        if total_bins < 2 or total_bins % 2 or HOURS_PER_DAY % (total_bins // 2):
            raise ConfigError(f"{total_bins} bins do not form a weekday/weekend scheme")
        return cls(bin_hours=HOURS_PER_DAY // (total_bins // 2))


def time_bin(timestamp: float, scheme: TimeBinScheme, tz_offset: float = 0.0) -> int:
    """
    Map an epoch timestamp onto its weekday/weekend time bin

    Args:
        timestamp: Seconds since the epoch (UTC)
        scheme: Bin layout
        tz_offset: Local-time offset from UTC in hours

    Returns:
        Bin index in [0, B); weekend bins follow the weekday bins
    """
    _check_timestamp(float(timestamp), positive=False)
    local = float(timestamp) + tz_offset * SECONDS_PER_HOUR
    day, second_of_day = divmod(local, SECONDS_PER_DAY)
    weekday = (int(day) + EPOCH_WEEKDAY) % 7
    bin_index = min(int(second_of_day // (scheme.bin_hours * SECONDS_PER_HOUR)), scheme.bins_per_day - 1)
    if weekday >= FIRST_WEEKEND_DAY:
        bin_index += scheme.bins_per_day
    return bin_index


def time_bins(timestamps: np.ndarray, scheme: TimeBinScheme, tz_offset: float = 0.0) -> np.ndarray:
    """Vectorized :func:`time_bin`"""
    stamps = np.asarray(timestamps, dtype=np.float64)
    bad = ~(np.isfinite(stamps) & (np.abs(stamps) <= MAX_TIMESTAMP))
    if bad.any():
        _check_timestamp(float(stamps[np.flatnonzero(bad)[0]]), positive=False)
    local = stamps + tz_offset * SECONDS_PER_HOUR
    day = np.floor_divide(local, SECONDS_PER_DAY)
    second_of_day = local - day * SECONDS_PER_DAY
    weekday = (day.astype(np.int64) + EPOCH_WEEKDAY) % 7
    bins = np.floor_divide(second_of_day, scheme.bin_hours * SECONDS_PER_HOUR).astype(np.int64)
    bins = np.clip(bins, 0, scheme.bins_per_day - 1)
    return bins + np.where(weekday >= FIRST_WEEKEND_DAY, scheme.bins_per_day, 0)


class Vocabularies:
    """Bijections between raw sequences/objects and dense integer ids"""

    def __init__(self, order: int = 2):
        if order < 1:
            raise ConfigError(f"sequence order must be >= 1, got {order}")
        self.order = int(order)
        self._sequence_ids: Dict[Tuple[str, ...], int] = {}
        self._sequences: List[Tuple[str, ...]] = []
        self._object_ids: Dict[str, int] = {}
        self._objects: List[str] = []
        self._frozen = False
        self._context_index: Optional[Dict[Tuple[str, ...], np.ndarray]] = None

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def num_sequences(self) -> int:
        return len(self._sequences)

    @property
    def num_objects(self) -> int:
        return len(self._objects)

    def freeze(self) -> "Vocabularies":
        """Stop growing; unseen values encode to the sentinels from now on"""
        self._frozen = True
        return self

    def encode_sequence(self, sequence: Sequence[str], freeze_vocab: bool = False) -> int:
        key = tuple(sequence)
        if len(key) != self.order + 1:
            raise DataError(f"a sequence of order {self.order} has {self.order + 1} locations, got {key!r}")
        seq_id = self._sequence_ids.get(key)
        if seq_id is not None:
            return seq_id
        if freeze_vocab or self._frozen:
            return UNKNOWN_SEQUENCE
        self._sequence_ids[key] = len(self._sequences)
        self._sequences.append(key)
        return self._sequence_ids[key]

    def decode_sequence(self, seq_id: int) -> Tuple[str, ...]:
        if not 0 <= seq_id < len(self._sequences):
            raise DataError(f"unknown sequence id {seq_id}")
        return self._sequences[seq_id]

    def encode_object(self, obj: str, freeze_vocab: bool = False) -> int:
        obj_id = self._object_ids.get(obj)
        if obj_id is not None:
            return obj_id
        if freeze_vocab or self._frozen:
            return UNKNOWN_OBJECT
        self._object_ids[obj] = len(self._objects)
        self._objects.append(obj)
        return self._object_ids[obj]

    def decode_object(self, obj_id: int) -> str:
        if not 0 <= obj_id < len(self._objects):
            raise DataError(f"unknown object id {obj_id}")
        return self._objects[obj_id]

    def sequences(self) -> List[Tuple[str, ...]]:
        return list(self._sequences)

    def objects(self) -> List[str]:
        return list(self._objects)

    def locations(self) -> List[str]:
        """All locations that appear in any sequence, sorted"""
        return sorted({location for sequence in self._sequences for location in sequence})

    def candidates(self, context: Sequence[str]) -> np.ndarray:
        """
        Sequence ids whose first r locations equal ``context``

        Args:
            context: The last r observed locations

        Returns:
            Ascending array of sequence ids (empty when the context was never seen)
        """
        key = tuple(context)
        if len(key) != self.order:
            raise DataError(f"context must hold {self.order} locations, got {len(key)}")
        if self._context_index is None or not self._frozen:
            grouped: Dict[Tuple[str, ...], List[int]] = {}
            for seq_id, sequence in enumerate(self._sequences):
                grouped.setdefault(sequence[:-1], []).append(seq_id)
            self._context_index = {ctx: np.array(ids, dtype=np.int64) for ctx, ids in grouped.items()}
        return self._context_index.get(key, np.empty(0, dtype=np.int64))

    @classmethod
    def from_tables(cls, order: int, sequences: Iterable[Sequence[str]], objects: Iterable[str]) -> "Vocabularies":
        """Rebuild a frozen vocabulary from its id-ordered tables"""
        vocab = cls(order=order)
        for sequence in sequences:
            expected = vocab.num_sequences
            if vocab.encode_sequence(sequence) != expected:
                raise DataError(f"duplicate sequence {tuple(sequence)!r} in vocabulary table")
        for obj in objects:
            expected = vocab.num_objects
            if vocab.encode_object(obj) != expected:
                raise DataError(f"duplicate object {obj!r} in vocabulary table")
        return vocab.freeze()


def synthetic_vocabulary(num_sequences: int, num_objects: int, order: int = 2) -> Vocabularies:
    """
    Build a frozen vocabulary of generated names

    Sequence ``j`` spells ``j`` in base L (the smallest base with L**(r+1) >= S)
    over locations ``L0, L1, ...``, so ids sharing a context are consecutive.
    """
    base = 2
    while base ** (order + 1) < num_sequences:
        base += 1
    sequences = []
    for seq_id in range(num_sequences):
        digits = []
        value = seq_id
        for _ in range(order + 1):
            value, digit = divmod(value, base)
            digits.append(f"L{digit}")
        sequences.append(tuple(reversed(digits)))
    objects = [f"O{obj_id}" for obj_id in range(num_objects)]
    return Vocabularies.from_tables(order, sequences, objects)


@dataclass(eq=False)
class TrajectoryUnits:
    """Encoded units of one trajectory: per-unit object, sequence and time bin ids"""

    index: int
    objects: np.ndarray
    sequences: np.ndarray
    bins: np.ndarray

    def __post_init__(self):
        self.objects = np.asarray(self.objects, dtype=np.int64)
        self.sequences = np.asarray(self.sequences, dtype=np.int64)
        self.bins = np.asarray(self.bins, dtype=np.int64)
        if not len(self.objects) == len(self.sequences) == len(self.bins):
            raise DataError(f"trajectory {self.index}: unit fields differ in length")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def num_units(self) -> int:
        return len(self.sequences)

    @property
    def obj(self) -> int:
        """The trajectory's object (units of extracted trajectories share it)"""
        return int(self.objects[0]) if len(self.objects) else UNKNOWN_OBJECT

    def units(self) -> List[Tuple[int, int]]:
        return list(zip(self.sequences.tolist(), self.bins.tolist()))

    def head(self, num_units: int) -> "TrajectoryUnits":
        return TrajectoryUnits(self.index, self.objects[:num_units], self.sequences[:num_units], self.bins[:num_units])


@dataclass(eq=False)
class UnitArrays:
    """Flat, sampler-friendly view of a corpus: one row per unit"""

    trajectories: np.ndarray
    sequences: np.ndarray
    objects: np.ndarray
    bins: np.ndarray
    offsets: np.ndarray

    @property
    def num_units(self) -> int:
        return len(self.sequences)

    @property
    def num_trajectories(self) -> int:
        return len(self.offsets) - 1

    def trajectory_length(self, index: int) -> int:
        return int(self.offsets[index + 1] - self.offsets[index])


@dataclass(eq=False)
class Corpus:
    """Encoded trajectories together with the vocabularies and bin layout they use"""

    trajectories: List[TrajectoryUnits]
    vocab: Vocabularies
    num_bins: int
    scheme: Optional[TimeBinScheme] = None
    tz_offset: float = 0.0

    @property
    def order(self) -> int:
        return self.vocab.order

    @property
    def num_trajectories(self) -> int:
        return len(self.trajectories)

    @property
    def num_sequences(self) -> int:
        return self.vocab.num_sequences

    @property
    def num_objects(self) -> int:
        return self.vocab.num_objects

    @property
    def num_units(self) -> int:
        return sum(len(traj) for traj in self.trajectories)

    def flatten(self) -> UnitArrays:
        lengths = np.array([len(traj) for traj in self.trajectories], dtype=np.int64)
        offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])

        def _concat(field: str) -> np.ndarray:
            parts = [getattr(traj, field) for traj in self.trajectories]
            return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

        return UnitArrays(
            trajectories=np.repeat(np.arange(len(lengths), dtype=np.int64), lengths),
            sequences=_concat("sequences"),
            objects=_concat("objects"),
            bins=_concat("bins"),
            offsets=offsets,
        )

    def validate(self) -> None:
        """Check every id lies inside its vocabulary; raises DataError otherwise"""
        limits = (("sequences", self.num_sequences), ("objects", self.num_objects), ("bins", self.num_bins))
        for traj in self.trajectories:
            for field, limit in limits:
                values = getattr(traj, field)
                if len(values) and (values.min() < 0 or values.max() >= limit):
                    raise DataError(f"trajectory {traj.index}: {field} id outside [0, {limit})")

    @classmethod
    def from_units(
        cls,
        units: Sequence[Tuple[Sequence[int], Sequence[int], Sequence[int]]],
        num_sequences: int,
        num_objects: int,
        num_bins: int,
        order: int = 2,
    ) -> "Corpus":
        """
        Build a corpus directly from id lists over a synthetic vocabulary

        Args:
            units: Per trajectory, a triple (object ids, sequence ids, bin ids)
            num_sequences: S
            num_objects: O
            num_bins: B
            order: r of the generated sequence names
        """
        trajectories = [
            TrajectoryUnits(index, objects, sequences, bins)
            for index, (objects, sequences, bins) in enumerate(units)
        ]
        corpus = cls(trajectories, synthetic_vocabulary(num_sequences, num_objects, order), num_bins)
        corpus.validate()
        return corpus


def parse_timestamp(value: str, tz_offset: float, where: str) -> float:
    """Parse an ISO-8601 time; naive values are local time at ``tz_offset``"""
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise DataError(f"{where}: unparseable timestamp {value!r}") from None
    if parsed.tzinfo is None:
        local = (parsed.replace(tzinfo=timezone.utc) - _UNIX_EPOCH).total_seconds()
        return local - tz_offset * SECONDS_PER_HOUR
    return (parsed - _UNIX_EPOCH).total_seconds()


def read_records(path: Union[str, Path], delimiter: str = ",", tz_offset: float = 0.0) -> List[PassageRecord]:
    """
    Read passage records from a delimited text file

    Each line holds ``object,location,timestamp``; the timestamp is epoch seconds
    or an ISO-8601 local time. An optional header line is skipped. Blank lines are
    ignored.

    Args:
        path: Records file
        delimiter: Field separator
        tz_offset: Local-time offset (hours) used for naive ISO-8601 timestamps

    Returns:
        Records in file order
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=None,
            names=list(RECORD_FIELDS),
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            engine="python",
        )
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: {e}") from None
    except pd.errors.EmptyDataError:
        return []

    frame = frame.fillna("")
    for column in RECORD_FIELDS:
        frame[column] = frame[column].str.strip()
    line_numbers = np.arange(1, len(frame) + 1)

    if len(frame) and tuple(frame.iloc[0].str.lower()) == RECORD_FIELDS:
        frame = frame.iloc[1:]
        line_numbers = line_numbers[1:]

    blank = (frame["object"] == "") & (frame["location"] == "") & (frame["timestamp"] == "")
    frame = frame[~blank.to_numpy()]
    line_numbers = line_numbers[~blank.to_numpy()]

    timestamps = pd.to_numeric(frame["timestamp"], errors="coerce").to_numpy(dtype=np.float64, copy=True)
    for position in np.flatnonzero(np.isnan(timestamps)):
        where = f"{path}:{line_numbers[position]}"
        timestamps[position] = parse_timestamp(frame["timestamp"].iat[position], tz_offset, where)

    records = []
    for position, (obj, location) in enumerate(zip(frame["object"], frame["location"])):
        try:
            records.append(PassageRecord(obj, location, float(timestamps[position])))
        except DataError as e:
            raise DataError(f"{path}:{line_numbers[position]}: {e}") from None

    logger.info("read %d records from %s", len(records), path)
    return records


def segment(records: Sequence[PassageRecord], gap_seconds: float = 3600.0, min_len: int = 3) -> List[Trajectory]:
    """
    Split records into per-object trajectories

    Records are grouped by object, ordered by (timestamp, location) and cut
    wherever two consecutive records are more than ``gap_seconds`` apart.
    Segments shorter than ``min_len`` are dropped.

    Args:
        records: Records in any order, objects interleaved
        gap_seconds: Largest allowed gap inside a trajectory
        min_len: Minimum number of points per trajectory

    Returns:
        Trajectories ordered by object id, then start time
    """
    if not records:
        return []

    frame = pd.DataFrame(
        {
            "obj": [record.obj for record in records],
            "location": [record.location for record in records],
            "timestamp": np.array([record.timestamp for record in records], dtype=np.float64),
        }
    )
    frame = frame.sort_values(["obj", "timestamp", "location"], kind="mergesort").reset_index(drop=True)

    new_object = frame["obj"].ne(frame["obj"].shift())
    gap = frame["timestamp"].diff() > gap_seconds
    frame["segment"] = (new_object | gap).cumsum()

    trajectories = []
    for _, group in frame.groupby("segment", sort=True):
        if len(group) < min_len:
            continue
        points = tuple((location, float(ts)) for location, ts in zip(group["location"], group["timestamp"]))
        trajectories.append(Trajectory(obj=group["obj"].iat[0], points=points))

    logger.info(
        "segmented %d records into %d trajectories (gap %.0fs, min length %d)",
        len(records), len(trajectories), gap_seconds, min_len,
    )
    return trajectories


def extract_units(
    traj: Trajectory,
    r: int,
    scheme: TimeBinScheme,
    vocab: Vocabularies,
    freeze_vocab: bool = False,
    tz_offset: float = 0.0,
    index: int = 0,
) -> TrajectoryUnits:
    """
    Slide an (r+1)-location window over a trajectory

    Unit i holds locations l_i..l_{i+r}; its time bin is the bin of the mean of
    those r+1 timestamps. With ``freeze_vocab`` set, unseen sequences and objects
    become the sentinels instead of extending the vocabulary.

    Args:
        traj: Trajectory of at least r+1 points
        r: Sequence order
        scheme: Time-bin layout
        vocab: Vocabulary to encode against
        freeze_vocab: Do not grow the vocabulary
        tz_offset: Local-time offset in hours
        index: Trajectory index m assigned to the result

    Returns:
        The n - r units of the trajectory
    """
    if r != vocab.order:
        raise ConfigError(f"order {r} does not match the vocabulary order {vocab.order}")
    if len(traj) < r + 1:
        raise DataError(f"trajectory of {traj.obj!r} has {len(traj)} points, order {r} needs at least {r + 1}")

    locations = traj.locations
    windows = np.lib.stride_tricks.sliding_window_view(traj.timestamps, r + 1)
    bins = time_bins(windows.mean(axis=1), scheme, tz_offset)
    sequences = [
        vocab.encode_sequence(locations[start:start + r + 1], freeze_vocab=freeze_vocab)
        for start in range(len(locations) - r)
    ]
    obj_id = vocab.encode_object(traj.obj, freeze_vocab=freeze_vocab)
    return TrajectoryUnits(index, np.full(len(sequences), obj_id), sequences, bins)


def build_corpus(
    trajectories: Iterable[Trajectory],
    r: int,
    scheme: TimeBinScheme,
    tz_offset: float = 0.0,
) -> Corpus:
    """
    Encode trajectories into a corpus with freshly built, frozen vocabularies

    Trajectories shorter than r+1 yield no units and are dropped.
    """
    vocab = Vocabularies(order=r)
    units: List[TrajectoryUnits] = []
    dropped = 0
    for traj in trajectories:
        if len(traj) < r + 1:
            dropped += 1
            continue
        units.append(extract_units(traj, r, scheme, vocab, tz_offset=tz_offset, index=len(units)))
    vocab.freeze()

    if dropped:
        logger.info("dropped %d trajectories shorter than %d points", dropped, r + 1)
    logger.info(
        "built corpus: %d trajectories, %d sequences, %d objects, %d bins",
        len(units), vocab.num_sequences, vocab.num_objects, scheme.total_bins,
    )
    return Corpus(units, vocab, scheme.total_bins, scheme, tz_offset)


def _reencode(
    traj: TrajectoryUnits,
    source: Vocabularies,
    target: Vocabularies,
    index: int,
    seq_cache: Dict[int, int],
    obj_cache: Dict[int, int],
) -> TrajectoryUnits:
    def _seq(seq_id: int) -> int:
        if seq_id not in seq_cache:
            seq_cache[seq_id] = target.encode_sequence(source.decode_sequence(seq_id))
        return seq_cache[seq_id]

    def _obj(obj_id: int) -> int:
        if obj_id not in obj_cache:
            obj_cache[obj_id] = target.encode_object(source.decode_object(obj_id))
        return obj_cache[obj_id]

    return TrajectoryUnits(
        index,
        [_obj(o) for o in traj.objects.tolist()],
        [_seq(s) for s in traj.sequences.tolist()],
        traj.bins.copy(),
    )


def split_corpus(
    corpus: Corpus, train_indices: Sequence[int], test_indices: Sequence[int]
) -> Tuple[Corpus, List[TrajectoryUnits]]:
    """
    Re-encode a training subset with its own vocabulary

    Held-out trajectories are mapped onto the training vocabulary; sequences
    and objects never seen in training become the sentinels.

    Returns:
        (training corpus, held-out trajectories indexed 0..len(test)-1)
    """
    vocab = Vocabularies(order=corpus.order)
    seq_cache: Dict[int, int] = {}
    obj_cache: Dict[int, int] = {}
    train = [
        _reencode(corpus.trajectories[m], corpus.vocab, vocab, new_index, seq_cache, obj_cache)
        for new_index, m in enumerate(train_indices)
    ]
    vocab.freeze()

    seq_cache.clear()
    obj_cache.clear()
    test = [
        _reencode(corpus.trajectories[m], corpus.vocab, vocab, new_index, seq_cache, obj_cache)
        for new_index, m in enumerate(test_indices)
    ]
    return Corpus(train, vocab, corpus.num_bins, corpus.scheme, corpus.tz_offset), test
