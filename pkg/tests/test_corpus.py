# tests/test_corpus.py
"""
Unit tests for record ingestion, segmentation and unit extraction
"""

import calendar
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to path
sys.path.append(str(Path(__file__).parent.parent))

from src.core.corpus import (  # noqa: E402
    UNKNOWN_OBJECT,
    UNKNOWN_SEQUENCE,
    Corpus,
    PassageRecord,
    TimeBinScheme,
    Trajectory,
    Vocabularies,
    build_corpus,
    extract_units,
    read_records,
    segment,
    split_corpus,
    synthetic_vocabulary,
    time_bin,
    time_bins,
)
from src.core.exceptions import ConfigError, DataError  # noqa: E402
from src.utils.format_utils import display_bin_index, format_bin_label  # noqa: E402

# Wednesday 2023-11-15 09:00 UTC
WEDNESDAY_9AM = calendar.timegm((2023, 11, 15, 9, 0, 0))
# Saturday 2023-11-18 00:00 UTC
SATURDAY_MIDNIGHT = calendar.timegm((2023, 11, 18, 0, 0, 0))
WEDNESDAY_MIDNIGHT = WEDNESDAY_9AM - 9 * 3600

# Reference time-bin listings: 1-based bin number and period label
LISTED_BIN_LABELS = [
    (5, "8:00-10:00@weekday"),
    (4, "6:00-8:00@weekday"),
    (6, "10:00-12:00@weekday"),
    (7, "12:00-14:00@weekday"),
    (17, "8:00-10:00@weekend"),
    (20, "14:00-16:00@weekend"),
    (21, "16:00-18:00@weekend"),
    (11, "20:00-22:00@weekday"),
    (19, "12:00-14:00@weekend"),
    (18, "10:00-12:00@weekend"),
    (9, "16:00-18:00@weekday"),
    (10, "18:00-20:00@weekday"),
    (8, "14:00-16:00@weekday"),
]


def make_trajectory(obj, locations, start=WEDNESDAY_9AM, step=60):
    return Trajectory(obj, tuple((location, float(start + i * step)) for i, location in enumerate(locations)))


class TestTimeBins:

    def test_weekday_morning_bin(self):
        """Test a weekday 9:00 passage lands in the 8:00-10:00 weekday bin"""
        assert time_bin(WEDNESDAY_9AM, TimeBinScheme(2)) == 4

    def test_weekend_bins_follow_weekday_bins(self):
        """Test Sunday passages are offset by the number of bins per day"""
        sunday = calendar.timegm((2023, 11, 19, 9, 0, 0))
        assert time_bin(sunday, TimeBinScheme(2)) == 12 + 4

    def test_saturday_is_weekend(self):
        """Test Saturday counts as weekend"""
        saturday = calendar.timegm((2023, 11, 18, 0, 30, 0))
        assert time_bin(saturday, TimeBinScheme(2)) == 12

    def test_timezone_offset_moves_day(self):
        """Test the local offset is applied before binning"""
        friday_evening = calendar.timegm((2023, 11, 17, 20, 0, 0))
        # 04:00 on Saturday local time
        assert time_bin(friday_evening, TimeBinScheme(2), tz_offset=8) == 12 + 2
        assert time_bin(friday_evening, TimeBinScheme(2)) == 10

    def test_vectorized_matches_scalar(self):
        """Test time_bins agrees with time_bin"""
        scheme = TimeBinScheme(3)
        stamps = WEDNESDAY_9AM + np.arange(0, 7 * 86400, 5400, dtype=np.float64)
        expected = [time_bin(ts, scheme, tz_offset=-5) for ts in stamps]
        assert time_bins(stamps, scheme, tz_offset=-5).tolist() == expected

    def test_bin_layout(self):
        """Test bin counts per scheme"""
        assert TimeBinScheme(2).total_bins == 24
        assert TimeBinScheme(1).total_bins == 48
        assert TimeBinScheme.from_total_bins(24).bin_hours == 2

    def test_invalid_bin_hours(self):
        """Test bin widths that do not divide the day"""
        with pytest.raises(ConfigError):
            TimeBinScheme(5)
        with pytest.raises(ConfigError):
            TimeBinScheme.from_total_bins(10)

    def test_midnight_is_first_bin(self):
        """Test a weekday 00:00 passage lands in bin 0"""
        assert time_bin(WEDNESDAY_MIDNIGHT, TimeBinScheme(2)) == 0

    @pytest.mark.parametrize("number,label", LISTED_BIN_LABELS)
    def test_listed_labels(self, number, label):
        """Test bin index + 1 and the period label agree with the reference listings"""
        start_hour = int(label.split(":")[0])
        day_start = SATURDAY_MIDNIGHT if label.endswith("@weekend") else WEDNESDAY_MIDNIGHT

        bin_index = time_bin(day_start + start_hour * 3600 + 1800, TimeBinScheme(2))

        assert display_bin_index(bin_index) == number
        assert format_bin_label(bin_index, 2) == label

    def test_non_finite_timestamps(self):
        """Test infinite and out-of-calendar timestamps are data errors"""
        with pytest.raises(DataError):
            time_bin(float("inf"), TimeBinScheme(2))
        with pytest.raises(DataError):
            time_bin(float("nan"), TimeBinScheme(2))
        with pytest.raises(DataError):
            time_bins(np.array([WEDNESDAY_9AM, 1e300]), TimeBinScheme(2))


class TestRecords:

    def test_record_validation(self):
        """Test empty fields and non-positive timestamps are rejected"""
        with pytest.raises(DataError):
            PassageRecord("", "A", 10.0)
        with pytest.raises(DataError):
            PassageRecord("V1", "A", 0.0)

    def test_read_records_with_header(self, tmp_path):
        """Test reading epoch and ISO-8601 timestamps after a header line"""
        path = tmp_path / "records.csv"
        path.write_text(
            "object,location,timestamp\n"
            f"V1,A,{WEDNESDAY_9AM}\n"
            "V1,B,2023-11-15T09:10:00\n"
            "V2,C,2023-11-15T10:00:00Z\n"
        )

        records = read_records(path)

        assert [r.location for r in records] == ["A", "B", "C"]
        assert records[0].timestamp == WEDNESDAY_9AM
        assert records[1].timestamp == WEDNESDAY_9AM + 600
        assert records[2].timestamp == WEDNESDAY_9AM + 3600

    def test_naive_iso_time_uses_offset(self, tmp_path):
        """Test naive ISO times are read as local time"""
        path = tmp_path / "records.csv"
        path.write_text("V1,A,2023-11-15T17:00:00\n")

        records = read_records(path, tz_offset=8)

        assert records[0].timestamp == WEDNESDAY_9AM

    def test_read_records_without_header(self, tmp_path):
        """Test a headerless tab-separated file"""
        path = tmp_path / "records.tsv"
        path.write_text(f"V1\tA\t{WEDNESDAY_9AM}\nV1\tB\t{WEDNESDAY_9AM + 60}\n")

        records = read_records(path, delimiter="\t")

        assert len(records) == 2
        assert records[1].obj == "V1"

    def test_blank_lines_are_skipped(self, tmp_path):
        """Test blank lines between records"""
        path = tmp_path / "records.csv"
        path.write_text(f"V1,A,{WEDNESDAY_9AM}\n\nV1,B,{WEDNESDAY_9AM + 60}\n")

        assert len(read_records(path)) == 2

    def test_bad_timestamp_reports_line(self, tmp_path):
        """Test malformed timestamps name their line"""
        path = tmp_path / "records.csv"
        path.write_text(f"object,location,timestamp\nV1,A,{WEDNESDAY_9AM}\nV1,B,yesterday\n")

        with pytest.raises(DataError, match=r":3"):
            read_records(path)

    @pytest.mark.parametrize("bad", ["inf", "-inf", "1e300"])
    def test_out_of_range_timestamp_reports_line(self, tmp_path, bad):
        """Test infinite and out-of-calendar epoch values name their line"""
        path = tmp_path / "records.csv"
        path.write_text(f"V1,A,{WEDNESDAY_9AM}\nV1,B,{bad}\nV1,C,{WEDNESDAY_9AM + 60}\n")

        with pytest.raises(DataError, match=r":2"):
            read_records(path)

    def test_non_finite_record(self):
        """Test records reject timestamps outside the calendar"""
        with pytest.raises(DataError):
            PassageRecord("V1", "A", float("inf"))
        with pytest.raises(DataError):
            PassageRecord("V1", "A", float("nan"))

    def test_empty_file(self, tmp_path):
        """Test an empty file yields no records"""
        path = tmp_path / "records.csv"
        path.write_text("")

        assert read_records(path) == []


class TestSegment:

    def test_split_on_gap(self):
        """Test trajectories are cut at large gaps and short pieces dropped"""
        records = [
            PassageRecord("V1", "A", 1000.0),
            PassageRecord("V1", "B", 1100.0),
            PassageRecord("V1", "C", 1200.0),
            PassageRecord("V1", "D", 9000.0),
        ]

        trajectories = segment(records, gap_seconds=3600, min_len=2)

        assert len(trajectories) == 1
        assert trajectories[0].locations == ["A", "B", "C"]

    def test_interleaved_objects(self):
        """Test records of different objects are separated and time-ordered"""
        records = [
            PassageRecord("V2", "X", 1050.0),
            PassageRecord("V1", "B", 1100.0),
            PassageRecord("V1", "A", 1000.0),
            PassageRecord("V2", "Y", 1150.0),
        ]

        trajectories = segment(records, gap_seconds=3600, min_len=2)

        assert [t.obj for t in trajectories] == ["V1", "V2"]
        assert trajectories[0].locations == ["A", "B"]
        assert trajectories[1].locations == ["X", "Y"]

    def test_gap_equal_to_threshold_is_kept(self):
        """Test a gap of exactly gap_seconds does not split"""
        records = [PassageRecord("V1", "A", 1000.0), PassageRecord("V1", "B", 4600.0)]

        assert len(segment(records, gap_seconds=3600, min_len=2)) == 1

    def test_unordered_trajectory_rejected(self):
        """Test trajectories must be time-ordered"""
        with pytest.raises(DataError):
            Trajectory("V1", (("A", 20.0), ("B", 10.0)))

    def test_short_pieces_leave_nothing(self):
        """Test records at 0 s, 1800 s and 7200 s split into pieces too short to keep"""
        start = 1000.0
        records = [PassageRecord("V1", location, start + offset) for location, offset in zip("ABC", (0, 1800, 7200))]

        assert segment(records, gap_seconds=3600, min_len=3) == []

    def test_no_gap_keeps_one_trajectory(self):
        """Test records 600 s apart form a single trajectory"""
        start = 1000.0
        offsets = (0, 600, 1200, 1800)
        records = [PassageRecord("V1", location, start + offset) for location, offset in zip("ABCD", offsets)]

        trajectories = segment(records, gap_seconds=3600, min_len=3)

        assert len(trajectories) == 1
        assert len(trajectories[0]) == 4

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_shuffled_records_match_sort_then_scan(self, seed):
        """Test any record order segments like sorting each object's records and scanning the gaps"""
        rng = np.random.Generator(np.random.PCG64(seed))
        records = [
            PassageRecord(f"V{rng.integers(3)}", "ABCDE"[rng.integers(5)], float(1000 + rng.integers(0, 20000)))
            for _ in range(80)
        ]
        gap, min_len = 1500, 2

        expected = []
        for obj in sorted({record.obj for record in records}):
            points = sorted((record.timestamp, record.location) for record in records if record.obj == obj)
            pieces = [[points[0]]]
            for previous, current in zip(points, points[1:]):
                if current[0] - previous[0] > gap:
                    pieces.append([])
                pieces[-1].append(current)
            expected.extend(
                Trajectory(obj, tuple((location, ts) for ts, location in piece))
                for piece in pieces
                if len(piece) >= min_len
            )

        shuffled = [records[i] for i in rng.permutation(len(records))]

        assert segment(shuffled, gap_seconds=gap, min_len=min_len) == expected
        assert segment(records, gap_seconds=gap, min_len=min_len) == expected


class TestVocabularies:

    def test_encode_decode(self):
        """Test ids are dense and decode back"""
        vocab = Vocabularies(order=1)
        assert vocab.encode_sequence(("A", "B")) == 0
        assert vocab.encode_sequence(("B", "C")) == 1
        assert vocab.encode_sequence(("A", "B")) == 0
        assert vocab.decode_sequence(1) == ("B", "C")

    def test_frozen_returns_sentinels(self):
        """Test unseen values map to the sentinels once frozen"""
        vocab = Vocabularies(order=1)
        vocab.encode_sequence(("A", "B"))
        vocab.encode_object("V1")
        vocab.freeze()

        assert vocab.encode_sequence(("C", "D")) == UNKNOWN_SEQUENCE
        assert vocab.encode_object("V9") == UNKNOWN_OBJECT
        assert vocab.num_sequences == 1

    def test_wrong_sequence_length(self):
        """Test sequences must hold r+1 locations"""
        with pytest.raises(DataError):
            Vocabularies(order=2).encode_sequence(("A", "B"))

    def test_candidates(self):
        """Test candidate sequences extending a context"""
        vocab = Vocabularies(order=1)
        for sequence in [("A", "B"), ("A", "C"), ("B", "C")]:
            vocab.encode_sequence(sequence)
        vocab.freeze()

        assert vocab.candidates(("A",)).tolist() == [0, 1]
        assert vocab.candidates(("Z",)).tolist() == []

    def test_synthetic_vocabulary(self):
        """Test generated names are unique with the requested order"""
        vocab = synthetic_vocabulary(20, 3, order=2)

        assert vocab.num_sequences == 20
        assert len(set(vocab.sequences())) == 20
        assert all(len(s) == 3 for s in vocab.sequences())
        assert vocab.objects() == ["O0", "O1", "O2"]


class TestUnits:

    def test_extract_units(self):
        """Test the sliding window of r+1 locations"""
        vocab = Vocabularies(order=2)
        traj = make_trajectory("V1", ["A", "B", "C", "D"])

        units = extract_units(traj, 2, TimeBinScheme(2), vocab)

        assert len(units) == 2
        assert [vocab.decode_sequence(s) for s in units.sequences] == [("A", "B", "C"), ("B", "C", "D")]
        assert units.objects.tolist() == [0, 0]
        assert units.bins.tolist() == [4, 4]

    def test_unit_bin_uses_mean_timestamp(self):
        """Test a unit spanning a bin boundary takes the bin of its mean time"""
        start = WEDNESDAY_9AM + 3000
        traj = make_trajectory("V1", ["A", "B", "C"], start=start, step=600)

        units = extract_units(traj, 2, TimeBinScheme(2), Vocabularies(order=2))

        # points at 9:50, 10:00, 10:10 -> mean 10:00
        assert units.bins.tolist() == [5]

    def test_short_trajectory(self):
        """Test a trajectory with fewer than r+1 points"""
        with pytest.raises(DataError):
            extract_units(make_trajectory("V1", ["A", "B"]), 2, TimeBinScheme(2), Vocabularies(order=2))

    def test_order_mismatch(self):
        """Test the vocabulary order must match r"""
        with pytest.raises(ConfigError):
            extract_units(make_trajectory("V1", ["A", "B", "C"]), 1, TimeBinScheme(2), Vocabularies(order=2))

    def test_build_corpus(self):
        """Test corpus construction drops trajectories that are too short"""
        trajectories = [
            make_trajectory("V1", ["A", "B", "C"]),
            make_trajectory("V2", ["A", "B"]),
            make_trajectory("V3", ["B", "C", "D", "A"]),
        ]

        corpus = build_corpus(trajectories, 2, TimeBinScheme(2))

        assert corpus.num_trajectories == 2
        assert corpus.num_units == 3
        assert corpus.num_objects == 2
        assert corpus.num_bins == 24
        assert corpus.vocab.frozen

    def test_flatten(self):
        """Test the flat unit view and its offsets"""
        corpus = Corpus.from_units([([0, 0], [0, 1], [0, 1]), ([1], [2], [3])], 3, 2, 4)

        units = corpus.flatten()

        assert units.trajectories.tolist() == [0, 0, 1]
        assert units.offsets.tolist() == [0, 2, 3]
        assert units.trajectory_length(1) == 1

    def test_from_units_validates_ids(self):
        """Test ids outside their vocabulary are rejected"""
        with pytest.raises(DataError):
            Corpus.from_units([([0], [5], [0])], 3, 1, 2)

    def test_split_corpus(self):
        """Test held-out trajectories are encoded against the training vocabulary"""
        trajectories = [
            make_trajectory("V1", ["A", "B", "C"]),
            make_trajectory("V2", ["B", "C", "D"]),
            make_trajectory("V3", ["C", "D", "E"]),
        ]
        corpus = build_corpus(trajectories, 2, TimeBinScheme(2))

        train, test = split_corpus(corpus, [0, 1], [2])

        assert train.num_trajectories == 2
        assert train.num_sequences == 2
        assert train.vocab.frozen
        assert test[0].sequences.tolist() == [UNKNOWN_SEQUENCE]
        assert test[0].objects.tolist() == [UNKNOWN_OBJECT]
