"""
Format Utilities

Helper functions for turning ids, time bins and ranked lists into readable text.
"""

from typing import Iterable, List, Optional, Sequence, Tuple

HOURS_PER_DAY = 24


def format_bin_label(bin_index: int, bin_hours: int) -> str:
    """
    Format a time bin as a readable period

    Args:
        bin_index: 0-based bin index (weekend bins follow the weekday bins)
        bin_hours: Width of a bin in hours

    Returns:
        Label such as "8:00-10:00@weekday"
    """
    bins_per_day = HOURS_PER_DAY // bin_hours
    day_type = "weekend" if bin_index >= bins_per_day else "weekday"
    start = (bin_index % bins_per_day) * bin_hours
    return f"{start}:00-{start + bin_hours}:00@{day_type}"


def display_bin_index(bin_index: int) -> int:
    """1-based bin number used in printed factor listings"""
    return bin_index + 1


def bin_hours_for(total_bins: int) -> Optional[int]:
    """
    Recover the bin width of a weekday/weekend layout

    Args:
        total_bins: Total number of bins B

    Returns:
        Bin width in hours, or None when B is not such a layout
    """
    if total_bins < 2 or total_bins % 2 or HOURS_PER_DAY % (total_bins // 2):
        return None
    return HOURS_PER_DAY // (total_bins // 2)


def format_sequence(locations: Sequence[str]) -> str:
    """Join the locations of a sequence with arrows"""
    return "→".join(str(location) for location in locations)


def parse_list(text: Optional[str], separator: str = ",") -> List[str]:
    """Split a separated flag value, dropping blanks"""
    if not text:
        return []
    return [item.strip() for item in text.split(separator) if item.strip()]


def format_ranked_items(items: Iterable[Tuple[str, float]], limit: int = 5) -> str:
    """
    Format a ranked (label, score) list for readability

    Args:
        items: Ranked pairs, best first
        limit: Number of entries shown

    Returns:
        Formatted string such as "C(0.500), D(0.250)"
    """
    items = list(items)
    if not items:
        return "No ranked items"
    return ", ".join(f"{label}({score:.3f})" for label, score in items[:limit])


def format_duration(seconds: float) -> str:
    """Human readable wall time"""
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, rest = divmod(seconds, 60)
    return f"{int(minutes)}m{rest:04.1f}s"


def describe_factor(listing) -> str:
    """
    Multi-line listing of one factor's top sequences, objects and time bins

    Args:
        listing: FactorListing from the evaluation module

    Returns:
        Text block, one ranked entry per line
    """
    lines = [f"Latent factor {listing.factor}"]
    sections = (
        ("Top sequences", listing.sequences),
        ("Top objects", listing.objects),
        ("Top time bins", listing.bins),
    )
    for title, items in sections:
        lines.append(f"  {title}:")
        if not items:
            lines.append("    (none)")
        for rank, item in enumerate(items, 1):
            lines.append(f"    {rank}. {item.label} ({item.probability:.4f})")
    return "\n".join(lines)
