"""Activity label sets and the fine -> coarse mapping."""

FINE_LABELS = ("A1", "A2", "A3", "A4", "B1", "B2", "C1")
COARSE_LABELS = ("A", "B", "C")
MOVING_LABELS = ("A1", "A2", "A3", "A4")
STATIONARY_LABELS = ("B1", "B2")

ACTIVITY_NAMES = {
    "A1": "Walking",
    "A2": "Running",
    "A3": "Ascending stairs",
    "A4": "Descending stairs",
    "B1": "Standing",
    "B2": "Lying down",
    "C1": "Cycling",
}

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")


def coarse_of(label: str) -> str:
    if label not in FINE_LABELS:
        raise ValueError(f"unknown activity label {label!r}")
    return label[0]


def label_rank(label: str) -> int:
    """Position in the fixed ordering used to break ties."""
    return FINE_LABELS.index(label)
