"""Input checking helpers shared by the estimators and module-level functions."""

import numpy as np

#: Reserved canonical ID for pixels excluded from scoring (max uint16).
IGNORE_ID = np.iinfo(np.uint16).max

LABEL_DTYPE = np.uint16


class CPerfError(Exception):
    """Base class for errors raised by this package."""


class ManifestError(CPerfError):
    """Malformed manifest or legend."""


class DataError(CPerfError):
    """Dataset content violates an invariant (sizes, channels, boxes)."""


class PairingError(CPerfError):
    """Two datasets cannot be compared."""


class NoBatchesError(CPerfError):
    """No batch survived filtering; the datasets share too little content."""


def check_label_map(labels, name="labels"):
    """Return ``labels`` as a 2D uint16 array, raising on bad shape or dtype."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must hold integer class IDs, got {arr.dtype}")
    if arr.dtype != LABEL_DTYPE:
        if arr.min() < 0 or arr.max() > IGNORE_ID:
            raise ValueError(f"{name} holds IDs outside [0, {IGNORE_ID}]")
        arr = arr.astype(LABEL_DTYPE)
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ValueError(
            f"dimension mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}"
        )


def check_unit_interval(value, name, *, open_low=False):
    value = float(value)
    low_ok = value > 0 if open_low else value >= 0
    if not (low_ok and value <= 1):
        bound = "(0, 1]" if open_low else "[0, 1]"
        raise ValueError(f"{name} must lie in {bound}, got {value}")
    return value


def readonly(arr):
    arr.setflags(write=False)
    return arr
