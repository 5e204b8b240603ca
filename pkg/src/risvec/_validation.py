import math

import numpy as np

from .exceptions import DimensionError, DomainError


def check_position(pos, name="position"):
    arr = np.asarray(pos, dtype=np.float64)
    if arr.shape != (3,):
        raise DimensionError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def check_positive(value, name, strict=True):
    value = float(value)
    if not math.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_complex_vector(x, name, length=None):
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def check_channel_matrix(h, n_elements, name="h_kr_all"):
    """Coerce a list of per-vehicle channel vectors to a (K, N) complex array."""
    arr = np.asarray(h, dtype=np.complex128)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be (K, N), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise DomainError(f"{name} must contain at least one vehicle")
    if arr.shape[1] != n_elements:
        raise DimensionError(f"{name} has {arr.shape[1]} elements per vehicle, expected {n_elements}")
    return arr


def check_batch(x, width, name="input"):
    """Return ``x`` as a 2-D float64 batch and whether the input was a single row."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionError(f"{name} must have width {width}, got shape {np.shape(x)}")
    return arr, single
