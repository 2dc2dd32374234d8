"""Utilities functions."""

import hashlib
import json
from typing import Any

import numpy as np

from . import __version__

# Generator streams spawned from one seed
TRAIN_STREAM = 0
TEST_STREAM = 1
INIT_STREAM = 2
BOUNDARY_STREAM = 3


def make_rng(seed: int, stream: int = TRAIN_STREAM) -> np.random.Generator:
    """Create an independent, reproducible generator for a seed and stream.

    Parameters
    ----------
    seed
        The user facing seed. Must be non-negative.
    stream
        Which stream to derive, e.g. `TRAIN_STREAM` or `TEST_STREAM`.
    """
    if seed < 0:
        raise ValueError(f"Seeds must be non-negative, got {seed}.")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def config_hash(conf: dict[str, Any]) -> str:
    """A short stable hash of a resolved configuration."""
    text = json.dumps(conf, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf8")).hexdigest()[:12]


def header_line(conf_hash: str, seed: int) -> str:
    """The comment line every output file starts with."""
    return f"# wlpinn {__version__} config_hash={conf_hash} seed={seed}"


def format_epsilon(epsilon: float) -> str:
    """Render epsilon compactly for file names, e.g. 1e-10."""
    mantissa, exponent = f"{epsilon:.6e}".split("e")
    mantissa = mantissa.rstrip("0").rstrip(".")
    return f"{mantissa}e{int(exponent)}"


def array_to_blob(arr: np.ndarray) -> bytes:
    """Serialise a float64 array to raw bytes."""
    return np.ascontiguousarray(arr, dtype=np.float64).tobytes()


def blob_to_array(data: bytes) -> np.ndarray:
    """Decode bytes written by `array_to_blob`."""
    if len(data) % 8:
        raise RuntimeError(f"Blob of {len(data)} bytes is not a float64 array.")
    return np.frombuffer(data, dtype=np.float64, count=-1)
